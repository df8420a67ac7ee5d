"""Point-set distances: Chamfer, exact EMD, and an auction-based EMD
approximation, plus the differentiable loss wrappers used in training.

Chamfer sums *squared* nearest-neighbor distances in both directions; EMD is
the minimum bijective matching cost under *unsquared* L2. The asymmetry is
deliberate. Padding rows must be stripped by the caller before either
distance is evaluated.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from . import autodiff as ad

# brute force below this size, k-d tree above; the value is identical either way
KDTREE_CUTOFF = 512

EMD_EXACT_LIMIT = 256


def _as_points(s, name: str) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 3:
        raise ValueError(f"{name} must be (n, 3), got {s.shape}")
    if s.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    return s


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def _exact_sq(a: np.ndarray, b_matched: np.ndarray) -> np.ndarray:
    """Squared distances from differences; free of the cancellation error the
    expanded |a|^2+|b|^2-2ab form carries, so identical points give exact 0."""
    diff = a - b_matched
    return (diff * diff).sum(axis=1)


def _nearest(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each row of a: (squared distance to nearest row of b, its index).

    The expanded-form matrix only selects the neighbor; the returned distance
    is recomputed exactly from coordinate differences."""
    if min(len(a), len(b)) > KDTREE_CUTOFF:
        _, idx = cKDTree(b).query(a, k=1)
        return _exact_sq(a, b[idx]), idx
    d = _sq_dists(a, b)
    idx = d.argmin(axis=1)
    return _exact_sq(a, b[idx]), idx


def _nearest_both(a: np.ndarray, b: np.ndarray):
    """Nearest squared distances and indices in both directions, sharing one
    distance matrix on the brute-force path."""
    if min(len(a), len(b)) > KDTREE_CUTOFF:
        fwd, idx_fwd = _nearest(a, b)
        bwd, idx_bwd = _nearest(b, a)
        return fwd, idx_fwd, bwd, idx_bwd
    d = _sq_dists(a, b)
    idx_fwd = d.argmin(axis=1)
    idx_bwd = d.argmin(axis=0)
    return (_exact_sq(a, b[idx_fwd]), idx_fwd,
            _exact_sq(b, a[idx_bwd]), idx_bwd)


def chamfer(s1, s2) -> float:
    """Sum of squared nearest-neighbor distances, both directions, no
    averaging."""
    a = _as_points(s1, "s1")
    b = _as_points(s2, "s2")
    fwd, _, bwd, _ = _nearest_both(a, b)
    return float(fwd.sum() + bwd.sum())


def chamfer_grad(s1, s2) -> tuple[float, np.ndarray]:
    """Chamfer value and its gradient with respect to s1 (matches frozen)."""
    a = _as_points(s1, "s1")
    b = _as_points(s2, "s2")
    fwd, idx_fwd, bwd, idx_bwd = _nearest_both(a, b)
    grad = 2.0 * (a - b[idx_fwd])
    np.add.at(grad, idx_bwd, 2.0 * (a[idx_bwd] - b))
    return float(fwd.sum() + bwd.sum()), grad


def emd_exact(s1, s2, limit: int = EMD_EXACT_LIMIT) -> float:
    """Minimum over bijections of summed L2 distances (optimal assignment)."""
    a = _as_points(s1, "s1")
    b = _as_points(s2, "s2")
    if len(a) != len(b):
        raise ValueError(f"EMD needs equal sizes, got {len(a)} and {len(b)}")
    if len(a) > limit:
        raise ValueError(f"emd_exact limited to {limit} points, got {len(a)}")
    cost = np.sqrt(_sq_dists(a, b))
    rows, cols = linear_sum_assignment(cost)
    # sorted summation: the same matched multiset sums bit-identically no
    # matter how the input rows were ordered
    return float(np.sort(np.sqrt(_exact_sq(a[rows], b[cols]))).sum())


def _auction_matching(cost: np.ndarray, rel_tol: float) -> np.ndarray:
    """Jacobi auction with epsilon scaling on a square min-cost matrix.

    Returns owner[i] = column assigned to row i. The final epsilon is chosen
    so the n*eps optimality gap stays below rel_tol times a row-minima lower
    bound on the optimum, which keeps the result within rel_tol of exact
    (and never below it: the assignment is always feasible).
    """
    n = cost.shape[0]
    benefit = -cost
    span = float(benefit.max() - benefit.min())
    lower_bound = float(cost.min(axis=1).sum())
    floor = 1e-12 * (1.0 + span)
    eps_final = max(rel_tol * lower_bound / n, floor)
    eps = max(span / 2.0, eps_final)
    prices = np.zeros(n)
    owner = np.full(n, -1, dtype=np.int64)

    while True:
        owner.fill(-1)
        item_owner = np.full(n, -1, dtype=np.int64)
        unassigned = np.arange(n)
        while unassigned.size:
            values = benefit[unassigned] - prices
            best = values.argmax(axis=1)
            rows = np.arange(unassigned.size)
            v1 = values[rows, best]
            values[rows, best] = -np.inf
            v2 = values.max(axis=1)
            bids = v1 - v2 + eps
            # highest bid per contested item wins; sort so it is written last
            order = np.argsort(bids, kind="stable")
            win_bid = np.full(n, -np.inf)
            win_bidder = np.full(n, -1, dtype=np.int64)
            items = best[order]
            win_bid[items] = prices[items] + bids[order]
            win_bidder[items] = unassigned[order]
            touched = np.flatnonzero(win_bidder >= 0)
            evicted = item_owner[touched]
            evicted = evicted[evicted >= 0]
            owner[evicted] = -1
            prices[touched] = win_bid[touched]
            item_owner[touched] = win_bidder[touched]
            owner[win_bidder[touched]] = touched
            unassigned = np.flatnonzero(owner < 0)
        if eps <= eps_final:
            return owner
        eps = max(eps / 5.0, eps_final)


def emd_approx(s1, s2, rel_tol: float = 0.0025) -> float:
    """Approximate EMD via auction matching; feasible, so never below the
    optimum."""
    cost, owner = _emd_approx_matching(s1, s2, rel_tol)
    return cost


def _emd_approx_matching(s1, s2, rel_tol: float = 0.0025) -> tuple[float, np.ndarray]:
    a = _as_points(s1, "s1")
    b = _as_points(s2, "s2")
    if len(a) != len(b):
        raise ValueError(f"EMD needs equal sizes, got {len(a)} and {len(b)}")
    dist = np.sqrt(_sq_dists(a, b))
    owner = _auction_matching(dist, rel_tol)
    return float(np.sort(np.sqrt(_exact_sq(a, b[owner]))).sum()), owner


# ---------------------------------------------------------------------------
# differentiable loss wrappers (gradients flow to the predicted set only)
# ---------------------------------------------------------------------------


def chamfer_loss(tape: ad.Tape, pred: ad.Var, target: np.ndarray) -> ad.Var:
    """Chamfer distance as a tape op; pred is (n, 3), target a constant."""
    value, grad = chamfer_grad(pred.data, target)
    grad = grad.astype(pred.data.dtype)

    def back(g):
        ad._accum(pred, g * grad)

    return tape._record(ad.Var(np.asarray(value, dtype=pred.data.dtype).reshape(()),
                               (pred,), back))


def chamfer_batch_loss(tape: ad.Tape, pred: ad.Var, targets: list[np.ndarray],
                       points_per_cloud: int) -> ad.Var:
    """Mean Chamfer over a batch; pred rows are flattened (n*3,) clouds."""
    batch = pred.data.shape[0]
    if len(targets) != batch:
        raise ad.ShapeError(f"{batch} predictions vs {len(targets)} targets")
    clouds = pred.data.reshape(batch, points_per_cloud, 3)
    total = 0.0
    grads = np.zeros_like(clouds)
    for i, target in enumerate(targets):
        value, grad = chamfer_grad(clouds[i], target)
        total += value
        grads[i] = grad
    grads = grads.reshape(batch, -1).astype(pred.data.dtype) / batch

    def back(g):
        ad._accum(pred, g * grads)

    return tape._record(ad.Var(np.asarray(total / batch, dtype=pred.data.dtype).reshape(()),
                               (pred,), back))


def emd_batch_loss(tape: ad.Tape, pred: ad.Var, targets: list[np.ndarray],
                   points_per_cloud: int, rel_tol: float = 0.01) -> ad.Var:
    """Mean approximate EMD over a batch with the matching frozen per
    evaluation; gradient is the unit vector from each point to its match."""
    batch = pred.data.shape[0]
    if len(targets) != batch:
        raise ad.ShapeError(f"{batch} predictions vs {len(targets)} targets")
    clouds = pred.data.reshape(batch, points_per_cloud, 3)
    total = 0.0
    grads = np.zeros_like(clouds, dtype=np.float64)
    for i, target in enumerate(targets):
        target = np.asarray(target, dtype=np.float64)
        value, owner = _emd_approx_matching(clouds[i], target, rel_tol)
        total += value
        diff = clouds[i].astype(np.float64) - target[owner]
        norms = np.linalg.norm(diff, axis=1, keepdims=True)
        np.divide(diff, norms, out=diff, where=norms > 0)
        grads[i] = diff
    grads = grads.reshape(batch, -1).astype(pred.data.dtype) / batch

    def back(g):
        ad._accum(pred, g * grads)

    return tape._record(ad.Var(np.asarray(total / batch, dtype=pred.data.dtype).reshape(()),
                               (pred,), back))
