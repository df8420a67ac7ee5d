"""Minimal reverse-mode differentiation engine for the part-aware autoencoder.

Dense matrices are plain numpy arrays (row-major, 2-D unless noted). Every
operation records a node on an explicit :class:`Tape`; nodes are appended in
creation order, which is already a topological order, so the backward pass is
a single reverse sweep. Only the operations the network actually needs are
provided: affine layers, ReLU, batch norm, masked segment pooling (max and
mean), column pooling, concatenation, and a handful of elementwise/reduction
ops for the generative heads.

Training arithmetic is float32; gradient verification runs the same code in
float64 (see :func:`grad_check`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class TapeError(RuntimeError):
    """Tape misuse, e.g. backward before any forward computation."""


class InvalidLabelError(ValueError):
    """A part label lies outside the declared 0..k range."""


class NonFiniteUpdateError(FloatingPointError):
    """An optimizer update encountered a non-finite gradient."""


class Var:
    """A tape node: value, gradient slot, parents and a backward closure."""

    __slots__ = ("data", "grad", "parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = data
        self.grad = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self):
        return np.shape(self.data)

    def __repr__(self):
        return f"Var(shape={self.shape})"


def _accum(var: Var, g) -> None:
    # first contribution is held by reference; later ones allocate a fresh
    # sum so aliased gradient arrays are never mutated in place
    if var.grad is None:
        var.grad = g
    else:
        var.grad = var.grad + g


class Tape:
    """Ordered record of one forward computation.

    ``nodes`` is append-only and topologically ordered by construction:
    an operation can only consume Vars that already exist. Leaves created
    with a name are tracked so parameter gradients can be collected after
    :func:`backward`.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}

    def _record(self, var: Var) -> Var:
        self.nodes.append(var)
        return var

    def leaf(self, data, name: str | None = None) -> Var:
        """Wrap an array as a differentiable leaf (a parameter or input).

        Re-binding the same array under the same name returns the existing
        node, so a parameter used twice in one forward pass accumulates both
        gradient contributions."""
        arr = np.asarray(data)
        if name is not None:
            existing = self.leaves.get(name)
            if existing is not None:
                if existing.data is not arr:
                    raise TapeError(f"leaf {name!r} already bound to a different array")
                return existing
        var = self._record(Var(arr))
        if name is not None:
            self.leaves[name] = var
        return var

    def constant(self, data) -> Var:
        """Wrap an array whose gradient is never consumed."""
        return self._record(Var(np.asarray(data)))

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients of all named leaves after backward (zeros if unused)."""
        out = {}
        for name, var in self.leaves.items():
            if var.grad is None:
                out[name] = np.zeros_like(var.data)
            else:
                out[name] = var.grad
        return out


def backward(tape: Tape, loss: Var, seed: float = 1.0) -> None:
    """Reverse sweep from ``loss``; visits each recorded node exactly once."""
    if not tape.nodes:
        raise TapeError("backward called on an empty tape")
    if loss is not tape.nodes[-1] and loss not in tape.nodes:
        raise TapeError("loss Var was not recorded on this tape")
    if np.ndim(loss.data) != 0:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.asarray(seed, dtype=np.asarray(loss.data).dtype)
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------


def _same_shape(a: Var, b: Var, op: str) -> None:
    if np.shape(a.data) != np.shape(b.data):
        raise ShapeError(f"{op}: shapes {np.shape(a.data)} and {np.shape(b.data)} differ")


def add(tape: Tape, a: Var, b: Var) -> Var:
    _same_shape(a, b, "add")

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return tape._record(Var(a.data + b.data, (a, b), back))


def sub(tape: Tape, a: Var, b: Var) -> Var:
    _same_shape(a, b, "sub")

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return tape._record(Var(a.data - b.data, (a, b), back))


def mul(tape: Tape, a: Var, b: Var) -> Var:
    _same_shape(a, b, "mul")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return tape._record(Var(a.data * b.data, (a, b), back))


def scale(tape: Tape, a: Var, c: float) -> Var:
    def back(g):
        _accum(a, g * c)

    return tape._record(Var(a.data * c, (a,), back))


def add_const(tape: Tape, a: Var, c) -> Var:
    def back(g):
        _accum(a, g)

    return tape._record(Var(a.data + c, (a,), back))


def mul_const(tape: Tape, a: Var, c) -> Var:
    """Elementwise product with a constant array (no gradient into ``c``)."""
    c = np.asarray(c)

    def back(g):
        _accum(a, g * c)

    return tape._record(Var(a.data * c, (a,), back))


def relu(tape: Tape, a: Var) -> Var:
    out = np.maximum(a.data, 0)

    def back(g):
        _accum(a, g * (out > 0))

    return tape._record(Var(out, (a,), back))


def exp(tape: Tape, a: Var) -> Var:
    out = np.exp(a.data)

    def back(g):
        _accum(a, g * out)

    return tape._record(Var(out, (a,), back))


def sqrt(tape: Tape, a: Var) -> Var:
    out = np.sqrt(a.data)

    def back(g):
        # subgradient 0 at the origin keeps e.g. gradient-penalty updates
        # finite when a whole input-gradient row is dead
        safe = np.where(out > 0, out, 1.0)
        _accum(a, np.where(out > 0, g * 0.5 / safe, 0.0))

    return tape._record(Var(out, (a,), back))


def softplus(tape: Tape, a: Var) -> Var:
    out = np.logaddexp(0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        _accum(a, g * sig)

    return tape._record(Var(out, (a,), back))


def sum_all(tape: Tape, a: Var) -> Var:
    def back(g):
        _accum(a, np.full_like(a.data, g))

    return tape._record(Var(np.sum(a.data), (a,), back))


def mean_all(tape: Tape, a: Var) -> Var:
    n = np.asarray(a.data).size

    def back(g):
        _accum(a, np.full_like(a.data, g / n))

    return tape._record(Var(np.sum(a.data) / n, (a,), back))


def sum_rows(tape: Tape, a: Var) -> Var:
    """Sum along axis 1: (n, m) -> (n, 1)."""
    if np.ndim(a.data) != 2:
        raise ShapeError(f"sum_rows expects a matrix, got shape {a.shape}")

    def back(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return tape._record(Var(a.data.sum(axis=1, keepdims=True), (a,), back))


def add_n(tape: Tape, vars_: list[Var]) -> Var:
    if not vars_:
        raise ShapeError("add_n needs at least one operand")
    for v in vars_[1:]:
        _same_shape(vars_[0], v, "add_n")

    def back(g):
        for v in vars_:
            _accum(v, g)

    total = vars_[0].data.copy()
    for v in vars_[1:]:
        total += v.data
    return tape._record(Var(total, tuple(vars_), back))


# ---------------------------------------------------------------------------
# matrix ops
# ---------------------------------------------------------------------------


def matmul(tape: Tape, a: Var, b: Var) -> Var:
    if np.ndim(a.data) != 2 or np.ndim(b.data) != 2:
        raise ShapeError("matmul expects matrices")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.data.shape} @ {b.data.shape}")

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return tape._record(Var(a.data @ b.data, (a, b), back))


def add_bias(tape: Tape, x: Var, b: Var) -> Var:
    """Row-broadcast bias: (n, m) + (m,) -> (n, m)."""
    if np.ndim(b.data) != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")

    def back(g):
        _accum(x, g)
        _accum(b, g.sum(axis=0))

    return tape._record(Var(x.data + b.data, (x, b), back))


def transpose(tape: Tape, a: Var) -> Var:
    def back(g):
        _accum(a, g.T)

    return tape._record(Var(a.data.T.copy(), (a,), back))


def concat_cols(tape: Tape, a: Var, b: Var) -> Var:
    if a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"concat_cols: row counts {a.shape} vs {b.shape}")
    split = a.data.shape[1]

    def back(g):
        _accum(a, g[:, :split])
        _accum(b, g[:, split:])

    return tape._record(Var(np.concatenate([a.data, b.data], axis=1), (a, b), back))


def concat_rows(tape: Tape, vars_: list[Var]) -> Var:
    if not vars_:
        raise ShapeError("concat_rows needs at least one operand")
    sizes = [v.data.shape[0] for v in vars_]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for v, lo, hi in zip(vars_, offsets[:-1], offsets[1:]):
            _accum(v, g[lo:hi])

    return tape._record(Var(np.concatenate([v.data for v in vars_], axis=0), tuple(vars_), back))


def repeat_rows(tape: Tape, a: Var, reps: int) -> Var:
    """Repeat each row ``reps`` times: (b, m) -> (b*reps, m)."""
    b, m = a.data.shape

    def back(g):
        _accum(a, g.reshape(b, reps, m).sum(axis=1))

    return tape._record(Var(np.repeat(a.data, reps, axis=0), (a,), back))


def softmax_rows(tape: Tape, logits: Var) -> Var:
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        inner = (g * s).sum(axis=1, keepdims=True)
        _accum(logits, s * (g - inner))

    return tape._record(Var(s, (logits,), back))


def cross_entropy(tape: Tape, logits: Var, labels: np.ndarray, ignore_label: int | None = 0) -> Var:
    """Mean softmax cross-entropy over rows whose label != ignore_label.

    ``labels`` holds class indices into the logits columns; rows carrying the
    ignore label contribute neither loss nor gradient.
    """
    labels = np.asarray(labels)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} logit rows vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise InvalidLabelError(f"labels must lie in 0..{c - 1}")
    if ignore_label is not None:
        keep = labels != ignore_label
    else:
        keep = np.ones(n, dtype=bool)
    m = int(keep.sum())
    if m == 0:
        raise ShapeError("cross_entropy: no rows left after ignoring padding")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(n), labels] - logsumexp
    loss = -logp[keep].sum() / m

    def back(g):
        soft = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        soft[np.arange(n), labels] -= 1.0
        soft[~keep] = 0.0
        _accum(logits, (g / m) * soft.astype(logits.data.dtype))

    return tape._record(Var(np.asarray(loss, dtype=logits.data.dtype).reshape(()), (logits,), back))


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def _check_labels(labels: np.ndarray, n: int, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if k < 1:
        raise InvalidLabelError(f"part count must be >= 1, got {k}")
    if labels.min() < 0 or labels.max() > k:
        raise InvalidLabelError(f"labels must lie in 0..{k}, found range "
                                f"[{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def segment_maxpool(tape: Tape, features: Var, labels, k: int):
    """Per-part column max. Label 0 marks padding and never contributes.

    Returns (parts Var (k, l), argmax (k, l) int with -1 for absent parts,
    present (k,) bool). Ties go to the lowest point index; the backward pass
    routes each gradient entry to its single recorded winner.
    """
    n, l = features.data.shape
    labels = _check_labels(labels, n, k)
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    bounds = np.searchsorted(sorted_labels, np.arange(k + 2))
    parts = np.zeros((k, l), dtype=features.data.dtype)
    argmax = np.full((k, l), -1, dtype=np.int64)
    present = np.zeros(k, dtype=bool)
    for p in range(1, k + 1):
        lo, hi = bounds[p], bounds[p + 1]
        if lo == hi:
            continue
        rows = order[lo:hi]
        block = features.data[rows]
        local = block.argmax(axis=0)
        # stable tie-break: argmax returns the first maximal element of the
        # block, but the block rows follow the stable label sort, which keeps
        # original point order, so "first in block" = lowest point index.
        parts[p - 1] = block[local, np.arange(l)]
        argmax[p - 1] = rows[local]
        present[p - 1] = True

    def back(g):
        dx = np.zeros_like(features.data)
        rows_idx = argmax[present]
        np.add.at(dx, (rows_idx.ravel(), np.tile(np.arange(l), int(present.sum()))),
                  g[present].ravel())
        _accum(features, dx)

    out = tape._record(Var(parts, (features,), back))
    return out, argmax, present


def segment_meanpool(tape: Tape, features: Var, labels, k: int):
    """Per-part column mean (the mean-pooling ablation). Same contract as
    :func:`segment_maxpool` but without an argmax matrix."""
    n, l = features.data.shape
    labels = _check_labels(labels, n, k)
    counts = np.bincount(labels, minlength=k + 1)[1:]
    present = counts > 0
    sums = np.zeros((k + 1, l), dtype=np.float64)
    np.add.at(sums, labels, features.data)
    parts = np.zeros((k, l), dtype=features.data.dtype)
    safe = np.maximum(counts, 1)
    parts[present] = (sums[1:][present] / safe[present, None]).astype(features.data.dtype)

    def back(g):
        dx = np.zeros_like(features.data)
        per_row = np.zeros((k + 1, l), dtype=features.data.dtype)
        per_row[1:][present] = g[present] / safe[present, None]
        dx += per_row[labels]
        _accum(features, dx)

    out = tape._record(Var(parts, (features,), back))
    return out, present


def masked_colmax(tape: Tape, parts: Var, present: np.ndarray) -> Var:
    """Column-wise max over present rows: the second pooling stage."""
    present = np.asarray(present, dtype=bool)
    if not present.any():
        raise ShapeError("masked_colmax: no present part to pool over")
    rows = np.flatnonzero(present)
    block = parts.data[rows]
    local = block.argmax(axis=0)
    winners = rows[local]
    l = parts.data.shape[1]

    def back(g):
        dx = np.zeros_like(parts.data)
        np.add.at(dx, (winners, np.arange(l)), g.reshape(-1))
        _accum(parts, dx)

    return tape._record(Var(block[local, np.arange(l)].reshape(1, l), (parts,), back))


def masked_colmean(tape: Tape, parts: Var, present: np.ndarray) -> Var:
    """Column-wise mean over present rows (mean-pooling ablation)."""
    present = np.asarray(present, dtype=bool)
    if not present.any():
        raise ShapeError("masked_colmean: no present part to pool over")
    rows = np.flatnonzero(present)
    m = len(rows)

    def back(g):
        dx = np.zeros_like(parts.data)
        dx[rows] = g.reshape(1, -1) / m
        _accum(parts, dx)

    return tape._record(Var(parts.data[rows].mean(axis=0, keepdims=True), (parts,), back))


def blocked_colmax(tape: Tape, parts: Var, present: np.ndarray, block: int) -> Var:
    """Column max over present rows of each consecutive ``block``-row group:
    (b*block, l) -> (b, l). The batched form of :func:`masked_colmax`."""
    present = np.asarray(present, dtype=bool)
    total, l = parts.data.shape
    if total % block != 0:
        raise ShapeError(f"blocked_colmax: {total} rows not divisible by {block}")
    b = total // block
    grouped = parts.data.reshape(b, block, l)
    mask = present.reshape(b, block)
    if not mask.any(axis=1).all():
        raise ShapeError("blocked_colmax: a group has no present row")
    masked = np.where(mask[:, :, None], grouped, -np.inf)
    local = masked.argmax(axis=1)
    out = np.take_along_axis(grouped, local[:, None, :], axis=1)[:, 0, :]
    winners = (local + (np.arange(b) * block)[:, None]).ravel()
    cols = np.tile(np.arange(l), b)

    def back(g):
        dx = np.zeros_like(parts.data)
        np.add.at(dx, (winners, cols), g.ravel())
        _accum(parts, dx)

    return tape._record(Var(out, (parts,), back))


def blocked_colmean(tape: Tape, parts: Var, present: np.ndarray, block: int) -> Var:
    """Column mean over present rows per block group (mean-pooling variant)."""
    present = np.asarray(present, dtype=bool)
    total, l = parts.data.shape
    if total % block != 0:
        raise ShapeError(f"blocked_colmean: {total} rows not divisible by {block}")
    b = total // block
    mask = present.reshape(b, block)
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ShapeError("blocked_colmean: a group has no present row")
    grouped = np.where(mask[:, :, None], parts.data.reshape(b, block, l), 0.0)
    out = (grouped.sum(axis=1) / counts[:, None]).astype(parts.data.dtype)

    def back(g):
        scaled = (g / counts[:, None])[:, None, :] * mask[:, :, None]
        _accum(parts, scaled.reshape(total, l).astype(parts.data.dtype))

    return tape._record(Var(out, (parts,), back))


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormState:
    """Running statistics, frozen at inference. Momentum 0.9 keeps 90% of the
    old running value per update."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def for_dim(cls, dim: int, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(dim, dtype=dtype), np.ones(dim, dtype=dtype))


def batchnorm(tape: Tape, x: Var, gamma: Var, beta: Var, state: BatchNormState,
              training: bool, update_stats: bool | None = None) -> Var:
    """Per-feature batch norm over all rows (points) of ``x``.

    Training mode normalizes by batch statistics and, unless ``update_stats``
    is False, folds them into the running averages. Inference mode uses the
    frozen running statistics and is therefore row-local.
    """
    if update_stats is None:
        update_stats = training
    if training:
        mean = x.data.mean(axis=0)
        centered = x.data - mean
        var = np.mean(centered * centered, axis=0)
        if update_stats:
            m = state.momentum
            state.running_mean[...] = m * state.running_mean + (1 - m) * mean
            state.running_var[...] = m * state.running_var + (1 - m) * var
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * inv_std
    else:
        mean = state.running_mean
        var = state.running_var
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data
    n = x.data.shape[0]

    def back(g):
        g_sum = g.sum(axis=0)
        gxhat_sum = (g * xhat).sum(axis=0)
        _accum(gamma, gxhat_sum)
        _accum(beta, g_sum)
        if training:
            # dx = gamma*inv_std/n * (n*g - sum(g) - xhat*sum(g*xhat)),
            # using sum(g*gamma) = gamma*sum(g) since gamma is per-column
            dx = g * float(n)
            dx -= g_sum
            dx -= xhat * gxhat_sum
            dx *= gamma.data * (inv_std / n)
        else:
            dx = g * (gamma.data * inv_std)
        _accum(x, dx.astype(x.data.dtype, copy=False))

    return tape._record(Var(out.astype(x.data.dtype), (x, gamma, beta), back))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Dense:
    """One shared-weight fully connected layer: x @ W + b, optional ReLU then
    batch norm (the encoder's layer order)."""

    def __init__(self, name: str, in_dim: int, out_dim: int, *, relu: bool = True,
                 batchnorm: bool = False, rng: np.random.Generator,
                 dtype=np.float32):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.use_relu = relu
        self.use_bn = batchnorm
        std = np.sqrt(2.0 / in_dim) if relu else np.sqrt(1.0 / in_dim)
        self.w = (rng.standard_normal((in_dim, out_dim)) * std).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        if batchnorm:
            self.gamma = np.ones(out_dim, dtype=dtype)
            self.beta = np.zeros(out_dim, dtype=dtype)
            self.bn_state = BatchNormState.for_dim(out_dim, dtype=dtype)

    def forward(self, tape: Tape, x: Var, training: bool = False,
                update_stats: bool | None = None) -> Var:
        if x.data.shape[1] != self.in_dim:
            raise ShapeError(f"layer {self.name}: expected {self.in_dim} input "
                             f"features, got {x.data.shape[1]}")
        y = add_bias(tape, matmul(tape, x, tape.leaf(self.w, f"{self.name}.w")),
                     tape.leaf(self.b, f"{self.name}.b"))
        if self.use_relu:
            y = relu(tape, y)
        if self.use_bn:
            y = batchnorm(tape, y, tape.leaf(self.gamma, f"{self.name}.gamma"),
                          tape.leaf(self.beta, f"{self.name}.beta"),
                          self.bn_state, training, update_stats)
        return y

    def parameters(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.w": self.w, f"{self.name}.b": self.b}
        if self.use_bn:
            out[f"{self.name}.gamma"] = self.gamma
            out[f"{self.name}.beta"] = self.beta
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        if self.use_bn:
            return {f"{self.name}.running_mean": self.bn_state.running_mean,
                    f"{self.name}.running_var": self.bn_state.running_var}
        return {}

    def astype(self, dtype) -> "Dense":
        self.w = self.w.astype(dtype)
        self.b = self.b.astype(dtype)
        if self.use_bn:
            self.gamma = self.gamma.astype(dtype)
            self.beta = self.beta.astype(dtype)
            self.bn_state.running_mean = self.bn_state.running_mean.astype(dtype)
            self.bn_state.running_var = self.bn_state.running_var.astype(dtype)
        return self


def pointwise_mlp(tape: Tape, layers: list[Dense], x: Var, training: bool = False,
                  update_stats: bool | None = None) -> Var:
    """Apply shared-weight layers to every row of ``x`` independently.

    Raises ShapeError naming the offending layer if the dimension chain
    breaks. Row i of the output depends only on row i of the input (and on
    batch statistics when batch norm runs in training mode).
    """
    for i, layer in enumerate(layers):
        if x.data.shape[1] != layer.in_dim:
            raise ShapeError(f"layer {i} ({layer.name}): expected input dim "
                             f"{layer.in_dim}, got {x.data.shape[1]}")
        x = layer.forward(tape, x, training, update_stats)
    return x


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Bias-corrected Adam with per-parameter moment buffers keyed by name."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    _scratch: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One in-place bias-corrected Adam update over every named parameter.

    Algebraically identical to lr * mhat / (sqrt(vhat) + eps): the bias
    corrections are folded into a step size and a scaled epsilon so no
    full-size mhat/vhat temporaries are allocated.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr = np.sqrt(1.0 - b2 ** t)
    alpha = state.lr * corr / (1.0 - b1 ** t)
    eps_t = state.epsilon * corr
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteUpdateError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state._scratch[name] = np.empty_like(p)
        m = state.m[name]
        v = state.v[name]
        scratch = state._scratch.setdefault(name, np.empty_like(p))
        m *= b1
        np.multiply(g, 1 - b1, out=scratch)
        m += scratch
        v *= b2
        np.multiply(g, g, out=scratch)
        scratch *= 1 - b2
        v += scratch
        if alpha == 0.0:  # lr 0: moments advance, parameters stay bit-identical
            continue
        np.sqrt(v, out=scratch)
        scratch += eps_t
        scratch /= alpha
        np.divide(m, scratch, out=scratch)
        p -= scratch


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def grad_check(loss_fn, params: dict[str, np.ndarray], step: float = 1e-6,
               buffers: tuple[np.ndarray, ...] = ()) -> float:
    """Compare every parameter's analytic gradient to central differences.

    ``loss_fn(tape) -> Var`` must rebuild the scalar loss from the live
    ``params`` arrays on each call (float64 arrays for the stated tolerances).
    ``buffers`` (e.g. batch-norm running stats) are snapshotted and restored
    around the finite-difference evaluations so repeated forwards agree.

    Returns the worst per-entry error |analytic - numeric| relative to
    max(|analytic|, |numeric|, 1e-3): entries whose true gradient is near
    zero are held to an absolute bound instead, since the central-difference
    rounding noise (ulp(loss)/step) would otherwise dominate a pure ratio.
    """
    saved = [b.copy() for b in buffers]

    def restore():
        for b, s in zip(buffers, saved):
            b[...] = s

    tape = Tape()
    loss = loss_fn(tape)
    backward(tape, loss)
    analytic = tape.grads()
    restore()

    worst = 0.0
    for name, arr in params.items():
        a = analytic.get(name)
        if a is None:
            raise TapeError(f"parameter {name!r} was never used by loss_fn")
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            hi = float(loss_fn(Tape()).data)
            restore()
            arr[idx] = orig - step
            lo = float(loss_fn(Tape()).data)
            restore()
            arr[idx] = orig
            numeric = (hi - lo) / (2 * step)
            denom = max(abs(a[idx]), abs(numeric), 1e-3)
            worst = max(worst, abs(a[idx] - numeric) / denom)
    return worst
