"""Latent part operations: exchange, interpolation, composition, removal,
and the fusion that turns part features back into a global feature.

Everything here is a pure value transformation on :class:`PartFeatureSet`;
absent parts are excluded from fusion rather than zero-filled, since feature
entries can be negative and zero rows would corrupt the max pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EditError(ValueError):
    """Invalid edit request (absent part, bad id, t out of range)."""


@dataclass
class PartFeatureSet:
    """k x l part feature matrix plus a per-part presence mask."""

    features: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.present = np.asarray(self.present, dtype=bool)
        if self.features.ndim != 2:
            raise EditError(f"features must be (k, l), got {self.features.shape}")
        if self.present.shape != (self.features.shape[0],):
            raise EditError("presence mask length must equal part count")

    @property
    def k(self) -> int:
        return self.features.shape[0]

    @property
    def l(self) -> int:
        return self.features.shape[1]

    def copy(self) -> "PartFeatureSet":
        return PartFeatureSet(self.features.copy(), self.present.copy())

    def row(self, part_id: int) -> np.ndarray:
        self._check_part(part_id)
        return self.features[part_id - 1]

    def _check_part(self, part_id: int) -> None:
        if not 1 <= part_id <= self.k:
            raise EditError(f"part id {part_id} outside valid range 1..{self.k}")

    def to_json_dict(self) -> dict:
        # absent rows serialize as zeros; the presence flag stays authoritative
        feats = np.where(self.present[:, None], self.features, 0.0)
        return {"features": feats.tolist(), "present": self.present.tolist()}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "PartFeatureSet":
        return cls(np.asarray(obj["features"], dtype=np.float32),
                   np.asarray(obj["present"], dtype=bool))


def _check_compatible(a: PartFeatureSet, b: PartFeatureSet) -> None:
    if a.features.shape != b.features.shape:
        raise EditError(f"part sets differ in shape: {a.features.shape} vs "
                        f"{b.features.shape}")


def exchange_part(a: PartFeatureSet, b: PartFeatureSet, part_id: int) -> PartFeatureSet:
    """A with row ``part_id`` replaced by B's row; all other rows untouched."""
    _check_compatible(a, b)
    a._check_part(part_id)
    if not b.present[part_id - 1]:
        raise EditError(f"part {part_id} is absent in the donor set")
    out = a.copy()
    out.features[part_id - 1] = b.features[part_id - 1]
    out.present[part_id - 1] = True
    return out


def interpolate(a: PartFeatureSet, b: PartFeatureSet, t: float,
                part_id: int | None = None):
    """Affine blend (1-t)*A + t*B.

    Global scope (part_id None) blends the fused global features and returns
    a length-l vector; part scope blends only the named row and returns a new
    PartFeatureSet whose other rows are bit-identical to A's.
    """
    if not 0.0 <= t <= 1.0:
        raise EditError(f"interpolation parameter t={t} outside [0, 1]")
    _check_compatible(a, b)
    if part_id is None:
        return (1.0 - t) * fuse_global(a) + t * fuse_global(b)
    a._check_part(part_id)
    if not a.present[part_id - 1] or not b.present[part_id - 1]:
        raise EditError(f"part {part_id} must be present in both sets")
    out = a.copy()
    if t == 0.0:
        row = a.features[part_id - 1]
    elif t == 1.0:
        row = b.features[part_id - 1]
    else:
        row = (1.0 - t) * a.features[part_id - 1] + t * b.features[part_id - 1]
    out.features[part_id - 1] = row
    return out


def compose(sources: list[tuple[PartFeatureSet, int]]) -> PartFeatureSet:
    """Assemble a part set by taking each named row from its source; parts
    not named by any source are marked absent."""
    if not sources:
        raise EditError("compose needs at least one (source, part) pair")
    ref = sources[0][0]
    out = PartFeatureSet(np.zeros_like(ref.features),
                         np.zeros(ref.k, dtype=bool))
    seen: set[int] = set()
    for src, part_id in sources:
        _check_compatible(ref, src)
        src._check_part(part_id)
        if part_id in seen:
            raise EditError(f"part {part_id} assigned by more than one source")
        if not src.present[part_id - 1]:
            raise EditError(f"part {part_id} is absent in its source")
        seen.add(part_id)
        out.features[part_id - 1] = src.features[part_id - 1]
        out.present[part_id - 1] = True
    return out


def remove_part(a: PartFeatureSet, part_id: int) -> PartFeatureSet:
    """Mark a part absent; fusion then ignores it."""
    a._check_part(part_id)
    if not a.present[part_id - 1]:
        raise EditError(f"part {part_id} is already absent")
    out = a.copy()
    out.present[part_id - 1] = False
    if not out.present.any():
        raise EditError("cannot remove the last present part")
    return out


def fuse_global(parts: PartFeatureSet) -> np.ndarray:
    """Column-wise max over present rows: identical to the encoder's second
    pooling stage."""
    if not parts.present.any():
        raise EditError("cannot fuse a part set with no present parts")
    return parts.features[parts.present].max(axis=0)


# ---------------------------------------------------------------------------
# edit-op descriptions (shared by the CLI and the HTTP service)
# ---------------------------------------------------------------------------

EDIT_KINDS = ("exchange", "interpolate-global", "interpolate-part", "compose",
              "remove", "regenerate-part")


@dataclass
class EditOp:
    """JSON-serializable description of one latent edit."""

    kind: str
    part_id: int | None = None
    t: float | None = None
    sources: list | None = None
    head: str | None = None

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise EditError(f"unknown edit kind {self.kind!r}; expected one of "
                            f"{EDIT_KINDS}")
        if self.kind in ("interpolate-global", "interpolate-part"):
            if self.t is None or not 0.0 <= self.t <= 1.0:
                raise EditError(f"{self.kind} needs t in [0, 1], got {self.t}")
        if self.kind in ("exchange", "interpolate-part", "remove",
                         "regenerate-part") and self.part_id is None:
            raise EditError(f"{self.kind} needs a part id")

    def to_json_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.part_id is not None:
            out["part_id"] = self.part_id
        if self.t is not None:
            out["t"] = self.t
        if self.sources is not None:
            out["sources"] = self.sources
        if self.head is not None:
            out["head"] = self.head
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EditOp":
        return cls(kind=obj.get("kind", ""), part_id=obj.get("part_id"),
                   t=obj.get("t"), sources=obj.get("sources"),
                   head=obj.get("head"))
