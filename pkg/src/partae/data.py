"""Point-cloud data types, text/JSON loaders, resampling, normalization,
splits, and a procedural multi-part shape generator for desk-scale training.

On-disk formats: parallel ``.pts``/``.seg`` text files (one "x y z" per point
line, one integer per label line), a single-file JSON variant, and a JSON
dataset manifest listing sample paths, category, part count and split tags.
Part ids are 1-based; label 0 is reserved for zero-coordinate padding.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import write_atomic


class CloudFormatError(ValueError):
    """Unparsable or inconsistent cloud/label source."""


@dataclass
class LabeledCloud:
    """n x 3 coordinates with per-point part ids in 0..k (0 = padding)."""

    points: np.ndarray
    labels: np.ndarray
    k: int
    label_map: dict[int, int] | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise CloudFormatError(f"points must be (n, 3), got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise CloudFormatError("cloud must contain at least one point")
        if self.labels.shape != (self.points.shape[0],):
            raise CloudFormatError(
                f"{self.points.shape[0]} points but {self.labels.shape[0]} labels")
        if not np.all(np.isfinite(self.points)):
            raise CloudFormatError("points contain non-finite coordinates")
        if self.labels.min() < 0 or self.labels.max() > self.k:
            raise CloudFormatError(
                f"labels must lie in 0..{self.k}, found "
                f"[{self.labels.min()}, {self.labels.max()}]")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def real_mask(self) -> np.ndarray:
        return self.labels != 0

    def real_points(self) -> np.ndarray:
        return self.points[self.real_mask]

    def to_json_dict(self) -> dict:
        return {"points": self.points.tolist(), "labels": self.labels.tolist(),
                "k": self.k}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "LabeledCloud":
        try:
            points = obj["points"]
            labels = obj["labels"]
        except KeyError as exc:
            raise CloudFormatError(f"cloud JSON missing key {exc}") from None
        k = int(obj.get("k") or max(labels, default=0))
        return cls(np.asarray(points), np.asarray(labels), k)


@dataclass
class Dataset:
    samples: list[LabeledCloud]
    category: str = "synthetic"
    k: int = 0
    split: str = ""

    def __post_init__(self):
        for i, s in enumerate(self.samples):
            if s.k != self.k:
                raise CloudFormatError(f"sample {i} has k={s.k}, dataset k={self.k}")

    def __len__(self) -> int:
        return len(self.samples)


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------


def _parse_points(lines: list[str], source: str) -> np.ndarray:
    rows = []
    for ln, line in enumerate(lines, 1):
        toks = line.split()
        if len(toks) != 3:
            raise CloudFormatError(f"{source}:{ln}: expected 3 coordinates, got {len(toks)}")
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise CloudFormatError(f"{source}:{ln}: unparsable coordinate in {line!r}") from None
    return np.asarray(rows, dtype=np.float32)


def load_labeled_cloud(points_source: str, labels_source: str) -> LabeledCloud:
    """Load parallel .pts/.seg files; raw part ids are rank-remapped onto
    1..k (0 stays padding) and the mapping is recorded on the cloud."""
    with open(points_source) as fh:
        point_lines = [l for l in fh.read().splitlines() if l.strip()]
    with open(labels_source) as fh:
        label_lines = [l for l in fh.read().splitlines() if l.strip()]
    if len(point_lines) != len(label_lines):
        raise CloudFormatError(
            f"count mismatch: {len(point_lines)} points in {points_source} vs "
            f"{len(label_lines)} labels in {labels_source}")
    points = _parse_points(point_lines, points_source)
    try:
        raw = np.asarray([int(l) for l in label_lines], dtype=np.int64)
    except ValueError:
        raise CloudFormatError(f"{labels_source}: labels must be integers") from None
    if raw.min() < 0:
        raise CloudFormatError(f"{labels_source}: negative label {raw.min()}")
    ids = sorted(set(raw.tolist()) - {0})
    mapping = {orig: rank for rank, orig in enumerate(ids, start=1)}
    mapping[0] = 0
    labels = np.asarray([mapping[v] for v in raw.tolist()], dtype=np.int32)
    return LabeledCloud(points, labels, k=len(ids), label_map=mapping)


def load_cloud_json(path: str) -> LabeledCloud:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CloudFormatError(f"{path}: invalid JSON ({exc})") from None
    return LabeledCloud.from_json_dict(obj)


def save_cloud_json(path: str, cloud: LabeledCloud) -> None:
    write_atomic(path, json.dumps(cloud.to_json_dict()).encode("utf-8"))


def save_pts_seg(points_path: str, labels_path: str, cloud: LabeledCloud) -> None:
    pts = "\n".join(" ".join(f"{v:.8g}" for v in row) for row in cloud.points)
    seg = "\n".join(str(int(v)) for v in cloud.labels)
    write_atomic(points_path, (pts + "\n").encode("utf-8"))
    write_atomic(labels_path, (seg + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# resampling / normalization
# ---------------------------------------------------------------------------


def resample(cloud: LabeledCloud, n_target: int, seed: int = 0) -> LabeledCloud:
    """Random downsample without replacement, or zero-pad with label 0."""
    if n_target < 1:
        raise ValueError(f"n_target must be >= 1, got {n_target}")
    if cloud.n == n_target:
        return replace(cloud)
    if cloud.n > n_target:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(cloud.n, size=n_target, replace=False))
        return LabeledCloud(cloud.points[keep], cloud.labels[keep], cloud.k,
                            cloud.label_map)
    pad = n_target - cloud.n
    points = np.concatenate([cloud.points, np.zeros((pad, 3), dtype=np.float32)])
    labels = np.concatenate([cloud.labels, np.zeros(pad, dtype=np.int32)])
    return LabeledCloud(points, labels, cloud.k, cloud.label_map)


def normalize(cloud: LabeledCloud) -> LabeledCloud:
    """Center non-padding points at their centroid and scale the farthest to
    unit distance; padding rows stay at the origin."""
    mask = cloud.real_mask
    if not mask.any():
        raise ValueError("cannot normalize a cloud with no non-padding points")
    pts = cloud.points.astype(np.float64)
    centroid = pts[mask].mean(axis=0)
    centered = pts[mask] - centroid
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius < 1e-12:
        warnings.warn("degenerate cloud (all points identical); scale fallback 1")
        radius = 1.0
    out = np.zeros_like(pts)
    out[mask] = centered / radius
    return LabeledCloud(out.astype(np.float32), cloud.labels, cloud.k, cloud.label_map)


# ---------------------------------------------------------------------------
# synthetic shapes
# ---------------------------------------------------------------------------


@dataclass
class BoxPart:
    """One axis-aligned box: full-extent ranges and center ranges per axis.

    Several entries may share a part id; the part is then the union of their
    boxes (e.g. four leg columns forming one "legs" part) and its presence is
    decided once for the whole group. ``mirror_x`` duplicates the box at -x
    (arm pairs, leg pairs) without a second spec entry."""

    part_id: int
    extent_lo: tuple[float, float, float]
    extent_hi: tuple[float, float, float]
    center_lo: tuple[float, float, float]
    center_hi: tuple[float, float, float]
    presence: float = 1.0
    mirror_x: bool = False


@dataclass
class SynthSpec:
    parts: list[BoxPart]
    points: int = 256
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if not self.parts:
            raise ValueError("spec needs at least one part")
        for p in self.parts:
            if not 0.0 <= p.presence <= 1.0:
                raise ValueError(f"part {p.part_id}: presence {p.presence} not in [0,1]")
        if not any(p.presence >= 1.0 for p in self.parts):
            raise ValueError("at least one part must have presence probability 1")

    @property
    def k(self) -> int:
        return max(p.part_id for p in self.parts)

    def to_json_dict(self) -> dict:
        return {
            "points": self.points, "seed": self.seed, "normalize": self.normalize,
            "parts": [{"part_id": p.part_id, "extent_lo": list(p.extent_lo),
                       "extent_hi": list(p.extent_hi), "center_lo": list(p.center_lo),
                       "center_hi": list(p.center_hi), "presence": p.presence,
                       "mirror_x": p.mirror_x}
                      for p in self.parts],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SynthSpec":
        parts = [BoxPart(p["part_id"], tuple(p["extent_lo"]), tuple(p["extent_hi"]),
                         tuple(p["center_lo"]), tuple(p["center_hi"]),
                         p.get("presence", 1.0), p.get("mirror_x", False))
                 for p in obj["parts"]]
        return cls(parts, points=obj.get("points", 256), seed=obj.get("seed", 0),
                   normalize=obj.get("normalize", True))


def chair_spec(points: int = 256, seed: int = 0,
               arm_presence: float = 0.65) -> SynthSpec:
    """Chair-like union-of-boxes family: seat and back slabs, four leg
    columns, two arm rails (present on ~2/3 of samples by default). Jittered
    extents and centers give every part per-sample shape variation; thin
    mirrored members keep the family hard enough that feature averaging
    visibly blurs it."""
    return SynthSpec(parts=[
        BoxPart(1, (0.8, 0.8, 0.10), (1.3, 1.2, 0.16),
                (-0.04, -0.04, -0.02), (0.04, 0.04, 0.02)),           # seat
        BoxPart(2, (0.7, 0.10, 0.6), (1.2, 0.18, 1.0),
                (-0.04, -0.60, 0.45), (0.04, -0.48, 0.62)),           # back
        BoxPart(3, (0.09, 0.09, 0.7), (0.2, 0.2, 1.0),
                (0.32, -0.48, -0.62), (0.52, -0.36, -0.52),
                mirror_x=True),                                       # rear legs
        BoxPart(3, (0.09, 0.09, 0.7), (0.2, 0.2, 1.0),
                (0.32, 0.36, -0.62), (0.52, 0.48, -0.52),
                mirror_x=True),                                       # front legs
        BoxPart(4, (0.09, 0.7, 0.10), (0.18, 1.0, 0.2),
                (0.45, -0.02, 0.28), (0.60, 0.06, 0.42),
                presence=arm_presence, mirror_x=True),                # arm rails
    ], points=points, seed=seed)


def _synth_one(spec: SynthSpec, rng: np.random.Generator) -> LabeledCloud:
    # presence is decided once per part id, so multi-box parts appear or
    # vanish as a unit; the draw is consumed even for always-present parts to
    # keep the stream aligned
    group_present: dict[int, bool] = {}
    for part in spec.parts:
        if part.part_id not in group_present:
            draw = rng.random()
            group_present[part.part_id] = part.presence >= 1.0 or draw < part.presence
    boxes = []
    for part in spec.parts:
        if not group_present[part.part_id]:
            continue
        center = rng.uniform(part.center_lo, part.center_hi)
        extent = rng.uniform(part.extent_lo, part.extent_hi)
        boxes.append((part.part_id, center, extent))
        if part.mirror_x:
            mirrored = center.copy()
            mirrored[0] = -mirrored[0]
            boxes.append((part.part_id, mirrored, extent))
    volumes = np.array([e.prod() for _, _, e in boxes])
    counts = np.maximum(1, np.floor(spec.points * volumes / volumes.sum()).astype(int))
    while counts.sum() > spec.points:
        counts[counts.argmax()] -= 1
    counts[volumes.argmax()] += spec.points - counts.sum()
    chunks, labels = [], []
    for (part_id, center, extent), cnt in zip(boxes, counts):
        pts = rng.uniform(center - extent / 2, center + extent / 2, size=(cnt, 3))
        chunks.append(pts.astype(np.float32))
        labels.append(np.full(cnt, part_id, dtype=np.int32))
    cloud = LabeledCloud(np.concatenate(chunks), np.concatenate(labels), spec.k)
    if spec.normalize:
        cloud = normalize(cloud)
    return resample(cloud, spec.points, seed=int(rng.integers(2 ** 31)))


def synth_dataset(spec: SynthSpec, count: int) -> Dataset:
    """Deterministic procedural dataset: sample i derives its own RNG stream
    from (spec.seed, i), so regeneration is byte-identical."""
    samples = [_synth_one(spec, np.random.default_rng([spec.seed, i]))
               for i in range(count)]
    return Dataset(samples, category="synthetic", k=spec.k)


# ---------------------------------------------------------------------------
# splits and manifests
# ---------------------------------------------------------------------------


def split_dataset(dataset: Dataset, ratios: tuple[float, float, float],
                  seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint, exhaustive, deterministic shuffled split."""
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    # largest-remainder apportionment so counts sum to n exactly
    raw = np.array(ratios) * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    for idx in np.argsort(-(raw - counts))[:rem]:
        counts[idx] += 1
    out = []
    offset = 0
    for cnt, tag in zip(counts, ("train", "val", "test")):
        idx = order[offset:offset + cnt]
        out.append(Dataset([dataset.samples[i] for i in idx], dataset.category,
                           dataset.k, split=tag))
        offset += cnt
    return tuple(out)


def write_dataset(out_dir: str, splits: dict[str, Dataset], category: str,
                  k: int, extra_meta: dict | None = None) -> str:
    """Write cloud JSON files plus a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for tag, ds in splits.items():
        for i, cloud in enumerate(ds.samples):
            rel = f"{tag}_{i:05d}.json"
            save_cloud_json(os.path.join(out_dir, rel), cloud)
            entries.append({"path": rel, "split": tag})
    manifest = {"category": category, "k": k, "samples": entries}
    if extra_meta:
        manifest["meta"] = extra_meta
    path = os.path.join(out_dir, "manifest.json")
    write_atomic(path, json.dumps(manifest, indent=1).encode("utf-8"))
    return path


def load_manifest(path: str, split: str | None = None) -> Dataset:
    with open(path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    samples, tags = [], []
    for entry in manifest["samples"]:
        if split is not None and entry.get("split") != split:
            continue
        cloud = load_cloud_json(os.path.join(base, entry["path"]))
        if cloud.k < manifest["k"]:
            cloud = LabeledCloud(cloud.points, cloud.labels, manifest["k"])
        samples.append(cloud)
        tags.append(entry.get("split", ""))
    if not samples:
        raise CloudFormatError(f"{path}: no samples for split {split!r}")
    tag = split if split is not None else ""
    return Dataset(samples, category=manifest.get("category", ""), k=manifest["k"],
                   split=tag)
