"""The end-to-end part-aware autoencoder: point MLP encoder, masked part
pooling, global pooling, segmentation head, MLP decoder, and the trainer.

Encoding is two-stage: per-point features are max-pooled within each labeled
part, then the part features are max-pooled again into the global feature
("max of maxes"), so the global code is identical to direct pooling while the
part codes remain individually editable. During training the part pool
consumes ground-truth labels and the segmentation head learns from the same
forward pass; at inference the head can supply labels for unannotated clouds.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .data import Dataset, LabeledCloud
from .distances import chamfer, chamfer_batch_loss, emd_batch_loss
from .latent import PartFeatureSet, fuse_global


@dataclass
class ModelConfig:
    feature_size: int = 64
    parts: int = 4
    points: int = 256
    encoder_hidden: tuple = (64, 128)
    seg_hidden: tuple = (64, 32, 16)
    decoder_hidden: tuple = (1024, 2048)
    batchnorm: bool = True
    pooling: str = "max"
    seg_use_global: bool = True
    label_source: str = "given"

    def __post_init__(self):
        if self.pooling not in ("max", "mean"):
            raise ValueError(f"pooling must be 'max' or 'mean', got {self.pooling!r}")
        if self.label_source not in ("given", "predicted"):
            raise ValueError(f"label_source must be 'given' or 'predicted'")
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.seg_hidden = tuple(self.seg_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)

    @classmethod
    def paper_scale(cls, parts: int = 4) -> "ModelConfig":
        return cls(feature_size=128, parts=parts, points=2048)


@dataclass
class EncodeResult:
    point_features: np.ndarray
    parts: PartFeatureSet
    global_feature: np.ndarray


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 200
    batch_size: int = 32
    metric: str = "cd"
    seg_weight: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    label_source: str = "ground_truth"  # or "random": frozen-failure ablation
    pad_targets: bool = False

    def __post_init__(self):
        # lr 0 is allowed as an explicit no-op (sanity runs); negative is not
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.metric not in ("cd", "emd"):
            raise ValueError(f"metric must be 'cd' or 'emd', got {self.metric!r}")
        if self.label_source not in ("ground_truth", "random"):
            raise ValueError("label_source must be 'ground_truth' or 'random'")


@dataclass
class TrainHistory:
    recon: list[float] = field(default_factory=list)
    seg: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {"recon": self.recon, "seg": self.seg, "seconds": self.seconds}


class LpmModel:
    """Encoder + segmentation head + decoder with shared point features."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.dtype = np.float32
        rng = np.random.default_rng(seed)
        c = config
        enc_dims = (3,) + c.encoder_hidden + (c.feature_size,)
        self.encoder = [
            ad.Dense(f"enc{i}", enc_dims[i], enc_dims[i + 1], relu=True,
                     batchnorm=c.batchnorm, rng=rng)
            for i in range(len(enc_dims) - 1)]
        seg_in = c.feature_size * (2 if c.seg_use_global else 1)
        seg_dims = (seg_in,) + c.seg_hidden
        self.seg = [
            ad.Dense(f"seg{i}", seg_dims[i], seg_dims[i + 1], relu=True,
                     batchnorm=c.batchnorm, rng=rng)
            for i in range(len(seg_dims) - 1)]
        self.seg.append(ad.Dense(f"seg{len(seg_dims) - 1}", seg_dims[-1],
                                 c.parts + 1, relu=False, rng=rng))
        dec_dims = (c.feature_size,) + c.decoder_hidden
        self.decoder = [
            ad.Dense(f"dec{i}", dec_dims[i], dec_dims[i + 1], relu=True, rng=rng)
            for i in range(len(dec_dims) - 1)]
        self.decoder.append(ad.Dense(f"dec{len(dec_dims) - 1}", dec_dims[-1],
                                     c.points * 3, relu=False, rng=rng))

    # -- parameter plumbing -------------------------------------------------

    def layers(self) -> list[ad.Dense]:
        return self.encoder + self.seg + self.decoder

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.layers():
            out.update(layer.parameters())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.layers():
            out.update(layer.buffers())
        return out

    def astype(self, dtype) -> "LpmModel":
        self.dtype = dtype
        for layer in self.layers():
            layer.astype(dtype)
        return self

    # -- tape-level forward pieces -------------------------------------------

    def _point_features(self, tape, points: np.ndarray, training: bool) -> ad.Var:
        x = tape.leaf(np.ascontiguousarray(points, dtype=self.dtype))
        return ad.pointwise_mlp(tape, self.encoder, x, training)

    def _pool_parts(self, tape, fx: ad.Var, labels: np.ndarray, segments: int):
        if self.config.pooling == "max":
            parts, _, present = ad.segment_maxpool(tape, fx, labels, segments)
        else:
            parts, present = ad.segment_meanpool(tape, fx, labels, segments)
        return parts, present

    def _fuse(self, tape, parts: ad.Var, present: np.ndarray, block: int) -> ad.Var:
        if self.config.pooling == "max":
            return ad.blocked_colmax(tape, parts, present, block)
        return ad.blocked_colmean(tape, parts, present, block)

    def _decode(self, tape, g: ad.Var, training: bool) -> ad.Var:
        return ad.pointwise_mlp(tape, self.decoder, g, training)

    def _segment_logits(self, tape, fx: ad.Var, globals_: ad.Var,
                        points_per_cloud: int, training: bool) -> ad.Var:
        if self.config.seg_use_global:
            seg_in = ad.concat_cols(tape, fx, ad.repeat_rows(tape, globals_,
                                                             points_per_cloud))
        else:
            seg_in = fx
        return ad.pointwise_mlp(tape, self.seg, seg_in, training)

    # -- public numpy API ----------------------------------------------------

    def encode(self, cloud: LabeledCloud | np.ndarray,
               labels: np.ndarray | None = None) -> EncodeResult:
        """Point features, per-part features and the fused global feature.

        Padding (label 0) is excluded from every pool. Runs in inference mode
        (frozen batch-norm statistics), so the result is exactly permutation
        equivariant/invariant.
        """
        if isinstance(cloud, LabeledCloud):
            points, labels = cloud.points, cloud.labels
        else:
            points = np.asarray(cloud)
            if labels is None:
                raise ValueError("encode needs labels when given a bare array")
        k = self.config.parts
        tape = ad.Tape()
        fx = self._point_features(tape, points, training=False)
        parts, present = self._pool_parts(tape, fx, labels, k)
        g = self._fuse(tape, parts, present, k)
        return EncodeResult(
            point_features=fx.data,
            parts=PartFeatureSet(parts.data.copy(), present.copy()),
            global_feature=g.data[0].copy())

    def segment(self, point_features: np.ndarray,
                global_feature: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point class probabilities over k+1 classes (0 = padding) and
        their argmax labels. Input rows are each point's feature concatenated
        with the shared global feature."""
        fx = np.asarray(point_features, dtype=self.dtype)
        if fx.ndim != 2 or fx.shape[1] != self.config.feature_size:
            raise ad.ShapeError(f"point features must be (n, {self.config.feature_size})")
        tape = ad.Tape()
        fx_var = tape.leaf(fx)
        g_var = tape.leaf(np.asarray(global_feature, dtype=self.dtype).reshape(1, -1))
        logits = self._segment_logits(tape, fx_var, g_var, fx.shape[0], training=False)
        probs = ad.softmax_rows(tape, logits).data
        return probs, probs.argmax(axis=1).astype(np.int32)

    def predict_labels(self, points: np.ndarray) -> np.ndarray:
        """Labels for an unannotated cloud: point features, direct global
        pool over all rows, then the segmentation head."""
        points = np.asarray(points)
        tape = ad.Tape()
        fx = self._point_features(tape, points, training=False)
        g = fx.data.max(axis=0)
        _, labels = self.segment(fx.data, g)
        return labels

    def decode(self, global_feature: np.ndarray) -> np.ndarray:
        """Deterministic map from a global feature to an (n, 3) cloud."""
        g = np.asarray(global_feature, dtype=self.dtype).reshape(1, -1)
        tape = ad.Tape()
        out = self._decode(tape, tape.leaf(g), training=False)
        return out.data.reshape(self.config.points, 3)

    def decode_parts(self, parts: PartFeatureSet) -> np.ndarray:
        return self.decode(fuse_global(parts))

    def reconstruct(self, cloud: LabeledCloud,
                    label_source: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Encode/decode round trip; 'predicted' mode first runs the
        segmentation head so unannotated clouds work end to end. Returns the
        decoded points and the labels that were fed to the part pool."""
        source = label_source or self.config.label_source
        if source == "given":
            labels = cloud.labels
        elif source == "predicted":
            labels = self.predict_labels(cloud.points)
            if not (labels > 0).any():
                raise ValueError("segmentation predicted only padding; cannot pool")
        else:
            raise ValueError(f"unknown label source {source!r}")
        enc = self.encode(cloud.points, labels)
        return self.decode(enc.global_feature), labels

    # -- persistence -----------------------------------------------------------

    def _tensor_dict(self) -> dict[str, np.ndarray]:
        out = dict(self.parameters())
        out.update(self.buffers())
        return out

    def save(self, path: str) -> None:
        meta = {"kind": "lpm-model", "config": asdict(self.config)}
        checkpoint.save(path, self._tensor_dict(), meta)

    @classmethod
    def load(cls, path: str) -> "LpmModel":
        tensors, meta = checkpoint.load(path)
        if meta.get("kind") != "lpm-model":
            raise checkpoint.CheckpointError(
                f"{path}: expected an lpm-model checkpoint, got {meta.get('kind')!r}")
        cfg = meta["config"]
        for key in ("encoder_hidden", "seg_hidden", "decoder_hidden"):
            cfg[key] = tuple(cfg[key])
        model = cls(ModelConfig(**cfg), seed=0)
        own = model._tensor_dict()
        if set(own) != set(tensors):
            missing = set(own) ^ set(tensors)
            raise checkpoint.CheckpointError(f"{path}: tensor set mismatch: {missing}")
        for name, arr in tensors.items():
            if own[name].shape != arr.shape:
                raise checkpoint.CheckpointError(
                    f"{path}: tensor {name} has shape {arr.shape}, expected "
                    f"{own[name].shape}")
            own[name][...] = arr
        return model

    def checkpoint_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._tensor_dict()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._tensor_dict()[name]).tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _batch_step(model: LpmModel, clouds: list[LabeledCloud],
                pool_labels: list[np.ndarray], config: TrainConfig,
                state: ad.AdamState) -> tuple[float, float]:
    k = model.config.parts
    n = clouds[0].n
    batch = len(clouds)
    points = np.concatenate([c.points for c in clouds])
    stacked_labels = np.concatenate([c.labels for c in clouds])
    offset_labels = np.concatenate([
        np.where(lbl > 0, lbl + i * k, 0)
        for i, lbl in enumerate(pool_labels)])

    tape = ad.Tape()
    fx = model._point_features(tape, points, training=True)
    parts, present = model._pool_parts(tape, fx, offset_labels, batch * k)
    globals_ = model._fuse(tape, parts, present, k)
    decoded = model._decode(tape, globals_, training=True)

    if config.pad_targets:
        targets = [c.points for c in clouds]
    else:
        targets = [c.real_points() for c in clouds]
    if config.metric == "cd":
        recon = chamfer_batch_loss(tape, decoded, targets, model.config.points)
    else:
        recon = emd_batch_loss(tape, decoded, targets, model.config.points)

    logits = model._segment_logits(tape, fx, globals_, n, training=True)
    seg_loss = ad.cross_entropy(tape, logits, stacked_labels, ignore_label=0)

    loss = ad.add(tape, recon, ad.scale(tape, seg_loss, config.seg_weight))
    if not np.isfinite(loss.data):
        raise ad.NonFiniteUpdateError(
            f"non-finite loss at optimizer step {state.step + 1}")
    ad.backward(tape, loss)
    ad.adam_step(model.parameters(), tape.grads(), state)
    return float(recon.data), float(seg_loss.data)


def train(model: LpmModel, dataset: Dataset, config: TrainConfig) -> TrainHistory:
    """Minimize reconstruction + seg_weight * cross-entropy with Adam.

    The part pool consumes ground-truth labels (or frozen random labels for
    the segmentation-failure ablation); the head trains from the same forward
    pass. History records the mean of both losses per epoch and is
    reproducible bit-for-bit from the seed.
    """
    if dataset.k != model.config.parts:
        raise ValueError(f"dataset k={dataset.k} but model expects "
                         f"{model.config.parts} parts")
    sizes = {c.n for c in dataset.samples}
    if len(sizes) != 1:
        raise ValueError(f"training requires uniform cloud size, got {sorted(sizes)}")

    if config.label_source == "random":
        label_rng = np.random.default_rng([config.seed, 0xFA11])
        pool_labels = [
            np.where(c.labels > 0,
                     label_rng.integers(1, dataset.k + 1, c.n).astype(np.int32), 0)
            for c in dataset.samples]
    else:
        pool_labels = [c.labels for c in dataset.samples]

    state = ad.AdamState(lr=config.learning_rate, beta1=config.beta1,
                         beta2=config.beta2, epsilon=config.epsilon)
    epoch_rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    n_samples = len(dataset)
    for epoch in range(config.epochs):
        order = epoch_rng.permutation(n_samples)
        recon_sum = seg_sum = 0.0
        steps = 0
        t0 = time.perf_counter()
        for lo in range(0, n_samples, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            try:
                recon, seg = _batch_step(
                    model, [dataset.samples[i] for i in idx],
                    [pool_labels[i] for i in idx], config, state)
            except ad.NonFiniteUpdateError as exc:
                raise ad.NonFiniteUpdateError(
                    f"epoch {epoch + 1}, batch {steps + 1}: {exc}") from None
            recon_sum += recon
            seg_sum += seg
            steps += 1
        history.recon.append(recon_sum / steps)
        history.seg.append(seg_sum / steps)
        history.seconds.append(time.perf_counter() - t0)
    return history


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def mean_reconstruction_cd(model: LpmModel, dataset: Dataset,
                           label_source: str = "given") -> float:
    total = 0.0
    for cloud in dataset.samples:
        decoded, _ = model.reconstruct(cloud, label_source)
        total += chamfer(decoded, cloud.real_points())
    return total / len(dataset)


def segmentation_accuracy(model: LpmModel, dataset: Dataset) -> float:
    """Point accuracy of predicted labels against ground truth, padding
    excluded."""
    correct = 0
    count = 0
    for cloud in dataset.samples:
        predicted = model.predict_labels(cloud.points)
        mask = cloud.real_mask
        correct += int((predicted[mask] == cloud.labels[mask]).sum())
        count += int(mask.sum())
    return correct / count
