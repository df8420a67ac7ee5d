"""Generative heads over the latent part space.

The VAE inserts per-part mean/log-variance layers between the part pool and
the global fusion, so sampling happens row-wise and a single part can be
regenerated on its own. The latent GAN (standard or Wasserstein with gradient
penalty) trains against part-feature vectors from a frozen pretrained
autoencoder and produces whole k*l latent sets.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .data import Dataset
from .distances import chamfer_batch_loss, emd_batch_loss
from .latent import PartFeatureSet, fuse_global
from .model import LpmModel


# ---------------------------------------------------------------------------
# beta-VAE head
# ---------------------------------------------------------------------------


class VaeHead:
    """Per-part sampling layers: mean and log-variance maps, each l -> l."""

    def __init__(self, feature_size: int, parts: int, beta: float = 0.1,
                 seed: int = 0):
        if beta < 0:
            raise ValueError(f"beta must be >= 0, got {beta}")
        self.feature_size = feature_size
        self.parts = parts
        self.beta = beta
        self.trained = False
        rng = np.random.default_rng(seed)
        self.mu_layer = ad.Dense("vae_mu", feature_size, feature_size,
                                 relu=False, rng=rng)
        self.logvar_layer = ad.Dense("vae_logvar", feature_size, feature_size,
                                     relu=False, rng=rng)
        # start near-deterministic: identity mean, strongly negative logvar
        self.mu_layer.w[...] = np.eye(feature_size, dtype=np.float32)
        self.logvar_layer.w[...] *= 0.01
        self.logvar_layer.b[...] = -4.0

    def parameters(self) -> dict[str, np.ndarray]:
        out = dict(self.mu_layer.parameters())
        out.update(self.logvar_layer.parameters())
        return out

    def sample(self, tape: ad.Tape, part_features: ad.Var,
               present: np.ndarray | None = None,
               eps: np.ndarray | None = None):
        """Reparameterized draw z = mu + exp(logvar/2) * eps per part row.

        Returns (z, mu, logvar, kl) where kl is the standard Gaussian KL
        normalized by the number of contributing latent entries. Absent rows
        (present False) receive no noise and no KL mass.
        """
        rows, l = part_features.data.shape
        if l != self.feature_size:
            raise ad.ShapeError(f"expected {self.feature_size} features, got {l}")
        if present is None:
            present = np.ones(rows, dtype=bool)
        present = np.asarray(present, dtype=bool)
        if eps is None:
            eps = np.zeros((rows, l), dtype=part_features.data.dtype)
        mask = present[:, None].astype(part_features.data.dtype)
        mu = self.mu_layer.forward(tape, part_features)
        logvar = self.logvar_layer.forward(tape, part_features)
        if not np.all(np.isfinite(logvar.data)):
            raise ad.NonFiniteUpdateError("log-variance became non-finite")
        sigma = ad.exp(tape, ad.scale(tape, logvar, 0.5))
        z = ad.add(tape, mu, ad.mul_const(tape, sigma, np.asarray(eps) * mask))
        # 0.5 * sum(mu^2 + sigma^2 - 1 - logvar) over present rows, per entry
        term = ad.sub(tape, ad.add(tape, ad.mul(tape, mu, mu),
                                   ad.exp(tape, logvar)),
                      ad.add_const(tape, logvar, 1.0))
        denom = max(int(present.sum()), 1) * l
        kl = ad.scale(tape, ad.sum_all(tape, ad.mul_const(tape, term, mask)),
                      0.5 / denom)
        return z, mu, logvar, kl

    def sample_prior(self, count: int, seed: int = 0) -> list[PartFeatureSet]:
        """Draw k x l latent sets from the standard-normal prior."""
        if not self.trained:
            raise RuntimeError("VAE head has not been trained")
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(count):
            z = rng.standard_normal((self.parts, self.feature_size)).astype(np.float32)
            out.append(PartFeatureSet(z, np.ones(self.parts, dtype=bool)))
        return out

    def regenerate_row(self, seed: int = 0) -> np.ndarray:
        """One fresh prior row for a regenerate-part edit."""
        if not self.trained:
            raise RuntimeError("VAE head has not been trained")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.feature_size).astype(np.float32)

    def save(self, path: str) -> None:
        meta = {"kind": "vae-head", "feature_size": self.feature_size,
                "parts": self.parts, "beta": self.beta, "trained": self.trained}
        checkpoint.save(path, self.parameters(), meta)

    @classmethod
    def load(cls, path: str) -> "VaeHead":
        tensors, meta = checkpoint.load(path)
        if meta.get("kind") != "vae-head":
            raise checkpoint.CheckpointError(
                f"{path}: expected a vae-head checkpoint, got {meta.get('kind')!r}")
        head = cls(meta["feature_size"], meta["parts"], meta["beta"])
        head.trained = bool(meta.get("trained", False))
        own = head.parameters()
        for name, arr in tensors.items():
            own[name][...] = arr
        return head


def vae_loss(recon: float, kl: float, beta: float) -> float:
    """Reconstruction plus beta-weighted KL (minimized)."""
    return recon + beta * kl


def vae_reconstruct(model: LpmModel, head: VaeHead, cloud) -> np.ndarray:
    """Noise-free VAE reconstruction: encode, map part rows through the mean
    layer, fuse, decode. After VAE training the decoder consumes mean-mapped
    features, so this (not the bare autoencoder path) is the VAE's round
    trip."""
    enc = model.encode(cloud)
    tape = ad.Tape()
    _, mu, _, _ = head.sample(tape, tape.leaf(enc.parts.features),
                              enc.parts.present)
    return model.decode(fuse_global(PartFeatureSet(mu.data, enc.parts.present)))


@dataclass
class VaeTrainConfig:
    beta: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    metric: str = "cd"
    seg_weight: float = 1.0
    seed: int = 0
    noise_scale: float = 1.0  # 0 suppresses sampling noise (deterministic VAE)


def train_vae(model: LpmModel, head: VaeHead, dataset: Dataset,
              config: VaeTrainConfig) -> list[tuple[float, float]]:
    """End-to-end VAE training: the base objective plus beta * KL, with the
    sampling layers between the part pool and the fusion stage. Returns
    (recon, kl) per epoch."""
    if dataset.k != model.config.parts:
        raise ValueError("dataset / model part count mismatch")
    k = model.config.parts
    state = ad.AdamState(lr=config.learning_rate)
    epoch_rng = np.random.default_rng(config.seed)
    noise_rng = np.random.default_rng([config.seed, 0x5EED])
    history = []
    n_samples = len(dataset)
    params = dict(model.parameters())
    params.update(head.parameters())
    for _ in range(config.epochs):
        order = epoch_rng.permutation(n_samples)
        recon_sum = kl_sum = 0.0
        steps = 0
        for lo in range(0, n_samples, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            clouds = [dataset.samples[i] for i in idx]
            batch = len(clouds)
            n = clouds[0].n
            points = np.concatenate([c.points for c in clouds])
            stacked_labels = np.concatenate([c.labels for c in clouds])
            offset_labels = np.concatenate([
                np.where(c.labels > 0, c.labels + i * k, 0)
                for i, c in enumerate(clouds)])
            eps = config.noise_scale * noise_rng.standard_normal(
                (batch * k, model.config.feature_size))

            tape = ad.Tape()
            fx = model._point_features(tape, points, training=True)
            parts, present = model._pool_parts(tape, fx, offset_labels, batch * k)
            z, _, _, kl = head.sample(tape, parts, present,
                                      eps.astype(model.dtype))
            globals_ = model._fuse(tape, z, present, k)
            decoded = model._decode(tape, globals_, training=True)
            targets = [c.real_points() for c in clouds]
            if config.metric == "cd":
                recon = chamfer_batch_loss(tape, decoded, targets, model.config.points)
            else:
                recon = emd_batch_loss(tape, decoded, targets, model.config.points)
            logits = model._segment_logits(tape, fx, globals_, n, training=True)
            seg = ad.cross_entropy(tape, logits, stacked_labels, ignore_label=0)
            loss = ad.add(tape, ad.add(tape, recon,
                                       ad.scale(tape, seg, config.seg_weight)),
                          ad.scale(tape, kl, config.beta))
            ad.backward(tape, loss)
            ad.adam_step(params, tape.grads(), state)
            recon_sum += float(recon.data)
            kl_sum += float(kl.data)
            steps += 1
        history.append((recon_sum / steps, kl_sum / steps))
    head.trained = True
    return history


# ---------------------------------------------------------------------------
# latent-space GAN
# ---------------------------------------------------------------------------


@dataclass
class GanConfig:
    feature_size: int = 64
    parts: int = 4
    noise_dim: int = 128
    objective: str = "gan"  # "gan" | "wgan-gp"
    gp_weight: float = 10.0
    critic_steps: int = 5
    lr_generator: float = 5e-4
    lr_discriminator: float = 1e-4
    beta1: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.objective not in ("gan", "wgan-gp"):
            raise ValueError(f"objective must be 'gan' or 'wgan-gp'")
        if self.gp_weight < 0:
            raise ValueError("gradient-penalty weight must be >= 0")


class LatentGan:
    """Generator 128 -> l -> k*l and a mirrored discriminator, both plain
    ReLU MLPs over flattened part-feature vectors."""

    def __init__(self, config: GanConfig):
        self.config = config
        self.trained = False
        rng = np.random.default_rng(config.seed)
        out_dim = config.feature_size * config.parts
        gen_dims = (config.noise_dim, 128, config.feature_size, out_dim)
        self.generator = [
            ad.Dense(f"gen{i}", gen_dims[i], gen_dims[i + 1],
                     relu=i < len(gen_dims) - 2, rng=rng)
            for i in range(len(gen_dims) - 1)]
        disc_dims = (out_dim, config.feature_size, 128, 1)
        self.discriminator = [
            ad.Dense(f"disc{i}", disc_dims[i], disc_dims[i + 1],
                     relu=i < len(disc_dims) - 2, rng=rng)
            for i in range(len(disc_dims) - 1)]

    def gen_parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.generator:
            out.update(layer.parameters())
        return out

    def disc_parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.discriminator:
            out.update(layer.parameters())
        return out

    def generate(self, noise: np.ndarray) -> np.ndarray:
        tape = ad.Tape()
        out = ad.pointwise_mlp(tape, self.generator,
                               tape.leaf(noise.astype(np.float32)))
        return out.data

    def sample(self, count: int, seed: int = 0) -> list[PartFeatureSet]:
        """Decode-ready latent sets from generator noise; deterministic under
        the seed."""
        if not self.trained:
            raise RuntimeError("GAN has not been trained")
        if count == 0:
            return []
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((count, self.config.noise_dim)).astype(np.float32)
        flat = self.generate(noise)
        k, l = self.config.parts, self.config.feature_size
        return [PartFeatureSet(row.reshape(k, l).copy(), np.ones(k, dtype=bool))
                for row in flat]

    def save(self, path: str) -> None:
        meta = {"kind": "latent-gan", "config": asdict(self.config),
                "trained": self.trained}
        tensors = dict(self.gen_parameters())
        tensors.update(self.disc_parameters())
        checkpoint.save(path, tensors, meta)

    @classmethod
    def load(cls, path: str) -> "LatentGan":
        tensors, meta = checkpoint.load(path)
        if meta.get("kind") != "latent-gan":
            raise checkpoint.CheckpointError(
                f"{path}: expected a latent-gan checkpoint, got {meta.get('kind')!r}")
        gan = cls(GanConfig(**meta["config"]))
        gan.trained = bool(meta.get("trained", False))
        own = dict(gan.gen_parameters())
        own.update(gan.disc_parameters())
        for name, arr in tensors.items():
            own[name][...] = arr
        return gan


def critic_input_gradient(tape: ad.Tape, layers: list[ad.Dense],
                          x_hat: np.ndarray) -> ad.Var:
    """Gradient of a ReLU-MLP critic with respect to its input, expressed in
    tape ops so it can itself be differentiated with respect to the critic
    weights. ReLU activation masks are piecewise constant, so treating them
    as constants reproduces exactly what double backpropagation would give
    almost everywhere."""
    h = x_hat
    masks = []
    for layer in layers:
        z = h @ layer.w + layer.b
        if layer.use_relu:
            masks.append(z > 0)
            h = np.where(z > 0, z, 0)
        else:
            masks.append(None)
            h = z
    batch = x_hat.shape[0]
    last = layers[-1]
    g = ad.repeat_rows(tape, ad.transpose(
        tape, tape.leaf(last.w, f"{last.name}.w")), batch)
    if masks[-1] is not None:
        g = ad.mul_const(tape, g, masks[-1])
    for layer, mask in zip(reversed(layers[:-1]), reversed(masks[:-1])):
        if mask is not None:
            g = ad.mul_const(tape, g, mask)
        g = ad.matmul(tape, g, ad.transpose(
            tape, tape.leaf(layer.w, f"{layer.name}.w")))
    return g


def gradient_penalty(tape: ad.Tape, layers: list[ad.Dense],
                     x_hat: np.ndarray) -> ad.Var:
    """Mean (||grad_x critic(x_hat)|| - 1)^2 over the batch."""
    g = critic_input_gradient(tape, layers, x_hat)
    norms = ad.sqrt(tape, ad.sum_rows(tape, ad.mul(tape, g, g)))
    excess = ad.add_const(tape, norms, -1.0)
    return ad.mean_all(tape, ad.mul(tape, excess, excess))


def gan_step(gan: LatentGan, real: np.ndarray, disc_state: ad.AdamState,
             gen_state: ad.AdamState, rng: np.random.Generator) -> tuple[float, float]:
    """One training step: ``critic_steps`` discriminator updates then one
    generator update. Returns (d_loss, g_loss) from the last inner updates."""
    cfg = gan.config
    batch = real.shape[0]
    real = real.astype(np.float32)
    d_loss_val = 0.0
    for _ in range(cfg.critic_steps):
        noise = rng.standard_normal((batch, cfg.noise_dim)).astype(np.float32)
        fake = gan.generate(noise)  # detached: generated off-tape
        tape = ad.Tape()
        d_real = ad.pointwise_mlp(tape, gan.discriminator, tape.leaf(real))
        d_fake = ad.pointwise_mlp(tape, gan.discriminator, tape.leaf(fake))
        if cfg.objective == "gan":
            d_loss = ad.add(tape,
                            ad.mean_all(tape, ad.softplus(tape, ad.scale(tape, d_real, -1.0))),
                            ad.mean_all(tape, ad.softplus(tape, d_fake)))
        else:
            d_loss = ad.sub(tape, ad.mean_all(tape, d_fake),
                            ad.mean_all(tape, d_real))
            if cfg.gp_weight > 0:
                mix = rng.random((batch, 1)).astype(np.float32)
                x_hat = mix * real + (1.0 - mix) * fake
                d_loss = ad.add(tape, d_loss,
                                ad.scale(tape, gradient_penalty(
                                    tape, gan.discriminator, x_hat), cfg.gp_weight))
        if not np.isfinite(d_loss.data):
            raise ad.NonFiniteUpdateError(
                f"non-finite discriminator loss at step {disc_state.step + 1}")
        ad.backward(tape, d_loss)
        grads = tape.grads()
        ad.adam_step(gan.disc_parameters(),
                     {k: grads[k] for k in gan.disc_parameters()}, disc_state)
        d_loss_val = float(d_loss.data)

    noise = rng.standard_normal((batch, cfg.noise_dim)).astype(np.float32)
    tape = ad.Tape()
    fake = ad.pointwise_mlp(tape, gan.generator, tape.leaf(noise))
    d_out = ad.pointwise_mlp(tape, gan.discriminator, fake)
    if cfg.objective == "gan":
        # non-saturating generator objective
        g_loss = ad.mean_all(tape, ad.softplus(tape, ad.scale(tape, d_out, -1.0)))
    else:
        g_loss = ad.scale(tape, ad.mean_all(tape, d_out), -1.0)
    if not np.isfinite(g_loss.data):
        raise ad.NonFiniteUpdateError(
            f"non-finite generator loss at step {gen_state.step + 1}")
    ad.backward(tape, g_loss)
    grads = tape.grads()
    ad.adam_step(gan.gen_parameters(),
                 {k: grads[k] for k in gan.gen_parameters()}, gen_state)
    return d_loss_val, float(g_loss.data)


def encode_dataset_latents(model: LpmModel, dataset: Dataset) -> np.ndarray:
    """Flattened k*l part-feature vectors for every sample with all parts
    present (the GAN's real-data distribution)."""
    rows = []
    for cloud in dataset.samples:
        enc = model.encode(cloud)
        if enc.parts.present.all():
            rows.append(enc.parts.features.reshape(-1))
    if not rows:
        raise ValueError("no sample has all parts present")
    return np.stack(rows)


def train_gan(gan: LatentGan, latents: np.ndarray, steps: int,
              batch_size: int = 32, seed: int = 0) -> list[tuple[float, float]]:
    rng = np.random.default_rng(seed)
    disc_state = ad.AdamState(lr=gan.config.lr_discriminator, beta1=gan.config.beta1)
    gen_state = ad.AdamState(lr=gan.config.lr_generator, beta1=gan.config.beta1)
    history = []
    n = latents.shape[0]
    for _ in range(steps):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        history.append(gan_step(gan, latents[idx], disc_state, gen_state, rng))
    gan.trained = True
    return history
