import numpy as np
import pytest

from partae.data import chair_spec, split_dataset, synth_dataset
from partae.model import LpmModel, ModelConfig, TrainConfig, train


def random_cloud(rng, n=64, k=4, allow_padding=True):
    """Random points with random part labels (a few padding rows when
    allowed)."""
    points = rng.standard_normal((n, 3)).astype(np.float32)
    low = 0 if allow_padding else 1
    labels = rng.integers(low, k + 1, size=n).astype(np.int32)
    if not allow_padding:
        labels[0] = 1
    elif (labels > 0).sum() == 0:
        labels[0] = 1
    return points, labels


@pytest.fixture(scope="session")
def small_setup():
    """A quickly trained model on a small synthetic dataset, shared by the
    tests that need a working (not desk-scale) autoencoder."""
    spec = chair_spec(points=96, seed=11)
    full = synth_dataset(spec, 160)
    train_ds, _, test_ds = split_dataset(full, (0.8, 0.0, 0.2), seed=1)
    config = ModelConfig(feature_size=32, parts=4, points=96,
                         encoder_hidden=(32, 64), seg_hidden=(32, 16, 16),
                         decoder_hidden=(256, 384))
    model = LpmModel(config, seed=3)
    history = train(model, train_ds, TrainConfig(epochs=80, seed=3, batch_size=32))
    return {"model": model, "train": train_ds, "test": test_ds,
            "history": history, "spec": spec}
