"""Part-aware point-cloud autoencoder toolkit.

Encode labeled clouds into per-part latent features plus a fused global
feature, edit parts directly in latent space (exchange, interpolate,
compose, remove, regenerate), decode back to clouds, and evaluate generated
sets with MMD / Coverage / JSD / TMD.
"""

from .data import (BoxPart, Dataset, LabeledCloud, SynthSpec, chair_spec,
                   load_labeled_cloud, load_manifest, normalize, resample,
                   split_dataset, synth_dataset)
from .distances import chamfer, emd_approx, emd_exact
from .latent import (EditOp, PartFeatureSet, compose, exchange_part,
                     fuse_global, interpolate, remove_part)
from .metrics import MetricReport, coverage, evaluate, jsd, mmd, tmd
from .model import (EncodeResult, LpmModel, ModelConfig, TrainConfig,
                    TrainHistory, mean_reconstruction_cd,
                    segmentation_accuracy, train)

__all__ = [
    "BoxPart", "Dataset", "LabeledCloud", "SynthSpec", "chair_spec",
    "load_labeled_cloud", "load_manifest", "normalize", "resample",
    "split_dataset", "synth_dataset",
    "chamfer", "emd_approx", "emd_exact",
    "EditOp", "PartFeatureSet", "compose", "exchange_part", "fuse_global",
    "interpolate", "remove_part",
    "MetricReport", "coverage", "evaluate", "jsd", "mmd", "tmd",
    "EncodeResult", "LpmModel", "ModelConfig", "TrainConfig", "TrainHistory",
    "mean_reconstruction_cd", "segmentation_accuracy", "train",
]

__version__ = "0.1.0"
