"""Anisotropic spectral-domain diffusion for implicit-feedback recommendation."""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

# Lazy exports keep `import sdiff` light so the CLI can pin BLAS thread
# counts via environment variables before numpy loads.
_EXPORTS = {
    "InteractionMatrix": ".data",
    "DatasetSplit": ".data",
    "load_interactions": ".data",
    "interactions_from_rows": ".data",
    "split_dataset": ".data",
    "mask_condition": ".data",
    "write_split_manifest": ".data",
    "read_split_manifest": ".data",
    "NormalizedBipartite": ".graph",
    "SpectralBasis": ".graph",
    "build_normalized_bipartite": ".graph",
    "apply_item_gram": ".graph",
    "truncated_eigendecomposition": ".graph",
    "lanczos_eigsh": ".graph",
    "heat_kernel_reference": ".graph",
    "save_basis": ".graph",
    "load_basis": ".graph",
    "NoiseSchedule": ".schedule",
    "build_schedule": ".schedule",
    "snr_lower_bound": ".schedule",
    "DenoiserParams": ".denoiser",
    "AdamState": ".denoiser",
    "init_denoiser": ".denoiser",
    "denoise": ".denoiser",
    "loss_and_grad": ".denoiser",
    "adam_step": ".denoiser",
    "save_checkpoint": ".denoiser",
    "load_checkpoint": ".denoiser",
    "TrainConfig": ".training",
    "TrainResult": ".training",
    "train": ".training",
    "SamplerConfig": ".sampling",
    "sample_preferences": ".sampling",
    "sample_preferences_batch": ".sampling",
    "recommend_topk": ".sampling",
    "Metrics": ".metrics",
    "evaluate": ".metrics",
    "popularity_baseline": ".metrics",
    "recall_at_k": ".metrics",
    "ndcg_at_k": ".metrics",
    "SDiffRecommender": ".recommender",
    "SDiffError": ".errors",
    "DataFormatError": ".errors",
    "ConvergenceError": ".errors",
    "HashMismatchError": ".errors",
    "ProtocolError": ".errors",
    "ArtifactError": ".errors",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(importlib.import_module(module, __name__), name)
