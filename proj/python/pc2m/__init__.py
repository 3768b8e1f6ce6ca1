"""Area-balanced optimal-transport pseudo labels (C++ core)."""

from ._pc2m import (
    ConfigError,
    EigenSolverError,
    batch_rescale,
    class_frequencies,
    config_keys,
    eigendecompose,
    ema_update,
    f1_scores,
    fixed_point_test,
    gen_dataset,
    gibbs_kernel,
    hungarian_match,
    js_divergence,
    kmeans,
    miou,
    network_grad_check,
    patch_affinity,
    pseudo_labels,
    run_experiment,
    shannon_entropy,
    sinkhorn,
)

__all__ = [
    "ConfigError",
    "EigenSolverError",
    "batch_rescale",
    "class_frequencies",
    "config_keys",
    "eigendecompose",
    "ema_update",
    "f1_scores",
    "fixed_point_test",
    "gen_dataset",
    "gibbs_kernel",
    "hungarian_match",
    "js_divergence",
    "kmeans",
    "miou",
    "network_grad_check",
    "patch_affinity",
    "pseudo_labels",
    "run_experiment",
    "shannon_entropy",
    "sinkhorn",
]
