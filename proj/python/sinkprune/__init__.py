"""Sink-aware pruning for toy transformer language models."""

from ._sinkprune import (
    Checkpoint,
    ModelConfig,
    SinkpruneError,
    __version__,
    checkpoint_from_bytes,
    cumulative_attention,
    detect_sinks,
    forward,
    global_sparsity,
    incoming_mass,
    init_random_model,
    load_checkpoint,
    mass_variance,
    prune_checkpoint,
    run_cli,
    select_mask,
    soft_sink_score,
    sparsegpt_prune,
    synthetic_variance,
    wanda_scores,
)

__all__ = [
    "Checkpoint",
    "ModelConfig",
    "SinkpruneError",
    "__version__",
    "checkpoint_from_bytes",
    "cumulative_attention",
    "detect_sinks",
    "forward",
    "global_sparsity",
    "incoming_mass",
    "init_random_model",
    "load_checkpoint",
    "mass_variance",
    "prune_checkpoint",
    "run_cli",
    "select_mask",
    "soft_sink_score",
    "sparsegpt_prune",
    "synthetic_variance",
    "wanda_scores",
]
