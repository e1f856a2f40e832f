"""Colored-digit modality bias: datasets, margin-aware cosine losses,
training loops, and divergence diagnostics."""

from .dataset import (COLOR_NAMES, PALETTE, ColoredSplit, assign_colors,
                      build_dataset, colorize, derangement, load_dataset,
                      load_split, quantize_colored, recover_gray,
                      write_dataset, write_split)
from .diagnostics import (bias_jsd_report, class_separation_ratio,
                          export_embeddings, jsd, model_probs,
                          sharpness_compare)
from .errors import ModbiasError
from .losses import (cosine_logits, entropy, ideal_probability,
                     kd_softened_probs, lmcl_loss, mmdb_backward, mmdb_loss,
                     nsl_loss, scale_lower_bound, softmax_loss,
                     stable_softmax, temperature_probs)
from .margins import (count_bias, load_counts_csv, load_margin_table,
                      margins_from_counts, save_counts_csv, save_margin_table)
from .models import (backend_name, features_and_scores, forward, init_params,
                     load_checkpoint, save_checkpoint)
from .trainer import (TrainConfig, evaluate, sweep_margin, sweep_scale, train,
                      validate_config)

__version__ = "0.1.0"

__all__ = [
    "COLOR_NAMES", "PALETTE", "ColoredSplit", "ModbiasError", "TrainConfig",
    "__version__", "assign_colors", "backend_name", "bias_jsd_report",
    "build_dataset", "class_separation_ratio", "colorize", "cosine_logits",
    "count_bias", "derangement", "entropy", "evaluate", "export_embeddings",
    "features_and_scores", "forward", "ideal_probability", "init_params",
    "jsd", "kd_softened_probs", "lmcl_loss", "load_checkpoint",
    "load_counts_csv", "load_dataset", "load_margin_table", "load_split",
    "margins_from_counts", "mmdb_backward", "mmdb_loss", "model_probs",
    "nsl_loss", "quantize_colored", "recover_gray", "save_checkpoint",
    "save_counts_csv", "save_margin_table", "scale_lower_bound",
    "sharpness_compare", "softmax_loss", "stable_softmax", "sweep_margin",
    "sweep_scale", "temperature_probs", "train", "validate_config",
    "write_dataset", "write_split",
]
