"""Gaze maps, attention maps, alignment losses and a toy gaze-supervised model."""

from ._core import (
    DataError,
    aggregate_attention,
    apply_mask,
    apply_region_blur,
    attention_map,
    bilinear_resize,
    build_gaze_map,
    cc,
    detect_fixations,
    dist_normalize,
    finite_diff_check,
    gaussian_blur,
    gaze_mask,
    kl_div,
    loss,
    metrics,
    minmax_normalize,
    read_atn,
    read_gam,
    sim,
    synth_dataset,
    train_toy,
    write_atn,
    write_gam,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
