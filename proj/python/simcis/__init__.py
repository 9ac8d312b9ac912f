"""Continual instance segmentation core.

Thin Python surface over the C++ library: location selection, Hungarian
matching, replay weighting, panoptic-quality / mIoU metrics, the synthetic
shape world, storage arithmetic, and a full staged training entry point.
"""

try:
    # Installed layout: the extension lives inside this package.
    from ._simcis import (
        VirtualQueryBank,
        config_defaults,
        generate,
        image_replay_bytes,
        mean_iou,
        panoptic_quality,
        pseudo_weights,
        reference_scale_storage,
        run_experiment,
        select_topk,
        solve_assignment,
        vq_storage_bytes,
    )
except ImportError:  # pragma: no cover
    # In-tree build: the extension sits on sys.path next to the package.
    from _simcis import (
        VirtualQueryBank,
        config_defaults,
        generate,
        image_replay_bytes,
        mean_iou,
        panoptic_quality,
        pseudo_weights,
        reference_scale_storage,
        run_experiment,
        select_topk,
        solve_assignment,
        vq_storage_bytes,
    )

__all__ = [
    "VirtualQueryBank",
    "config_defaults",
    "generate",
    "image_replay_bytes",
    "mean_iou",
    "panoptic_quality",
    "pseudo_weights",
    "reference_scale_storage",
    "run_experiment",
    "select_topk",
    "solve_assignment",
    "vq_storage_bytes",
]
