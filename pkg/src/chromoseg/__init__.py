"""Adversarial multiscale segmentation of overlapping chromosome images."""

from .data import (
    BatchSpec,
    Corpus,
    DatasetSplit,
    batches,
    filter_overlap,
    load_dataset,
    one_hot,
    prepare_batch,
    prepare_sample,
    save_canonical,
    split_dataset,
)
from .discriminator import (
    DiscriminatorConfig,
    PatchDiscriminator,
    build_discriminator,
    receptive_field,
    score_map_size,
)
from .estimator import AdversarialSegmenter, EarlyStopping, NonFiniteLossError, adversarial_step
from .generator import (
    GeneratorConfig,
    NestedUNetGenerator,
    NodePlan,
    build_generator,
    channel_plan,
    count_parameters,
)
from .losses import (
    LossConfig,
    cross_entropy_loss,
    dice_loss,
    generator_objective,
    inverse_frequency_weights,
    lovasz_grad,
    lovasz_softmax,
    lsgan_d_loss,
    lsgan_g_loss,
    segmentation_loss,
)
from .metrics import (
    MetricsReport,
    aggregate_report,
    confusion_matrix,
    evaluate_sample,
    foreground_dice,
    hausdorff_distance,
    per_class_metrics,
    pixel_accuracy,
)

__version__ = "0.1.0"

__all__ = [
    "AdversarialSegmenter",
    "BatchSpec",
    "Corpus",
    "DatasetSplit",
    "DiscriminatorConfig",
    "EarlyStopping",
    "GeneratorConfig",
    "LossConfig",
    "MetricsReport",
    "NestedUNetGenerator",
    "NodePlan",
    "NonFiniteLossError",
    "PatchDiscriminator",
    "adversarial_step",
    "aggregate_report",
    "batches",
    "build_discriminator",
    "build_generator",
    "channel_plan",
    "confusion_matrix",
    "count_parameters",
    "cross_entropy_loss",
    "dice_loss",
    "evaluate_sample",
    "filter_overlap",
    "foreground_dice",
    "generator_objective",
    "hausdorff_distance",
    "inverse_frequency_weights",
    "load_dataset",
    "lovasz_grad",
    "lovasz_softmax",
    "lsgan_d_loss",
    "lsgan_g_loss",
    "one_hot",
    "per_class_metrics",
    "pixel_accuracy",
    "prepare_batch",
    "prepare_sample",
    "receptive_field",
    "save_canonical",
    "score_map_size",
    "segmentation_loss",
    "split_dataset",
]
