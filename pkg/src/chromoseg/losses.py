"""Training objectives: Jaccard-surrogate, least-squares adversarial, and
pixel-loss baselines (cross-entropy and soft-Dice, plain and class-weighted).

All losses consume per-pixel class probabilities (after the softmax head),
not logits, so every term is differentiable with respect to the same map
that is fed to the discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

LOSS_KINDS = ("lovasz", "ce", "weighted_ce", "dice", "weighted_dice")

_LOG_FLOOR = 1e-12
_DICE_SMOOTH = 1e-6


@dataclass
class LossConfig:
    """Segmentation-loss selection for the generator objective.

    ``lambda_seg`` weighs the segmentation term against the adversarial
    term. ``class_weights`` is required by the weighted kinds; weights are
    strictly positive (typically inverse pixel frequency, normalized to
    mean 1). ``classes_mode`` widens or narrows the Jaccard-surrogate
    class average; ``per_image`` flattens each image separately before
    averaging over the batch (the default) instead of pooling all pixels.
    """

    kind: str = "lovasz"
    lambda_seg: float = 10.0
    class_weights: tuple[float, ...] | None = None
    classes_mode: str = "all"
    per_image: bool = True

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        # lambda 0 is the documented degenerate configuration (pure adversarial)
        if self.lambda_seg < 0:
            raise ValueError("lambda_seg must be >= 0")
        if self.classes_mode not in ("all", "present"):
            raise ValueError("classes_mode must be 'all' or 'present'")
        if self.class_weights is not None:
            if any(w <= 0 for w in self.class_weights):
                raise ValueError("class_weights must be strictly positive")
        if self.kind in ("weighted_ce", "weighted_dice") and self.class_weights is None:
            raise ValueError(f"{self.kind} requires class_weights")


def _flatten(probs: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Normalize to (B, C, P) probabilities and (B, P) labels."""
    if probs.dim() == 3:
        probs = probs.unsqueeze(0)
        labels = labels.unsqueeze(0)
    if probs.dim() != 4 or labels.dim() != 3:
        raise ValueError(f"expected (B,C,H,W)/(B,H,W), got {tuple(probs.shape)}/{tuple(labels.shape)}")
    if probs.shape[0] != labels.shape[0] or probs.shape[-2:] != labels.shape[-2:]:
        raise ValueError(f"probs {tuple(probs.shape)} and labels {tuple(labels.shape)} disagree")
    b, c = probs.shape[:2]
    return probs.reshape(b, c, -1), labels.reshape(b, -1)


def _pool_batch(p: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Concatenate all images of a batch into one pixel set (per class)."""
    return p.permute(1, 0, 2).reshape(1, p.shape[1], -1), y.reshape(1, -1)


def lovasz_grad(gt_sorted: torch.Tensor) -> torch.Tensor:
    """Gradient of the Jaccard-loss Lovász extension w.r.t. sorted errors.

    ``gt_sorted`` holds the class indicator permuted by decreasing error;
    works on any (..., P) batch of such vectors. Empty input gives an
    empty result.
    """
    p = gt_sorted.shape[-1]
    if p == 0:
        return gt_sorted.clone()
    gts = gt_sorted.sum(dim=-1, keepdim=True)
    intersection = gts - gt_sorted.cumsum(dim=-1)
    union = gts + (1.0 - gt_sorted).cumsum(dim=-1)
    jaccard = 1.0 - intersection / union
    if p > 1:
        jaccard = torch.cat([jaccard[..., :1], jaccard[..., 1:] - jaccard[..., :-1]], dim=-1)
    return jaccard


def _lovasz_per_image(
    probs: torch.Tensor, labels: torch.Tensor, classes_mode: str
) -> torch.Tensor:
    """(B, C, P) probabilities, (B, P) labels -> (B,) per-image losses."""
    b, c, _ = probs.shape
    per_class = []
    present = []
    for cls in range(c):
        fg = (labels == cls).to(probs.dtype)  # (B, P)
        errors = (fg - probs[:, cls, :]).abs()
        # stable sort: ties resolved by pixel index, so the loss is deterministic
        errors_sorted, perm = torch.sort(errors, dim=-1, descending=True, stable=True)
        gt_sorted = torch.gather(fg, -1, perm)
        per_class.append((errors_sorted * lovasz_grad(gt_sorted)).sum(dim=-1))
        present.append(fg.sum(dim=-1) > 0)
    stacked = torch.stack(per_class, dim=-1)  # (B, C)
    if classes_mode == "present":
        mask = torch.stack(present, dim=-1).to(probs.dtype)
        count = mask.sum(dim=-1).clamp_min(1.0)
        return (stacked * mask).sum(dim=-1) / count
    return stacked.mean(dim=-1)


def lovasz_softmax(
    probs: torch.Tensor,
    labels: torch.Tensor,
    classes_mode: str = "all",
    per_image: bool = True,
) -> torch.Tensor:
    """Jaccard surrogate: per class, sort pixel errors descending and take
    the inner product with the extension gradient; average over classes.
    """
    p, y = _flatten(probs, labels)
    if not per_image:
        p, y = _pool_batch(p, y)
    return _lovasz_per_image(p, y, classes_mode).mean()


def lovasz_softmax_per_image(
    probs: torch.Tensor, labels: torch.Tensor, classes_mode: str = "all"
) -> torch.Tensor:
    """Vector of per-image losses, useful for bulk verification."""
    p, y = _flatten(probs, labels)
    return _lovasz_per_image(p, y, classes_mode)


def cross_entropy_loss(
    probs: torch.Tensor,
    labels: torch.Tensor,
    class_weights: torch.Tensor | None = None,
    per_image: bool = True,
) -> torch.Tensor:
    """Negative log probability of the true class, optionally class-weighted.

    Weighted form normalizes by the summed weights of the participating
    pixels, so uniform weights reduce exactly to the unweighted mean.
    """
    p, y = _flatten(probs, labels)
    if not per_image:
        p, y = _pool_batch(p, y)
    logp = torch.log(p.clamp_min(_LOG_FLOOR))
    picked = torch.gather(logp, 1, y.unsqueeze(1)).squeeze(1)  # (B, P)
    if class_weights is None:
        loss = -picked.mean(dim=-1)
    else:
        w = torch.as_tensor(class_weights, dtype=p.dtype, device=p.device)[y]
        loss = -(w * picked).sum(dim=-1) / w.sum(dim=-1)
    return loss.mean()


def dice_loss(
    probs: torch.Tensor,
    labels: torch.Tensor,
    class_weights: torch.Tensor | None = None,
    per_image: bool = True,
    smooth: float = _DICE_SMOOTH,
) -> torch.Tensor:
    """1 minus the (weighted) class-mean soft-Dice overlap.

    Smoothing keeps the ratio defined at 1 for classes absent from both
    the prediction and the ground truth.
    """
    p, y = _flatten(probs, labels)
    if not per_image:
        p, y = _pool_batch(p, y)
    c = p.shape[1]
    onehot = torch.nn.functional.one_hot(y, c).to(p.dtype).permute(0, 2, 1)  # (B, C, P)
    intersection = (p * onehot).sum(dim=-1)
    total = p.sum(dim=-1) + onehot.sum(dim=-1)
    dice = (2.0 * intersection + smooth) / (total + smooth)  # (B, C)
    if class_weights is None:
        per_img = 1.0 - dice.mean(dim=-1)
    else:
        w = torch.as_tensor(class_weights, dtype=p.dtype, device=p.device)
        per_img = 1.0 - (dice * w).sum(dim=-1) / w.sum()
    return per_img.mean()


def segmentation_loss(
    probs: torch.Tensor, labels: torch.Tensor, cfg: LossConfig
) -> torch.Tensor:
    """Dispatch on cfg.kind over the five supported segmentation losses."""
    if cfg.kind == "lovasz":
        return lovasz_softmax(probs, labels, cfg.classes_mode, cfg.per_image)
    if cfg.kind == "ce":
        return cross_entropy_loss(probs, labels, None, cfg.per_image)
    if cfg.kind == "weighted_ce":
        return cross_entropy_loss(probs, labels, cfg.class_weights, cfg.per_image)
    if cfg.kind == "dice":
        return dice_loss(probs, labels, None, cfg.per_image)
    if cfg.kind == "weighted_dice":
        return dice_loss(probs, labels, cfg.class_weights, cfg.per_image)
    raise ValueError(f"unknown loss kind {cfg.kind!r}")


def lsgan_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator loss: pull real scores to 1, fake to 0."""
    if real_scores.shape != fake_scores.shape:
        raise ValueError(
            f"score maps disagree: {tuple(real_scores.shape)} vs {tuple(fake_scores.shape)}"
        )
    return ((real_scores - 1.0) ** 2).mean() + (fake_scores**2).mean()


def lsgan_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares generator loss: pull fake scores to 1."""
    return ((fake_scores - 1.0) ** 2).mean()


def generator_objective(
    fake_scores: torch.Tensor,
    probs: torch.Tensor,
    labels: torch.Tensor,
    cfg: LossConfig,
) -> torch.Tensor:
    """Adversarial term plus lambda times the configured segmentation loss."""
    return lsgan_g_loss(fake_scores) + cfg.lambda_seg * segmentation_loss(probs, labels, cfg)


def inverse_frequency_weights(labels: np.ndarray, num_classes: int) -> tuple[float, ...]:
    """Per-class weights proportional to inverse pixel frequency, mean 1.

    A class with no pixels at all is given the frequency of the rarest
    observed class so the weight stays finite.
    """
    counts = np.bincount(np.asarray(labels).reshape(-1), minlength=num_classes).astype(np.float64)
    counts = counts[:num_classes]
    observed = counts[counts > 0]
    if observed.size == 0:
        raise ValueError("cannot derive class weights from an empty label set")
    counts[counts == 0] = observed.min()
    weights = 1.0 / counts
    weights *= num_classes / weights.sum()
    return tuple(float(w) for w in weights)
