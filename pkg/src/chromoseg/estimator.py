"""Adversarial training wrapped as a scikit-learn style estimator.

``AdversarialSegmenter.fit`` alternates discriminator and generator updates
(least-squares adversarial objective plus a weighted segmentation loss),
monitors mean foreground Dice on the training set to keep the best
generator weights, and stops early once the mean epoch generator loss has
not decreased for a configurable number of consecutive epochs.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import data as data_mod
from . import metrics as metrics_mod
from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .generator import GeneratorConfig, NestedUNetGenerator
from .losses import (
    LossConfig,
    inverse_frequency_weights,
    lsgan_d_loss,
    lsgan_g_loss,
    segmentation_loss,
)
from .validation import check_image_array, check_pair

LOSS_KEYS = ("d_loss", "g_adv", "g_seg", "g_total")


class NonFiniteLossError(RuntimeError):
    """A training step produced NaN/inf; carries the offending batch."""

    def __init__(self, losses: dict, batch_indices):
        self.losses = losses
        self.batch_indices = [int(i) for i in batch_indices]
        super().__init__(
            f"non-finite loss {losses} on batch indices {self.batch_indices}"
        )


class EarlyStopping:
    """Stop after ``window`` consecutive epochs without a loss decrease."""

    def __init__(self, window: int = 15):
        self.window = window
        self.best: float | None = None
        self.stale = 0

    def update(self, value: float) -> bool:
        if self.best is None or value < self.best:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.window

    def state(self) -> dict:
        return {"window": self.window, "best": self.best, "stale": self.stale}

    def restore(self, state: dict) -> None:
        self.window = state["window"]
        self.best = state["best"]
        self.stale = state["stale"]


def set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def adversarial_step(
    generator: NestedUNetGenerator,
    discriminator: PatchDiscriminator | None,
    g_optimizer: torch.optim.Optimizer,
    d_optimizer: torch.optim.Optimizer | None,
    images: torch.Tensor,
    labels: torch.Tensor,
    loss_cfg: LossConfig,
    gan: bool = True,
    batch_indices=(),
) -> dict:
    """One alternating update: discriminator first (generator frozen via a
    detached map), then the generator against the refreshed discriminator.

    Returns the four loss components as floats; raises NonFiniteLossError
    if any of them degenerates.
    """
    probs = generator(images)
    num_classes = probs.shape[1]

    if gan:
        onehot = F.one_hot(labels, num_classes).permute(0, 3, 1, 2).to(probs.dtype)
        d_optimizer.zero_grad(set_to_none=True)
        real_scores = discriminator(images, onehot)
        fake_scores = discriminator(images, probs.detach())
        d_loss = lsgan_d_loss(real_scores, fake_scores)
        d_loss.backward()
        d_optimizer.step()

        set_requires_grad(discriminator, False)
        g_optimizer.zero_grad(set_to_none=True)
        g_adv = lsgan_g_loss(discriminator(images, probs))
        g_seg = segmentation_loss(probs, labels, loss_cfg)
        g_total = g_adv + loss_cfg.lambda_seg * g_seg
        g_total.backward()
        g_optimizer.step()
        set_requires_grad(discriminator, True)
        losses = {
            "d_loss": d_loss.item(),
            "g_adv": g_adv.item(),
            "g_seg": g_seg.item(),
            "g_total": g_total.item(),
        }
    else:
        g_optimizer.zero_grad(set_to_none=True)
        g_seg = segmentation_loss(probs, labels, loss_cfg)
        g_seg.backward()
        g_optimizer.step()
        losses = {
            "d_loss": 0.0,
            "g_adv": 0.0,
            "g_seg": g_seg.item(),
            "g_total": g_seg.item(),
        }

    if not all(math.isfinite(v) for v in losses.values()):
        raise NonFiniteLossError(losses, batch_indices)
    return losses


class AdversarialSegmenter(BaseEstimator):
    """Multiscale adversarial segmenter with a scikit-learn interface.

    Parameters mirror the training protocol: Adam for both networks with a
    fixed learning rate of 2e-4 and betas (0.5, 0.999), batch size 64,
    seed 123, early stopping after 15 non-improving epochs, Jaccard
    surrogate as the default segmentation loss weighted by
    ``lambda_seg=10`` against the adversarial term.

    ``class_weights`` may be "auto" (inverse pixel frequency on the
    training labels, normalized to mean 1), an explicit tuple, or None.
    ``dice_monitor_samples`` optionally subsamples the per-epoch training
    Dice evaluation; None scores the full training set.
    """

    def __init__(
        self,
        filters=(64, 128, 256, 512, 1024),
        in_channels=1,
        num_classes=4,
        input_size=128,
        upsample="bilinear",
        d_channels=(64, 128, 256, 512, 1),
        d_strides=(2, 2, 2, 2, 1),
        d_paddings=(2, 2, 2, 2, 2),
        d_sigmoid=True,
        loss="lovasz",
        lambda_seg=10.0,
        class_weights=None,
        classes_mode="all",
        per_image=True,
        gan=True,
        batch_size=64,
        drop_last=False,
        learning_rate=2e-4,
        beta1=0.5,
        beta2=0.999,
        max_epochs=400,
        early_stop_window=15,
        dice_monitor_samples=None,
        seed=123,
        deterministic=True,
        warm_start=False,
        checkpoint_dir=None,
        verbose=0,
        device="cpu",
    ):
        self.filters = filters
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.input_size = input_size
        self.upsample = upsample
        self.d_channels = d_channels
        self.d_strides = d_strides
        self.d_paddings = d_paddings
        self.d_sigmoid = d_sigmoid
        self.loss = loss
        self.lambda_seg = lambda_seg
        self.class_weights = class_weights
        self.classes_mode = classes_mode
        self.per_image = per_image
        self.gan = gan
        self.batch_size = batch_size
        self.drop_last = drop_last
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.max_epochs = max_epochs
        self.early_stop_window = early_stop_window
        self.dice_monitor_samples = dice_monitor_samples
        self.seed = seed
        self.deterministic = deterministic
        self.warm_start = warm_start
        self.checkpoint_dir = checkpoint_dir
        self.verbose = verbose
        self.device = device

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            filters=tuple(self.filters),
            in_channels=self.in_channels,
            num_classes=self.num_classes,
            input_size=self.input_size,
            upsample=self.upsample,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(
            channels=tuple(self.d_channels),
            strides=tuple(self.d_strides),
            paddings=tuple(self.d_paddings),
            in_channels=self.in_channels + self.num_classes,
            sigmoid=self.d_sigmoid,
        )

    def _resolve_loss_config(self, y: np.ndarray | None) -> LossConfig:
        weights = self.class_weights
        if isinstance(weights, str):
            if weights != "auto":
                raise ValueError(f"class_weights must be 'auto', a tuple, or None, got {weights!r}")
            if y is None:
                raise ValueError("class_weights='auto' needs training labels")
            weights = inverse_frequency_weights(y, self.num_classes)
        elif weights is not None:
            weights = tuple(float(w) for w in weights)
        return LossConfig(
            kind=self.loss,
            lambda_seg=self.lambda_seg,
            class_weights=weights,
            classes_mode=self.classes_mode,
            per_image=self.per_image,
        )

    def _build(self, y: np.ndarray | None) -> None:
        if not 0 <= self.beta1 < self.beta2 < 1:
            raise ValueError("need 0 <= beta1 < beta2 < 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        torch.manual_seed(self.seed)
        self.loss_config_ = self._resolve_loss_config(y)
        self.generator_ = NestedUNetGenerator(self.generator_config()).to(self.device)
        betas = (self.beta1, self.beta2)
        self.g_optimizer_ = torch.optim.Adam(
            self.generator_.parameters(), lr=self.learning_rate, betas=betas
        )
        if self.gan:
            self.discriminator_ = PatchDiscriminator(self.discriminator_config()).to(self.device)
            self.d_optimizer_ = torch.optim.Adam(
                self.discriminator_.parameters(), lr=self.learning_rate, betas=betas
            )
        else:
            self.discriminator_ = None
            self.d_optimizer_ = None
        self.history_ = []
        self.dice_history_ = []
        self.best_train_dice_ = -np.inf
        self.n_epochs_ = 0
        self.stopped_early_ = False
        self.stopper_ = EarlyStopping(self.early_stop_window)

    # ------------------------------------------------------------------
    # data plumbing
    # ------------------------------------------------------------------

    def _prepare(self, X: np.ndarray, y: np.ndarray | None = None):
        """Pad/normalize a batch of raw or already-prepared samples."""
        if np.issubdtype(X.dtype, np.floating):
            if X.shape[1] == X.shape[2] == self.input_size:
                images = X.astype(np.float32, copy=False)
                labels = y
            else:
                raise ValueError(
                    "float input must already be on the "
                    f"{self.input_size}x{self.input_size} canvas"
                )
        else:
            images, labels = data_mod.prepare_batch(X, y, size=self.input_size)
        return images, labels

    def _tensors(self, images: np.ndarray, labels: np.ndarray | None):
        x = torch.from_numpy(np.ascontiguousarray(images)).unsqueeze(1).to(self.device)
        if labels is None:
            return x, None
        t = torch.from_numpy(np.ascontiguousarray(labels.astype(np.int64))).to(self.device)
        return x, t

    # ------------------------------------------------------------------
    # estimator API
    # ------------------------------------------------------------------

    def fit(self, X, y):
        X, y = check_pair(X, y, self.num_classes, self.input_size)
        fresh = not (self.warm_start and hasattr(self, "generator_"))
        if fresh:
            self._build(y)

        previous_mode = torch.are_deterministic_algorithms_enabled()
        if self.deterministic:
            torch.use_deterministic_algorithms(True)
        try:
            self._fit_epochs(X, y)
        finally:
            torch.use_deterministic_algorithms(previous_mode)
        return self

    def _fit_epochs(self, X: np.ndarray, y: np.ndarray) -> None:
        n = len(X)
        indices = np.arange(n, dtype=np.int64)
        spec = data_mod.BatchSpec(
            batch_size=self.batch_size, seed=self.seed, drop_last=self.drop_last
        )
        monitor_idx = self._monitor_indices(n)

        while self.n_epochs_ < self.max_epochs:
            epoch = self.n_epochs_
            self.generator_.train()
            if self.discriminator_ is not None:
                self.discriminator_.train()
            sums = dict.fromkeys(LOSS_KEYS, 0.0)
            batch_list = data_mod.batches(indices, spec, epoch)
            for batch_idx in batch_list:
                images, labels = self._prepare(X[batch_idx], y[batch_idx])
                xt, yt = self._tensors(images, labels)
                losses = adversarial_step(
                    self.generator_,
                    self.discriminator_,
                    self.g_optimizer_,
                    self.d_optimizer_,
                    xt,
                    yt,
                    self.loss_config_,
                    gan=self.gan,
                    batch_indices=batch_idx,
                )
                for key in LOSS_KEYS:
                    sums[key] += losses[key]
            epoch_means = {k: sums[k] / max(len(batch_list), 1) for k in LOSS_KEYS}
            self.history_.append(epoch_means)

            train_dice = self._foreground_dice(X[monitor_idx], y[monitor_idx])
            self.dice_history_.append(train_dice)
            improved = train_dice > self.best_train_dice_
            if improved:
                self.best_train_dice_ = train_dice
            self.n_epochs_ += 1
            if self.verbose:
                print(
                    f"epoch {epoch:3d}  g_total {epoch_means['g_total']:.4f}  "
                    f"g_seg {epoch_means['g_seg']:.4f}  d {epoch_means['d_loss']:.4f}  "
                    f"train_dice {train_dice:.4f}{'  *' if improved else ''}"
                )
            if self.checkpoint_dir is not None:
                self._save_checkpoints(improved)
            if self.stopper_.update(epoch_means["g_total"]):
                self.stopped_early_ = True
                break

    def _monitor_indices(self, n: int) -> np.ndarray:
        k = self.dice_monitor_samples
        if k is None or k >= n:
            return np.arange(n, dtype=np.int64)
        return np.sort(data_mod.permutation(n, (self.seed << 1) ^ 0xD1CE)[:k])

    def _foreground_dice(self, X: np.ndarray, y: np.ndarray) -> float:
        preds = self.predict(X, crop=False)
        _, labels = self._prepare(X, y)
        vals = [
            metrics_mod.foreground_dice(p, t, self.num_classes)
            for p, t in zip(preds, labels)
        ]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def predict_proba(self, X, crop: bool = True) -> np.ndarray:
        """Per-pixel class probabilities, (N, C, H, W); cropped back to the
        input frame unless ``crop=False``."""
        if not hasattr(self, "generator_"):
            raise NotFittedError("fit the estimator or load a checkpoint first")
        X = check_image_array(X, self.input_size)
        h, w = X.shape[1:]
        images, _ = self._prepare(X)
        self.generator_.eval()
        outs = []
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                xt, _ = self._tensors(images[start : start + self.batch_size], None)
                outs.append(self.generator_(xt).cpu().numpy())
        probs = np.concatenate(outs, axis=0) if outs else np.empty(
            (0, self.num_classes, self.input_size, self.input_size), dtype=np.float32
        )
        if crop and (h, w) != (self.input_size, self.input_size):
            probs = data_mod.crop_canvas(probs, h, w, self.input_size)
        return probs

    def predict(self, X, crop: bool = True) -> np.ndarray:
        """Per-pixel class maps; argmax ties resolve to the lowest class."""
        probs = self.predict_proba(X, crop=crop)
        return np.argmax(probs, axis=1).astype(np.uint8)

    def score(self, X, y) -> float:
        """Mean foreground Dice over the given samples."""
        X, y = check_pair(X, y, self.num_classes, self.input_size)
        return self._foreground_dice(X, y)

    def evaluate(self, X, y) -> metrics_mod.MetricsReport:
        """Eight-metric report on the network canvas (padded frame)."""
        X, y = check_pair(X, y, self.num_classes, self.input_size)
        preds = self.predict(X, crop=False)
        _, labels = self._prepare(X, y)
        samples = [
            metrics_mod.evaluate_sample(p, t, self.num_classes)
            for p, t in zip(preds, labels)
        ]
        return metrics_mod.aggregate_report(samples, self.num_classes)

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def _sections(self) -> dict:
        sections = {"generator": self.generator_}
        if self.discriminator_ is not None:
            sections["discriminator"] = self.discriminator_
        return sections

    def save(self, stem: str | Path) -> None:
        params = self.get_params()
        # bake resolved weights so "auto" checkpoints reload standalone
        if params.get("class_weights") == "auto":
            params["class_weights"] = self.loss_config_.class_weights
        params["checkpoint_dir"] = None
        meta = {
            "params": _jsonable(params),
            "fitted": {
                "best_train_dice": float(self.best_train_dice_),
                "n_epochs": self.n_epochs_,
            },
        }
        save_checkpoint(stem, self._sections(), meta)

    @classmethod
    def load(cls, stem: str | Path) -> "AdversarialSegmenter":
        meta = read_manifest(stem).get("meta", {})
        params = {k: _tuplify(v) for k, v in meta.get("params", {}).items()}
        est = cls(**params)
        est._build(None)
        load_checkpoint(stem, est._sections())
        fitted = meta.get("fitted", {})
        est.best_train_dice_ = fitted.get("best_train_dice", -np.inf)
        est.n_epochs_ = fitted.get("n_epochs", 0)
        return est

    def _save_checkpoints(self, improved: bool) -> None:
        out = Path(self.checkpoint_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.save(out / "last")
        if improved:
            self.save(out / "best")
        torch.save(self.training_state(), out / "train_state.pt")

    def training_state(self) -> dict:
        state = {
            "n_epochs": self.n_epochs_,
            "best_train_dice": self.best_train_dice_,
            "history": self.history_,
            "dice_history": self.dice_history_,
            "stopper": self.stopper_.state(),
            "g_optimizer": self.g_optimizer_.state_dict(),
        }
        if self.d_optimizer_ is not None:
            state["d_optimizer"] = self.d_optimizer_.state_dict()
        return state

    def restore_training_state(self, state: dict) -> None:
        self.n_epochs_ = state["n_epochs"]
        self.best_train_dice_ = state["best_train_dice"]
        self.history_ = state["history"]
        self.dice_history_ = state["dice_history"]
        self.stopper_.restore(state["stopper"])
        self.g_optimizer_.load_state_dict(state["g_optimizer"])
        if self.d_optimizer_ is not None and "d_optimizer" in state:
            self.d_optimizer_.load_state_dict(state["d_optimizer"])


def _jsonable(params: dict) -> dict:
    out = {}
    for key, value in params.items():
        if isinstance(value, tuple):
            value = list(value)
        elif isinstance(value, Path):
            value = str(value)
        out[key] = value
    return out


def _tuplify(value):
    return tuple(value) if isinstance(value, list) else value
