"""Pixel-level confusion statistics, Dice/F1 scores, and dataset evaluation reports.

Conventions (recorded in every report header):
  - dice is averaged per image (unweighted mean over the dataset);
  - f1/precision/recall are micro-aggregated over pixel counts across the dataset;
  - two empty masks (tp=fp=fn=0) score 1.0 so a correct all-background
    prediction is not penalized.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInput, MissingMask

DICE_CONVENTION = "mean_per_image"
F1_CONVENTION = "micro_pixel_aggregate"


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    """Pixel confusion counts between two binary masks (positive class = 1)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatch(
            f"pred {pred.shape} vs truth {truth.shape}")
    p = pred.astype(bool)
    t = truth.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    )


def dice(counts: ConfusionCounts) -> float:
    """2*tp / (2*tp + fp + fn); both-empty convention: 1.0."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2.0 * counts.tp / denom


def precision(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp
    if denom == 0:
        return 1.0
    return counts.tp / denom


def recall(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fn
    if denom == 0:
        return 1.0
    return counts.tp / denom


def f1_micro(counts_list: list[ConfusionCounts]) -> float:
    """Aggregate tp/fp/fn over all images, then the F1 formula.

    With a single-element list this is identical to dice() of that element.
    """
    if not counts_list:
        raise EmptyInput("f1_micro needs at least one ConfusionCounts")
    agg = ConfusionCounts()
    for c in counts_list:
        agg = agg + c
    return dice(agg)


@dataclass
class EvalReport:
    per_image: list[dict] = field(default_factory=list)
    dataset_dice_mean: float = 0.0
    f1_micro: float = 0.0
    precision_micro: float = 0.0
    recall_micro: float = 0.0
    n_images: int = 0
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "conventions": {"dice": DICE_CONVENTION, "f1": F1_CONVENTION},
            "n_images": self.n_images,
            "threshold": self.threshold,
            "dataset_dice_mean": self.dataset_dice_mean,
            "f1_micro": self.f1_micro,
            "precision_micro": self.precision_micro,
            "recall_micro": self.recall_micro,
            "per_image": self.per_image,
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_text_table(self) -> str:
        lines = [
            f"# dice={DICE_CONVENTION} f1={F1_CONVENTION}",
            f"{'images':>8} {'dice_mean':>10} {'f1_micro':>10} "
            f"{'precision':>10} {'recall':>10}",
            f"{self.n_images:>8d} {self.dataset_dice_mean:>10.4f} "
            f"{self.f1_micro:>10.4f} {self.precision_micro:>10.4f} "
            f"{self.recall_micro:>10.4f}",
        ]
        return "\n".join(lines)


def evaluate(model, pairs, threshold: float = 0.5) -> EvalReport:
    """Run model predictions over (image, truth-mask) pairs and score them.

    `model` is either a trained SegModel or any callable image -> BinaryMask
    (handy for oracle/constant predictors in tests).
    """
    from .segmodel import predict_mask  # local import keeps metrics torch-free

    if not pairs:
        raise EmptyInput("evaluate needs a non-empty dataset")
    per_image = []
    counts_list = []
    for image, truth in pairs:
        if truth is None:
            raise MissingMask(f"no ground-truth mask for image {image.id}")
        if callable(model):
            pred = model(image)
        else:
            pred, _ = predict_mask(model, image, threshold=threshold)
        c = confusion(pred.pixels, truth.pixels)
        counts_list.append(c)
        per_image.append({
            "image_id": image.id,
            "dice": dice(c),
            "counts": {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn},
        })
    agg = ConfusionCounts()
    for c in counts_list:
        agg = agg + c
    return EvalReport(
        per_image=per_image,
        dataset_dice_mean=float(np.mean([r["dice"] for r in per_image])),
        f1_micro=f1_micro(counts_list),
        precision_micro=precision(agg),
        recall_micro=recall(agg),
        n_images=len(pairs),
        threshold=threshold,
    )
