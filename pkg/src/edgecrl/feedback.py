"""Performance feedback from the server, always one segment stale.

The default provider is an oracle stand-in for a learned performance encoder:
it reports the per-class IoU and mIoU that the previous segment reached under
the configuration it was sent with. Two variants emulate adapted baselines:
``bitrate`` carries only the previous segment's encoded size, and
``noisy_accuracy`` corrupts the oracle values with Gaussian noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .configspace import Configuration, ConfigurationSpace
from .errors import ConfigurationError, ParameterError
from .traces import SegmentRecord

FEEDBACK_MODES = ("oracle", "bitrate", "noisy_accuracy")


@dataclass(frozen=True, eq=False)
class FeedbackVector:
    class_iou: np.ndarray
    miou: float
    dropped: bool

    @classmethod
    def zero(cls, n_classes: int, dropped: bool = False) -> "FeedbackVector":
        return cls(np.zeros(n_classes), 0.0, dropped)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.class_iou, [self.miou, 1.0 if self.dropped else 0.0]])

    def __len__(self):
        return self.class_iou.shape[0] + 2

    def __eq__(self, other):
        if not isinstance(other, FeedbackVector):
            return NotImplemented
        return (np.array_equal(self.class_iou, other.class_iou) and self.miou == other.miou
                and self.dropped == other.dropped)


def feedback_for(delivered: bool, cfg: Configuration, record: SegmentRecord,
                 space: ConfigurationSpace, n_classes: int | None = None) -> FeedbackVector:
    """Oracle feedback for the previous segment ``record`` sent with ``cfg``."""
    n_classes = n_classes if n_classes is not None else record.class_sensitivity().shape[0]
    if not delivered:
        return FeedbackVector.zero(n_classes, dropped=True)
    try:
        miou = record.accuracy_of(space, cfg)
    except ConfigurationError as exc:
        raise ConfigurationError(f"no accuracy entry for {cfg}: {exc}") from None
    return FeedbackVector(record.class_ious(miou), miou, False)


class FeedbackProvider:
    def __init__(self, space: ConfigurationSpace, n_classes: int, mode: str = "oracle",
                 noise: float = 0.1, bitrate_norm: float = 1.0):
        if mode not in FEEDBACK_MODES:
            raise ParameterError(f"unknown feedback mode {mode!r}; expected one of {FEEDBACK_MODES}")
        if noise < 0:
            raise ParameterError("feedback noise must be non-negative")
        self.space = space
        self.n_classes = n_classes
        self.mode = mode
        self.noise = noise
        self.bitrate_norm = bitrate_norm

    def initial(self) -> FeedbackVector:
        return FeedbackVector.zero(self.n_classes)

    def __call__(self, delivered: bool, cfg: Configuration, record: SegmentRecord,
                 rng: np.random.Generator | None = None) -> FeedbackVector:
        if self.mode == "oracle":
            return feedback_for(delivered, cfg, record, self.space, self.n_classes)
        if not delivered:
            return FeedbackVector.zero(self.n_classes, dropped=True)
        if self.mode == "bitrate":
            iou = np.zeros(self.n_classes)
            iou[0] = min(record.size_of(self.space, cfg) / self.bitrate_norm, 1.0)
            return FeedbackVector(iou, 0.0, False)
        fb = feedback_for(True, cfg, record, self.space, self.n_classes)
        if rng is None:
            raise ParameterError("noisy_accuracy feedback needs a random generator")
        iou = np.clip(fb.class_iou + self.noise * rng.standard_normal(self.n_classes), 0.0, 1.0)
        miou = float(np.clip(fb.miou + self.noise * rng.standard_normal(), 0.0, 1.0))
        return FeedbackVector(iou, miou, False)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "noise": self.noise}
