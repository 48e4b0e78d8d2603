"""Per-segment bitrate estimation and content-dynamics features.

An estimate is a base size (anchor setting r=1, lowest qp) plus a table of
ratios, one per compression setting, with the base setting's ratio fixed at 1.
Three providers are available: the ground-truth oracle, an oracle with
calibrated log-normal error, and the AR(1) + offline ratio table baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .errors import ParameterError
from .traces import SegmentRecord, TraceSet

EPS_FLOOR = 1e-6  # MB; floor applied to AR predictions
N_CONTENT_FEATURES = 5
# mean relative error of the learned estimator on 1 s / 15 fps segments
DEFAULT_REL_ERROR = 0.1722


@dataclass(frozen=True, eq=False)
class BitrateEstimate:
    base: float
    ratios: np.ndarray  # (n_resolutions, n_qps), ratios[0, 0] == 1

    def sizes(self) -> np.ndarray:
        return self.base * self.ratios

    def flat(self) -> np.ndarray:
        """[base, ratios...]: the estimate as it enters the policy state."""
        return np.concatenate([[self.base], self.ratios.reshape(-1)])

    def __eq__(self, other):
        if not isinstance(other, BitrateEstimate):
            return NotImplemented
        return self.base == other.base and np.array_equal(self.ratios, other.ratios)


def estimate_oracle(record: SegmentRecord) -> BitrateEstimate:
    base = record.base_size
    ratios = record.bitrate / base
    ratios[0, 0] = 1.0
    return BitrateEstimate(base, ratios)


def _mean_abs_rel_error(sigma: float, n_settings: int) -> float:
    # E|exp(sZ) - 1| = exp(s^2/2) * erf(s / sqrt(2)) for Z ~ N(0, 1); the base setting
    # carries one noise factor, every other setting two independent ones
    def e(s):
        return math.exp(s * s / 2.0) * float(erf(s / math.sqrt(2.0)))
    return (e(sigma) + (n_settings - 1) * e(sigma * math.sqrt(2.0))) / n_settings


def lognormal_sigma(rel_error: float, n_settings: int) -> float:
    """Log-space std giving an expected mean |est - true| / true of ``rel_error``."""
    if rel_error < 0:
        raise ParameterError(f"rel_error must be non-negative, got {rel_error}")
    if rel_error == 0:
        return 0.0
    return brentq(lambda s: _mean_abs_rel_error(s, n_settings) - rel_error, 1e-12, 10.0, xtol=1e-14)


def estimate_noisy(record: SegmentRecord, rel_error: float, rng: np.random.Generator) -> BitrateEstimate:
    if rel_error < 0:
        raise ParameterError(f"rel_error must be non-negative, got {rel_error}")
    truth = estimate_oracle(record)
    if rel_error == 0:
        return truth
    sigma = lognormal_sigma(rel_error, truth.ratios.size)
    base = truth.base * math.exp(sigma * rng.standard_normal())
    ratios = truth.ratios * np.exp(sigma * rng.standard_normal(truth.ratios.shape))
    ratios[0, 0] = 1.0
    return BitrateEstimate(base, ratios)


def fit_ar1(series: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit of x_t = c + phi * x_{t-1}."""
    return fit_ar1_pooled([series])


def fit_ar1_pooled(series_list: Sequence[Sequence[float]]) -> tuple[float, float]:
    """AR(1) fit over lag pairs pooled from several independent series."""
    prev, nxt = [], []
    for s in series_list:
        s = np.asarray(s, dtype=float)
        prev.append(s[:-1])
        nxt.append(s[1:])
    x = np.concatenate(prev) if prev else np.empty(0)
    y = np.concatenate(nxt) if nxt else np.empty(0)
    if x.size < 2:
        raise ParameterError("AR(1) fit needs a series of length >= 3")
    if np.var(x) == 0.0:
        return float(np.mean(np.concatenate([x, y]))), 0.0
    X = np.column_stack([np.ones_like(x), x])
    (c, phi), *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(c), float(phi)


def fit_ratio_table(train: TraceSet | Sequence[TraceSet]) -> np.ndarray:
    """Mean over training segments of size(setting) / size(base setting)."""
    traces = [train] if isinstance(train, TraceSet) else list(train)
    ratios = [seg.bitrate / seg.base_size for t in traces for seg in t.segments]
    if not ratios:
        raise ParameterError("cannot fit a ratio table on an empty training set")
    table = np.mean(ratios, axis=0)
    table[0, 0] = 1.0
    return table


@dataclass(frozen=True, eq=False)
class ARModel:
    intercept: float
    coefficient: float
    ratio_table: np.ndarray

    def __post_init__(self):
        if self.ratio_table[0, 0] != 1.0:
            raise ParameterError("the base setting's ratio must be 1.0")

    @classmethod
    def fit(cls, train: Sequence[TraceSet]) -> "ARModel":
        train = list(train)
        c, phi = fit_ar1_pooled([t.base_sizes() for t in train])
        return cls(c, phi, fit_ratio_table(train))

    @property
    def stationary_mean(self) -> float:
        if abs(self.coefficient) < 1.0:
            return self.intercept / (1.0 - self.coefficient)
        return self.intercept

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coefficient": self.coefficient,
                "ratio_table": self.ratio_table.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ARModel":
        return cls(float(d["intercept"]), float(d["coefficient"]), np.array(d["ratio_table"], dtype=float))


def estimate_ar(model: ARModel, prev_base: float) -> BitrateEstimate:
    base = max(model.intercept + model.coefficient * prev_base, EPS_FLOOR)
    return BitrateEstimate(base, model.ratio_table.copy())


def content_features(est: BitrateEstimate, prev_est: BitrateEstimate | None) -> np.ndarray:
    """[base, mean ratio, min ratio, max ratio, base - previous base]."""
    r = est.ratios
    delta = 0.0 if prev_est is None else est.base - prev_est.base
    return np.array([est.base, r.mean(), r.min(), r.max(), delta])


# -- stateful providers used by the simulator -------------------------------------

class OracleEstimator:
    name = "oracle"

    def reset(self):
        pass

    def estimate(self, record: SegmentRecord, rng: np.random.Generator) -> BitrateEstimate:
        return estimate_oracle(record)

    def observe(self, record: SegmentRecord):
        pass

    def to_dict(self) -> dict:
        return {"kind": self.name}


class NoisyEstimator(OracleEstimator):
    name = "noisy"

    def __init__(self, rel_error: float = DEFAULT_REL_ERROR):
        if rel_error < 0:
            raise ParameterError(f"rel_error must be non-negative, got {rel_error}")
        self.rel_error = rel_error

    def estimate(self, record, rng):
        return estimate_noisy(record, self.rel_error, rng)

    def to_dict(self):
        return {"kind": self.name, "rel_error": self.rel_error}


class AREstimator(OracleEstimator):
    """Predicts the next base size from the last encoded segment's true base size."""

    name = "ar"

    def __init__(self, model: ARModel):
        self.model = model
        self.prev_base: float | None = None

    def reset(self):
        self.prev_base = None

    def estimate(self, record, rng):
        prev = self.model.stationary_mean if self.prev_base is None else self.prev_base
        return estimate_ar(self.model, max(prev, EPS_FLOOR))

    def observe(self, record):
        self.prev_base = record.base_size

    def to_dict(self):
        return {"kind": self.name, **self.model.to_dict()}


def mean_relative_error(est: BitrateEstimate, record: SegmentRecord) -> float:
    """Mean |est - true| / true over all compression settings of one segment."""
    return float(np.mean(np.abs(est.sizes() - record.bitrate) / record.bitrate))
