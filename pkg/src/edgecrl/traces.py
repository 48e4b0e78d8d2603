"""Segment traces: data model, synthetic generator, validator and file format.

A segment trace stores, for every video segment, the encoded size of each
compression setting (resolution, qp) and the mIoU of each full configuration.
Sizes are in MB for a segment of ``duration`` seconds.

Synthetic generator
-------------------
Scene content follows two AR(1) processes in log space, the scene size ``S``
and the segmentation difficulty ``D``, with occasional scene cuts that redraw
them from their stationary distribution. Per segment::

    size(r, qp)   = S * r ** a * exp(-kappa * (qp - qp_min))
    mIoU(r, q, v) = exp(-D * g(r, q, v))
    g(r, q, v)    = res_penalty * (1 - r) + qp_penalty * (q - qp_min) / 10 + model_penalty[v]

so the anchor configuration (r=1, qp_min, v=0) scores exactly 1. Additive
noise and adjacent-model penalty swaps ("crossovers") perturb the ranking.

``scene_latents`` layout: ``[log S, D, kappa, a, class_sensitivity[0..C)]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .configspace import Configuration, ConfigurationSpace
from .errors import ParameterError, SchemaVersionError, TraceFormatError

TRACE_SCHEMA_VERSION = 1
BANDWIDTH_SCHEMA_VERSION = 1
N_FIXED_LATENTS = 4


@dataclass(frozen=True)
class GeneratorParams:
    n_segments: int = 100
    duration: float = 1.0
    fps: int = 15
    n_classes: int = 8
    # bitrate model
    base_size: float = 0.7
    size_sigma: float = 0.2
    size_ar: float = 0.98
    res_exponent: float = 1.5
    res_exponent_jitter: float = 0.1
    qp_decay: float = 0.11
    qp_decay_jitter: float = 0.15
    # accuracy model
    difficulty: float = 1.0
    difficulty_sigma: float = 0.4
    difficulty_ar: float = 0.995
    difficulty_size_corr: float = 0.8
    res_penalty: float = 0.5
    qp_penalty: float = 0.25
    model_penalty: tuple[float, ...] = (0.0, 0.04, 0.09, 0.16, 0.28)
    class_sigma: float = 0.3
    # dynamics and imperfections
    scene_volatility: float = 0.01
    noise: float = 0.0
    crossover_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "model_penalty", tuple(float(p) for p in self.model_penalty))
        if self.n_segments <= 0:
            raise ParameterError(f"n_segments must be positive, got {self.n_segments}")
        if self.noise < 0:
            raise ParameterError(f"noise must be non-negative, got {self.noise}")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ParameterError(f"crossover_prob must lie in [0, 1], got {self.crossover_prob}")
        if not 0.0 <= self.scene_volatility <= 1.0:
            raise ParameterError(f"scene_volatility must lie in [0, 1], got {self.scene_volatility}")
        for name in ("duration", "base_size", "res_exponent", "qp_decay", "difficulty",
                     "res_penalty", "qp_penalty"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        for name in ("size_sigma", "res_exponent_jitter", "qp_decay_jitter", "difficulty_sigma",
                     "class_sigma"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        for name in ("size_ar", "difficulty_ar"):
            if not -1.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in (-1, 1)")
        if not -1.0 <= self.difficulty_size_corr <= 1.0:
            raise ParameterError("difficulty_size_corr must lie in [-1, 1]")
        pen = self.model_penalty
        if pen[0] != 0.0 or any(b <= a for a, b in zip(pen, pen[1:])):
            raise ParameterError("model_penalty must start at 0 and strictly increase")
        if self.n_classes <= 0 or self.fps <= 0:
            raise ParameterError("n_classes and fps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model_penalty"] = list(self.model_penalty)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ParameterError(f"unknown generator parameters: {sorted(unknown)}")
        if "model_penalty" in known:
            known["model_penalty"] = tuple(known["model_penalty"])
        return cls(**known)


@dataclass(eq=False)
class SegmentRecord:
    """Ground truth for one segment.

    ``bitrate`` has shape (n_resolutions, n_qps), in MB per segment.
    ``accuracy`` has shape (n_models, n_resolutions, n_qps); flattening it gives
    the accuracy of every configuration in flat index order.
    """

    segment_id: int
    duration: float
    bitrate: np.ndarray
    accuracy: np.ndarray
    scene_latents: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, SegmentRecord):
            return NotImplemented
        return (
            self.segment_id == other.segment_id
            and self.duration == other.duration
            and _array_equal(self.bitrate, other.bitrate)
            and _array_equal(self.accuracy, other.accuracy)
            and _array_equal(self.scene_latents, other.scene_latents)
        )

    @property
    def base_size(self) -> float:
        return float(self.bitrate[0, 0])

    def size_of(self, space: ConfigurationSpace, cfg: Configuration) -> float:
        i, j = space.setting_index(cfg.resolution_scale, cfg.qp)
        return float(self.bitrate[i, j])

    def accuracy_of(self, space: ConfigurationSpace, cfg: Configuration) -> float:
        return float(self.accuracy.reshape(-1)[space.index(cfg)])

    def sizes_by_config(self, space: ConfigurationSpace) -> np.ndarray:
        """Segment size for every configuration index (model version does not matter)."""
        return self.bitrate.reshape(-1)[space.setting_of_config]

    def class_sensitivity(self) -> np.ndarray:
        return self.scene_latents[N_FIXED_LATENTS:]

    def class_ious(self, miou: float) -> np.ndarray:
        """Per-class IoU of a prediction reaching ``miou`` on this segment.

        Classes with a larger sensitivity lose proportionally more IoU; with no
        clipping the class mean equals ``miou`` because sensitivities average 1.
        """
        return np.clip(1.0 - self.class_sensitivity() * (1.0 - miou), 0.0, 1.0)


def _array_equal(a, b) -> bool:
    a = np.asarray(a)
    b = np.asarray(b)
    return a.shape == b.shape and bool(np.all((a == b) | (np.isnan(a) & np.isnan(b))))


@dataclass(eq=False)
class TraceSet:
    segments: list[SegmentRecord]
    fps: int
    space: ConfigurationSpace = field(default_factory=ConfigurationSpace)
    n_classes: int = 8
    generator_params: dict | None = None
    seed: int | None = None

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    def __eq__(self, other):
        if not isinstance(other, TraceSet):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.space == other.space
            and self.n_classes == other.n_classes
            and self.generator_params == other.generator_params
            and self.seed == other.seed
            and len(self.segments) == len(other.segments)
            and all(a == b for a, b in zip(self.segments, other.segments))
        )

    def base_sizes(self) -> np.ndarray:
        return np.array([s.base_size for s in self.segments])


def generate_trace(params: GeneratorParams, seed: int,
                   space: ConfigurationSpace | None = None) -> TraceSet:
    """Draw a synthetic trace; a pure function of (params, seed, space)."""
    space = space or ConfigurationSpace()
    n_models, n_res, n_qp = space.shape
    if len(params.model_penalty) != n_models:
        raise ParameterError(
            f"model_penalty has {len(params.model_penalty)} entries but the space has {n_models} models")
    rng = np.random.default_rng(seed)
    C = params.n_classes

    res = np.asarray(space.resolutions, dtype=float)
    qps = np.asarray(space.qps, dtype=float)
    dq = qps - qps.min()
    setting_penalty = params.res_penalty * (1.0 - res)[:, None] + params.qp_penalty * dq[None, :] / 10.0
    anchor = (space.model_versions.index(space.anchor.model_version),
              space.resolutions.index(space.anchor.resolution_scale),
              space.qps.index(space.anchor.qp))

    def draw_classes():
        w = np.exp(params.class_sigma * rng.standard_normal(C))
        return w / w.mean()

    rho_s, rho_d = params.size_ar, params.difficulty_ar
    corr = params.difficulty_size_corr
    z_s = rng.standard_normal()
    z_d = corr * z_s + math.sqrt(1.0 - corr * corr) * rng.standard_normal()
    classes = draw_classes()
    segments = []
    for i in range(params.n_segments):
        if i > 0:
            e_s = rng.standard_normal()
            e_d = corr * e_s + math.sqrt(1.0 - corr * corr) * rng.standard_normal()
            cut = rng.random() < params.scene_volatility
            if cut:
                z_s, z_d = e_s, e_d
                classes = draw_classes()
            else:
                z_s = rho_s * z_s + math.sqrt(1.0 - rho_s ** 2) * e_s
                z_d = rho_d * z_d + math.sqrt(1.0 - rho_d ** 2) * e_d
        log_size = math.log(params.base_size) + params.size_sigma * z_s
        difficulty = params.difficulty * math.exp(params.difficulty_sigma * z_d)
        kappa = params.qp_decay * math.exp(params.qp_decay_jitter * rng.standard_normal())
        a = params.res_exponent * math.exp(params.res_exponent_jitter * rng.standard_normal())

        bitrate = math.exp(log_size) * res[:, None] ** a * np.exp(-kappa * dq)[None, :]

        penalty = np.array(params.model_penalty)
        if rng.random() < params.crossover_prob and n_models > 2:
            v = int(rng.integers(1, n_models - 1))
            penalty[v], penalty[v + 1] = penalty[v + 1], penalty[v]
        g = penalty[:, None, None] + setting_penalty[None, :, :]
        accuracy = np.exp(-difficulty * g)
        if params.noise > 0:
            accuracy = np.clip(accuracy + params.noise * rng.standard_normal(accuracy.shape), 0.0, 1.0)
        accuracy[anchor] = 1.0

        latents = np.concatenate([[log_size, difficulty, kappa, a], classes])
        segments.append(SegmentRecord(i, float(params.duration), bitrate, accuracy, latents))

    return TraceSet(segments, params.fps, space, C, params.to_dict(), int(seed))


@dataclass(frozen=True)
class Violation:
    segment_id: int | None
    kind: str
    message: str
    config: str | None = None

    def __str__(self):
        where = "trace" if self.segment_id is None else f"segment {self.segment_id}"
        cfg = f" [{self.config}]" if self.config else ""
        return f"{where}{cfg}: {self.kind}: {self.message}"


def validate_trace(t: TraceSet) -> list[Violation]:
    """Every invariant violation of ``t``; an empty list means the trace is valid."""
    out: list[Violation] = []
    space = t.space
    n_models, n_res, n_qp = space.shape
    if not isinstance(t.fps, (int, np.integer)) or t.fps <= 0:
        out.append(Violation(None, "fps", f"fps must be a positive integer, got {t.fps!r}"))
    anchor = space.anchor
    a_idx = space.index(anchor)
    # resolution order used to check size monotonicity: higher scale => larger size
    res_order = np.argsort(np.asarray(space.resolutions))
    qp_order = np.argsort(np.asarray(space.qps))
    for pos, seg in enumerate(t.segments):
        sid = seg.segment_id
        if sid != pos:
            out.append(Violation(sid, "segment_id", f"expected id {pos}, found {sid}"))
        if not (isinstance(seg.duration, float) and math.isfinite(seg.duration) and seg.duration > 0):
            out.append(Violation(sid, "duration", f"duration must be positive, got {seg.duration!r}"))
        b = np.asarray(seg.bitrate, dtype=float)
        acc = np.asarray(seg.accuracy, dtype=float)
        lat = np.asarray(seg.scene_latents, dtype=float)
        if b.shape != (n_res, n_qp):
            out.append(Violation(sid, "shape", f"bitrate table shape {b.shape} != {(n_res, n_qp)}"))
            b = None
        if acc.shape != (n_models, n_res, n_qp):
            out.append(Violation(sid, "shape", f"accuracy table shape {acc.shape} != {(n_models, n_res, n_qp)}"))
            acc = None
        if lat.ndim != 1 or lat.shape[0] != N_FIXED_LATENTS + t.n_classes:
            out.append(Violation(sid, "latents", f"scene_latents must have {N_FIXED_LATENTS + t.n_classes} entries"))
        elif not np.all(np.isfinite(lat)):
            out.append(Violation(sid, "non_finite", "non-finite scene latent"))
        if b is not None:
            for i in range(n_res):
                for j in range(n_qp):
                    v = b[i, j]
                    name = f"r={space.resolutions[i]:g},qp={space.qps[j]}"
                    if not math.isfinite(v):
                        out.append(Violation(sid, "non_finite", f"bitrate {v!r}", name))
                    elif v <= 0:
                        out.append(Violation(sid, "bitrate_positive", f"bitrate {v!r} <= 0", name))
            bq = b[:, qp_order]
            for i in range(n_res):
                for j in range(n_qp - 1):
                    if not bq[i, j] > bq[i, j + 1]:
                        lo, hi = space.qps[qp_order[j]], space.qps[qp_order[j + 1]]
                        out.append(Violation(
                            sid, "bitrate_qp_monotonicity",
                            f"size at qp={lo} ({bq[i, j]!r}) not greater than at qp={hi} ({bq[i, j + 1]!r})",
                            f"r={space.resolutions[i]:g}"))
            br = b[res_order, :]
            for j in range(n_qp):
                for i in range(n_res - 1):
                    if not br[i, j] < br[i + 1, j]:
                        lo, hi = space.resolutions[res_order[i]], space.resolutions[res_order[i + 1]]
                        out.append(Violation(
                            sid, "bitrate_resolution_monotonicity",
                            f"size at r={lo:g} ({br[i, j]!r}) not less than at r={hi:g} ({br[i + 1, j]!r})",
                            f"qp={space.qps[j]}"))
        if acc is not None:
            flat = acc.reshape(-1)
            for k, v in enumerate(flat):
                if not math.isfinite(v):
                    out.append(Violation(sid, "non_finite", f"accuracy {v!r}", str(space.configs[k])))
                elif not 0.0 <= v <= 1.0:
                    out.append(Violation(sid, "accuracy_range", f"accuracy {v!r} outside [0, 1]",
                                         str(space.configs[k])))
            if flat[a_idx] != 1.0:
                out.append(Violation(sid, "anchor_accuracy",
                                     f"anchor accuracy {flat[a_idx]!r} != 1.0", str(anchor)))
    return out


# -- file format ---------------------------------------------------------------

def trace_to_dict(t: TraceSet) -> dict:
    return {
        "schema_version": TRACE_SCHEMA_VERSION,
        "kind": "segment-trace",
        "header": {
            "space": t.space.to_dict(),
            "fps": t.fps,
            "n_classes": t.n_classes,
            "provenance": {"generator_params": t.generator_params, "seed": t.seed},
        },
        "segments": [
            {
                "segment_id": s.segment_id,
                "duration": s.duration,
                "bitrate": s.bitrate.tolist(),
                "accuracy": s.accuracy.tolist(),
                "scene_latents": s.scene_latents.tolist(),
            }
            for s in t.segments
        ],
    }


def trace_from_dict(d: dict, validate: bool = True) -> TraceSet:
    if not isinstance(d, dict):
        raise TraceFormatError("trace document must be a JSON object")
    version = d.get("schema_version")
    if version != TRACE_SCHEMA_VERSION:
        raise SchemaVersionError(version, TRACE_SCHEMA_VERSION)
    try:
        h = d["header"]
        space = ConfigurationSpace.from_dict(h["space"])
        prov = h.get("provenance") or {}
        segments = [
            SegmentRecord(
                int(s["segment_id"]),
                float(s["duration"]),
                np.array(s["bitrate"], dtype=float),
                np.array(s["accuracy"], dtype=float),
                np.array(s["scene_latents"], dtype=float),
            )
            for s in d["segments"]
        ]
        t = TraceSet(segments, h["fps"], space, int(h["n_classes"]),
                     prov.get("generator_params"), prov.get("seed"))
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"malformed trace document: {exc}") from exc
    if validate:
        problems = validate_trace(t)
        if problems:
            head = "; ".join(str(p) for p in problems[:5])
            raise TraceFormatError(f"trace violates {len(problems)} invariant(s): {head}")
    return t


def dumps_trace(t: TraceSet) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(trace_to_dict(t), indent=1) + "\n"


def save_trace(t: TraceSet, path) -> None:
    Path(path).write_text(dumps_trace(t))


def load_trace(path, validate: bool = True) -> TraceSet:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: not a parseable trace file ({exc})") from exc
    return trace_from_dict(d, validate)


# -- bandwidth traces -----------------------------------------------------------

@dataclass(frozen=True)
class BandwidthTrace:
    """Available bandwidth (MB/s) per segment slot; the last value repeats past the end."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ParameterError("bandwidth trace is empty")
        if any(not (math.isfinite(v) and v > 0) for v in vals):
            raise ParameterError("bandwidth values must be finite and positive")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def at(self, slot: int) -> float:
        return self.values[min(slot, len(self.values) - 1)]

    @classmethod
    def constant(cls, value: float, n_slots: int = 1) -> "BandwidthTrace":
        return cls((value,) * n_slots)

    @classmethod
    def piecewise(cls, levels: Sequence[float], durations: Sequence[int]) -> "BandwidthTrace":
        if len(levels) != len(durations):
            raise ParameterError("levels and durations must have equal length")
        vals: list[float] = []
        for level, n in zip(levels, durations):
            if n <= 0:
                raise ParameterError("piece durations must be positive")
            vals.extend([level] * n)
        return cls(tuple(vals))

    def to_dict(self) -> dict:
        return {"schema_version": BANDWIDTH_SCHEMA_VERSION, "kind": "bandwidth-trace",
                "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "BandwidthTrace":
        if d.get("schema_version") != BANDWIDTH_SCHEMA_VERSION:
            raise SchemaVersionError(d.get("schema_version"), BANDWIDTH_SCHEMA_VERSION)
        return cls(tuple(d["values"]))


def save_bandwidth(trace: BandwidthTrace, path) -> None:
    Path(path).write_text(json.dumps(trace.to_dict()) + "\n")


def load_bandwidth(path) -> BandwidthTrace:
    try:
        return BandwidthTrace.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: not a parseable bandwidth trace ({exc})") from exc


def concat_series(traces: Iterable[TraceSet]) -> list[np.ndarray]:
    """Per-trace base-size series, the input of the AR(1) baseline."""
    return [t.base_sizes() for t in traces]
