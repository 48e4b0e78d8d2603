"""Experiment orchestration: config, seeding, training, evaluation and reports.

Seeding: every random stream is derived from the master seed and a stable name
(``derive_seed(master, "trace/train/3")``) via ``numpy.random.SeedSequence``
with the name's CRC32 as spawn key, so each component is reproducible on its own.

Streams: ``trace/train/{k}``, ``trace/eval/{k}`` (trace generation),
``policy_init``, ``value_init`` (network weights), ``rollout`` (action sampling
and minibatch shuffling), ``episodes`` (training episode, target and bandwidth
draws), ``noise/eval/{k}`` (estimator and feedback noise in evaluation).
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines
from .configspace import ConfigurationSpace, CostModel
from .crl import Mode, PPOTrainer, StateLayout, TrainerConfig, make_networks
from .env import Episode, OffloadEnv
from .errors import ConfigurationError, ParameterError, TrainingDivergenceError
from .estimation import DEFAULT_REL_ERROR, AREstimator, ARModel, NoisyEstimator, OracleEstimator
from .feedback import FeedbackProvider
from .neural import Adam, net_from_dict
from .traces import BandwidthTrace, GeneratorParams, TraceSet, generate_trace, load_bandwidth, load_trace

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
CHECKPOINT_FORMAT = "edgecrl-checkpoint"
CHECKPOINT_VERSION = 1
TARGET_CHOICES = tuple(round(0.5 + 0.05 * k, 2) for k in range(7))  # 0.50 .. 0.80

SEGMENT_COLUMNS = ("policy", "episode", "segment_id", "target", "bandwidth", "action", "resolution",
                   "qp", "model", "size", "status", "upload_time", "miou", "cost", "overhead",
                   "total_cost", "failed", "reward", "delta", "xi")
COMPARE_COLUMNS = ("policy", "bandwidth", "target", "n_segments", "failure_rate", "mean_cost",
                   "drop_rate", "acc_p10", "acc_p25", "acc_median")


def derive_seed(master: int, name: str) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, name))


# -- configuration ------------------------------------------------------------------

def _default_traces():
    return {"generator": {}, "n_train": 200, "n_eval": 50}


def _default_train():
    return {"target": {"choices": list(TARGET_CHOICES)},
            "bandwidth": {"mode": "uniform", "low": 0.3, "high": 1.0}}


def _default_eval():
    return {"target": 0.65, "bandwidth": {"mode": "constant", "value": 0.6}}


def _default_policy():
    return {"estimator": {"kind": "noisy", "rel_error": DEFAULT_REL_ERROR},
            "feedback": {"mode": "oracle", "noise": 0.1},
            "bandwidth_norm": 1.0, "bitrate_norm": 1.0}


def _default_baselines():
    return {"profiling_period": 40, "profile_frames": 1, "fixed_index": 0}


def _default_compare():
    return {"policies": ["optimal", "crl", "periodic_profiling", "fixed"],
            "bandwidths": [0.4, 0.6, 0.8], "targets": [0.65]}


@dataclass
class ExperimentConfig:
    seed: int
    traces: dict = field(default_factory=_default_traces)
    train: dict = field(default_factory=_default_train)
    eval: dict = field(default_factory=_default_eval)
    policy: dict = field(default_factory=_default_policy)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    baselines: dict = field(default_factory=_default_baselines)
    compare: dict = field(default_factory=_default_compare)
    space: ConfigurationSpace = field(default_factory=ConfigurationSpace)
    cost_model: CostModel = field(default_factory=CostModel)
    output_dir: str | None = None

    def __post_init__(self):
        if self.seed is None:
            raise ConfigurationError("experiment config needs a master seed")
        self.seed = int(self.seed)
        sources = [k for k in ("generator", "train_files") if k in self.traces]
        if len(sources) != 1:
            raise ConfigurationError("traces must name exactly one source: 'generator' or 'train_files'")
        if "generator" in self.traces:
            GeneratorParams.from_dict(self.traces["generator"])  # validate early

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "seed": self.seed,
            "traces": self.traces, "train": self.train, "eval": self.eval,
            "policy": self.policy, "trainer": self.trainer.to_dict(),
            "baselines": self.baselines, "compare": self.compare,
            "space": self.space.to_dict(), "cost_model": self.cost_model.to_dict(),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        version = d.get("schema_version")
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigurationError(
                f"config schema version {version!r} is not supported (expected {CONFIG_SCHEMA_VERSION})")
        known = {"schema_version", "seed", "traces", "train", "eval", "policy", "trainer", "baselines",
                 "compare", "space", "cost_model", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        kw = {k: d[k] for k in ("traces", "train", "eval", "policy", "baselines", "compare", "output_dir")
              if k in d}
        for name, factory in (("traces", _default_traces), ("train", _default_train),
                              ("eval", _default_eval), ("policy", _default_policy),
                              ("baselines", _default_baselines), ("compare", _default_compare)):
            if name in kw and name != "traces":
                kw[name] = {**factory(), **kw[name]}
        if "trainer" in d:
            kw["trainer"] = TrainerConfig.from_dict(d["trainer"])
        if "space" in d:
            kw["space"] = ConfigurationSpace.from_dict(d["space"])
        if "cost_model" in d:
            kw["cost_model"] = CostModel.from_dict(d["cost_model"])
        if "seed" not in d:
            raise ConfigurationError("experiment config needs a master seed")
        return cls(seed=d["seed"], **kw)


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Read a JSON experiment config; ``seed`` (e.g. from the CLI) overrides the file's seed."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if seed is not None:
        d["seed"] = seed
    return ExperimentConfig.from_dict(d)


# -- experiment pieces ----------------------------------------------------------------

def layout_for(cfg: ExperimentConfig, n_classes: int) -> StateLayout:
    return StateLayout(n_classes, len(cfg.space), cfg.space.n_settings,
                       float(cfg.policy.get("bandwidth_norm", 1.0)),
                       float(cfg.policy.get("bitrate_norm", 1.0)))


def _generated(cfg: ExperimentConfig, split: str, n: int) -> list[TraceSet]:
    params = GeneratorParams.from_dict(cfg.traces["generator"])
    base = cfg.traces.get("seed", cfg.seed)
    return [generate_trace(params, derive_seed(base, f"trace/{split}/{k}"), cfg.space) for k in range(n)]


def train_traces(cfg: ExperimentConfig) -> list[TraceSet]:
    if "generator" in cfg.traces:
        return _generated(cfg, "train", int(cfg.traces.get("n_train", 200)))
    return [load_trace(p) for p in cfg.traces["train_files"]]


def eval_traces(cfg: ExperimentConfig) -> list[TraceSet]:
    if "generator" in cfg.traces:
        return _generated(cfg, "eval", int(cfg.traces.get("n_eval", 50)))
    return [load_trace(p) for p in cfg.traces.get("eval_files", cfg.traces["train_files"])]


def make_bandwidth(spec, rng: np.random.Generator | None = None, n_slots: int = 1) -> BandwidthTrace:
    """Bandwidth trace from a spec: a number, or {"mode": constant|uniform|piecewise|trace, ...}."""
    if isinstance(spec, (int, float)):
        return BandwidthTrace.constant(float(spec), n_slots)
    mode = spec.get("mode", "constant")
    if mode == "constant":
        return BandwidthTrace.constant(float(spec["value"]), n_slots)
    if mode == "uniform":
        if rng is None:
            raise ParameterError("uniform bandwidth sampling needs a random generator")
        return BandwidthTrace.constant(float(rng.uniform(spec["low"], spec["high"])), n_slots)
    if mode == "piecewise":
        return BandwidthTrace.piecewise(spec["levels"], spec["durations"])
    if mode == "trace":
        if "file" in spec:
            return load_bandwidth(spec["file"])
        return BandwidthTrace(tuple(spec["values"]))
    raise ConfigurationError(f"unknown bandwidth mode {mode!r}")


def make_target(spec, rng: np.random.Generator | None = None) -> float:
    if isinstance(spec, (int, float)):
        return float(spec)
    if "value" in spec:
        return float(spec["value"])
    if "choices" in spec:
        if rng is None:
            raise ParameterError("target sampling needs a random generator")
        return float(spec["choices"][int(rng.integers(len(spec["choices"])))])
    raise ConfigurationError(f"bad target spec {spec!r}")


def make_estimator(cfg: ExperimentConfig, train: Sequence[TraceSet] | None = None):
    spec = cfg.policy.get("estimator", {"kind": "noisy"})
    kind = spec.get("kind", "noisy")
    if kind == "oracle":
        return OracleEstimator()
    if kind == "noisy":
        return NoisyEstimator(float(spec.get("rel_error", DEFAULT_REL_ERROR)))
    if kind == "ar":
        if "intercept" in spec:
            return AREstimator(ARModel.from_dict(spec))
        return AREstimator(ARModel.fit(train if train is not None else train_traces(cfg)))
    raise ConfigurationError(f"unknown estimator kind {kind!r}")


def make_feedback(cfg: ExperimentConfig, n_classes: int) -> FeedbackProvider:
    spec = cfg.policy.get("feedback", {})
    return FeedbackProvider(cfg.space, n_classes, spec.get("mode", "oracle"),
                            float(spec.get("noise", 0.1)), float(cfg.policy.get("bitrate_norm", 1.0)))


def build_training(cfg: ExperimentConfig, traces: list[TraceSet] | None = None):
    traces = traces if traces is not None else train_traces(cfg)
    if not traces:
        raise ConfigurationError("no training traces")
    n_classes = traces[0].n_classes
    layout = layout_for(cfg, n_classes)
    ep_rng = rng_for(cfg.seed, "episodes")

    def episodes():
        t = traces[int(ep_rng.integers(len(traces)))]
        target = make_target(cfg.train["target"], ep_rng)
        bw = make_bandwidth(cfg.train["bandwidth"], ep_rng, len(t))
        return Episode(t, target, bw, int(ep_rng.integers(2 ** 63)))

    env = OffloadEnv(cfg.space, cfg.cost_model, layout, episodes, make_estimator(cfg, traces),
                     make_feedback(cfg, n_classes), cfg.trainer.alpha, reset_reward_each_episode=True)
    policy, value = make_networks(layout, cfg.trainer, rng_for(cfg.seed, "policy_init"),
                                  rng_for(cfg.seed, "value_init"))
    trainer = PPOTrainer(policy, value, cfg.trainer, env, rng_for(cfg.seed, "rollout"))
    return trainer, layout


# -- checkpoints ----------------------------------------------------------------------

def checkpoint_dict(trainer: PPOTrainer, cfg: ExperimentConfig, layout: StateLayout) -> dict:
    return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "seed": cfg.seed,
            "config": cfg.to_dict(), "layout": layout.to_dict(), "steps": trainer.steps,
            "policy": trainer.policy.to_dict(), "value": trainer.value.to_dict(),
            "policy_opt": trainer.policy_opt.to_dict(), "value_opt": trainer.value_opt.to_dict()}


def save_checkpoint(d: dict, path) -> None:
    Path(path).write_text(json.dumps(d) + "\n")


@dataclass
class Checkpoint:
    policy: object
    value: object
    layout: StateLayout
    steps: int
    seed: int
    raw: dict


def load_checkpoint(path) -> Checkpoint:
    d = json.loads(Path(path).read_text())
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"checkpoint version {d.get('version')!r} is not supported (expected {CHECKPOINT_VERSION})")
    return Checkpoint(net_from_dict(d["policy"]), net_from_dict(d["value"]), StateLayout(**d["layout"]),
                      d["steps"], d["seed"], d)


# -- training ---------------------------------------------------------------------------

DIAG_COLUMNS = ("step", "reward_mean", "failure_rate", "drop_rate", "cost_mean", "policy_loss",
                "value_loss", "entropy", "approx_kl", "clip_frac")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


@dataclass
class TrainingResult:
    checkpoint_path: Path
    diagnostics_path: Path
    diagnostics: list[dict]
    trainer: PPOTrainer


def run_training(cfg: ExperimentConfig, out_dir, total_steps: int | None = None,
                 progress: bool = False) -> TrainingResult:
    """Train the adapter; writes ``checkpoint.json`` and ``diagnostics.tsv`` into ``out_dir``.

    On divergence the parameters from the last successful update are restored and
    saved before the error propagates.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = cfg.trainer.total_steps if total_steps is None else total_steps
    trainer, layout = build_training(cfg)
    nets = trainer.policy.params() + trainer.value.params()
    last_good = [p.copy() for p in nets]
    rows: list[dict] = []
    diag_path = out / "diagnostics.tsv"
    ckpt_path = out / "checkpoint.json"

    with diag_path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(DIAG_COLUMNS)

        def on_update(row):
            rows.append(row)
            w.writerow([_fmt(row[c]) for c in DIAG_COLUMNS])
            for dst, src in zip(last_good, nets):
                dst[...] = src
            if progress and len(rows) % 20 == 0:
                log.info("step %d reward %.3f fail %.3f cost %.4f", row["step"], row["reward_mean"],
                         row["failure_rate"], row["cost_mean"])

        try:
            trainer.train(total, on_update)
        except TrainingDivergenceError as exc:
            for dst, src in zip(nets, last_good):
                dst[...] = src
            save_checkpoint(checkpoint_dict(trainer, cfg, layout), ckpt_path)
            exc.diagnostics["last_good_checkpoint"] = str(ckpt_path)
            exc.diagnostics["step"] = trainer.steps
            raise
    save_checkpoint(checkpoint_dict(trainer, cfg, layout), ckpt_path)
    return TrainingResult(ckpt_path, diag_path, rows, trainer)


# -- evaluation ---------------------------------------------------------------------------

@dataclass
class Report:
    rows: list[dict]
    summary: dict


def aggregate(rows: Sequence[dict]) -> dict:
    """Summary statistics; a pure function of the per-segment log."""
    if not rows:
        raise ParameterError("cannot aggregate an empty segment log")
    miou = np.array([float(r["miou"]) for r in rows])
    failed = np.array([float(r["miou"]) < float(r["target"]) for r in rows])
    dropped = np.array([r["status"] == "dropped" for r in rows])
    total = np.array([float(r["total_cost"]) for r in rows])
    return {
        "n_segments": len(rows),
        "failure_rate": float(failed.mean()),
        "mean_cost": float(total.mean()),
        "drop_rate": float(dropped.mean()),
        "acc_p10": float(np.percentile(miou, 10)),
        "acc_p25": float(np.percentile(miou, 25)),
        "acc_median": float(np.percentile(miou, 50)),
        "mean_miou": float(miou.mean()),
    }


def resolve_policy(cfg: ExperimentConfig, spec, checkpoint: Checkpoint | None = None, fps: int = 15):
    """Policy object from an id: optimal, periodic_profiling, fixed[:index], untrained, crl."""
    if not isinstance(spec, str):
        return spec
    name, _, arg = spec.partition(":")
    b = cfg.baselines
    if name == "optimal":
        return baselines.OptimalPolicy(cfg.space, cfg.cost_model)
    if name == "periodic_profiling":
        return baselines.PeriodicProfilingPolicy(cfg.space, cfg.cost_model, int(b["profiling_period"]),
                                                 int(b["profile_frames"]), fps)
    if name == "fixed":
        return baselines.FixedPolicy(int(arg) if arg else int(b["fixed_index"]))
    if name == "untrained":
        trainer, _ = build_training(cfg, traces=eval_traces(cfg)[:1])
        return baselines.CRLPolicy(trainer.policy, Mode.TEST, label="untrained")
    if name == "crl":
        if checkpoint is None:
            raise ConfigurationError("policy 'crl' needs a trained checkpoint")
        return baselines.CRLPolicy(checkpoint.policy, Mode.TEST)
    raise ConfigurationError(f"unknown policy {spec!r}")


def run_evaluation(cfg: ExperimentConfig, policy, checkpoint: Checkpoint | None = None,
                   target=None, bandwidth=None, traces: list[TraceSet] | None = None) -> Report:
    traces = traces if traces is not None else eval_traces(cfg)
    n_classes = traces[0].n_classes
    layout = layout_for(cfg, n_classes)
    if checkpoint is not None and checkpoint.layout != layout:
        raise ConfigurationError(
            f"checkpoint state layout {checkpoint.layout} does not match the experiment {layout}")
    pol = resolve_policy(cfg, policy, checkpoint, traces[0].fps)
    net = getattr(pol, "net", None)
    if net is not None and net.in_dim != layout.dim:
        raise ConfigurationError(f"policy input dimension {net.in_dim} != state dimension {layout.dim}")
    target_spec = cfg.eval["target"] if target is None else target
    bw_spec = cfg.eval["bandwidth"] if bandwidth is None else bandwidth
    eps = [Episode(t, make_target(target_spec), make_bandwidth(bw_spec, None, len(t)),
                   derive_seed(cfg.seed, f"noise/eval/{k}"), name=str(k)) for k, t in enumerate(traces)]
    it = iter(eps)
    env = OffloadEnv(cfg.space, cfg.cost_model, layout, lambda: next(it), make_estimator(cfg),
                     make_feedback(cfg, n_classes), cfg.trainer.alpha, reset_reward_each_episode=False)
    rows = []
    label = getattr(pol, "name", str(policy))
    for k in range(len(eps)):
        env.reset()
        pol.reset()
        done = False
        while not done:
            obs = env.observation
            a = pol.act(obs)
            extra = pol.overhead(obs)
            _, reward, done, info = env.step(a, extra)
            c = info["config"]
            out = info["outcome"]
            rows.append({
                "policy": label, "episode": k, "segment_id": info["segment_id"],
                "target": info["target"], "bandwidth": info["bandwidth"], "action": a,
                "resolution": c.resolution_scale, "qp": c.qp, "model": c.model_version,
                "size": info["size"], "status": out.status.value, "upload_time": out.upload_time,
                "miou": info["miou"], "cost": info["cost"], "overhead": info["overhead"],
                "total_cost": info["cost"] + info["overhead"], "failed": info["failed"],
                "reward": reward, "delta": info["terms"].delta, "xi": info["terms"].xi,
            })
    summary = aggregate(rows)
    summary["policy"] = pol.describe()
    return Report(rows, summary)


def segments_tsv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(SEGMENT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SEGMENT_COLUMNS])
    return buf.getvalue()


def read_segments_tsv(text: str) -> list[dict]:
    """Parse a segment log back; numeric fields come back as exact floats/ints."""
    reader = csv.DictReader(io.StringIO(text), delimiter="\t")
    ints = {"episode", "segment_id", "action", "qp", "model", "reward", "delta", "xi"}
    out = []
    for r in reader:
        row = {}
        for k, v in r.items():
            if k in ("policy", "status"):
                row[k] = v
            elif k in ints:
                row[k] = int(v)
            elif k == "failed":
                row[k] = v == "1"
            elif v == "":
                row[k] = None
            else:
                row[k] = float(v)
        out.append(row)
    return out


def write_report(report: Report, out_dir, name: str = "report") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seg = out / f"{name}.segments.tsv"
    summ = out / f"{name}.summary.json"
    seg.write_text(segments_tsv(report.rows))
    summ.write_text(json.dumps(report.summary, indent=2, sort_keys=True) + "\n")
    return seg, summ


def run_compare(cfg: ExperimentConfig, checkpoint: Checkpoint | None = None,
                policies: Sequence[str] | None = None, bandwidths: Sequence[float] | None = None,
                targets: Sequence[float] | None = None) -> list[dict]:
    """One row per (policy, bandwidth, target): a plot-ready comparison table."""
    policies = list(policies or cfg.compare["policies"])
    bandwidths = list(bandwidths or cfg.compare["bandwidths"])
    targets = list(targets or cfg.compare["targets"])
    traces = eval_traces(cfg)
    rows = []
    for pol in policies:
        for bw in bandwidths:
            for a in targets:
                rep = run_evaluation(cfg, pol, checkpoint, target=a, bandwidth=bw, traces=traces)
                s = rep.summary
                rows.append({"policy": pol, "bandwidth": float(bw), "target": float(a),
                             **{c: s[c] for c in COMPARE_COLUMNS[3:]}})
    return rows


def compare_tsv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COMPARE_COLUMNS])
    return buf.getvalue()
