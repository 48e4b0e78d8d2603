"""Reference policies: the perfect-information optimum, Periodic Profiling, fixed configurations."""
from __future__ import annotations

import numpy as np

from .configspace import Configuration, ConfigurationSpace, CostModel
from .crl import Mode, select_action
from .traces import SegmentRecord


def select_config(accuracy: np.ndarray, sizes: np.ndarray, costs: np.ndarray,
                  target: float, budget: float) -> int:
    """Index picked by the constrained rule over flat per-configuration vectors.

    1. cheapest config with size <= budget and accuracy >= target
       (ties: higher accuracy, then lower index);
    2. otherwise the most accurate config with size <= budget
       (ties: lower cost, then lower index);
    3. otherwise the smallest config (ties: lower cost, then lower index).
    """
    idx = np.arange(len(costs))
    fits = sizes <= budget
    ok = fits & (accuracy >= target)
    if ok.any():
        c = idx[ok]
        return int(c[np.lexsort((c, -accuracy[c], costs[c]))[0]])
    if fits.any():
        c = idx[fits]
        return int(c[np.lexsort((c, costs[c], -accuracy[c]))[0]])
    return int(idx[np.lexsort((idx, costs, sizes))[0]])


def optimal_config(record: SegmentRecord, target: float, bandwidth: float, cost_model: CostModel,
                   space: ConfigurationSpace | None = None, duration: float | None = None) -> Configuration:
    space = space or ConfigurationSpace()
    T = record.duration if duration is None else duration
    i = select_config(record.accuracy.reshape(-1), record.sizes_by_config(space),
                      cost_model.cost_vector(space), target, bandwidth * T)
    return space.config(i)


class OptimalPolicy:
    name = "optimal"

    def __init__(self, space: ConfigurationSpace, cost_model: CostModel):
        self.space = space
        self.costs = cost_model.cost_vector(space)

    def reset(self):
        pass

    def act(self, obs) -> int:
        r = obs.record
        return select_config(r.accuracy.reshape(-1), r.sizes_by_config(self.space), self.costs,
                             obs.target, obs.bandwidth * obs.duration)

    def overhead(self, obs) -> float:
        return 0.0

    def describe(self) -> dict:
        return {"name": self.name}


class ProfilingState:
    """Accuracy table snapshot taken at the start of every profiling period."""

    def __init__(self, period: int = 40):
        if period <= 0:
            raise ValueError("profiling period must be positive")
        self.period = period
        self.cache: np.ndarray | None = None
        self.refreshes = 0

    def observe(self, step: int, record: SegmentRecord) -> bool:
        if step % self.period == 0 or self.cache is None:
            self.cache = record.accuracy.reshape(-1).copy()
            self.refreshes += 1
            return True
        return False


def periodic_profiling_config(state: ProfilingState, step: int, record: SegmentRecord, target: float,
                              bandwidth: float, cost_model: CostModel,
                              space: ConfigurationSpace | None = None) -> Configuration:
    """Optimal rule on cached accuracies with the true segment sizes."""
    space = space or ConfigurationSpace()
    state.observe(step, record)
    i = select_config(state.cache, record.sizes_by_config(space), cost_model.cost_vector(space),
                      target, bandwidth * record.duration)
    return space.config(i)


class PeriodicProfilingPolicy:
    """Profiles all configurations on ``profile_frames`` frames once per period.

    The profiling inference is charged as overhead to the segment that triggers it:
    ``profile_frames * sum(cost of every configuration) / frames per segment``.
    """

    name = "periodic_profiling"

    def __init__(self, space: ConfigurationSpace, cost_model: CostModel, period: int = 40,
                 profile_frames: int = 1, fps: int = 15):
        self.space = space
        self.costs = cost_model.cost_vector(space)
        self.period = period
        self.profile_frames = profile_frames
        self.fps = fps
        self.state = ProfilingState(period)
        self._refreshed = False

    def reset(self):
        self.state = ProfilingState(self.period)

    def act(self, obs) -> int:
        r = obs.record
        self._refreshed = self.state.observe(obs.step, r)
        return select_config(self.state.cache, r.sizes_by_config(self.space), self.costs,
                             obs.target, obs.bandwidth * obs.duration)

    def overhead(self, obs) -> float:
        if not self._refreshed:
            return 0.0
        frames = self.fps * obs.duration
        return self.profile_frames * float(self.costs.sum()) / frames

    def describe(self) -> dict:
        return {"name": self.name, "period": self.period, "profile_frames": self.profile_frames,
                "fps": self.fps}


class FixedPolicy:
    name = "fixed"

    def __init__(self, index: int):
        self.index = int(index)

    def reset(self):
        pass

    def act(self, obs) -> int:
        return self.index

    def overhead(self, obs) -> float:
        return 0.0

    def describe(self) -> dict:
        return {"name": self.name, "index": self.index}


def fixed_config(cfg: Configuration, space: ConfigurationSpace | None = None) -> FixedPolicy:
    return FixedPolicy((space or ConfigurationSpace()).index(cfg))


class CRLPolicy:
    """A trained (or untrained) adapter network acting greedily."""

    name = "crl"

    def __init__(self, net, mode: Mode = Mode.TEST, rng=None, label: str = "crl"):
        self.net = net
        self.mode = Mode(mode)
        self.rng = rng
        self.name = label

    def reset(self):
        pass

    def act(self, obs) -> int:
        return select_action(self.net, obs.state, self.mode, self.rng)[0]

    def overhead(self, obs) -> float:
        return 0.0

    def describe(self) -> dict:
        return {"name": self.name, "mode": self.mode.value}
