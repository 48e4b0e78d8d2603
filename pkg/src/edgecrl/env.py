"""Episode simulator shared by training and evaluation.

One episode streams one segment trace. At each step the environment shows the
current segment's observation (bitrate estimate, stale feedback, previous
action, constraints), applies the chosen configuration through the link
simulator, and scores it with the self-competition reward.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .configspace import Configuration, ConfigurationSpace, CostModel
from .crl import SelfCompetitionState, StateLayout, build_state, step_reward
from .estimation import BitrateEstimate, OracleEstimator, content_features
from .feedback import FeedbackProvider, FeedbackVector
from .linksim import StreamSession
from .traces import BandwidthTrace, SegmentRecord, TraceSet


@dataclass(frozen=True)
class Episode:
    trace: TraceSet
    target: float
    bandwidth: BandwidthTrace
    noise_seed: int | None = None
    name: str = ""


@dataclass(frozen=True)
class Observation:
    """What a policy may look at before configuring segment ``step``.

    ``record`` is ground truth; only the privileged baselines read it.
    """

    step: int
    record: SegmentRecord
    target: float
    bandwidth: float
    duration: float
    estimate: BitrateEstimate
    feedback: FeedbackVector
    prev_action: int | None
    state: np.ndarray


class OffloadEnv:
    def __init__(self, space: ConfigurationSpace, cost_model: CostModel, layout: StateLayout,
                 episodes: Callable[[], Episode], estimator=None, feedback: FeedbackProvider | None = None,
                 alpha: float = 0.2, reset_reward_each_episode: bool = True):
        self.space = space
        self.cost_model = cost_model
        self.costs = cost_model.cost_vector(space)
        self.layout = layout
        self.episodes = episodes
        self.estimator = estimator or OracleEstimator()
        self.feedback = feedback or FeedbackProvider(space, layout.n_classes)
        self.alpha = alpha
        self.reset_reward_each_episode = reset_reward_each_episode
        self.reward_state = SelfCompetitionState(alpha=alpha)
        self.episode: Episode | None = None
        self.observation: Observation | None = None

    def reset(self) -> np.ndarray:
        self.episode = self.episodes()
        self.rng = np.random.default_rng(self.episode.noise_seed)
        self.estimator.reset()
        self.session = None
        self.i = 0
        self._fb = self.feedback.initial()
        self._prev_action = None
        self._prev_est = None
        if self.reset_reward_each_episode:
            self.reward_state = SelfCompetitionState(alpha=self.alpha)
        self._observe()
        return self.observation.state

    def _observe(self):
        ep = self.episode
        record = ep.trace[self.i]
        est = self.estimator.estimate(record, self.rng)
        x = content_features(est, self._prev_est)
        bw = ep.bandwidth.at(self.i)
        state = build_state(self.layout, ep.target, bw, est, self._fb, self._prev_action, x)
        self.observation = Observation(self.i, record, ep.target, bw, record.duration, est,
                                       self._fb, self._prev_action, state)
        self._prev_est = est

    def step(self, action: int, extra_cost: float = 0.0):
        obs = self.observation
        record = obs.record
        if self.session is None:
            self.session = StreamSession(record.duration)
        cfg: Configuration = self.space.config(action)
        size = record.size_of(self.space, cfg)
        outcome = self.session.step(size, obs.bandwidth)
        miou = record.accuracy_of(self.space, cfg) if outcome.delivered else 0.0
        cost = float(self.costs[action])
        terms = step_reward(self.reward_state, cost, miou, obs.target, size, obs.bandwidth,
                            record.duration)
        self.reward_state = self.reward_state.update(terms.cost, terms.u, terms.o)
        self.estimator.observe(record)
        self._fb = self.feedback(outcome.delivered, cfg, record, self.rng)
        self._prev_action = action
        self.i += 1
        done = self.i >= len(self.episode.trace)
        info = {
            "segment_id": record.segment_id, "action": action, "config": cfg, "size": size,
            "outcome": outcome, "delivered": outcome.delivered, "miou": miou, "cost": cost,
            "overhead": float(extra_cost), "failed": miou < obs.target, "terms": terms,
            "target": obs.target, "bandwidth": obs.bandwidth,
        }
        if not done:
            self._observe()
            return self.observation.state, terms.reward, False, info
        self.observation = None
        return None, terms.reward, True, info
