"""Constrained-RL configuration adapter.

Pieces, bottom-up:

* ``StateLayout`` / ``build_state``: flatten (target accuracy, bandwidth, bitrate
  estimate, feedback, previous action, content features) into one vector.
* ``compute_reward``: the self-competition reward. The agent earns
  ``sgn(C_ema - C_i)`` only while both constraint slacks and their EMAs are
  satisfied, and loses 1 whenever either slack is no better than its EMA.
* ``discounted_returns``, ``select_action``, the clipped policy loss and the
  value loss, and ``PPOTrainer`` which ties them to an environment.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ParameterError, TrainingDivergenceError
from .estimation import N_CONTENT_FEATURES, BitrateEstimate
from .feedback import FeedbackVector
from .neural import Adam, BranchedNet, log_softmax, sample_categorical, softmax


# -- state -----------------------------------------------------------------------

@dataclass(frozen=True)
class StateLayout:
    """Field order and normalisation constants of the policy state.

    Order: [A, B / bandwidth_norm, base / bitrate_norm, ratios..., feedback...,
    one-hot previous action..., content features (sizes / bitrate_norm)].
    """

    n_classes: int = 8
    n_actions: int = 90
    n_settings: int = 18
    bandwidth_norm: float = 1.0  # MB/s
    bitrate_norm: float = 1.0    # MB

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return (1, 1, 1 + self.n_settings, self.n_classes + 2, self.n_actions, N_CONTENT_FEATURES)

    @property
    def dim(self) -> int:
        return sum(self.group_sizes)

    def to_dict(self) -> dict:
        return asdict(self)


def build_state(layout: StateLayout, target: float, bandwidth: float, est: BitrateEstimate,
                fb: FeedbackVector, prev_action: int | None, x: np.ndarray) -> np.ndarray:
    b = est.flat()
    p = fb.to_array()
    x = np.asarray(x, dtype=float)
    if b.shape[0] != 1 + layout.n_settings or p.shape[0] != layout.n_classes + 2 \
            or x.shape[0] != N_CONTENT_FEATURES:
        raise ParameterError("state component dimensions do not match the experiment layout")
    onehot = np.zeros(layout.n_actions)
    if prev_action is not None:
        onehot[prev_action] = 1.0
    b = b.copy()
    b[0] /= layout.bitrate_norm
    x = x.copy()
    x[[0, 4]] /= layout.bitrate_norm
    s = np.concatenate([[target, bandwidth / layout.bandwidth_norm], b, p, onehot, x])
    if not np.all(np.isfinite(s)):
        raise ParameterError("non-finite entry in policy state")
    return s


# -- self-competition reward -----------------------------------------------------

@dataclass(frozen=True)
class SelfCompetitionState:
    c_ema: float = 0.0
    u_ema: float = 0.0
    o_ema: float = 0.0
    alpha: float = 0.2
    initialized: bool = False

    def update(self, c: float, u: float, o: float) -> "SelfCompetitionState":
        if not self.initialized:
            return replace(self, c_ema=c, u_ema=u, o_ema=o, initialized=True)
        a = self.alpha
        return replace(self, c_ema=a * c + (1 - a) * self.c_ema,
                       u_ema=a * u + (1 - a) * self.u_ema,
                       o_ema=a * o + (1 - a) * self.o_ema)


def ema(old: float, obs: float, alpha: float) -> float:
    return alpha * obs + (1 - alpha) * old


def _sgn(v: float) -> int:
    return (v > 0) - (v < 0)


@dataclass(frozen=True)
class RewardTerms:
    reward: int
    delta: int
    xi: int
    sign: int
    cost: float
    u: float
    o: float


def reward_terms(c_ema: float, u_ema: float, o_ema: float, c: float, u: float, o: float) -> RewardTerms:
    delta = int(u_ema <= 0 and o_ema <= 0 and o <= 0 and u <= 0)
    xi = max(int(u >= u_ema), int(o >= o_ema))
    sign = _sgn(c_ema - c)
    return RewardTerms(sign * delta - xi, delta, xi, sign, c, u, o)


def compute_reward(s: SelfCompetitionState, cost: float, accuracy: float, target: float,
                   size: float, bandwidth: float, duration: float = 1.0):
    """Reward for one segment and the updated EMA state.

    Slacks: U = target - accuracy, O = size / duration - bandwidth (<= 0 is
    satisfied). The EMAs used for the comparisons are the ones *before* this
    step; on the first call they are initialised to this step's observations.
    """
    terms = step_reward(s, cost, accuracy, target, size, bandwidth, duration)
    return terms.reward, s.update(terms.cost, terms.u, terms.o)


def step_reward(s: SelfCompetitionState, cost, accuracy, target, size, bandwidth,
                duration: float = 1.0) -> RewardTerms:
    u = target - accuracy
    o = size / duration - bandwidth
    ref = s if s.initialized else s.update(cost, u, o)
    return reward_terms(ref.c_ema, ref.u_ema, ref.o_ema, cost, u, o)


# -- returns and actions -----------------------------------------------------------

def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    if not 0.0 <= gamma < 1.0:
        raise ParameterError(f"gamma must lie in [0, 1), got {gamma}")
    out = np.empty(len(rewards))
    g = bootstrap
    for i in range(len(rewards) - 1, -1, -1):
        g = rewards[i] + gamma * g
        out[i] = g
    return out


class Mode(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


def select_action(policy, state, mode: Mode, rng: np.random.Generator | None = None):
    """(action index, log-probability). Train samples; Test takes the argmax (lowest index on ties)."""
    logits = policy(state)
    if np.isnan(logits).any():
        raise TrainingDivergenceError("policy produced NaN logits")
    probs = softmax(logits)
    if Mode(mode) is Mode.TEST:
        idx = int(np.argmax(probs))
    else:
        idx = sample_categorical(probs, rng)
    return idx, float(log_softmax(logits)[idx])


# -- losses ------------------------------------------------------------------------

def clipped_objective(ratio, adv, clip_eps: float) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv)


def policy_loss_and_grad(policy, states, actions, old_logp, adv, clip_eps: float,
                         ent_coef: float = 0.0):
    """Negative clipped surrogate minus entropy bonus, averaged over the batch."""
    logits, cache = policy.forward(states)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    n = logits.shape[0]
    rows = np.arange(n)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_logp)
    surr = clipped_objective(ratio, adv, clip_eps)
    entropy = -(probs * logp_all).sum(axis=1)
    loss = -surr.mean() - ent_coef * entropy.mean()
    if not math.isfinite(loss):
        raise TrainingDivergenceError("policy loss is not finite")

    # d surr / d logp is ratio * adv wherever the unclipped branch is the active minimum
    active = ratio * adv <= np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv
    d_logp = np.where(active, ratio * adv, 0.0)
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    g = -(d_logp[:, None] * (onehot - probs)) / n
    g += ent_coef * probs * (logp_all + entropy[:, None]) / n
    grads, _ = policy.backward(cache, g)
    info = {"policy_loss": float(loss), "entropy": float(entropy.mean()),
            "clip_frac": float(np.mean(np.abs(ratio - 1) > clip_eps)),
            "approx_kl": float(np.mean(old_logp - logp))}
    return float(loss), grads, info


def value_loss_and_grad(value, states, returns):
    v, cache = value.forward(states)
    v = v[:, 0]
    err = v - returns
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise TrainingDivergenceError("value loss is not finite")
    grads, _ = value.backward(cache, (2.0 * err / len(err))[:, None])
    return loss, grads


# -- training ---------------------------------------------------------------------

@dataclass
class TrainerConfig:
    gamma: float = 0.9
    clip_eps: float = 0.2
    batch_size: int = 32
    horizon: int = 256
    epochs: int = 4
    policy_lr: float = 1e-4
    value_lr: float = 1e-4
    ent_coef: float = 0.01
    total_steps: int = 100_000
    alpha: float = 0.2
    branch_width: int = 32
    hidden: tuple[int, ...] = (128, 128)
    policy_output_scale: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterError("gamma must lie in [0, 1)")
        if not self.clip_eps > 0:
            raise ParameterError("clip epsilon must be positive")
        if self.batch_size <= 0 or self.horizon <= 0 or self.epochs <= 0:
            raise ParameterError("batch size, horizon and epochs must be positive")
        if self.total_steps < 0:
            raise ParameterError("total_steps must be non-negative")
        if not 0.0 < self.alpha <= 1.0:
            raise ParameterError("alpha must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown trainer settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.actions)


def make_networks(layout: StateLayout, cfg: TrainerConfig, policy_rng, value_rng):
    policy = BranchedNet.init(layout.group_sizes, layout.n_actions, policy_rng,
                              cfg.branch_width, cfg.hidden, cfg.policy_output_scale)
    value = BranchedNet.init(layout.group_sizes, 1, value_rng, cfg.branch_width, cfg.hidden)
    return policy, value


class PPOTrainer:
    """Collects fixed-horizon rollouts from ``env`` and applies clipped PPO updates.

    ``env`` must offer ``reset() -> state`` (starting a new episode) and
    ``step(action) -> (state, reward, done, info)``.
    """

    def __init__(self, policy, value, config: TrainerConfig, env, rng: np.random.Generator):
        self.policy = policy
        self.value = value
        self.config = config
        self.env = env
        self.rng = rng
        self.policy_opt = Adam(policy, config.policy_lr)
        self.value_opt = Adam(value, config.value_lr)
        self.steps = 0
        self._state = None

    def collect(self, n_steps: int) -> Trajectory:
        states, actions, logps, rewards, dones = [], [], [], [], []
        costs, fails, drops = [], [], []
        if self._state is None:
            self._state = self.env.reset()
        for _ in range(n_steps):
            s = self._state
            a, lp = select_action(self.policy, s, Mode.TRAIN, self.rng)
            s2, r, done, info = self.env.step(a)
            states.append(s)
            actions.append(a)
            logps.append(lp)
            rewards.append(r)
            dones.append(done)
            costs.append(info["cost"])
            fails.append(info["failed"])
            drops.append(not info["delivered"])
            self._state = self.env.reset() if done else s2
        self.steps += n_steps
        S = np.array(states)
        values = self.value(S)[:, 0]
        # returns restart at episode ends; a horizon cut bootstraps from the critic
        returns = np.empty(n_steps)
        g = 0.0 if dones[-1] else float(self.value(self._state)[0])
        for i in range(n_steps - 1, -1, -1):
            if dones[i]:
                g = 0.0
            g = rewards[i] + self.config.gamma * g
            returns[i] = g
        info = {"reward_mean": float(np.mean(rewards)), "failure_rate": float(np.mean(fails)),
                "drop_rate": float(np.mean(drops)), "cost_mean": float(np.mean(costs))}
        return Trajectory(S, np.array(actions), np.array(logps), np.array(rewards, dtype=float),
                          returns, values, returns - values, info)

    def update(self, traj: Trajectory) -> dict:
        if len(traj) == 0:
            raise ParameterError("cannot update on an empty batch")
        cfg = self.config
        adv = traj.advantages
        std = adv.std()
        adv = adv - adv.mean()
        if std * std >= 1e-12:
            adv = adv / std
        n = len(traj)
        p_losses, v_losses, ents, kls, clips = [], [], [], [], []
        for _ in range(cfg.epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                lp, pg, pinfo = policy_loss_and_grad(
                    self.policy, traj.states[idx], traj.actions[idx], traj.logp[idx], adv[idx],
                    cfg.clip_eps, cfg.ent_coef)
                vl, vg = value_loss_and_grad(self.value, traj.states[idx], traj.returns[idx])
                self.policy_opt.step(pg)
                self.value_opt.step(vg)
                p_losses.append(lp)
                v_losses.append(vl)
                ents.append(pinfo["entropy"])
                kls.append(pinfo["approx_kl"])
                clips.append(pinfo["clip_frac"])
        return {"policy_loss": float(np.mean(p_losses)), "value_loss": float(np.mean(v_losses)),
                "entropy": float(np.mean(ents)), "approx_kl": float(np.mean(kls)),
                "clip_frac": float(np.mean(clips))}

    def train(self, total_steps: int, callback: Callable[[dict], None] | None = None):
        while self.steps < total_steps:
            n = min(self.config.horizon, total_steps - self.steps)
            traj = self.collect(n)
            diag = self.update(traj)
            row = {"step": self.steps, **traj.info, **diag}
            if callback is not None:
                callback(row)

    def to_dict(self) -> dict:
        return {"steps": self.steps, "policy_opt": self.policy_opt.to_dict(),
                "value_opt": self.value_opt.to_dict()}


def ppo_update(trainer: PPOTrainer, traj: Trajectory) -> dict:
    """One PPO update of ``trainer``'s networks on ``traj``; returns loss diagnostics."""
    return trainer.update(traj)
