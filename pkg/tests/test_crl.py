import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgecrl.configspace import ConfigurationSpace, CostModel
from edgecrl.crl import (Mode, PPOTrainer, SelfCompetitionState, StateLayout, TrainerConfig, build_state,
                         clipped_objective, compute_reward, discounted_returns, ema, make_networks,
                         ppo_update, reward_terms, select_action)
from edgecrl.env import Episode, OffloadEnv
from edgecrl.errors import ParameterError, TrainingDivergenceError
from edgecrl.estimation import BitrateEstimate, N_CONTENT_FEATURES
from edgecrl.feedback import FeedbackVector
from edgecrl.neural import DenseNet, softmax
from edgecrl.traces import BandwidthTrace, GeneratorParams, generate_trace


def _estimate():
    return BitrateEstimate(0.5, np.linspace(1.0, 0.1, 18).reshape(3, 6))


def test_state_dimension_default():
    layout = StateLayout()
    assert layout.dim == 1 + 1 + 19 + (8 + 2) + 90 + 5 == 126


def test_state_normalisation_and_determinism():
    layout = StateLayout(bandwidth_norm=1.0)
    fb = FeedbackVector.zero(8)
    x = np.ones(N_CONTENT_FEATURES)
    s1 = build_state(layout, 0.65, 0.5, _estimate(), fb, 4, x)
    s2 = build_state(layout, 0.65, 0.5, _estimate(), fb, 4, x)
    assert np.array_equal(s1, s2)
    assert s1[0] == 0.65 and s1[1] == 0.5
    onehot = s1[21 + 10:21 + 10 + 90]
    assert onehot.sum() == 1 and onehot[4] == 1


def test_state_dimension_drift_raises():
    with pytest.raises(ParameterError):
        build_state(StateLayout(n_classes=4), 0.6, 0.5, _estimate(), FeedbackVector.zero(8), None,
                    np.zeros(N_CONTENT_FEATURES))


# -- reward ---------------------------------------------------------------------------

def test_reward_satisfied_and_cheaper():
    t = reward_terms(0.5, -0.05, -0.1, 0.3, -0.06, -0.12)
    assert (t.delta, t.sign, t.xi, t.reward) == (1, 1, 0, 1)


def test_reward_accuracy_regression():
    t = reward_terms(0.5, -0.05, -0.1, 0.3, 0.02, -0.12)
    assert (t.delta, t.xi, t.reward) == (0, 1, -1)


def test_reward_equal_cost_is_zero():
    t = reward_terms(0.4, -0.05, -0.1, 0.4, -0.06, -0.12)
    assert t.sign == 0 and t.reward == 0


def test_reward_first_call_is_minus_one():
    s = SelfCompetitionState()
    r, s2 = compute_reward(s, cost=0.25, accuracy=0.9, target=0.65, size=0.2, bandwidth=0.6)
    assert r == -1
    assert s2.initialized and s2.c_ema == 0.25
    assert s2.u_ema == pytest.approx(0.65 - 0.9) and s2.o_ema == pytest.approx(0.2 - 0.6)


def test_reward_bitrate_slack_in_rate_units():
    s = SelfCompetitionState(0.5, -0.1, -0.05, initialized=True)
    # 1.0 MB over 2 s = 0.5 MB/s, below 0.6 MB/s
    t = compute_reward(s, 0.3, 0.9, 0.65, size=1.0, bandwidth=0.6, duration=2.0)
    assert t[0] == 1


def test_ema_arithmetic():
    assert ema(0.5, 0.3, 0.2) == pytest.approx(0.46)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=40))
def test_ema_convexity(obs):
    s = SelfCompetitionState()
    for c, u, o in obs:
        s = s.update(c, u, o)
    cs, us, os_ = zip(*obs)
    for val, seq in ((s.c_ema, cs), (s.u_ema, us), (s.o_ema, os_)):
        assert min(seq) - 1e-12 <= val <= max(seq) + 1e-12


# -- returns and actions -----------------------------------------------------------------

def test_returns_myopic():
    r = np.array([1.0, -1.0, 0.0, 1.0])
    assert np.array_equal(discounted_returns(r, 0.0), r)


def test_returns_backward_recursion():
    np.testing.assert_allclose(discounted_returns([0, 0, 1], 0.9), [0.81, 0.9, 1.0])


def test_returns_geometric_limit():
    g = discounted_returns(np.ones(400), 0.9)
    assert abs(g[0] - 10.0) < 1e-12 + 10 * 0.9 ** 400


def test_returns_reject_bad_gamma():
    with pytest.raises(ParameterError):
        discounted_returns([1.0], 1.0)


class _Fixed:
    def __init__(self, logits):
        self.logits = np.asarray(logits, dtype=float)

    def __call__(self, x):
        return self.logits


def test_select_test_mode_argmax():
    idx, lp = select_action(_Fixed(np.log([0.1, 0.7, 0.2])), None, Mode.TEST)
    assert idx == 1 and lp == pytest.approx(np.log(0.7))


def test_select_test_mode_tie_lowest_index():
    logits = np.zeros(10)
    logits[3] = logits[7] = 2.0
    assert select_action(_Fixed(logits), None, Mode.TEST)[0] == 3


def test_select_nan_raises():
    with pytest.raises(TrainingDivergenceError):
        select_action(_Fixed([0.0, np.nan]), None, Mode.TEST)


def test_select_train_frequencies():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=6)
    p = softmax(logits)
    pol = _Fixed(logits)
    counts = np.bincount([select_action(pol, None, Mode.TRAIN, rng)[0] for _ in range(100_000)],
                         minlength=6)
    assert np.max(np.abs(counts / 100_000 - p)) < 0.01


# -- losses and updates ----------------------------------------------------------------------

def test_clip_ratio_one():
    adv = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(clipped_objective(np.ones(3), adv, 0.2), adv)


def test_clip_examples():
    assert clipped_objective(2.0, 1.0, 0.2) == pytest.approx(1.2)
    assert clipped_objective(2.0, -1.0, 0.2) == pytest.approx(-2.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 5), st.floats(0.001, 5), st.floats(0.05, 0.5))
def test_clip_pessimism(ratio, adv, eps):
    assert clipped_objective(ratio, adv, eps) <= ratio * adv + 1e-12


def _tiny_env(seed=0, n_segments=12):
    space = ConfigurationSpace()
    trace = generate_trace(GeneratorParams(n_segments=n_segments), seed)
    layout = StateLayout()
    return OffloadEnv(space, CostModel(), layout,
                      lambda: Episode(trace, 0.65, BandwidthTrace.constant(0.6), noise_seed=1)), layout


def _trainer(lr=1e-4, horizon=32, seed=0):
    env, layout = _tiny_env()
    cfg = TrainerConfig(horizon=horizon, batch_size=8, epochs=2, policy_lr=lr, value_lr=lr,
                        branch_width=4, hidden=(8,))
    pol, val = make_networks(layout, cfg, np.random.default_rng(seed), np.random.default_rng(seed + 1))
    return PPOTrainer(pol, val, cfg, env, np.random.default_rng(seed + 2))


def test_trajectory_consistency():
    tr = _trainer()
    traj = tr.collect(30)
    assert len(traj) == 30 == len(traj.rewards) == len(traj.states)
    np.testing.assert_array_equal(traj.advantages, traj.returns - traj.values)
    assert set(np.unique(traj.rewards)) <= {-2.0, -1.0, 0.0, 1.0}


def test_returns_reset_at_episode_end():
    tr = _trainer()
    traj = tr.collect(24)  # two 12-segment episodes, second ends exactly at the horizon
    np.testing.assert_allclose(traj.returns[:12], discounted_returns(traj.rewards[:12], 0.9))
    np.testing.assert_allclose(traj.returns[12:], discounted_returns(traj.rewards[12:], 0.9))


def test_zero_lr_update_is_identity():
    tr = _trainer(lr=0.0)
    before = [p.copy() for p in tr.policy.params() + tr.value.params()]
    ppo_update(tr, tr.collect(32))
    after = tr.policy.params() + tr.value.params()
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_update_changes_parameters():
    tr = _trainer(lr=1e-3)
    before = [p.copy() for p in tr.policy.params()]
    diag = ppo_update(tr, tr.collect(32))
    assert any(not np.array_equal(a, b) for a, b in zip(before, tr.policy.params()))
    assert {"policy_loss", "value_loss", "entropy", "approx_kl", "clip_frac"} <= set(diag)


def test_empty_batch_raises():
    tr = _trainer()
    traj = tr.collect(8)
    idx = np.arange(0)
    empty = type(traj)(traj.states[idx], traj.actions[idx], traj.logp[idx], traj.rewards[idx],
                       traj.returns[idx], traj.values[idx], traj.advantages[idx])
    with pytest.raises(ParameterError):
        ppo_update(tr, empty)


def test_training_reproducible():
    a, b = _trainer(seed=5), _trainer(seed=5)
    a.train(64)
    b.train(64)
    for p, q in zip(a.policy.params() + a.value.params(), b.policy.params() + b.value.params()):
        assert np.array_equal(p, q)


def test_trainer_config_validation():
    with pytest.raises(ParameterError):
        TrainerConfig(gamma=1.0)
    with pytest.raises(ParameterError):
        TrainerConfig(clip_eps=0.0)
    with pytest.raises(ParameterError):
        TrainerConfig.from_dict({"learning_rate": 1.0})
    cfg = TrainerConfig(hidden=[16])
    assert TrainerConfig.from_dict(cfg.to_dict()) == cfg


def test_policy_output_dimension():
    net = DenseNet.init([4, 90], np.random.default_rng(0))
    idx, _ = select_action(net, np.zeros(4), Mode.TEST)
    assert 0 <= idx < 90
