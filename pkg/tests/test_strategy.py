"""Policies, worst-case disturbances, and the mean-field estimator."""

from dataclasses import replace

import numpy as np
import pytest

from mfminmax.model import InfoStructure, InitSpec
from mfminmax.sim import DisturbancePolicy, SimConfig, simulate
from mfminmax.strategy import (
    PolicyState,
    estimator_step,
    follower_action,
    leader_action,
    worst_case_disturbance,
)
from mfminmax.synthesis import StrategyGains, compute_gains, solve_riccati

from conftest import EX1_GAMMA, EX2_GAMMA, make_model, zero_weight_model

# Frozen from the standalone prototype (see test_synthesis for the gains).
EX1_G20_U0 = -2.2401422412233143       # x0=30, mean 10, t=1
EX1_G20_UI = 2.425536452394703         # xi=5, x0=30, mean 10, t=1
EX2_G4_D0 = 0.29475798831671435        # x0=10, mean 4, t=1
EX2_G4_DBAR = -0.07750717561105139
EX2_G4_DI = -0.07571627921757415       # deviation 1 on top of the mean part
EX2_G4_MHAT2_WC = 5.209713373737436    # m1=4, x0=10, worst-case dbar
EX2_G4_MHAT2_NOM = 5.287220549348488   # nominal dbar = 0


def policy_for(model, info=None, m1=None, wc=True):
    gains = compute_gains(model, solve_riccati(model))
    info = info or InfoStructure.mfs(model.horizon)
    p = PolicyState.start(model, gains, info,
                          xbar1=m1 if info.observed(1) else None,
                          use_worst_case_dbar=wc)
    if m1 is not None:
        p.m_hat = np.atleast_1d(np.asarray(m1, dtype=float))
    return p


class TestActions:
    def test_zero_gains_zero_actions(self):
        m = zero_weight_model()
        p = policy_for(m, m1=[1.5])
        assert leader_action(p, np.array([2.0])) == pytest.approx([0.0])
        assert follower_action(p, np.array([3.0]), np.array([2.0])) == pytest.approx([0.0])

    def test_example2_leader_inactive(self, example2):
        p = policy_for(example2, m1=[4.0])
        for t in (1, 10, 30):
            p.t = t
            assert leader_action(p, np.array([123.0])) == pytest.approx([0.0])

    def test_follower_at_mean_loses_deviation_term(self, example1):
        m = example1.with_gamma(EX1_GAMMA)
        p = policy_for(m, m1=[10.0])
        x0 = np.array([30.0])
        at_mean = follower_action(p, np.array([10.0]), x0)
        expected = p.gains.l21(1) @ x0 + p.gains.l22(1) @ p.m_hat
        assert at_mean == pytest.approx(expected)

    def test_example1_frozen_actions(self, example1):
        m = example1.with_gamma(EX1_GAMMA)
        p = policy_for(m, m1=[10.0])
        u0 = leader_action(p, np.array([30.0]))
        ui = follower_action(p, np.array([5.0]), np.array([30.0]))
        assert u0[0] == pytest.approx(EX1_G20_U0, rel=1e-12)
        assert ui[0] == pytest.approx(EX1_G20_UI, rel=1e-12)

    def test_batched_follower_actions_match_loop(self, example1):
        m = example1.with_gamma(EX1_GAMMA)
        p = policy_for(m, m1=[10.0])
        x0 = np.array([30.0])
        batch = np.array([[5.0], [10.0], [-2.0]])
        vec = follower_action(p, batch, x0)
        for i in range(3):
            assert vec[i] == pytest.approx(follower_action(p, batch[i], x0))


class TestWorstCaseDisturbance:
    def test_zero_states_zero_disturbance(self, example2):
        p = policy_for(example2, m1=[0.0])
        d0, dbar = worst_case_disturbance(p, np.zeros(1))
        assert d0 == pytest.approx([0.0]) and dbar == pytest.approx([0.0])
        assert worst_case_disturbance(p, np.zeros(1), np.zeros(1)) == pytest.approx([0.0])

    def test_huge_gamma_kills_disturbance(self, example2):
        p = policy_for(example2.with_gamma(1e9), m1=[4.0])
        x0 = np.array([10.0])
        d0, dbar = worst_case_disturbance(p, x0)
        di = worst_case_disturbance(p, x0, np.array([9.0]))
        scale = 10.0
        assert np.abs(d0).max() <= 1e-6 * scale
        assert np.abs(dbar).max() <= 1e-6 * scale
        assert np.abs(di).max() <= 1e-6 * scale

    def test_example2_frozen_values(self, example2):
        m = example2.with_gamma(EX2_GAMMA)
        p = policy_for(m, m1=[4.0])
        x0 = np.array([10.0])
        d0, dbar = worst_case_disturbance(p, x0)
        assert d0[0] == pytest.approx(EX2_G4_D0, rel=1e-12)
        assert dbar[0] == pytest.approx(EX2_G4_DBAR, rel=1e-12)
        di = worst_case_disturbance(p, x0, np.array([5.0]))  # deviation +1
        assert di[0] == pytest.approx(EX2_G4_DI, rel=1e-12)


class TestEstimator:
    def test_reset_to_observation(self, example2):
        info = InfoStructure.imfs([1, 2])
        p = policy_for(example2.with_gamma(EX2_GAMMA), info=info, m1=[3.0])
        out = estimator_step(p, np.array([10.0]), observed=np.array([7.25]))
        assert out == pytest.approx([7.25])
        assert p.t == 2

    def test_reset_outside_schedule_rejected(self, example2):
        info = InfoStructure.imfs([1])
        p = policy_for(example2.with_gamma(EX2_GAMMA), info=info, m1=[3.0])
        with pytest.raises(ValueError, match="observation"):
            estimator_step(p, np.array([10.0]), observed=np.array([7.0]))

    def test_identity_propagation_with_zero_gains(self):
        m = make_model(T=4, n=2, gamma=3.0, A0=1.0, B0=0.0, S0=0.0, A=1.0, B=1.0,
                       S=0.0, E=0.0, Q=0.0, Q0=0.0, F=0.0, P=0.0, R=1.0, R0=1.0, H=0.0,
                       follower_values=[[2.0], [2.0]])
        p = policy_for(m, info=InfoStructure.no_sharing())
        m1 = p.m_hat.copy()
        estimator_step(p, np.array([5.0]))
        assert p.m_hat == pytest.approx(m1)

    def test_example2_frozen_step(self, example2):
        m = example2.with_gamma(EX2_GAMMA)
        p = policy_for(m, info=InfoStructure.no_sharing(), wc=True)
        assert p.m_hat == pytest.approx([4.0])  # mean of U[0, 8]
        out = estimator_step(p, np.array([10.0]))
        assert out[0] == pytest.approx(EX2_G4_MHAT2_WC, rel=1e-12)
        p = policy_for(m, info=InfoStructure.no_sharing(), wc=False)
        out = estimator_step(p, np.array([10.0]))
        assert out[0] == pytest.approx(EX2_G4_MHAT2_NOM, rel=1e-12)

    def test_cannot_run_past_horizon(self, example2):
        p = policy_for(example2, m1=[4.0])
        p.t = example2.horizon
        with pytest.raises(ValueError, match="horizon"):
            estimator_step(p, np.array([10.0]))


class TestInformationStructureInvariants:
    def test_full_observation_reproduces_mfs_bitwise(self, example2):
        m = example2.with_gamma(EX2_GAMMA)
        m = replace(m, n_followers=8)
        gains = compute_gains(m, solve_riccati(m))
        base = SimConfig(master_seed=99, num_runs=3,
                         disturbance=DisturbancePolicy.sinusoid(0.4),
                         info=InfoStructure.mfs(m.horizon))
        full = SimConfig(master_seed=99, num_runs=3,
                         disturbance=DisturbancePolicy.sinusoid(0.4),
                         info=InfoStructure.imfs(range(1, m.horizon + 1)))
        recs_a = simulate(m, gains, base)
        recs_b = simulate(m, gains, full)
        for ra, rb in zip(recs_a, recs_b):
            assert np.array_equal(ra.xbar, rb.xbar)
            assert np.array_equal(ra.mhat, rb.mhat)
            assert np.array_equal(ra.u0, rb.u0)
            assert np.array_equal(ra.stage_costs, rb.stage_costs)

    def test_estimator_tracks_mean_exactly_without_noise(self, example2):
        # Identical initial states, no noise, common worst-case mean
        # disturbance computed from m_hat: the estimate equals the true
        # mean at every t even with no observations.
        m = replace(example2.with_gamma(EX2_GAMMA), n_followers=4,
                    follower_init=InitSpec(kind="deterministic", dim=1,
                                           values=np.full((4, 1), 3.0)),
                    noise_leader=np.zeros((30, 1, 1)),
                    noise_follower=np.zeros((30, 1, 1)))
        gains = compute_gains(m, solve_riccati(m))
        cfg = SimConfig(master_seed=1, num_runs=1,
                        disturbance=DisturbancePolicy.worst_case(use_estimate=True),
                        info=InfoStructure.no_sharing())
        rec = simulate(m, gains, cfg)[0]
        assert np.max(np.abs(rec.mhat - rec.xbar)) <= 1e-10

    def test_estimator_error_shrinks_like_one_over_n(self, example2):
        m = example2.with_gamma(EX2_GAMMA)
        gains = compute_gains(m, solve_riccati(m))
        t_probe, runs = 15, 150

        def mse(n):
            mdl = replace(m, n_followers=n)
            cfg = SimConfig(master_seed=1234, num_runs=runs,
                            disturbance=DisturbancePolicy.worst_case(),
                            info=InfoStructure.no_sharing())
            recs = simulate(mdl, gains, cfg)
            errs = [float(np.sum((r.mhat[t_probe - 1] - r.xbar[t_probe - 1]) ** 2))
                    for r in recs]
            return float(np.mean(errs))

        ratio = mse(20) / mse(80)
        assert 2.0 <= ratio <= 6.0
