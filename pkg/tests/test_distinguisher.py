import math

import numpy as np
import pytest
from scipy import stats

from sketchlab.distinguisher import (
    MID,
    SUB,
    SUPER,
    AdvantageCurve,
    AdvantageRecord,
    ExperimentConfig,
    advantage_interval,
    critical_k,
    default_k_grid,
    detect_cell,
    is_monotone,
    ose_opnorm_estimate,
    run_detection,
    sweep_phase_transition,
)
from sketchlab.ensembles import SpikeParams
from sketchlab.rng import Rng


def _rec(k, adv, lo=None, hi=None):
    lo = adv if lo is None else lo
    hi = adv if hi is None else hi
    return AdvantageRecord(k, 0.0, adv, adv, lo, hi, math.nan, "norm-squared", 100)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(k_grid=()),
            dict(trials=49),
            dict(statistic="max-entry"),
            dict(spike=SpikeParams((1.0,) * 5), m=4, n=8),
        ],
    )
    def test_rejects(self, kw):
        base = dict(m=8, n=8, spike=SpikeParams((0.1,)), k_grid=(1,))
        base.update(kw)
        with pytest.raises(ValueError):
            ExperimentConfig(**base)

    def test_default_grid(self):
        grid = default_k_grid(SpikeParams.uniform(1, 0.1), 64, 64)
        assert grid[0] == 1 and grid[-1] == 4096
        assert list(grid) == sorted(set(grid))
        assert default_k_grid(SpikeParams((1.0,)), 4, 4)[-1] == 16


class TestInterval:
    def test_perfect(self):
        adv, (lo, hi) = advantage_interval(400, 0, 400)
        assert adv == 1.0 and hi == 1.0 and lo > 0.98

    def test_symmetric(self):
        assert advantage_interval(120, 80, 400) == advantage_interval(80, 120, 400)

    def test_straddles_zero(self):
        adv, (lo, hi) = advantage_interval(50, 48, 400)
        assert lo == 0.0 and adv <= hi


class TestCurveHelpers:
    def test_monotone(self):
        assert is_monotone(AdvantageCurve([_rec(1, 0.1), _rec(10, 0.5), _rec(100, 0.9)], 0, "norm-squared"))
        dip = [_rec(1, 0.5, 0.45, 0.55), _rec(10, 0.4, 0.35, 0.44)]
        assert not is_monotone(AdvantageCurve(dip, 0, "norm-squared"))
        within_ci = [_rec(1, 0.5, 0.40, 0.60), _rec(10, 0.45, 0.35, 0.55)]
        assert is_monotone(AdvantageCurve(within_ci, 0, "norm-squared"))

    def test_critical_k(self):
        curve = AdvantageCurve([_rec(1, 0.1), _rec(100, 0.9)], 0, "norm-squared")
        assert critical_k(curve) == pytest.approx(10.0)
        assert critical_k(AdvantageCurve([_rec(1, 0.1)], 0, "norm-squared")) is None
        assert critical_k(AdvantageCurve([_rec(3, 0.7)], 0, "norm-squared")) == 3.0


class TestCell:
    def test_null_rate_matches_chi2(self):
        k, sp, trials = 16, SpikeParams.uniform(2, 0.2), 2000
        res = detect_cell(k, 16, 16, sp, trials, Rng(1)).record("norm-squared")
        exact = stats.chi2.sf(k + 0.5 * k * sp.norm2, k)
        se = math.sqrt(exact * (1 - exact) / trials)
        assert abs(res.null_rate - exact) <= 4 * se
        assert res.threshold == k + 0.5 * k * sp.norm2

    def test_per_trial_null_rate(self):
        k, sp, trials = 8, SpikeParams((0.4,)), 400
        res = detect_cell(k, 6, 6, sp, trials, Rng(2), per_trial_sketch=True).record("norm-squared")
        exact = stats.chi2.sf(k + 0.5 * k * sp.norm2, k)
        assert abs(res.null_rate - exact) <= 4 * math.sqrt(exact * (1 - exact) / trials)

    def test_reproducible(self):
        a = detect_cell(4, 8, 8, SpikeParams((0.3,)), 100, Rng(3))
        b = detect_cell(4, 8, 8, SpikeParams((0.3,)), 100, Rng(3))
        assert a.record("norm-squared") == b.record("norm-squared")
        np.testing.assert_array_equal(a.spiked_proj, b.spiked_proj)

    def test_tiny_spike(self):
        sp = SpikeParams((0.03,))
        assert sp.norm4 <= 1e-3
        rec = detect_cell(1, 32, 32, sp, 400, Rng(4)).record("norm-squared")
        assert rec.advantage <= 0.15

    def test_projection_not_worse(self):
        cell = detect_cell(64, 16, 16, SpikeParams((0.3,)), 400, Rng(5))
        norm = cell.record("norm-squared").advantage
        proj = cell.record("mean-shift-projection").advantage
        assert proj >= norm - 0.1

    def test_interval_shrinks_with_trials(self):
        sp = SpikeParams((0.3,))
        w = []
        for trials in (400, 800):
            rec = detect_cell(16, 16, 16, sp, trials, Rng(6)).record("norm-squared")
            w.append(rec.ci_hi - rec.ci_lo)
        assert 1.2 <= w[0] / w[1] <= 1.7


class TestDetection:
    def test_threads_do_not_change_result(self):
        cfg = ExperimentConfig(8, 8, SpikeParams((0.5,)), (1, 4, 16), trials=100, seed=3)
        assert run_detection(cfg).records == run_detection(cfg, threads=3).records

    def test_monotone_curve(self):
        cfg = ExperimentConfig(16, 16, SpikeParams((0.5,)), (1, 4, 16, 64, 256), trials=400, seed=4)
        curve = run_detection(cfg)
        assert is_monotone(curve)
        assert curve.advantages[-1] > 0.5

    def test_critical_k_scales_with_spike(self):
        kc = []
        for norm2 in (0.2, 0.4):
            cfg = ExperimentConfig(
                32, 32, SpikeParams((math.sqrt(norm2),)), tuple(2**j for j in range(11)),
                trials=400, seed=5,
            )
            kc.append(critical_k(run_detection(cfg)))
        print(f"critical k at |s|^2 = 0.2, 0.4: {kc[0]:.3g}, {kc[1]:.3g}")
        assert 2 <= kc[0] / kc[1] <= 8


class TestSweep:
    def test_single_sub_critical_point(self):
        cfg = ExperimentConfig(32, 32, SpikeParams.uniform(1, 0.1), (1,), trials=200, seed=1)
        rep = sweep_phase_transition(cfg)
        assert rep.records[0].label == SUB
        assert rep.records[0].passed
        assert not rep.spans_transition
        assert rep.status == "unreachable"

    def test_super_critical_reachable(self):
        cfg = ExperimentConfig(32, 32, SpikeParams.uniform(1, 0.5), (1, 400), trials=200, seed=2)
        rep = sweep_phase_transition(cfg)
        assert [r.label for r in rep.records] == [MID, SUPER]
        assert rep.records[1].passed
        assert rep.status == "pass"
        assert rep.critical_ratio == pytest.approx(4.0)


class TestOse:
    def test_example(self):
        A = np.diag([3.0, 2.0, 1.0, 0.5])
        est = ose_opnorm_estimate(np.vstack([A, np.zeros((6, 4))]), 2000, Rng(1))
        assert 0.9 * 3.0 <= est <= 1.1 * 3.0

    def test_guard(self):
        with pytest.raises(ValueError):
            ose_opnorm_estimate(np.eye(2), 0, Rng(0))
