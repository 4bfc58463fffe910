import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from statsmodels.stats.multitest import multipletests

from lpfdr.inference import (
    CLASSICAL_BH,
    HC,
    LOCAL_FDR,
    SMOOTH_BH,
    WEIGHTED_BH,
    EmpiricalCDF,
    PartitionDecision,
    RejectionReport,
    classical_bh,
    compute_weights,
    decide_partition,
    folded_cdf,
    higher_criticism,
    local_fdr_cutoff,
    local_fdr_reject,
    plan_decisions,
    smooth_bh_threshold,
    smooth_bh_two_sided,
    smooth_higher_criticism,
    sup_ratio_threshold,
    weighted_bh,
    weighted_bh_thresholds,
)
from lpfdr.lp_model import LPCoefficients, SkewBetaModel
from lpfdr.partition_engine import LPSummary, PValuePartition, summarize_lp
from lpfdr.special import BetaParams

UNIFORM = BetaParams(1.0, 1.0)
NULL = SkewBetaModel(UNIFORM, (0.0, 0.0), 1000)


def _summary(pid, n, h):
    c = math.sqrt(h)
    return LPSummary(pid, n, LPCoefficients((0.0,), UNIFORM), LPCoefficients((c,)), h)


class TestSmoothBH:
    def test_null_model_rejects_nothing(self):
        assert smooth_bh_threshold(NULL, 1.0, 0.05) == 0.0
        assert smooth_bh_threshold(NULL, 1.0, 0.999) == 0.0

    def test_sqrt_cdf_closed_form(self):
        # carrier Beta(0.5, 1) has D(u) = sqrt(u); sqrt(u)/u >= 20 iff u <= 1/400
        m = SkewBetaModel(BetaParams(0.5, 1.0), (0.0,), 100)
        assert smooth_bh_threshold(m, 1.0, 0.05) == pytest.approx(0.0025, rel=1e-9)

    @pytest.mark.parametrize("alpha,eta", [(0.0, 1.0), (1.0, 1.0), (0.1, 0.0), (0.1, 1.5)])
    def test_invalid_levels(self, alpha, eta):
        with pytest.raises(ValueError):
            smooth_bh_threshold(NULL, eta, alpha)

    def test_monotone_in_alpha(self):
        m = SkewBetaModel(BetaParams(0.4, 1.3), (0.05, -0.03), 100)
        thr = [smooth_bh_threshold(m, 0.9, a) for a in np.linspace(0.01, 0.5, 25)]
        assert all(b >= a for a, b in zip(thr, thr[1:]))

    def test_nonmonotone_ratio_takes_supremum(self):
        # ratio 3 near 0, dips below 2 on the first plateau, recovers on the
        # steep rise and leaves level 2 for good on the second plateau at u = 0.3
        def cdf(u):
            u = np.asarray(u, dtype=float)
            return np.select(
                [u < 0.1, u < 0.25, u < 0.28, u < 0.9],
                [3 * u, 0.3, 0.3 + 10 * (u - 0.25), 0.6],
                0.6 + 4 * (u - 0.9),
            )
        assert cdf(np.array([0.2]))[0] / 0.2 < 2.0
        assert sup_ratio_threshold(cdf, 2.0) == pytest.approx(0.3, rel=1e-9)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.floats(1e-9, 1.0, exclude_max=True), min_size=1, max_size=300),
           st.floats(0.01, 0.5), st.floats(0.3, 1.0))
    def test_empirical_plugin_matches_classical(self, vals, alpha, eta):
        u = np.array(vals)
        k, thr, mask = classical_bh(u, eta, alpha)
        grid = np.sort(u)
        t = sup_ratio_threshold(EmpiricalCDF(u).cdf, eta / alpha, grid=grid, refine=False)
        np.testing.assert_array_equal(u <= t if t > 0 else np.zeros(u.size, bool), mask)

    def test_two_sided_fold(self):
        m = SkewBetaModel(BetaParams(0.861, 0.862), (0, 0, 0, 0, 0, 0.0589), 6033)
        f = folded_cdf(m)
        for t in (0.01, 0.2, 0.7):
            ref, _ = integrate.quad(lambda v: m.density(v), 1e-300, t / 2, limit=200)
            ref2, _ = integrate.quad(lambda v: m.density(v), 1 - t / 2, 1 - 1e-16, limit=200)
            assert f(np.array([t]))[0] == pytest.approx(ref + ref2, abs=1e-8)
        np.testing.assert_allclose(folded_cdf(NULL)(np.linspace(0, 1, 11)), np.linspace(0, 1, 11), atol=1e-15)
        assert smooth_bh_two_sided(NULL, 1.0, 0.1) == 0.0


class TestClassicalBH:
    def test_examples(self):
        k, thr, mask = classical_bh([0.001, 0.5], 1.0, 0.05)
        assert k == 1 and thr == 0.001 and mask.tolist() == [True, False]
        k, thr, mask = classical_bh(np.full(10, 1 - 1e-15), 1.0, 0.05)
        assert k == 0 and not mask.any()
        with pytest.raises(ValueError):
            classical_bh([], 1.0, 0.1)

    def test_against_statsmodels(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            u = rng.random(500)
            u[:40] = rng.beta(0.1, 1, 40)
            mask = classical_bh(u, 1.0, 0.1)[2]
            ref = multipletests(u, alpha=0.1, method="fdr_bh")[0]
            np.testing.assert_array_equal(mask, ref)


class TestHC:
    def test_window_of_one(self):
        r = higher_criticism([0.01, 0.2, 0.9], 0.5)
        assert r.k == 1 and r.threshold == 0.01

    def test_uniform_grid_small_statistic(self):
        n = 10**4
        r = higher_criticism(np.arange(1, n + 1) / (n + 1), 0.5)
        assert r.statistic <= 3.0

    def test_single_spike_found(self):
        rng = np.random.default_rng(1)
        hits = 0
        for _ in range(40):
            u = rng.random(10**4)
            u[0] = 1e-8
            hits += higher_criticism(u, 0.5).k == 1
        assert hits >= 38

    def test_smooth_null(self):
        r = smooth_higher_criticism(NULL, 0.5)
        assert abs(r.statistic) < 1e-6
        with pytest.raises(ValueError):
            smooth_higher_criticism(NULL, 1.0)

    def test_smooth_tracks_signal(self):
        m = SkewBetaModel(BetaParams(0.5, 1.0), (0.0,), 10**4)
        r = smooth_higher_criticism(m, 0.5)
        assert r.statistic > 10 and 0 < r.threshold < 0.5


class TestLocalFdr:
    def test_null_empty(self):
        assert local_fdr_cutoff(1.0, 0.2) == 2.5
        assert local_fdr_reject(NULL, 1.0, 0.2, np.linspace(0.01, 0.99, 50)).size == 0

    def test_repaired_linear_model(self):
        c = 0.9
        m = SkewBetaModel(UNIFORM, (c,), 1000)
        slope = c * math.sqrt(3)
        u0 = 0.5 - 1 / (2 * slope)
        area = 0.5 * (1 - u0) * (1 + slope)
        u = np.linspace(0.001, 0.999, 999)
        oracle = np.maximum(0.0, 1 + slope * (2 * u - 1)) / area
        # repaired maximum (1 + slope) / area ~ 2.44 stays under 2.5
        assert local_fdr_reject(m, 1.0, 0.2, u).size == 0
        got = local_fdr_reject(m, 1.0, 0.25, u)
        np.testing.assert_array_equal(got, np.flatnonzero(oracle > 2.0))
        assert got.size > 0 and u[got].min() > 0.5


class TestWeights:
    def test_examples(self):
        assert compute_weights([_summary("a", 10, 0.04), _summary("b", 10, 0.04)]) == {"a": 1.0, "b": 1.0}
        w = compute_weights([_summary("a", 10, 0.09), _summary("b", 10, 0.01)])
        assert w["a"] == pytest.approx(1.8) and w["b"] == pytest.approx(0.2)

    def test_all_zero_fallback(self, caplog):
        with caplog.at_level(logging.WARNING):
            w = compute_weights([_summary("a", 3, 0.0), _summary("b", 5, 0.0)])
        assert w == {"a": 1.0, "b": 1.0}
        assert "unit weights" in caplog.text

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 10**6), st.floats(0.0, 3.0)), min_size=1, max_size=50))
    def test_weighted_sizes_sum_to_one(self, items):
        if all(h == 0 for _, h in items):
            items[0] = (items[0][0], 1.0)
        sums = [_summary(f"p{i}", n, h) for i, (n, h) in enumerate(items)]
        w = compute_weights(sums)
        n_total = sum(n for n, _ in items)
        assert math.fsum(s.n / n_total * w[s.id] for s in sums) == pytest.approx(1.0, abs=1e-12)


class TestWeightedBH:
    def _setup(self):
        rng = np.random.default_rng(2)
        parts = []
        for i in range(6):
            u = rng.random(300)
            if i < 2:
                u[:60] = rng.beta(0.1, 1, 60)
            parts.append(PValuePartition.from_raw(f"p{i}", u))
        model = SkewBetaModel(BetaParams(0.7, 1.0), (0.05, -0.02), 1800, 0.9)
        sums = [summarize_lp(p, model.carrier, 2) for p in parts]
        return model, parts, sums

    def test_unit_weights_reduce_to_smooth_bh(self):
        model, parts, sums = self._setup()
        rep = weighted_bh(model, sums, parts, 0.9, 0.1, weights={p.id: 1.0 for p in parts})
        u_max = smooth_bh_threshold(model, 0.9, 0.1)
        for p in parts:
            assert rep.per_partition[p.id].threshold == u_max
            assert rep.per_partition[p.id].rejected_indices == tuple(np.flatnonzero(p.values <= u_max))

    def test_zero_weight_rejects_nothing(self):
        model, parts, sums = self._setup()
        w = {p.id: 1.0 for p in parts}
        w["p0"] = 0.0
        rep = weighted_bh(model, sums, parts, 0.9, 0.1, weights=w)
        assert rep.per_partition["p0"].n_rejected == 0

    def test_signal_partitions_get_larger_thresholds(self):
        model, parts, sums = self._setup()
        w = compute_weights(sums)
        thr = weighted_bh_thresholds(model, w, 0.9, 0.1)
        assert min(thr["p0"], thr["p1"]) > max(thr[f"p{i}"] for i in range(2, 6))


class TestDecisions:
    def test_decide_threshold_and_tails(self):
        p = PValuePartition("a", [0.01, 0.5, 0.02], signs=[-1, 1, 1])
        d = decide_partition(p, {"kind": "threshold", "threshold": 0.05})
        assert d.rejected_indices == (0, 2) and (d.n_left, d.n_right) == (1, 1)
        d = decide_partition(p, {"kind": "thresholds", "thresholds": {"a": 0.0}})
        assert d.n_rejected == 0
        with pytest.raises(ValueError):
            decide_partition(p, {"kind": "density", "cutoff": 2.0})

    def test_plan_rejects_pooled_only_method(self):
        with pytest.raises(ValueError):
            plan_decisions(NULL, [CLASSICAL_BH], 0.1)
        with pytest.raises(ValueError):
            plan_decisions(NULL, [WEIGHTED_BH], 0.1)

    def test_plan_kinds(self):
        plans = plan_decisions(NULL, [SMOOTH_BH, LOCAL_FDR, HC], 0.1, 0.5, 1.0)
        assert plans[SMOOTH_BH] == {"kind": "threshold", "threshold": 0.0}
        assert plans[LOCAL_FDR] == {"kind": "density", "cutoff": 5.0}
        assert plans[HC]["kind"] == "threshold"

    def test_report_roundtrip_and_totals(self):
        per = {
            "b": PartitionDecision(0.01, (0, 3), 1, 1),
            "a": PartitionDecision(0.01, (), 0, 0),
        }
        rep = RejectionReport(SMOOTH_BH, 0.1, 0.95, per, 0.01, None, {})
        d = rep.to_dict()
        assert d["total_rejected"] == 2 and list(d["per_partition"]) == ["a", "b"]
        assert (d["n_left"], d["n_right"]) == (1, 1)
        assert RejectionReport.from_dict(d) == rep
        d["total_rejected"] = 3
        with pytest.raises(ValueError):
            RejectionReport.from_dict(d)
        with pytest.raises(ValueError):
            RejectionReport("bogus", 0.1, 1.0, {})

    def test_rejected_values_below_threshold(self):
        rng = np.random.default_rng(3)
        p = PValuePartition("x", rng.random(1000))
        d = decide_partition(p, {"kind": "threshold", "threshold": 0.123})
        assert np.all(p.values[list(d.rejected_indices)] <= 0.123)
        assert d.n_rejected == int(np.sum(p.values <= 0.123))
