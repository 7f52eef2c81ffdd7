import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import exhaustive_min_a_dcf, train_and_score
from threeclass_sasv.core import ScoreRecord, TrialClass
from threeclass_sasv.errors import ValidationError
from threeclass_sasv.metrics import (
    ADCFConfig, ScoreArrays, a_dcf, bayes_threshold, brute_force_min_cost, candidate_thresholds,
    error_rates, eval_report, histogram_mean, macro_min_a_dcf, min_a_dcf, score_histograms,
    world_bayes_cost, world_expected_cost,
)
from threeclass_sasv.synthgen import SynthConfig, random_world

T, N, S = TrialClass.TARGET, TrialClass.NONTARGET, TrialClass.SPOOF


def hand_scores():
    return [
        ScoreRecord("t1", T, None, 2.0), ScoreRecord("t2", T, None, 3.0), ScoreRecord("t3", T, None, 4.0),
        ScoreRecord("n1", N, None, 0.0), ScoreRecord("n2", N, None, 1.0),
        ScoreRecord("s1", S, "A01", -1.0), ScoreRecord("s2", S, "A02", 2.5),
    ]


def random_arrays(rng, n):
    labels = rng.integers(0, 3, n)
    labels[:2] = [0, 1]
    # rounding creates ties
    llr = np.round(rng.normal(labels == 0, 1.0) * 4) / 4
    return ScoreArrays(llr, labels)


class TestADCF:
    def test_normalizer(self):
        assert ADCFConfig().normalizer == pytest.approx(0.595, rel=1e-15)

    def test_reject_all(self):
        cfg = ADCFConfig()
        assert a_dcf(hand_scores(), math.inf, cfg) == pytest.approx(0.9405 / 0.595, rel=1e-15)

    def test_accept_all(self):
        assert a_dcf(hand_scores(), -math.inf) == pytest.approx(1.0, rel=1e-15)

    def test_hand_counted(self):
        rates = error_rates(hand_scores(), 1.5)
        assert rates == {"p_miss": 0.0, "p_fa_non": 0.0, "p_fa_spf": 0.5}
        assert a_dcf(hand_scores(), 1.5) == pytest.approx(10 * 0.05 * 0.5 / 0.595, rel=1e-15)

    def test_ties_accept(self):
        sa = ScoreArrays(np.array([1.0, 1.0]), np.array([0, 1]))
        assert error_rates(sa, 1.0) == {"p_miss": 0.0, "p_fa_non": 1.0, "p_fa_spf": 0.0}

    def test_unnormalized(self):
        cfg = ADCFConfig(normalize=False)
        assert a_dcf(hand_scores(), 1.5, cfg) == pytest.approx(10 * 0.05 * 0.5, rel=1e-15)

    def test_missing_class(self):
        with pytest.raises(ValidationError):
            a_dcf([ScoreRecord("n", N, None, 0.0)], 0.0)
        with pytest.raises(ValidationError):
            a_dcf([ScoreRecord("t", T, None, 0.0)], 0.0)

    def test_costs_positive(self):
        with pytest.raises(ValidationError):
            ADCFConfig(c_miss=0.0)


class TestMinADCF:
    def test_separated(self):
        sa = ScoreArrays(np.array([5.0, 6.0, 1.0, 2.0, -3.0]), np.array([0, 0, 1, 1, 2]))
        cost, tau = min_a_dcf(sa)
        assert cost == 0.0 and 2.0 < tau < 5.0

    def test_identical_scores(self):
        sa = ScoreArrays(np.zeros(6), np.array([0, 0, 1, 1, 2, 2]))
        cost, _ = min_a_dcf(sa)
        assert cost == min(a_dcf(sa, -math.inf), a_dcf(sa, math.inf))

    def test_ties_prefer_larger_threshold(self):
        sa = ScoreArrays(np.array([5.0, 1.0, 2.0]), np.array([0, 1, 1]))
        cost, tau = min_a_dcf(sa)
        assert cost == 0.0 and tau == 3.5

    def test_hand_example(self):
        cost, tau = min_a_dcf(hand_scores())
        assert cost == pytest.approx(0.05 * 10 * 0.5 / 0.595, rel=1e-15)
        assert tau == 1.5

    def test_exhaustive_random(self, rng):
        for _ in range(30):
            sa = random_arrays(rng, 200)
            assert min_a_dcf(sa) == exhaustive_min_a_dcf(sa, ADCFConfig())

    def test_candidates_cover_all_reals(self, rng):
        sa = random_arrays(rng, 100)
        best, _ = min_a_dcf(sa)
        for tau in rng.uniform(-6, 8, 300):
            assert a_dcf(sa, tau) >= best

    def test_adjacent_doubles(self):
        x = 1.0
        y = np.nextafter(x, 2.0)
        c = candidate_thresholds(np.array([x, y]))
        assert x < c[1] <= y
        sa = ScoreArrays(np.array([y, x]), np.array([0, 1]))
        assert min_a_dcf(sa)[0] == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2), st.floats(-20, 20)), min_size=2, max_size=60))
    def test_monotone_invariance(self, pairs):
        labels = np.array([p[0] for p in pairs] + [0, 1])
        llr = np.array([p[1] for p in pairs] + [0.0, 0.0])
        t = np.arctan(llr / 40) * 3 + 7
        # float rounding may merge distinct scores; then the map is not strictly increasing
        assume(len(np.unique(t)) == len(np.unique(llr)))
        assert min_a_dcf(ScoreArrays(llr, labels))[0] == min_a_dcf(ScoreArrays(t, labels))[0]

    def test_bounded(self, rng):
        for _ in range(20):
            assert 0.0 <= min_a_dcf(random_arrays(rng, 50))[0] <= 1.0

    def test_infinite_target_never_hurts(self, rng):
        sa = random_arrays(rng, 80)
        more = ScoreArrays(np.append(sa.llr, np.inf), np.append(sa.label, 0))
        assert min_a_dcf(more)[0] <= min_a_dcf(sa)[0]

    def test_macro_mean(self, rng):
        sets = [random_arrays(rng, 50) for _ in range(3)]
        assert macro_min_a_dcf(sets) == pytest.approx(np.mean([min_a_dcf(s)[0] for s in sets]), rel=1e-15)


class TestBayes:
    def test_threshold(self):
        assert bayes_threshold() == pytest.approx(math.log(0.595 / 0.9405), rel=1e-15)

    def test_report_keys(self):
        r = eval_report(hand_scores())
        assert set(r) >= {"min_a_dcf", "tau_star", "cost_at_bayes_threshold", "error_rates_at_tau_star"}
        assert r["n_trials"] == {"target": 3, "nontarget": 2, "spoof": 2}

    def test_world_brute_force(self):
        r = np.random.default_rng(3)
        for _ in range(5):
            w = random_world(r, n_vocab=2, dim=2, k_enroll=2)
            assert world_bayes_cost(w.pmf) == pytest.approx(brute_force_min_cost(w.pmf), abs=1e-12)

    def test_expected_cost_trivial_rules(self):
        w = random_world(np.random.default_rng(0), n_vocab=3)
        assert world_expected_cost(w.pmf, np.ones(len(w), bool)) == pytest.approx(1.0, rel=1e-14)

    def test_brute_force_limit(self):
        w = random_world(np.random.default_rng(0), n_vocab=5)
        with pytest.raises(ValidationError):
            brute_force_min_cost(w.pmf)


class TestHistograms:
    def test_single(self):
        rows = score_histograms([ScoreRecord("t", T, None, 0.5)], n_bins=1)
        assert len(rows) == 1 and rows[0].count == 1

    def test_partition(self, rng):
        sa = random_arrays(rng, 300)
        sa = ScoreArrays(sa.llr, sa.label, tuple("A01" if l == 2 else None for l in sa.label))
        rows = score_histograms(sa, n_bins=17, by_attack=True)
        for c in TrialClass:
            assert sum(r.count for r in rows if r.cls == c.value and r.attack == "-") == np.sum(sa.label == c.index)
        assert sum(r.count for r in rows if r.attack == "A01") == np.sum(sa.label == 2)
        los = {r.bin_lo for r in rows}
        assert min(los) == sa.llr.min() and max(r.bin_hi for r in rows) == sa.llr.max()

    def test_errors(self):
        with pytest.raises(ValidationError):
            score_histograms([], 5)
        with pytest.raises(ValidationError):
            score_histograms(hand_scores(), 0)

    def test_hard_spoofs_move_toward_targets(self):
        easy = SynthConfig(n_speakers=20, utts_per_speaker=10, dim=16, spoof_fidelity=0.5, artifact_scale=5.0, seed=4)
        hard = SynthConfig(n_speakers=20, utts_per_speaker=10, dim=16, spoof_fidelity=0.98, artifact_scale=0.3, seed=4)

        def gap(cfg):
            scores, _ = train_and_score(cfg, n_per_class=1000, eval_n=500, epochs=3)
            rows = score_histograms(scores, n_bins=40)
            return histogram_mean(rows, "target") - histogram_mean(rows, "spoof")

        assert gap(hard) < gap(easy)
