import math

import mpmath
import numpy as np
import pytest

from oracles import fd_gradient, max_rel_error, random_instance
from threeclass_sasv.core import ClassLogits, Trial, TrialClass
from threeclass_sasv.encoder import CROSS_ATTENTION, EMBED_CONCAT, init_params
from threeclass_sasv.errors import TrainingDiverged, ValidationError
from threeclass_sasv.synthgen import SynthConfig, generate_population
from threeclass_sasv.core import index_manifest
from threeclass_sasv.training import TrainConfig, batch_loss_and_grad, ce_loss, grad, mean_loss, train
from threeclass_sasv.trials import TrialBuildConfig, build_trials

mpmath.mp.dps = 50


class TestLoss:
    def test_uniform(self):
        assert ce_loss(ClassLogits(0.0, 0.0, 0.0), TrialClass.SPOOF) == pytest.approx(math.log(3), rel=1e-15)

    def test_saturated(self):
        assert ce_loss(ClassLogits(30.0, -30.0, -30.0), TrialClass.TARGET) < 1e-12

    def test_matches_mpmath(self):
        z = [mpmath.mpf(1.0), mpmath.mpf(-0.5), mpmath.mpf(0.2)]
        ref = -(z[1] - mpmath.log(mpmath.fsum(mpmath.e ** v for v in z)))
        assert ce_loss(ClassLogits(1.0, -0.5, 0.2), TrialClass.NONTARGET) == pytest.approx(float(ref), rel=1e-14)


class TestGradient:
    def test_bias_gradient_closed_form(self, rng):
        p, e_t, E_r, y = random_instance(rng, CROSS_ATTENTION)
        from threeclass_sasv.encoder import forward_batch
        from threeclass_sasv.core import softmax
        logits = forward_batch(e_t, E_r, p)
        expected = sum(softmax(l) - np.eye(3)[c] for l, c in zip(logits, y))
        _, g = batch_loss_and_grad(e_t, E_r, y, p)
        np.testing.assert_allclose(g["head.b"], expected, rtol=1e-12, atol=1e-15)

    def test_zero_signal(self, rng):
        p = init_params(CROSS_ATTENTION, dim=4, n_heads=2)
        t = p.tensors()
        t["head.W"] = np.zeros((3, 4))
        t["head.b"] = np.array([800.0, 0.0, 0.0])
        p = p.with_tensors(t)
        _, g = batch_loss_and_grad(rng.standard_normal((2, 4)), rng.standard_normal((2, 2, 4)), np.array([0, 0]), p)
        for v in g.values():
            assert np.all(np.abs(v) < 1e-300)

    @pytest.mark.parametrize("agg,st", [(CROSS_ATTENTION, True), (CROSS_ATTENTION, False), (EMBED_CONCAT, False)])
    def test_finite_differences(self, rng, agg, st):
        for _ in range(5):
            p, e_t, E_r, y = random_instance(rng, agg, st)
            _, g = batch_loss_and_grad(e_t, E_r, y, p)
            assert max_rel_error(g, fd_gradient(p, e_t, E_r, y)) < 1e-4

    def test_single_trial_instance(self):
        r = np.random.default_rng(0)
        p = init_params(CROSS_ATTENTION, dim=4, n_heads=2, seed=9)
        e_t, E_r, y = r.standard_normal((1, 4)), r.standard_normal((1, 2, 4)), np.array([1])
        _, g = batch_loss_and_grad(e_t, E_r, y, p)
        assert max_rel_error(g, fd_gradient(p, e_t, E_r, y)) < 1e-4

    def test_single_trial_wrapper(self, small_population):
        _, manifest, store, utts = small_population
        ids = [r.utt_id for r in manifest if r.speaker_id == "spk001" and r.attack_label is None]
        t = Trial("t", tuple(ids[:2]), ids[2], TrialClass.TARGET)
        p = init_params(CROSS_ATTENTION, dim=store.dim, n_heads=2)
        g = grad(t, store, p, TrialClass.TARGET, utts)
        assert set(g) == set(p.tensors())


def overfit_trial():
    manifest, store = generate_population(SynthConfig(n_speakers=2, utts_per_speaker=4, dim=4))
    utts = index_manifest(manifest)
    ids = [r.utt_id for r in manifest if r.speaker_id == "spk000" and r.attack_label is None]
    return [Trial("t", tuple(ids[:3]), ids[3], TrialClass.TARGET)], store, utts


class TestTrain:
    def test_zero_learning_rate(self):
        trials, store, utts = overfit_trial()
        p0 = init_params(CROSS_ATTENTION, dim=4, n_heads=2)
        p, curve = train(trials, store, p0, TrainConfig(epochs=4, learning_rate=0.0), utts)
        for k, v in p0.tensors().items():
            np.testing.assert_array_equal(p.tensors()[k], v)
        assert len(set(curve)) == 1 and len(curve) == 4

    def test_single_trial_overfit(self):
        trials, store, utts = overfit_trial()
        p0 = init_params(CROSS_ATTENTION, dim=4, n_heads=2)
        _, curve = train(trials, store, p0, TrainConfig(epochs=500, learning_rate=1e-2, batch_size=1), utts)
        assert curve[-1] < 1e-3

    def test_separated_population_learns(self):
        manifest, store = generate_population(SynthConfig(n_speakers=20, utts_per_speaker=10, dim=16, seed=2))
        utts = index_manifest(manifest)
        trials = build_trials(manifest, TrialBuildConfig(n_per_class=1500), store)
        p0 = init_params(CROSS_ATTENTION, dim=16, n_heads=4)
        p, curve = train(trials, store, p0, TrainConfig(epochs=30, learning_rate=3e-3, batch_size=64), utts)
        assert len(curve) == 30
        assert curve[-1] < 0.1
        assert mean_loss(trials, store, p, utts) < 0.1

    def test_deterministic(self):
        trials, store, utts = overfit_trial()
        cfg = TrainConfig(epochs=3, learning_rate=1e-2)
        a = train(trials * 5, store, init_params(CROSS_ATTENTION, dim=4, n_heads=2), cfg, utts)
        b = train(trials * 5, store, init_params(CROSS_ATTENTION, dim=4, n_heads=2), cfg, utts)
        assert a[1] == b[1]
        for k, v in a[0].tensors().items():
            np.testing.assert_array_equal(b[0].tensors()[k], v)

    def test_divergence_reported(self):
        trials, store, utts = overfit_trial()
        p0 = init_params(CROSS_ATTENTION, dim=4, n_heads=2)
        with pytest.raises(TrainingDiverged, match=r"diverged at epoch \d+, batch \d+"):
            with np.errstate(all="ignore"):
                train(trials, store, p0, TrainConfig(optimizer="sgd", learning_rate=1e308), utts)

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1.0}, {"optimizer": "lbfgs"}])
    def test_bad_config(self, kw):
        with pytest.raises(ValidationError):
            TrainConfig(**kw)

    def test_empty(self, small_population):
        _, _, store, utts = small_population
        with pytest.raises(ValidationError):
            train([], store, init_params(CROSS_ATTENTION, dim=store.dim, n_heads=2), TrainConfig(), utts)
