import numpy as np
import pytest

from threeclass_sasv.core import Authenticity, Gender, TrialClass
from threeclass_sasv.errors import ValidationError
from threeclass_sasv.synthgen import (
    SynthConfig, build_discrete_world, discretize_population, generate_population, make_rng,
    random_world, speaker_distance_stats,
)


class TestRng:
    def test_pcg64(self):
        assert type(make_rng(1).bit_generator).__name__ == "PCG64"

    @pytest.mark.parametrize("seed", [-1, 2**64, 1.5, True])
    def test_bad_seed(self, seed):
        with pytest.raises(ValidationError):
            make_rng(seed)


class TestPopulation:
    def test_layout(self, small_population):
        cfg, manifest, store, utts = small_population
        assert len(manifest) == len(store) == cfg.n_speakers * cfg.utts_per_speaker * 2
        spk = sorted({r.speaker_id for r in manifest})
        assert len(spk) == cfg.n_speakers
        genders = [next(r.gender for r in manifest if r.speaker_id == s) for s in spk]
        assert genders[:4] == [Gender.F, Gender.M, Gender.F, Gender.M]
        spoofs = [r for r in manifest if r.authenticity is Authenticity.SPOOF]
        assert {r.attack_label for r in spoofs} == {"A01", "A02"}
        assert all(r.embedding_ref == i for i, r in enumerate(manifest))

    def test_degenerate_noise(self):
        cfg = SynthConfig(n_speakers=4, utts_per_speaker=3, dim=5, channel_scale=0.0, spoof_fidelity=1.0, artifact_scale=0.0)
        manifest, store = generate_population(cfg)
        by_spk = {}
        for r in manifest:
            by_spk.setdefault(r.speaker_id, []).append(store.get(r.embedding_ref))
        for rows in by_spk.values():
            # bona fide and spoof rows all sit on the speaker mean
            assert np.all(np.stack(rows) == rows[0])

    def test_deterministic(self):
        cfg = SynthConfig(n_speakers=5, utts_per_speaker=4, dim=6)
        m1, s1 = generate_population(cfg)
        m2, s2 = generate_population(cfg)
        assert [r.to_dict() for r in m1] == [r.to_dict() for r in m2]
        assert s1.to_bytes() == s2.to_bytes()
        _, s3 = generate_population(SynthConfig(n_speakers=5, utts_per_speaker=4, dim=6, seed=8))
        assert s3.to_bytes() != s1.to_bytes()

    def test_utterance_seed_keeps_speakers(self):
        base = SynthConfig(n_speakers=6, utts_per_speaker=40, dim=8)
        m1, s1 = generate_population(base)
        m2, s2 = generate_population(SynthConfig(n_speakers=6, utts_per_speaker=40, dim=8, utterance_seed=99))
        assert s1.to_bytes() != s2.to_bytes()

        def centroids(m, s):
            out = {}
            for r in m:
                if r.authenticity is Authenticity.BONAFIDE:
                    out.setdefault(r.speaker_id, []).append(s.get(r.embedding_ref))
            return np.stack([np.mean(out[k], axis=0) for k in sorted(out)])

        # same means, fresh noise: centroids agree up to averaged noise
        assert np.max(np.abs(centroids(m1, s1) - centroids(m2, s2))) < 0.1

    def test_distance_separation(self):
        manifest, store = generate_population(SynthConfig(n_speakers=50, utts_per_speaker=10, dim=32, seed=7))
        within, between = speaker_distance_stats(manifest, store)
        assert between > 5 * within

    def test_spoofs_attack_speaker_and_carry_artifact(self):
        cfg = SynthConfig(n_speakers=4, utts_per_speaker=4, dim=6, channel_scale=0.0, spoof_fidelity=0.0, artifact_scale=2.0)
        manifest, store = generate_population(cfg)
        for r in manifest:
            if r.authenticity is Authenticity.SPOOF:
                assert np.linalg.norm(store.get(r.embedding_ref)) == pytest.approx(2.0, rel=1e-6)

    @pytest.mark.parametrize("kw", [
        {"n_speakers": 0}, {"dim": 0}, {"spoof_fidelity": 1.5}, {"channel_scale": -1.0}, {"n_attacks": -1},
    ])
    def test_invalid_config(self, kw):
        with pytest.raises(ValidationError):
            SynthConfig(**kw)


class TestDiscreteWorld:
    def test_uniform_two_vectors(self):
        w = build_discrete_world({"vocabulary": [[0.0], [1.0]], "outcomes": [[[0], 0], [[0], 1]]})
        np.testing.assert_array_equal(w.likelihood_table(), np.full((2, 3), 0.5))

    def test_hand_specified_table(self):
        # 3 speakers; vectors 0-2 are their voices, 3 is a spoof of speaker 0
        vocab = [[1, 0], [0, 1], [-1, 0], [0.9, 0.3]]
        outcomes = [[[0], 0], [[0], 1], [[0], 2], [[0], 3], [[1], 1], [[1], 3]]
        pmf = {
            "target": [0.6, 0.0, 0.0, 0.0, 0.4, 0.0],
            "nontarget": [0.0, 0.5, 0.25, 0.0, 0.0, 0.25],
            "spoof": [0.0, 0.0, 0.0, 0.7, 0.0, 0.3],
        }
        w = build_discrete_world({"vocabulary": vocab, "outcomes": outcomes, "pmf": pmf})
        table = w.likelihood_table()
        for i in range(len(outcomes)):
            assert tuple(table[i]) == (pmf["target"][i], pmf["nontarget"][i], pmf["spoof"][i])
        assert w.likelihood(3, TrialClass.SPOOF) == 0.7

    def test_pmf_must_normalize(self):
        with pytest.raises(ValidationError, match="sum to 1"):
            build_discrete_world({"vocabulary": [[0.0]], "outcomes": [[[0], 0]], "pmf": {"target": [0.9]}})

    def test_support_too_large(self):
        with pytest.raises(ValidationError, match="support too large"):
            build_discrete_world({"vocabulary": [[0.0]], "outcomes": [[[0], 0]] * 100001})

    def test_random_worlds_normalize(self, rng):
        for _ in range(5):
            w = random_world(rng, n_vocab=3, dim=2, k_enroll=2)
            np.testing.assert_allclose(w.pmf.sum(axis=1), 1.0, atol=1e-9)
            assert len(w) == 27

    def test_discretized_population(self):
        cfg = SynthConfig(n_speakers=6, utts_per_speaker=4, dim=4, n_attacks=2)
        w = discretize_population(cfg, n_patterns=3)
        np.testing.assert_allclose(w.pmf.sum(axis=1), 1.0, atol=1e-12)
        # target and nontarget supports are disjoint
        assert not np.any((w.pmf[0] > 0) & (w.pmf[1] > 0))
