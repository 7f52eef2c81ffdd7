"""Synthetic speaker/spoof populations and small enumerable worlds.

Populations stand in for a real embedding extractor. Bona fide utterances of
speaker ``s`` scatter around a speaker mean; a spoof of ``s`` under attack
``a`` copies a fraction ``spoof_fidelity`` of that mean and adds a fixed
attack artifact direction.

All randomness comes from numpy's PCG64 bit generator seeded with the
configured 64-bit seed, which gives identical streams on every platform.
Attack artifact directions use a separate ``attack_seed``; setting
``utterance_seed`` redraws only the per-utterance noise, which yields fresh
utterances of the same speakers and attacks (a held-out evaluation set).
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import CLASSES, Authenticity, Gender, TrialClass, UtteranceRecord
from .errors import ValidationError
from .store import EmbeddingStore

MAX_WORLD_OUTCOMES = 100_000
PMF_TOL = 1e-9


def make_rng(seed: int) -> np.random.Generator:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) < 2**64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 50
    utts_per_speaker: int = 10
    dim: int = 32
    speaker_scale: float = 1.0
    channel_scale: float = 0.1
    n_attacks: int = 4
    spoof_fidelity: float = 0.5
    artifact_scale: float = 5.0
    seed: int = 7
    attack_seed: int = 0
    utterance_seed: Optional[int] = None

    def __post_init__(self):
        for name in ("n_speakers", "utts_per_speaker", "dim"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"synth.{name} must be a positive integer")
        if self.n_attacks < 0:
            raise ValidationError("synth.n_attacks must be non-negative")
        # zero scales are allowed to build the degenerate limiting cases
        if self.speaker_scale < 0 or self.channel_scale < 0 or self.artifact_scale < 0:
            raise ValidationError("synth scales must be non-negative")
        if not 0.0 <= self.spoof_fidelity <= 1.0:
            raise ValidationError("synth.spoof_fidelity must lie in [0, 1]")
        make_rng(self.seed)
        make_rng(self.attack_seed)
        if self.utterance_seed is not None:
            make_rng(self.utterance_seed)

    def to_dict(self) -> dict:
        return asdict(self)


def attack_label(a: int) -> str:
    return f"A{a + 1:02d}"


def _gender_for(speaker_index: int) -> Gender:
    return Gender.F if speaker_index % 2 == 0 else Gender.M


def _draw_structure(config: SynthConfig, rng: np.random.Generator):
    means = config.speaker_scale * rng.standard_normal((config.n_speakers, config.dim))
    # attack artifacts come from their own stream so populations drawn with
    # different speaker seeds still share the same spoofing systems
    directions = make_rng(config.attack_seed).standard_normal((config.n_attacks, config.dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    directions = directions / np.where(norms > 0, norms, 1.0)
    return means, directions


def generate_population(
    config: SynthConfig, speaker_prefix: str = "spk"
) -> tuple[list[UtteranceRecord], EmbeddingStore]:
    """Draw a manifest and its embedding store.

    Each speaker gets ``utts_per_speaker`` bona fide and, when attacks exist,
    ``utts_per_speaker`` spoofed utterances cycling through the attacks.
    Embeddings are rounded to float32 so a write/read round trip through the
    binary container is exact.
    """
    if config.n_attacks > 0 and config.utts_per_speaker == 0:
        raise ValidationError("spoof generation needs utts_per_speaker > 0")
    rng = make_rng(config.seed)
    means, directions = _draw_structure(config, rng)
    if config.utterance_seed is not None:
        rng = make_rng(config.utterance_seed)
    n_utt = config.utts_per_speaker
    manifest: list[UtteranceRecord] = []
    rows = []
    for s in range(config.n_speakers):
        spk = f"{speaker_prefix}{s:03d}"
        gender = _gender_for(s)
        noise = config.channel_scale * rng.standard_normal((n_utt, config.dim))
        for j in range(n_utt):
            manifest.append(
                UtteranceRecord(f"{spk}-bf{j:03d}", spk, gender, Authenticity.BONAFIDE, None, len(rows))
            )
            rows.append(means[s] + noise[j])
        if config.n_attacks == 0:
            continue
        noise = config.channel_scale * rng.standard_normal((n_utt, config.dim))
        for j in range(n_utt):
            a = (s + j) % config.n_attacks
            manifest.append(
                UtteranceRecord(f"{spk}-sp{j:03d}", spk, gender, Authenticity.SPOOF, attack_label(a), len(rows))
            )
            rows.append(config.spoof_fidelity * means[s] + config.artifact_scale * directions[a] + noise[j])
    data = np.asarray(rows, dtype=np.float64).reshape(-1, config.dim)
    return manifest, EmbeddingStore(data.astype(np.float32).astype(np.float64))


@dataclass(frozen=True, eq=False)
class DiscreteWorld:
    """A finite trial world with exactly enumerable class likelihoods.

    ``outcomes[i]`` is ``(enroll_vocab_indices, test_vocab_index)`` and
    ``pmf[c, i]`` is ``P(outcome i | class c)`` with classes in logit order.
    """

    vocabulary: np.ndarray
    outcomes: tuple[tuple[tuple[int, ...], int], ...]
    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.shape != (3, len(self.outcomes)):
            raise ValidationError(f"pmf must have shape (3, {len(self.outcomes)}), got {pmf.shape}")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise ValidationError("pmf entries must be finite and non-negative")
        sums = pmf.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PMF_TOL):
            raise ValidationError(f"class pmfs must sum to 1, got {sums}")
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "vocabulary", np.asarray(self.vocabulary, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.outcomes)

    def likelihood(self, outcome: int, cls: TrialClass) -> float:
        return float(self.pmf[TrialClass(cls).index, outcome])

    def likelihood_table(self) -> np.ndarray:
        """Rows are outcomes, columns the (target, nontarget, spoof) likelihoods."""
        return self.pmf.T.copy()


def build_discrete_world(spec: dict) -> DiscreteWorld:
    """Build a world from ``{"vocabulary", "outcomes", "pmf"}``.

    ``outcomes`` lists ``[enroll_indices, test_index]`` pairs. ``pmf`` maps
    each class name to one probability per outcome; a missing class gets the
    uniform distribution over all outcomes.
    """
    vocab = np.asarray(spec["vocabulary"], dtype=np.float64)
    if vocab.ndim != 2:
        raise ValidationError("vocabulary must be a list of equal-length vectors")
    raw = spec["outcomes"]
    if len(raw) > MAX_WORLD_OUTCOMES:
        raise ValidationError(f"support too large: {len(raw)} outcomes exceeds {MAX_WORLD_OUTCOMES}")
    if len(raw) == 0:
        raise ValidationError("world needs at least one outcome")
    outcomes = []
    for enroll, test in raw:
        enroll = tuple(int(e) for e in (enroll if isinstance(enroll, (list, tuple)) else [enroll]))
        idx = enroll + (int(test),)
        if not enroll or min(idx) < 0 or max(idx) >= len(vocab):
            raise ValidationError(f"outcome {(enroll, test)} references a missing vocabulary entry")
        outcomes.append((enroll, int(test)))
    given = spec.get("pmf", {})
    unknown = set(given) - {c.value for c in CLASSES}
    if unknown:
        raise ValidationError(f"unknown classes in pmf: {sorted(unknown)}")
    pmf = np.empty((3, len(outcomes)))
    for c in CLASSES:
        if c.value in given:
            row = np.asarray(given[c.value], dtype=np.float64)
            if row.shape != (len(outcomes),):
                raise ValidationError(f"pmf[{c.value}] must have one entry per outcome")
            pmf[c.index] = row
        else:
            pmf[c.index] = 1.0 / len(outcomes)
    return DiscreteWorld(vocab, tuple(outcomes), pmf)


def random_world(
    rng: np.random.Generator, n_vocab: int = 3, dim: int = 2, k_enroll: int = 1, concentration: float = 0.5
) -> DiscreteWorld:
    """A world over every (enroll tuple, test) combination with random Dirichlet pmfs."""
    vocab = rng.standard_normal((n_vocab, dim))
    enrolls = list(itertools.product(range(n_vocab), repeat=k_enroll))
    outcomes = [[list(e), t] for e in enrolls for t in range(n_vocab)]
    pmf = {c.value: rng.dirichlet(np.full(len(outcomes), concentration)) for c in CLASSES}
    return build_discrete_world({"vocabulary": vocab, "outcomes": outcomes, "pmf": pmf})


def discretize_population(config: SynthConfig, n_patterns: int = 3) -> DiscreteWorld:
    """Finite analogue of a synthetic population, with one enrollment utterance.

    Every speaker keeps its mean and every attack its artifact direction from
    ``config``; utterance variability is reduced to ``n_patterns`` fixed
    noise draws per speaker (and per speaker/attack for spoofs). Target tests
    use another pattern of the enrolled speaker, nontarget tests any pattern
    of another speaker, spoof tests any spoof of the enrolled speaker.
    """
    if n_patterns < 2:
        raise ValidationError("need at least two patterns per speaker for target outcomes")
    if config.n_attacks < 1:
        raise ValidationError("discretized world needs at least one attack")
    n_spk, m, n_att = config.n_speakers, n_patterns, config.n_attacks
    n_bona = n_spk * m
    tests_per_enroll = n_bona - 1 + n_att * m
    if n_bona * tests_per_enroll > MAX_WORLD_OUTCOMES:
        raise ValidationError(
            f"support too large: {n_bona * tests_per_enroll} outcomes exceeds {MAX_WORLD_OUTCOMES}"
        )
    rng = make_rng(config.seed)
    means, directions = _draw_structure(config, rng)
    bona = means[:, None, :] + config.channel_scale * rng.standard_normal((n_spk, m, config.dim))
    spoof = (
        config.spoof_fidelity * means[:, None, None, :]
        + config.artifact_scale * directions[None, :, None, :]
        + config.channel_scale * rng.standard_normal((n_spk, n_att, m, config.dim))
    )
    vocab = np.concatenate([bona.reshape(-1, config.dim), spoof.reshape(-1, config.dim)])

    def spoof_index(s, a, j):
        return n_bona + (s * n_att + a) * m + j

    outcomes, tar, non, spf = [], [], [], []
    p_tar = 1.0 / (n_bona * (m - 1))
    p_non = 1.0 / (n_bona * (n_bona - m))
    p_spf = 1.0 / (n_bona * n_att * m)
    for s in range(n_spk):
        for i in range(m):
            e = s * m + i
            for t in range(n_bona):
                if t == e:
                    continue
                same = t // m == s
                outcomes.append([[e], t])
                tar.append(p_tar if same else 0.0)
                non.append(0.0 if same else p_non)
                spf.append(0.0)
            for a in range(n_att):
                for j in range(m):
                    outcomes.append([[e], spoof_index(s, a, j)])
                    tar.append(0.0)
                    non.append(0.0)
                    spf.append(p_spf)
    return build_discrete_world(
        {"vocabulary": vocab, "outcomes": outcomes, "pmf": {"target": tar, "nontarget": non, "spoof": spf}}
    )


def speaker_distance_stats(
    manifest: Sequence[UtteranceRecord], store: EmbeddingStore
) -> tuple[float, float]:
    """(mean within-speaker, mean between-speaker-centroid) Euclidean distance over bona fide speech."""
    by_spk: dict[str, list[np.ndarray]] = {}
    for r in manifest:
        if r.is_bonafide:
            by_spk.setdefault(r.speaker_id, []).append(store.get(r.embedding_ref, r.utt_id))
    within, cents = [], []
    for vecs in by_spk.values():
        x = np.stack(vecs)
        c = x.mean(axis=0)
        cents.append(c)
        within.extend(np.linalg.norm(x - c, axis=1))
    cents_arr = np.stack(cents)
    diff = cents_arr[:, None, :] - cents_arr[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    iu = np.triu_indices(len(cents_arr), k=1)
    return float(np.mean(within)), float(np.mean(dist[iu]))

