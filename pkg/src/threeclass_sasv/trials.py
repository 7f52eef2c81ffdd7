"""Balanced three-class trial construction (random or hard-pair)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Gender, Trial, TrialClass, UtteranceRecord, index_manifest
from .errors import ValidationError
from .store import EmbeddingStore
from .synthgen import make_rng

RANDOM = "random"
HARD_PAIR = "hard_pair"
STRATEGIES = (RANDOM, HARD_PAIR)


@dataclass(frozen=True)
class TrialBuildConfig:
    n_per_class: int = 12000
    k_enroll: int = 3
    strategy: str = HARD_PAIR
    seed: int = 0
    full_coverage: bool = True
    hard_pool: int = 8

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValidationError("trials.n_per_class must be positive")
        if self.k_enroll < 1:
            raise ValidationError("trials.k_enroll must be at least 1")
        if self.hard_pool < 1:
            raise ValidationError("trials.hard_pool must be at least 1")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"trials.strategy must be one of {STRATEGIES}")
        make_rng(self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


def _rank(cands: Sequence[UtteranceRecord], dist: np.ndarray, farthest: bool) -> list[UtteranceRecord]:
    """Candidates ordered from most to least extreme; exact ties by utt_id."""
    key = -dist if farthest else dist
    order = np.lexsort((np.array([c.utt_id for c in cands]), key))
    return [cands[i] for i in order]


def build_trials(
    manifest: Sequence[UtteranceRecord],
    config: TrialBuildConfig,
    store: Optional[EmbeddingStore] = None,
) -> list[Trial]:
    """Build ``n_per_class`` target, nontarget and spoof trials.

    Target trials come first and cover every eligible speaker (one with at
    least ``k_enroll + 1`` bona fide utterances) before the rest are drawn at
    random. Trial ``i`` of the nontarget and spoof classes reuses the
    enrollment set of target trial ``i``.

    Hard-pair mode needs ``store``: target tests are the speaker's remaining
    utterance farthest from the enrollment centroid; nontarget tests are
    drawn uniformly from the ``hard_pool`` same-gender impostor utterances
    closest to it (``hard_pool=1`` always takes the closest one).
    """
    hard = config.strategy == HARD_PAIR
    if hard and store is None:
        raise ValidationError("hard-pair strategy needs the embedding store")
    index_manifest(manifest)
    rng = make_rng(config.seed)
    k = config.k_enroll

    bona: dict[str, list[UtteranceRecord]] = {}
    spoofs: dict[str, list[UtteranceRecord]] = {}
    gender: dict[str, Gender] = {}
    all_spoofs: list[UtteranceRecord] = []
    for r in manifest:
        if r.is_bonafide:
            bona.setdefault(r.speaker_id, []).append(r)
            gender.setdefault(r.speaker_id, r.gender)
        else:
            spoofs.setdefault(r.speaker_id, []).append(r)
            all_spoofs.append(r)
    for lst in bona.values():
        lst.sort(key=lambda r: r.utt_id)
    speakers = sorted(bona)
    eligible = [s for s in speakers if len(bona[s]) >= k + 1]
    if len(eligible) < 2:
        short = [s for s in speakers if len(bona[s]) < k + 1]
        raise ValidationError(
            f"need at least two speakers with {k + 1} bona fide utterances; "
            f"deficient speaker(s): {', '.join(short) or 'none'}"
        )
    if config.full_coverage and config.n_per_class < len(eligible):
        raise ValidationError(
            f"n_per_class={config.n_per_class} cannot cover all {len(eligible)} eligible speakers"
        )
    if not all_spoofs:
        raise ValidationError("manifest has no spoofed utterances for spoof trials")
    if hard and all(gender[s] is Gender.UNKNOWN for s in speakers):
        raise ValidationError("hard-pair strategy requires gender metadata")

    def emb(recs: Sequence[UtteranceRecord]) -> np.ndarray:
        return np.stack([store.get(r.embedding_ref, r.utt_id) for r in recs])

    # target enrollment speakers: full coverage first, then random fill
    if config.full_coverage:
        first = [eligible[i] for i in rng.permutation(len(eligible))]
        rest = [eligible[i] for i in rng.integers(0, len(eligible), config.n_per_class - len(eligible))]
        enrolled = first + rest
    else:
        enrolled = [eligible[i] for i in rng.integers(0, len(eligible), config.n_per_class)]

    # hard-pair impostor pools per gender
    pools: dict[Gender, tuple[list[UtteranceRecord], np.ndarray]] = {}
    if hard:
        for g in (Gender.F, Gender.M):
            recs = [r for s in speakers if gender[s] is g for r in bona[s]]
            if recs:
                pools[g] = (recs, emb(recs))

    targets: list[Trial] = []
    nontargets: list[Trial] = []
    spoof_trials: list[Trial] = []
    for i, spk in enumerate(enrolled):
        utts = bona[spk]
        pick = rng.permutation(len(utts))
        enroll = [utts[j] for j in sorted(pick[:k])]
        remaining = [utts[j] for j in sorted(pick[k:])]
        enroll_ids = tuple(r.utt_id for r in enroll)
        centroid = emb(enroll).mean(axis=0) if hard else None

        if hard:
            d = np.linalg.norm(emb(remaining) - centroid, axis=1)
            test = _rank(remaining, d, farthest=True)[0]
        else:
            test = remaining[rng.integers(len(remaining))]
        targets.append(Trial(f"tar-{i:06d}", enroll_ids, test.utt_id, TrialClass.TARGET))

        if hard:
            g = gender[spk]
            if g is Gender.UNKNOWN or g not in pools:
                raise ValidationError(f"no same-gender impostors for speaker {spk} (gender {g.value})")
            recs, vecs = pools[g]
            mask = np.array([r.speaker_id != spk for r in recs])
            if not mask.any():
                raise ValidationError(f"no same-gender impostors for speaker {spk} (gender {g.value})")
            cands = [r for r, m in zip(recs, mask) if m]
            d = np.linalg.norm(vecs[mask] - centroid, axis=1)
            nearest = _rank(cands, d, farthest=False)[: config.hard_pool]
            imp = nearest[rng.integers(len(nearest))] if len(nearest) > 1 else nearest[0]
        else:
            others = [s for s in speakers if s != spk]
            other = others[rng.integers(len(others))]
            imp = bona[other][rng.integers(len(bona[other]))]
        nontargets.append(Trial(f"non-{i:06d}", enroll_ids, imp.utt_id, TrialClass.NONTARGET))

        pool = spoofs.get(spk) or all_spoofs
        sp = pool[rng.integers(len(pool))]
        spoof_trials.append(Trial(f"spf-{i:06d}", enroll_ids, sp.utt_id, TrialClass.SPOOF))

    return targets + nontargets + spoof_trials


def class_counts(trials: Sequence[Trial]) -> dict[TrialClass, int]:
    counts = {c: 0 for c in TrialClass}
    for t in trials:
        counts[t.label] += 1
    return counts
