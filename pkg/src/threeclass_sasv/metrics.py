"""a-DCF, its minimum over thresholds, and score distribution tables."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .core import DEFAULT_PRIORS, Priors, ScoreRecord, TrialClass
from .errors import ValidationError


@dataclass(frozen=True)
class ADCFConfig:
    priors: Priors = field(default_factory=lambda: DEFAULT_PRIORS)
    c_miss: float = 1.0
    c_fa_non: float = 10.0
    c_fa_spf: float = 10.0
    normalize: bool = True

    def __post_init__(self):
        if not (self.c_miss > 0 and self.c_fa_non > 0 and self.c_fa_spf > 0):
            raise ValidationError("a-DCF costs must be positive")

    @property
    def normalizer(self) -> float:
        p = self.priors
        if not self.normalize:
            return 1.0
        return min(self.c_miss * p.pi_tar, self.c_fa_non * p.pi_non + self.c_fa_spf * p.pi_spf)


@dataclass(frozen=True, eq=False)
class ScoreArrays:
    """Column view of a score list: values, class indices, attack labels."""

    llr: np.ndarray
    label: np.ndarray
    attack: tuple[Optional[str], ...] = ()

    @classmethod
    def from_records(cls, scores: Sequence[ScoreRecord]) -> "ScoreArrays":
        return cls(
            np.array([s.llr for s in scores], dtype=np.float64),
            np.array([s.label.index for s in scores], dtype=np.int64),
            tuple(s.attack_label for s in scores),
        )

    def by_class(self, cls: TrialClass) -> np.ndarray:
        return self.llr[self.label == cls.index]


Scores = Union[Sequence[ScoreRecord], ScoreArrays]


def as_arrays(scores: Scores) -> ScoreArrays:
    if isinstance(scores, ScoreArrays):
        return scores
    return ScoreArrays.from_records(scores)


def _class_sizes(sa: ScoreArrays) -> tuple[int, int, int]:
    n = tuple(int(np.count_nonzero(sa.label == c.index)) for c in TrialClass)
    if n[0] == 0:
        raise ValidationError("a-DCF needs at least one target trial")
    if n[1] + n[2] == 0:
        raise ValidationError("a-DCF needs at least one nontarget or spoof trial")
    return n


def _cost(miss, fa_non, fa_spf, sizes, config: ADCFConfig) -> np.ndarray:
    """Cost from integer error counts; shared by every a-DCF route."""
    n_tar, n_non, n_spf = sizes
    p = config.priors
    p_miss = np.asarray(miss, dtype=np.float64) / n_tar
    p_non = np.asarray(fa_non, dtype=np.float64) / n_non if n_non else np.zeros(np.shape(miss))
    p_spf = np.asarray(fa_spf, dtype=np.float64) / n_spf if n_spf else np.zeros(np.shape(miss))
    cost = config.c_miss * p.pi_tar * p_miss + config.c_fa_non * p.pi_non * p_non + config.c_fa_spf * p.pi_spf * p_spf
    return cost / config.normalizer


def error_rates(scores: Scores, tau: float) -> dict[str, float]:
    """Miss and false-accept rates at ``tau`` (accept when score >= tau)."""
    sa = as_arrays(scores)
    n = _class_sizes(sa)
    tar, non, spf = (sa.by_class(c) for c in TrialClass)
    return {
        "p_miss": np.count_nonzero(tar < tau) / n[0],
        "p_fa_non": np.count_nonzero(non >= tau) / n[1] if n[1] else 0.0,
        "p_fa_spf": np.count_nonzero(spf >= tau) / n[2] if n[2] else 0.0,
    }


def a_dcf(scores: Scores, tau: float, config: ADCFConfig = ADCFConfig()) -> float:
    sa = as_arrays(scores)
    sizes = _class_sizes(sa)
    tar, non, spf = (sa.by_class(c) for c in TrialClass)
    counts = [np.count_nonzero(tar < tau), np.count_nonzero(non >= tau), np.count_nonzero(spf >= tau)]
    return float(_cost(*([c] for c in counts), sizes, config)[0])


def candidate_thresholds(values: np.ndarray) -> np.ndarray:
    """-inf, midpoints between consecutive distinct scores, +inf."""
    u = np.unique(np.asarray(values, dtype=np.float64))
    with np.errstate(over="ignore", invalid="ignore"):
        mid = (u[:-1] + u[1:]) / 2.0
    # adjacent doubles (or infinities) can round the midpoint onto the lower score
    bad = ~(mid > u[:-1])
    mid[bad] = u[1:][bad]
    return np.concatenate([[-np.inf], mid, [np.inf]])


def min_a_dcf(scores: Scores, config: ADCFConfig = ADCFConfig()) -> tuple[float, float]:
    """Exact minimum of ``a_dcf`` over thresholds; ties go to the larger threshold."""
    sa = as_arrays(scores)
    sizes = _class_sizes(sa)
    taus = candidate_thresholds(sa.llr)
    tar, non, spf = (np.sort(sa.by_class(c)) for c in TrialClass)
    miss = np.searchsorted(tar, taus, side="left")
    fa_non = sizes[1] - np.searchsorted(non, taus, side="left")
    fa_spf = sizes[2] - np.searchsorted(spf, taus, side="left")
    cost = _cost(miss, fa_non, fa_spf, sizes, config)
    i = len(cost) - 1 - int(np.argmin(cost[::-1]))
    return float(cost[i]), float(taus[i])


def bayes_threshold(config: ADCFConfig = ADCFConfig()) -> float:
    """Threshold minimizing expected cost for a calibrated LLR.

    Exact when the two false-accept costs are equal (then the cost weights
    of the rejection mixture coincide with its prior weights).
    """
    p = config.priors
    return math.log((config.c_fa_non * p.pi_non + config.c_fa_spf * p.pi_spf) / (config.c_miss * p.pi_tar))


def eval_report(scores: Scores, config: ADCFConfig = ADCFConfig()) -> dict:
    sa = as_arrays(scores)
    cost, tau = min_a_dcf(sa, config)
    bt = bayes_threshold(config)
    return {
        "min_a_dcf": cost,
        "tau_star": tau,
        "bayes_threshold": bt,
        "cost_at_bayes_threshold": a_dcf(sa, bt, config),
        "error_rates_at_tau_star": error_rates(sa, tau),
        "n_trials": {c.value: int(np.count_nonzero(sa.label == c.index)) for c in TrialClass},
    }


def macro_min_a_dcf(score_sets: Sequence[Scores], config: ADCFConfig = ADCFConfig()) -> float:
    """Arithmetic mean of per-set min a-DCF."""
    if not score_sets:
        raise ValidationError("macro a-DCF needs at least one score set")
    return float(np.mean([min_a_dcf(s, config)[0] for s in score_sets]))


@dataclass(frozen=True)
class HistogramRow:
    cls: str
    attack: str
    bin_lo: float
    bin_hi: float
    count: int


def score_histograms(scores: Scores, n_bins: int = 50, by_attack: bool = False) -> list[HistogramRow]:
    """Per-class (and optionally per-attack spoof) counts over one shared range."""
    if n_bins < 1:
        raise ValidationError("n_bins must be at least 1")
    sa = as_arrays(scores)
    if sa.llr.size == 0:
        raise ValidationError("cannot histogram an empty score list")
    edges = np.histogram_bin_edges(sa.llr, bins=n_bins, range=(sa.llr.min(), sa.llr.max()))
    rows: list[HistogramRow] = []

    def emit(cls: str, attack: str, vals: np.ndarray):
        counts, _ = np.histogram(vals, bins=edges)
        rows.extend(HistogramRow(cls, attack, float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts))

    for c in TrialClass:
        vals = sa.by_class(c)
        if vals.size:
            emit(c.value, "-", vals)
    if by_attack and sa.attack:
        attacks = np.array([a if a is not None else "" for a in sa.attack])
        spf = sa.label == TrialClass.SPOOF.index
        for att in sorted(set(attacks[spf])):
            emit(TrialClass.SPOOF.value, att, sa.llr[spf & (attacks == att)])
    return rows


def histogram_mean(rows: Sequence[HistogramRow], cls: str, attack: str = "-") -> float:
    """Count-weighted mean of bin centers for one (class, attack) histogram."""
    sel = [r for r in rows if r.cls == cls and r.attack == attack]
    total = sum(r.count for r in sel)
    if total == 0:
        raise ValidationError(f"no counts for class {cls!r}, attack {attack!r}")
    return sum(r.count * (r.bin_lo + r.bin_hi) / 2 for r in sel) / total


# ---- expected costs over an enumerable world ----


def world_expected_cost(pmf: np.ndarray, accept: np.ndarray, config: ADCFConfig = ADCFConfig()) -> float:
    """Expected normalized cost of a deterministic accept/reject rule.

    ``pmf`` is ``(3, n_outcomes)`` class likelihoods, ``accept`` a boolean
    decision per outcome.
    """
    accept = np.asarray(accept, dtype=bool)
    p = config.priors
    p_miss = math.fsum(pmf[0][~accept])
    p_fa_non = math.fsum(pmf[1][accept])
    p_fa_spf = math.fsum(pmf[2][accept])
    cost = config.c_miss * p.pi_tar * p_miss + config.c_fa_non * p.pi_non * p_fa_non + config.c_fa_spf * p.pi_spf * p_fa_spf
    return cost / config.normalizer


def world_bayes_cost(pmf: np.ndarray, config: ADCFConfig = ADCFConfig()) -> float:
    """Minimum expected normalized cost: the per-outcome cheaper decision."""
    p = config.priors
    accept_cost = config.c_fa_non * p.pi_non * pmf[1] + config.c_fa_spf * p.pi_spf * pmf[2]
    reject_cost = config.c_miss * p.pi_tar * pmf[0]
    return math.fsum(np.minimum(accept_cost, reject_cost)) / config.normalizer


def brute_force_min_cost(pmf: np.ndarray, config: ADCFConfig = ADCFConfig(), max_outcomes: int = 16) -> float:
    """Minimum expected cost over all 2^n deterministic rules (small worlds only)."""
    n = pmf.shape[1]
    if n > max_outcomes:
        raise ValidationError(f"brute force over {n} outcomes exceeds the {max_outcomes}-outcome limit")
    return min(
        world_expected_cost(pmf, np.array(bits, dtype=bool), config)
        for bits in itertools.product((False, True), repeat=n)
    )
