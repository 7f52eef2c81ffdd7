"""From three-class logits to a single accept/reject log-likelihood ratio.

Logits are first stripped of the training-set class frequencies, turning
them into class log-likelihoods up to a shared constant. The LLR then
compares the target likelihood against the prior-weighted mixture of the
nontarget and spoof likelihoods. Everything stays in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .core import ClassLogits, Priors, Trial, TrialClass, log_sum_exp
from .errors import ValidationError


@dataclass(frozen=True)
class CalibrationParams:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise ValidationError("calibration parameters must be finite")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)


def check_train_priors(pi_train: Priors) -> Priors:
    if min(pi_train.as_tuple()) <= 0.0:
        raise ValidationError(f"every class needs a positive training prior, got {pi_train.as_tuple()}")
    return pi_train


def train_priors_from_trials(trials: Sequence[Trial]) -> Priors:
    """Empirical class frequencies N_i / N of a training trial list."""
    if not trials:
        raise ValidationError("cannot measure training priors of an empty trial list")
    counts = [0, 0, 0]
    for t in trials:
        counts[t.label.index] += 1
    n = len(trials)
    pri = Priors(counts[0] / n, counts[1] / n, counts[2] / n)
    return check_train_priors(pri)


def adjust_logits(s: ClassLogits, pi_train: Priors) -> ClassLogits:
    check_train_priors(pi_train)
    return ClassLogits(*(si - math.log(p) for si, p in zip(s.as_tuple(), pi_train.as_tuple())))


def adjust_logits_array(S: np.ndarray, pi_train: Priors) -> np.ndarray:
    check_train_priors(pi_train)
    return np.asarray(S, dtype=np.float64) - np.log(np.array(pi_train.as_tuple()))


def reject_log_weights(priors: Priors) -> tuple[float, float]:
    """Log mixture weights of nontarget and spoof inside the rejection hypothesis."""
    rej = priors.pi_non + priors.pi_spf
    if rej <= 0.0:
        raise ValidationError("rejection prior pi_non + pi_spf must be positive")

    def lg(p):
        return math.log(p / rej) if p > 0 else -math.inf

    return lg(priors.pi_non), lg(priors.pi_spf)


def llr_from_logits(s_adj: ClassLogits, priors: Priors) -> float:
    lw_non, lw_spf = reject_log_weights(priors)
    return s_adj.s_tar - log_sum_exp([(lw_non, s_adj.s_non), (lw_spf, s_adj.s_spf)])


def llr_array(S_adj: np.ndarray, priors: Priors) -> np.ndarray:
    """Vectorized ``llr_from_logits`` over rows of an ``(N, 3)`` array."""
    S_adj = np.asarray(S_adj, dtype=np.float64)
    lw_non, lw_spf = reject_log_weights(priors)
    return S_adj[:, 0] - np.logaddexp(lw_non + S_adj[:, 1], lw_spf + S_adj[:, 2])


def calibrated_llr(s: ClassLogits, calib: CalibrationParams) -> float:
    a, b, c, d = calib.as_tuple()
    return s.s_tar - log_sum_exp([(b, a * s.s_non), (d, c * s.s_spf)])


def calibrated_llr_array(S: np.ndarray, calib: CalibrationParams) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    a, b, c, d = calib.as_tuple()
    return S[:, 0] - np.logaddexp(a * S[:, 1] + b, c * S[:, 2] + d)


def calibration_from_priors(pi_train: Priors, priors: Priors, fold_target: bool = True) -> CalibrationParams:
    """Calibration reproducing the prior-adjusted LLR.

    With ``fold_target`` the result equals ``llr_from_logits(adjust_logits(s))``
    exactly; without it, the two differ by the constant ``log pi_train_tar``.
    """
    check_train_priors(pi_train)
    lw_non, lw_spf = reject_log_weights(priors)
    if not (math.isfinite(lw_non) and math.isfinite(lw_spf)):
        raise ValidationError("calibrated form needs both pi_non and pi_spf positive")
    shift = math.log(pi_train.pi_tar) if fold_target else 0.0
    return CalibrationParams(
        1.0, lw_non - math.log(pi_train.pi_non) + shift, 1.0, lw_spf - math.log(pi_train.pi_spf) + shift
    )


@dataclass(frozen=True)
class CalibrationFitConfig:
    """Optimizer limits and per-class cost weights of the fitting objective.

    Unit costs give the plain prior-weighted objective; passing the a-DCF
    costs moves the logistic offset to the Bayes threshold of that cost
    function.
    """

    max_iter: int = 500
    tol: float = 1e-12
    c_miss: float = 1.0
    c_fa_non: float = 1.0
    c_fa_spf: float = 1.0

    def __post_init__(self):
        if not (self.c_miss > 0 and self.c_fa_non > 0 and self.c_fa_spf > 0):
            raise ValidationError("calibration cost weights must be positive")

    @property
    def costs(self) -> tuple[float, float, float]:
        return (self.c_miss, self.c_fa_non, self.c_fa_spf)


def _calibration_objective(theta, S, labels, priors: Priors, costs=(1.0, 1.0, 1.0)):
    weights = [ci * pi for ci, pi in zip(costs, priors.as_tuple())]
    a, b, c, d = theta
    u = a * S[:, 1] + b
    w = c * S[:, 2] + d
    llr = S[:, 0] - np.logaddexp(u, w)
    x = llr + math.log(weights[0] / (weights[1] + weights[2]))
    r_u = expit(u - w)
    r_w = 1.0 - r_u
    loss = 0.0
    g_llr = np.zeros_like(llr)
    for cls, pi in zip(TrialClass, weights):
        sel = labels == cls.index
        n = int(sel.sum())
        if n == 0 or pi == 0.0:
            continue
        if cls is TrialClass.TARGET:
            loss += -pi * log_expit(x[sel]).sum() / n
            g_llr[sel] = -pi * expit(-x[sel]) / n
        else:
            loss += -pi * log_expit(-x[sel]).sum() / n
            g_llr[sel] = pi * expit(x[sel]) / n
    grad = np.array([
        -(g_llr * r_u * S[:, 1]).sum(),
        -(g_llr * r_u).sum(),
        -(g_llr * r_w * S[:, 2]).sum(),
        -(g_llr * r_w).sum(),
    ])
    return float(loss), grad


def calibration_loss(S, labels, calib: CalibrationParams, priors: Priors, costs=(1.0, 1.0, 1.0)) -> float:
    """Prior- (and cost-) weighted binary cross-entropy of the accept posterior."""
    theta = np.array(calib.as_tuple())
    return _calibration_objective(theta, np.asarray(S, float), np.asarray(labels), priors, tuple(costs))[0]


def fit_calibration(
    S: np.ndarray,
    labels: np.ndarray,
    priors: Priors,
    pi_train: Priors,
    config: CalibrationFitConfig = CalibrationFitConfig(),
) -> tuple[CalibrationParams, dict]:
    """Fit (a, b, c, d) on development logits ``S`` (raw, not prior-adjusted).

    Starts from ``calibration_from_priors`` and never returns anything worse
    than that start on the development objective.
    """
    if 0.0 in priors.as_tuple():
        raise ValidationError("calibration fitting needs all three evaluation priors positive")
    S = np.asarray(S, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    missing = [c.value for c in TrialClass if not np.any(labels == c.index)]
    if missing:
        raise ValidationError(f"development set is missing class(es): {', '.join(missing)}")
    init = calibration_from_priors(pi_train, priors)
    theta0 = np.array(init.as_tuple())
    loss0, _ = _calibration_objective(theta0, S, labels, priors, config.costs)
    res = minimize(
        _calibration_objective, theta0, args=(S, labels, priors, config.costs), jac=True, method="L-BFGS-B",
        options={"maxiter": config.max_iter, "ftol": config.tol, "gtol": 1e-10},
    )
    best, best_loss = theta0, loss0
    if np.all(np.isfinite(res.x)) and res.fun < loss0:
        best, best_loss = res.x, float(res.fun)
    info = {"initial_loss": loss0, "final_loss": best_loss, "iterations": int(res.nit)}
    return CalibrationParams(*(float(v) for v in best)), info


def true_llrs(likelihoods: np.ndarray, priors: Priors) -> np.ndarray:
    """LLR from exact class likelihoods ``(N, 3)``; zero likelihoods give +-inf."""
    L = np.asarray(likelihoods, dtype=np.float64)
    wn = priors.pi_non / (priors.pi_non + priors.pi_spf)
    ws = priors.pi_spf / (priors.pi_non + priors.pi_spf)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(L[:, 0]) - np.log(wn * L[:, 1] + ws * L[:, 2])
