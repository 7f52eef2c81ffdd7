"""Domain types and numeric helpers shared by every other module."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ValidationError

PRIOR_SUM_TOL = 1e-9


class Gender(str, enum.Enum):
    F = "F"
    M = "M"
    UNKNOWN = "Unknown"


class Authenticity(str, enum.Enum):
    BONAFIDE = "bonafide"
    SPOOF = "spoof"


class TrialClass(str, enum.Enum):
    """The three trial classes, in logit order (target, nontarget, spoof)."""

    TARGET = "target"
    NONTARGET = "nontarget"
    SPOOF = "spoof"

    @property
    def index(self) -> int:
        return _CLASS_INDEX[self]

    @classmethod
    def from_index(cls, i: int) -> "TrialClass":
        return CLASSES[i]


CLASSES = (TrialClass.TARGET, TrialClass.NONTARGET, TrialClass.SPOOF)
_CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    speaker_id: str
    gender: Gender
    authenticity: Authenticity
    attack_label: Optional[str]
    embedding_ref: int

    def __post_init__(self):
        object.__setattr__(self, "gender", Gender(self.gender))
        object.__setattr__(self, "authenticity", Authenticity(self.authenticity))
        is_spoof = self.authenticity is Authenticity.SPOOF
        if is_spoof != (self.attack_label is not None):
            raise ValidationError(
                f"utterance {self.utt_id!r}: attack_label must be set exactly for spoofed speech"
            )
        if self.embedding_ref < 0:
            raise ValidationError(f"utterance {self.utt_id!r}: negative embedding_ref")

    @property
    def is_bonafide(self) -> bool:
        return self.authenticity is Authenticity.BONAFIDE

    def to_dict(self) -> dict:
        return {
            "utt_id": self.utt_id,
            "speaker_id": self.speaker_id,
            "gender": self.gender.value,
            "authenticity": self.authenticity.value,
            "attack_label": self.attack_label,
            "embedding_ref": self.embedding_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UtteranceRecord":
        try:
            return cls(
                utt_id=str(d["utt_id"]),
                speaker_id=str(d["speaker_id"]),
                gender=Gender(d["gender"]),
                authenticity=Authenticity(d["authenticity"]),
                attack_label=d.get("attack_label"),
                embedding_ref=int(d["embedding_ref"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad manifest record {d!r}: {exc}") from exc


def index_manifest(manifest: Iterable[UtteranceRecord]) -> dict[str, UtteranceRecord]:
    """Map utt_id to record, rejecting duplicate ids."""
    out: dict[str, UtteranceRecord] = {}
    for rec in manifest:
        if rec.utt_id in out:
            raise ValidationError(f"duplicate utt_id {rec.utt_id!r} in manifest")
        out[rec.utt_id] = rec
    return out


@dataclass(frozen=True)
class Trial:
    trial_id: str
    enroll_ids: tuple[str, ...]
    test_id: str
    label: TrialClass

    def __post_init__(self):
        object.__setattr__(self, "enroll_ids", tuple(self.enroll_ids))
        object.__setattr__(self, "label", TrialClass(self.label))
        if not self.enroll_ids:
            raise ValidationError(f"trial {self.trial_id!r} has no enrollment utterances")

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "enroll_ids": list(self.enroll_ids),
            "test_id": self.test_id,
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trial":
        try:
            return cls(str(d["trial_id"]), tuple(d["enroll_ids"]), str(d["test_id"]), TrialClass(d["label"]))
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad trial record {d!r}: {exc}") from exc


def check_trial(trial: Trial, utts: dict[str, UtteranceRecord]) -> None:
    """Raise if the trial's label is inconsistent with the manifest metadata."""
    try:
        enroll = [utts[u] for u in trial.enroll_ids]
        test = utts[trial.test_id]
    except KeyError as exc:
        raise ValidationError(f"trial {trial.trial_id!r}: unknown utterance {exc.args[0]!r}") from None
    speakers = {r.speaker_id for r in enroll}
    if len(speakers) != 1 or not all(r.is_bonafide for r in enroll):
        raise ValidationError(f"trial {trial.trial_id!r}: enrollment must be bona fide speech of one speaker")
    spk = speakers.pop()
    if trial.label is TrialClass.SPOOF:
        ok = not test.is_bonafide
    elif trial.label is TrialClass.TARGET:
        ok = test.is_bonafide and test.speaker_id == spk and test.utt_id not in trial.enroll_ids
    else:
        ok = test.is_bonafide and test.speaker_id != spk
    if not ok:
        raise ValidationError(f"trial {trial.trial_id!r}: test utterance contradicts label {trial.label.value}")


@dataclass(frozen=True)
class Priors:
    pi_tar: float
    pi_non: float
    pi_spf: float

    def __post_init__(self):
        vals = (self.pi_tar, self.pi_non, self.pi_spf)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise ValidationError(f"priors must lie in [0, 1], got {vals}")
        if abs(sum(vals) - 1.0) > PRIOR_SUM_TOL:
            raise ValidationError(f"priors must sum to 1, got {vals} (sum {sum(vals)!r})")
        if self.pi_non + self.pi_spf <= 0.0:
            raise ValidationError("rejection prior pi_non + pi_spf must be positive")

    @classmethod
    def parse(cls, text: str) -> "Priors":
        """Parse ``"pi_tar,pi_non,pi_spf"``."""
        try:
            parts = [float(p) for p in text.split(",")]
        except ValueError:
            raise ValidationError(f"cannot parse priors {text!r}") from None
        if len(parts) != 3:
            raise ValidationError(f"expected three comma-separated priors, got {text!r}")
        return cls(*parts)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.pi_tar, self.pi_non, self.pi_spf)


# ASVspoof 5 evaluation priors.
DEFAULT_PRIORS = Priors(0.9405, 0.0095, 0.0500)


@dataclass(frozen=True)
class ClassLogits:
    s_tar: float
    s_non: float
    s_spf: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise ValidationError(f"logits must be finite, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.s_tar, self.s_non, self.s_spf)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)


@dataclass(frozen=True)
class ScoreRecord:
    trial_id: str
    label: TrialClass
    attack_label: Optional[str]
    llr: float

    def __post_init__(self):
        object.__setattr__(self, "label", TrialClass(self.label))
        if not math.isfinite(self.llr):
            raise ValidationError(f"score for {self.trial_id!r} is not finite")
        if (self.label is TrialClass.SPOOF) != (self.attack_label is not None):
            raise ValidationError(f"score {self.trial_id!r}: attack_label must be set exactly for spoof trials")


def log_sum_exp(terms: Sequence[tuple[float, float]]) -> float:
    """Stable ``log(sum(exp(log_weight + value)))`` over (log_weight, value) pairs.

    Log-weights may be ``-inf`` (a zero weight); such terms drop out.
    """
    if len(terms) == 0:
        raise ValueError("empty log-sum-exp")
    xs = []
    for lw, v in terms:
        if not math.isfinite(v) or math.isnan(lw) or lw == math.inf:
            raise ValueError(f"log-sum-exp term ({lw}, {v}) is not admissible")
        xs.append(lw + v)
    m = max(xs)
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(math.exp(x - m) for x in xs))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
