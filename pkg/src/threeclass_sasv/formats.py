"""Readers and writers for every interchange file.

* manifest / trials: JSON lines
* embeddings: ``SASVEMB1`` binary (see :mod:`.store`)
* scores / logits: TSV with a header row, reals printed with 17 significant digits
* model, calibration, report: JSON
* loss curve, histograms: CSV

All writers go through :func:`write_atomic`.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import ScoreRecord, Trial, TrialClass, UtteranceRecord
from .errors import SASVError, ValidationError
from .metrics import HistogramRow
from .store import EmbeddingStore


class MissingFile(SASVError):
    code = "E_MISSING_FILE"
    exit_status = 2


def write_atomic(path, data) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = data.encode("utf-8") if isinstance(data, str) else bytes(data)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise MissingFile(f"input file not found: {path}") from None


def read_text(path) -> str:
    return read_bytes(path).decode("utf-8")


def sha256_file(path) -> str:
    return hashlib.sha256(read_bytes(path)).hexdigest()


def fmt_real(x: float) -> str:
    return f"{x:.17g}"


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("+inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.floating):
        return _jsonable(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def dumps_json(doc) -> str:
    """Canonical JSON (sorted keys); non-finite reals become strings."""
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, doc) -> None:
    write_atomic(path, dumps_json(doc))


def read_json(path) -> dict:
    try:
        return json.loads(read_text(path))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _read_jsonl(path) -> list[dict]:
    out = []
    for n, line in enumerate(read_text(path).splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{n}: invalid JSON ({exc})") from None
    return out


def _jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_manifest(path, manifest: Sequence[UtteranceRecord]) -> None:
    write_atomic(path, _jsonl(r.to_dict() for r in manifest))


def read_manifest(path) -> list[UtteranceRecord]:
    return [UtteranceRecord.from_dict(d) for d in _read_jsonl(path)]


def write_trials(path, trials: Sequence[Trial]) -> None:
    write_atomic(path, _jsonl(t.to_dict() for t in trials))


def read_trials(path) -> list[Trial]:
    return [Trial.from_dict(d) for d in _read_jsonl(path)]


def write_embeddings(path, store: EmbeddingStore) -> None:
    write_atomic(path, store.to_bytes())


def read_embeddings(path) -> EmbeddingStore:
    return EmbeddingStore.from_bytes(read_bytes(path))


SCORE_HEADER = ("trial_id", "label", "attack_label", "llr")
LOGIT_HEADER = ("trial_id", "label", "attack_label", "s_tar", "s_non", "s_spf")


def _tsv(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    lines = ["\t".join(header)]
    lines.extend("\t".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def _read_tsv(path, header: Sequence[str]) -> list[list[str]]:
    lines = [ln for ln in read_text(path).splitlines() if ln.strip()]
    if not lines or tuple(lines[0].split("\t")) != tuple(header):
        raise ValidationError(f"{path}: expected header {' '.join(header)}")
    rows = [ln.split("\t") for ln in lines[1:]]
    for n, r in enumerate(rows, 2):
        if len(r) != len(header):
            raise ValidationError(f"{path}:{n}: expected {len(header)} columns, got {len(r)}")
    return rows


def _attack_field(a: Optional[str]) -> str:
    return a if a is not None else "-"


def _parse_attack(s: str) -> Optional[str]:
    return None if s == "-" else s


def _parse_real(path, s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ValidationError(f"{path}: cannot parse number {s!r}") from None


def write_scores(path, scores: Sequence[ScoreRecord]) -> None:
    write_atomic(path, _tsv(
        SCORE_HEADER,
        ((s.trial_id, s.label.value, _attack_field(s.attack_label), fmt_real(s.llr)) for s in scores),
    ))


def read_scores(path) -> list[ScoreRecord]:
    out = []
    for tid, label, attack, llr in _read_tsv(path, SCORE_HEADER):
        try:
            cls = TrialClass(label)
        except ValueError:
            raise ValidationError(f"{path}: unknown label {label!r}") from None
        out.append(ScoreRecord(tid, cls, _parse_attack(attack), _parse_real(path, llr)))
    return out


def write_logits(path, trial_ids, labels, attacks, S: np.ndarray) -> None:
    write_atomic(path, _tsv(
        LOGIT_HEADER,
        (
            (tid, TrialClass(lab).value, _attack_field(att), *(fmt_real(float(x)) for x in row))
            for tid, lab, att, row in zip(trial_ids, labels, attacks, S)
        ),
    ))


def read_logits(path) -> tuple[list[str], np.ndarray, list[Optional[str]], np.ndarray]:
    """``(trial_ids, label indices, attack labels, logits (N, 3))``."""
    ids, labels, attacks, rows = [], [], [], []
    for tid, label, attack, *vals in _read_tsv(path, LOGIT_HEADER):
        try:
            labels.append(TrialClass(label).index)
        except ValueError:
            raise ValidationError(f"{path}: unknown label {label!r}") from None
        ids.append(tid)
        attacks.append(_parse_attack(attack))
        rows.append([_parse_real(path, v) for v in vals])
    return ids, np.array(labels, dtype=np.int64), attacks, np.array(rows, dtype=np.float64).reshape(-1, 3)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_loss_curve(path, curve: Sequence[float]) -> None:
    write_atomic(path, _csv(("epoch", "mean_loss"), ((i + 1, fmt_real(v)) for i, v in enumerate(curve))))


def write_histograms(path, rows: Sequence[HistogramRow]) -> None:
    write_atomic(path, _csv(
        ("class", "attack", "bin_lo", "bin_hi", "count"),
        ((r.cls, r.attack, fmt_real(r.bin_lo), fmt_real(r.bin_hi), r.count) for r in rows),
    ))
