"""Cross-encoder forward pass: enrollment/test aggregation and a 3-way linear head.

Two aggregation modes are supported:

``cross_attention``
    Multi-head scaled dot-product attention with the test embedding as the
    only query and the K enrollment embeddings as keys and values, followed
    by an output projection. With ``self_token`` the test embedding is also
    appended to the attended memory, and learned segment vectors mark each
    token as enrollment or test.
``embed_concat``
    ``[mean of enrollment rows ; test]`` fed straight to the head.

The batched routines (``forward_batch`` / ``backward_batch``) carry the math;
single-trial helpers wrap them with a batch of one.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import ClassLogits, Trial, UtteranceRecord, softmax
from .errors import ValidationError
from .store import EmbeddingStore
from .synthgen import make_rng

CROSS_ATTENTION = "cross_attention"
EMBED_CONCAT = "embed_concat"
AGGREGATIONS = (CROSS_ATTENTION, EMBED_CONCAT)

MODEL_FORMAT = "threeclass-sasv-encoder/1"

# Set THREECLASS_SASV_DEBUG=1 to assert attention weights are normalized.
DEBUG = os.environ.get("THREECLASS_SASV_DEBUG", "") not in ("", "0")


@dataclass(frozen=True, eq=False)
class AttentionParams:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray
    n_heads: int
    segment: Optional[np.ndarray] = None  # (2, D): enrollment row, test row

    def __post_init__(self):
        d = np.shape(self.W_q)[0] if np.ndim(self.W_q) == 2 else -1
        for name in ("W_q", "W_k", "W_v", "W_o"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.shape != (d, d):
                raise ValidationError(f"{name} must be a square D x D matrix, got {w.shape}")
            if not np.all(np.isfinite(w)):
                raise ValidationError(f"{name} has non-finite entries")
            object.__setattr__(self, name, w)
        if self.n_heads < 1 or d % self.n_heads:
            raise ValidationError(f"dimension {d} is not divisible by n_heads={self.n_heads}")
        if self.segment is not None:
            seg = np.asarray(self.segment, dtype=np.float64)
            if seg.shape != (2, d) or not np.all(np.isfinite(seg)):
                raise ValidationError(f"segment must be a finite (2, {d}) array")
            object.__setattr__(self, "segment", seg)

    @property
    def dim(self) -> int:
        return self.W_q.shape[0]

    @property
    def self_token(self) -> bool:
        return self.segment is not None


@dataclass(frozen=True, eq=False)
class HeadParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != 3 or b.shape != (3,):
            raise ValidationError(f"head must map to exactly 3 logits, got W {W.shape}, b {b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValidationError("head parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True, eq=False)
class EncoderParams:
    aggregation: str
    head: HeadParams
    attention: Optional[AttentionParams] = None
    dim: int = field(init=False)

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"unknown aggregation {self.aggregation!r}")
        d_in = self.head.W.shape[1]
        if self.aggregation == CROSS_ATTENTION:
            if self.attention is None:
                raise ValidationError("cross-attention aggregation needs attention parameters")
            dim = self.attention.dim
            if d_in != dim:
                raise ValidationError(f"head input {d_in} does not match attention dim {dim}")
        else:
            if self.attention is not None:
                raise ValidationError("embedding concatenation takes no attention parameters")
            if d_in % 2:
                raise ValidationError("concatenation head input must be 2D")
            dim = d_in // 2
        object.__setattr__(self, "dim", dim)

    def tensors(self) -> dict[str, np.ndarray]:
        """Named parameter tensors, in a fixed order."""
        out = {}
        if self.attention is not None:
            a = self.attention
            out.update({"attn.W_q": a.W_q, "attn.W_k": a.W_k, "attn.W_v": a.W_v, "attn.W_o": a.W_o})
            if a.segment is not None:
                out["attn.segment"] = a.segment
        out["head.W"] = self.head.W
        out["head.b"] = self.head.b
        return out

    def with_tensors(self, t: Mapping[str, np.ndarray]) -> "EncoderParams":
        head = HeadParams(t["head.W"], t["head.b"])
        attention = None
        if self.attention is not None:
            attention = AttentionParams(
                t["attn.W_q"], t["attn.W_k"], t["attn.W_v"], t["attn.W_o"],
                self.attention.n_heads, t.get("attn.segment"),
            )
        return EncoderParams(self.aggregation, head, attention)


def init_params(
    aggregation: str = CROSS_ATTENTION, dim: int = 32, n_heads: int = 4, seed: int = 0, self_token: bool = True
) -> EncoderParams:
    """Gaussian init with scale 1/sqrt(fan_in); biases and segment vectors start at zero."""
    rng = make_rng(seed)

    def mat(rows, cols):
        return rng.standard_normal((rows, cols)) / math.sqrt(cols)

    if aggregation == CROSS_ATTENTION:
        attention = AttentionParams(
            mat(dim, dim), mat(dim, dim), mat(dim, dim), mat(dim, dim), n_heads,
            np.zeros((2, dim)) if self_token else None,
        )
        head = HeadParams(mat(3, dim), np.zeros(3))
        return EncoderParams(aggregation, head, attention)
    if aggregation == EMBED_CONCAT:
        return EncoderParams(aggregation, HeadParams(mat(3, 2 * dim), np.zeros(3)))
    raise ValidationError(f"unknown aggregation {aggregation!r}")


def _check_inputs(e_t: np.ndarray, E_r: np.ndarray, dim: int) -> None:
    if E_r.ndim != 3 or e_t.ndim != 2 or E_r.shape[0] != e_t.shape[0]:
        raise ValidationError(f"bad batch shapes: enrollment {E_r.shape}, test {e_t.shape}")
    if E_r.shape[1] < 1:
        raise ValidationError("need at least one enrollment embedding")
    if E_r.shape[2] != dim or e_t.shape[1] != dim:
        raise ValidationError(f"embedding dimension mismatch: model expects {dim}, got {E_r.shape[2]}/{e_t.shape[1]}")


def _attention_forward(e_t, E_r, a: AttentionParams):
    B, K, D = E_r.shape
    H = a.n_heads
    dh = D // H
    if a.segment is not None:
        z = e_t + a.segment[1]
        X = np.concatenate([E_r + a.segment[0], z[:, None, :]], axis=1)
    else:
        z = e_t
        X = E_r
    T = X.shape[1]
    q = (z @ a.W_q.T).reshape(B, H, dh)
    k = (X @ a.W_k.T).reshape(B, T, H, dh)
    v = (X @ a.W_v.T).reshape(B, T, H, dh)
    scores = np.einsum("bhd,bthd->bht", q, k) / math.sqrt(dh)
    weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights /= weights.sum(axis=-1, keepdims=True)
    if DEBUG:
        assert np.all(weights >= 0) and np.allclose(weights.sum(axis=-1), 1.0)
    o = np.einsum("bht,bthd->bhd", weights, v).reshape(B, D)
    F = o @ a.W_o.T
    cache = {"z": z, "X": X, "q": q, "k": k, "v": v, "w": weights, "o": o}
    return F, cache


def aggregate_batch(e_t: np.ndarray, E_r: np.ndarray, params: EncoderParams):
    """Fused trial representations ``(B, D_in)`` plus a cache for the backward pass."""
    e_t = np.asarray(e_t, dtype=np.float64)
    E_r = np.asarray(E_r, dtype=np.float64)
    _check_inputs(e_t, E_r, params.dim)
    if params.aggregation == CROSS_ATTENTION:
        return _attention_forward(e_t, E_r, params.attention)
    return np.concatenate([E_r.mean(axis=1), e_t], axis=1), {}


def forward_batch(e_t: np.ndarray, E_r: np.ndarray, params: EncoderParams, return_cache: bool = False):
    """Logits ``(B, 3)`` for a batch of tests ``(B, D)`` and enrollments ``(B, K, D)``."""
    F, cache = aggregate_batch(e_t, E_r, params)
    logits = F @ params.head.W.T + params.head.b
    if return_cache:
        cache["F"] = F
        cache["K"] = np.shape(E_r)[1]
        return logits, cache
    return logits


def backward_batch(params: EncoderParams, cache: dict, g_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(logits), summed over the batch."""
    F = cache["F"]
    grads = {"head.W": g_logits.T @ F, "head.b": g_logits.sum(axis=0)}
    if params.aggregation != CROSS_ATTENTION:
        return grads
    a = params.attention
    q, k, v, w, o, X, z = (cache[n] for n in ("q", "k", "v", "w", "o", "X", "z"))
    B, T, H, dh = k.shape
    D = H * dh
    scale = 1.0 / math.sqrt(dh)
    dF = g_logits @ params.head.W
    grads["attn.W_o"] = dF.T @ o
    do = (dF @ a.W_o).reshape(B, H, dh)
    dw = np.einsum("bhd,bthd->bht", do, v)
    dv = np.einsum("bht,bhd->bthd", w, do)
    ds = w * (dw - (w * dw).sum(axis=-1, keepdims=True))
    dq = (np.einsum("bht,bthd->bhd", ds, k) * scale).reshape(B, D)
    dk = (np.einsum("bht,bhd->bthd", ds, q) * scale).reshape(B, T, D)
    dv = dv.reshape(B, T, D)
    grads["attn.W_q"] = dq.T @ z
    grads["attn.W_k"] = np.einsum("btd,bte->de", dk, X)
    grads["attn.W_v"] = np.einsum("btd,bte->de", dv, X)
    if a.segment is not None:
        K = cache["K"]
        dX = dk @ a.W_k + dv @ a.W_v
        dz = dq @ a.W_q
        grads["attn.segment"] = np.stack([dX[:, :K].sum(axis=(0, 1)), dX[:, K].sum(axis=0) + dz.sum(axis=0)])
    return {name: grads[name] for name in params.tensors()}


def cross_attend(e_t, E_r, params: AttentionParams, return_weights: bool = False):
    """Fused D-vector for one test embedding attending over its enrollment rows."""
    e_t = np.asarray(e_t, dtype=np.float64)
    E_r = np.atleast_2d(np.asarray(E_r, dtype=np.float64))
    _check_inputs(e_t[None, :], E_r[None], params.dim)
    F, cache = _attention_forward(e_t[None, :], E_r[None], params)
    if return_weights:
        return F[0], cache["w"][0]
    return F[0]


def aggregate_concat(e_t, E_r) -> np.ndarray:
    e_t = np.asarray(e_t, dtype=np.float64)
    E_r = np.atleast_2d(np.asarray(E_r, dtype=np.float64))
    if E_r.shape[0] < 1:
        raise ValidationError("need at least one enrollment embedding")
    if E_r.shape[1] != e_t.shape[0]:
        raise ValidationError(f"embedding dimension mismatch: {E_r.shape[1]} vs {e_t.shape[0]}")
    return np.concatenate([E_r.mean(axis=0), e_t])


def trial_embeddings(
    trials: Sequence[Trial], utts: Mapping[str, UtteranceRecord], store: EmbeddingStore
) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``(test (B, D), enrollment (B, K, D))`` for trials sharing one K."""
    ks = {len(t.enroll_ids) for t in trials}
    if len(ks) != 1:
        raise ValidationError(f"trials in one batch must share the enrollment count, got {sorted(ks)}")

    def ref(u: str) -> int:
        try:
            return utts[u].embedding_ref
        except KeyError:
            raise ValidationError(f"utterance {u!r} not found in manifest") from None

    test_refs = np.array([ref(t.test_id) for t in trials], dtype=np.int64)
    enroll_refs = np.array([[ref(u) for u in t.enroll_ids] for t in trials], dtype=np.int64)
    n = len(store)
    if test_refs.size and (max(test_refs.max(), enroll_refs.max()) >= n or min(test_refs.min(), enroll_refs.min()) < 0):
        for t in trials:
            for u in (*t.enroll_ids, t.test_id):
                store.get(utts[u].embedding_ref, u)
    return store.rows[test_refs], store.rows[enroll_refs]


def group_by_k(trials: Sequence[Trial]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, t in enumerate(trials):
        groups.setdefault(len(t.enroll_ids), []).append(i)
    return groups


def forward(trial: Trial, store: EmbeddingStore, params: EncoderParams, utts: Mapping[str, UtteranceRecord]) -> ClassLogits:
    e_t, E_r = trial_embeddings([trial], utts, store)
    return ClassLogits(*forward_batch(e_t, E_r, params)[0])


def score_logits(
    trials: Sequence[Trial], store: EmbeddingStore, params: EncoderParams,
    utts: Mapping[str, UtteranceRecord], chunk: int = 4096,
) -> np.ndarray:
    """Logit matrix ``(n_trials, 3)`` in trial order."""
    out = np.empty((len(trials), 3))
    for idx in group_by_k(trials).values():
        for start in range(0, len(idx), chunk):
            sel = idx[start:start + chunk]
            e_t, E_r = trial_embeddings([trials[i] for i in sel], utts, store)
            out[sel] = forward_batch(e_t, E_r, params)
    return out


def posteriors(logits) -> np.ndarray:
    return softmax(logits)


def params_to_json(params: EncoderParams) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "aggregation": params.aggregation,
        "dim": params.dim,
        "n_heads": params.attention.n_heads if params.attention is not None else None,
        "self_token": bool(params.attention is not None and params.attention.self_token),
        "tensors": {
            name: {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}
            for name, arr in params.tensors().items()
        },
    }
    return doc


def params_from_json(doc: Mapping) -> EncoderParams:
    if doc.get("format") != MODEL_FORMAT:
        raise ValidationError(f"unsupported model format {doc.get('format')!r}")
    try:
        t = {
            name: np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
            for name, spec in doc["tensors"].items()
        }
        head = HeadParams(t["head.W"], t["head.b"])
        if doc["aggregation"] == CROSS_ATTENTION:
            attention = AttentionParams(
                t["attn.W_q"], t["attn.W_k"], t["attn.W_v"], t["attn.W_o"], int(doc["n_heads"]), t.get("attn.segment")
            )
            return EncoderParams(CROSS_ATTENTION, head, attention)
        return EncoderParams(doc["aggregation"], head)
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed model document: {exc}") from exc
