"""Multi-curvature TKG embedding model.

One forward pass takes a batch of (subject, relation, timestamp) index
triples and produces scores against every candidate entity:

  1. per curvature space, a zero-initialized distributor vector gathers
     gated information from the subject/relation/timestamp embeddings and
     redistributes it back (three refreshed vectors per space);
  2. a shared gate (one weight matrix for all spaces) and per-space gates
     encode commonalities and space-specific characteristics — 18 vectors;
  3. the 18 vectors are pooled per dimension (average, max, or adjustable
     weights generated from positional encodings by a Bi-GRU and a linear
     head) into one joint vector;
  4. the score of a candidate is the inner product of the joint vector with
     the candidate's raw Euclidean embedding row.

Spaces are realized as three independent tables constrained by projection
after each optimizer step: unit sphere, open unit ball, and unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import GRUCellParams, Parameter, Tensor

__all__ = [
    "SPACES",
    "KINDS",
    "N_POOLED",
    "POOL_MODES",
    "BALL_MAX_NORM",
    "ModelDims",
    "SpaceBank",
    "AMPParams",
    "IMEModel",
    "distribute",
    "shared_gates",
    "encode_shared",
    "encode_specific",
    "positional_encoding",
    "pooling_weights",
    "pool",
    "pooled_feature_order",
]

SPACES = ("spherical", "hyperbolic", "euclidean")
KINDS = ("s", "r", "t")
N_POOLED = 18
POOL_MODES = ("ap", "mp", "amp")

# Hyperbolic rows stay strictly inside the unit ball.
BALL_MAX_NORM = 1.0 - 1e-5


@dataclass(frozen=True)
class ModelDims:
    dim: int
    n_entities: int
    n_relations: int  # after reciprocal augmentation, i.e. 2|R|
    n_timestamps: int
    pos_dim: int = 32
    gru_hidden: int = 16

    def __post_init__(self):
        if self.pos_dim % 2 != 0:
            raise ValueError(f"positional encoding dimension must be even, got {self.pos_dim}")


# ---------------------------------------------------------------------------
# Quadruplet distributor
# ---------------------------------------------------------------------------


def _gated(x: Tensor) -> Tensor:
    return x * T.sigmoid(x)


def distribute(s: Tensor, r: Tensor, t: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Aggregate s, r, t into a zero-initialized distributor and redistribute.

    Aggregation: q_hat = sum of (x - q) * sigmoid(x - q) over x in {s, r, t}
    with q = 0.  Redistribution: x_out = x + (x - q_hat) * sigmoid(x - q_hat).
    """
    q_hat = _gated(s) + _gated(r) + _gated(t)
    return (
        s + _gated(s - q_hat),
        r + _gated(r - q_hat),
        t + _gated(t - q_hat),
    )


# ---------------------------------------------------------------------------
# Space-shared / space-specific encoders
# ---------------------------------------------------------------------------

Features = dict[tuple[str, str], Tensor]  # keyed by (kind, space)


def _space_concat(checked: Features, kind: str) -> Tensor:
    return T.concat([checked[kind, space] for space in SPACES], axis=1)


def shared_gates(checked: Features, w_shared: Tensor) -> dict[str, Tensor]:
    """One gate per element kind, shared by all three spaces."""
    return {kind: T.sigmoid(T.matmul(_space_concat(checked, kind), w_shared)) for kind in KINDS}


def encode_shared(checked: Features, w_shared: Tensor) -> Features:
    """Gate each space's features with the kind's shared gate (9 outputs)."""
    gates = shared_gates(checked, w_shared)
    return {(kind, space): checked[kind, space] * gates[kind] for kind in KINDS for space in SPACES}


def encode_specific(checked: Features, w_by_space: dict[str, Tensor]) -> Features:
    """Gate each space's features with that space's own weight matrix."""
    out: Features = {}
    for kind in KINDS:
        cat = _space_concat(checked, kind)
        for space in SPACES:
            out[kind, space] = checked[kind, space] * T.sigmoid(T.matmul(cat, w_by_space[space]))
    return out


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def positional_encoding(n: int, pos_dim: int) -> np.ndarray:
    """Interleaved sin/cos encoding; row i, even columns sin(i / 10000^(2k/d)),
    odd columns the matching cos.  Deterministic, never trained."""
    if pos_dim % 2 != 0:
        raise ValueError(f"pos_dim must be even, got {pos_dim}")
    out = np.empty((n, pos_dim), dtype=np.float64)
    k = np.arange(pos_dim // 2, dtype=np.float64)
    inv_freq = 1.0 / np.power(10000.0, 2.0 * k / pos_dim)
    pos = np.arange(n, dtype=np.float64)[:, None]
    out[:, 0::2] = np.sin(pos * inv_freq[None, :])
    out[:, 1::2] = np.cos(pos * inv_freq[None, :])
    return out


class AMPParams:
    """Learned pooling-weight generator: Bi-GRU over positional encodings,
    a linear head to one logit per position, softmax normalization."""

    def __init__(self, n: int, pos_dim: int, gru_hidden: int, rng: np.random.Generator):
        self.n = n
        self.pos_dim = pos_dim
        self.gru_hidden = gru_hidden
        self.positions = Tensor(positional_encoding(n, pos_dim))
        self.gru_fwd = GRUCellParams(pos_dim, gru_hidden, "amp.fwd", rng)
        self.gru_bwd = GRUCellParams(pos_dim, gru_hidden, "amp.bwd", rng)
        bound = 1.0 / np.sqrt(2 * gru_hidden)
        self.head_w = Parameter(rng.uniform(-bound, bound, size=(2 * gru_hidden, 1)), "amp.head_w")
        self.head_b = Parameter(np.zeros((1, 1)), "amp.head_b")

    def parameters(self) -> list[Parameter]:
        return self.gru_fwd.parameters() + self.gru_bwd.parameters() + [self.head_w, self.head_b]


def pooling_weights(amp: AMPParams) -> Tensor:
    """Softmax-normalized weights over the n sorted positions (shape [n]).

    They depend only on the constant positional encodings, so they are
    input-independent within a checkpoint.
    """
    rows = [T.reshape(T.take_rows(amp.positions, [i]), (1, amp.pos_dim)) for i in range(amp.n)]
    h = Tensor(np.zeros((1, amp.gru_hidden)))
    fwd = []
    for row in rows:
        h = T.gru_cell(row, h, amp.gru_fwd)
        fwd.append(h)
    h = Tensor(np.zeros((1, amp.gru_hidden)))
    bwd = [None] * amp.n
    for i in range(amp.n - 1, -1, -1):
        h = T.gru_cell(rows[i], h, amp.gru_bwd)
        bwd[i] = h
    logits = [
        T.matmul(T.concat([fwd[i], bwd[i]], axis=1), amp.head_w) + amp.head_b
        for i in range(amp.n)
    ]
    return T.softmax(T.reshape(T.concat(logits, axis=0), (amp.n,)))


def pool(vectors: Sequence[Tensor], mode: str, weights: Tensor | None = None) -> Tensor:
    """Sort the n input vectors per dimension (descending) and combine.

    "ap" averages the sorted rows, "mp" keeps the top row, "amp" applies the
    given weights.  All inputs must share one shape; the output matches it.
    """
    vectors = list(vectors)
    if not vectors:
        raise ValueError("pool of an empty feature list")
    if mode not in POOL_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}; choose from {POOL_MODES}")
    shape = vectors[0].shape
    for v in vectors:
        if v.shape != shape:
            raise T.ShapeError(f"pool inputs disagree in shape: {shape} vs {v.shape}")
    n = len(vectors)
    numel = vectors[0].size
    stacked = T.concat([T.reshape(v, (1, numel)) for v in vectors], axis=0)
    ranked = T.sort_desc_per_dimension(stacked)
    if mode == "ap":
        return T.reshape(T.mean(ranked, axis=0), shape)
    if mode == "mp":
        return T.reshape(T.take_rows(ranked, [0]), shape)
    if weights is None:
        raise ValueError("amp pooling requires weights")
    if weights.shape != (n,):
        raise T.ShapeError(f"amp weights must have shape ({n},), got {weights.shape}")
    return T.reshape(T.matmul(T.reshape(weights, (1, n)), ranked), shape)


def pooled_feature_order() -> list[tuple[str, str, str]]:
    """Canonical order of the 18 pooled vectors: for each element kind,
    shared then specific, each over the three spaces."""
    return [
        (kind, enc, space)
        for kind in KINDS
        for enc in ("shared", "specific")
        for space in SPACES
    ]


# ---------------------------------------------------------------------------
# Parameter banks and the full model
# ---------------------------------------------------------------------------


class SpaceBank:
    """Entity, relation and timestamp tables for each curvature space."""

    def __init__(self, dims: ModelDims, rng: np.random.Generator, init_std: float = 1e-2):
        rows = {"entity": dims.n_entities, "relation": dims.n_relations, "timestamp": dims.n_timestamps}
        self.tables: dict[tuple[str, str], Parameter] = {}
        for element, n_rows in rows.items():
            for space in SPACES:
                init = rng.normal(0.0, init_std, size=(n_rows, dims.dim))
                self.tables[element, space] = Parameter(init, f"{element}.{space}")
        self.project()

    def parameters(self) -> list[Parameter]:
        return [self.tables[element, space] for element in ("entity", "relation", "timestamp") for space in SPACES]

    def table(self, element: str, space: str) -> Parameter:
        return self.tables[element, space]

    def project(self) -> None:
        """Restore the per-space constraints in place (run after every step)."""
        for (element, space), param in self.tables.items():
            if space == "euclidean":
                continue
            norms = np.sqrt(np.sum(param.data * param.data, axis=1, keepdims=True))
            if space == "spherical":
                if np.any(norms == 0.0):
                    raise ValueError(f"zero-norm row in {element}.{space}; cannot project to the sphere")
                param.data /= norms
            else:
                over = norms > BALL_MAX_NORM
                if np.any(over):
                    scale = np.where(over, BALL_MAX_NORM / norms, 1.0)
                    param.data *= scale

    def constraint_violation(self) -> float:
        """Worst-case distance from the space constraints (0 when satisfied)."""
        worst = 0.0
        for (element, space), param in self.tables.items():
            norms = np.sqrt(np.sum(param.data * param.data, axis=1))
            if space == "spherical":
                worst = max(worst, float(np.max(np.abs(norms - 1.0))))
            elif space == "hyperbolic":
                worst = max(worst, float(np.max(norms - BALL_MAX_NORM, initial=0.0)))
        return worst


@dataclass
class ForwardPass:
    """Intermediate features of one batch, kept for the loss terms."""

    checked: Features
    shared: Features
    specific: Features
    weights: Tensor  # pooling weights, shape [N_POOLED]
    pooled: Tensor  # [B, dim]
    scores: Tensor  # [B, n_entities]


class IMEModel:
    """Embedding tables, encoder weights and the pooling generator."""

    def __init__(self, dims: ModelDims, seed: int = 0):
        self.dims = dims
        rng = np.random.default_rng(seed)
        self.bank = SpaceBank(dims, rng)
        bound = 1.0 / np.sqrt(3 * dims.dim)
        self.w_shared = Parameter(
            rng.uniform(-bound, bound, size=(3 * dims.dim, dims.dim)), "encoder.shared"
        )
        self.w_specific = {
            space: Parameter(
                rng.uniform(-bound, bound, size=(3 * dims.dim, dims.dim)), f"encoder.{space}"
            )
            for space in SPACES
        }
        self.amp = AMPParams(N_POOLED, dims.pos_dim, dims.gru_hidden, rng)

    def parameters(self) -> list[Parameter]:
        return (
            self.bank.parameters()
            + [self.w_shared]
            + [self.w_specific[space] for space in SPACES]
            + self.amp.parameters()
        )

    def param_dict(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- forward pieces -----------------------------------------------------

    def _checked_features(self, s_idx, r_idx, t_idx) -> Features:
        idx = {"s": ("entity", s_idx), "r": ("relation", r_idx), "t": ("timestamp", t_idx)}
        checked: Features = {}
        for space in SPACES:
            raw = {
                kind: T.take_rows(self.bank.table(element, space), indices)
                for kind, (element, indices) in idx.items()
            }
            checked["s", space], checked["r", space], checked["t", space] = distribute(
                raw["s"], raw["r"], raw["t"]
            )
        return checked

    def _validate_indices(self, s_idx, r_idx, t_idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s_idx = np.atleast_1d(np.asarray(s_idx, dtype=np.int64))
        r_idx = np.atleast_1d(np.asarray(r_idx, dtype=np.int64))
        t_idx = np.atleast_1d(np.asarray(t_idx, dtype=np.int64))
        for name, arr, bound in (
            ("subject", s_idx, self.dims.n_entities),
            ("relation", r_idx, self.dims.n_relations),
            ("timestamp", t_idx, self.dims.n_timestamps),
        ):
            if arr.size and (arr.min() < 0 or arr.max() >= bound):
                raise IndexError(f"{name} index out of range [0, {bound})")
        return s_idx, r_idx, t_idx

    def pooled_features(self, shared: Features, specific: Features) -> list[Tensor]:
        by_enc = {"shared": shared, "specific": specific}
        return [by_enc[enc][kind, space] for kind, enc, space in pooled_feature_order()]

    def encode(self, s_idx, r_idx, t_idx) -> tuple[Features, Features, Features]:
        """Distribute and encode a batch: (checked, shared, specific) features."""
        s_idx, r_idx, t_idx = self._validate_indices(s_idx, r_idx, t_idx)
        checked = self._checked_features(s_idx, r_idx, t_idx)
        shared = encode_shared(checked, self.w_shared)
        specific = encode_specific(checked, self.w_specific)
        return checked, shared, specific

    def forward(self, s_idx, r_idx, t_idx) -> ForwardPass:
        """Score a batch of queries against all entities."""
        checked, shared, specific = self.encode(s_idx, r_idx, t_idx)
        weights = pooling_weights(self.amp)
        pooled = pool(self.pooled_features(shared, specific), "amp", weights)
        scores = T.matmul(pooled, T.transpose(self.bank.table("entity", "euclidean")))
        return ForwardPass(checked, shared, specific, weights, pooled, scores)

    def score_all(self, s: int, r: int, t: int) -> Tensor:
        """Scores of every candidate entity for one query, shape [n_entities]."""
        fwd = self.forward([s], [r], [t])
        return T.reshape(fwd.scores, (self.dims.n_entities,))

    def score(self, s: int, r: int, t: int, o: int) -> Tensor:
        """Inner product of the pooled query vector with one candidate row."""
        if not 0 <= o < self.dims.n_entities:
            raise IndexError(f"candidate index out of range [0, {self.dims.n_entities})")
        fwd = self.forward([s], [r], [t])
        answer = T.take_rows(self.bank.table("entity", "euclidean"), [o])
        return T.sum_(fwd.pooled * answer)

    def min_sorted_gap(self, s_idx, r_idx, t_idx) -> float:
        """Smallest adjacent gap in the sorted pooled features of a batch.

        Used to validate finite-difference probe points: a gap comparable to
        the probe step would let the perturbation cross a sort boundary.
        """
        with T.no_grad():
            fwd = self.forward(s_idx, r_idx, t_idx)
            vectors = self.pooled_features(fwd.shared, fwd.specific)
            stacked = np.stack([v.data.ravel() for v in vectors], axis=0)
        ranked = -np.sort(-stacked, axis=0)
        gaps = ranked[:-1] - ranked[1:]
        return float(gaps.min()) if gaps.size else np.inf
