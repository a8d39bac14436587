"""The four training loss terms and their weighted total.

The task term is cross-entropy over all candidate entities (the batch is
reciprocal-augmented, so head prediction is already expressed as tail
prediction).  Three auxiliary terms shape the representation geometry:
a central-moment discrepancy pulls the shared features of the three spaces
toward one distribution, a soft orthogonality term keeps shared and
specific features apart, and a structure term matches the triple angles
across spaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import KINDS, SPACES, Features, ForwardPass, IMEModel
from .tensor import Tensor

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "PAPER_LOSS_WEIGHTS",
    "cross_entropy",
    "task_loss",
    "cmd",
    "similarity_loss",
    "difference_loss",
    "structure_loss",
    "total_loss",
]

# Space pairs used by the pairwise loss terms, in a fixed order.
SPACE_PAIRS = (
    ("euclidean", "hyperbolic"),
    ("euclidean", "spherical"),
    ("hyperbolic", "spherical"),
)

DEGENERATE_NORM = 1e-12

# Tuned loss weights per benchmark dataset.
PAPER_LOSS_WEIGHTS = {
    "icews14": (0.4, 0.4, 0.1),
    "icews05-15": (0.9, 0.3, 0.1),
    "gdelt": (1.0, 0.3, 0.1),
}


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.4
    beta: float = 0.4
    gamma: float = 0.1

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError(f"loss weights must be non-negative: {self}")

    @classmethod
    def for_dataset(cls, name: str) -> "LossWeights":
        key = name.lower()
        if key not in PAPER_LOSS_WEIGHTS:
            raise KeyError(f"no tuned weights for dataset {name!r}; known: {sorted(PAPER_LOSS_WEIGHTS)}")
        return cls(*PAPER_LOSS_WEIGHTS[key])


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    sim: float
    diff: float
    stru: float
    total: float

    def csv_row(self) -> str:
        return f"{self.task!r},{self.sim!r},{self.diff!r},{self.stru!r},{self.total!r}"


# ---------------------------------------------------------------------------
# Task loss
# ---------------------------------------------------------------------------


def cross_entropy(scores: Tensor, targets) -> Tensor:
    """Mean of -log softmax(scores)[target] over the batch rows."""
    targets = np.asarray(targets, dtype=np.int64)
    if scores.data.ndim != 2:
        raise T.ShapeError(f"cross_entropy expects [batch, candidates] scores, got {scores.shape}")
    n_rows, n_cands = scores.shape
    if targets.shape != (n_rows,):
        raise T.ShapeError(f"targets shape {targets.shape} does not match {n_rows} score rows")
    if targets.size and (targets.min() < 0 or targets.max() >= n_cands):
        raise IndexError(f"target index out of range [0, {n_cands})")
    # Constant shift for a stable log-sum-exp; a constant does not change
    # the gradient.
    shift = Tensor(scores.data.max(axis=1, keepdims=True))
    lse = T.log(T.sum_(T.exp(scores - shift), axis=1)) + T.reshape(shift, (n_rows,))
    onehot = np.zeros((n_rows, n_cands))
    onehot[np.arange(n_rows), targets] = 1.0
    true = T.sum_(scores * Tensor(onehot), axis=1)
    return T.mean(lse - true)


def task_loss(model: IMEModel, s_idx, r_idx, t_idx, o_idx) -> Tensor:
    """Cross-entropy of a reciprocal-augmented batch against all entities."""
    fwd = model.forward(s_idx, r_idx, t_idx)
    return cross_entropy(fwd.scores, o_idx)


# ---------------------------------------------------------------------------
# Central moment discrepancy
# ---------------------------------------------------------------------------


def _l2(v: Tensor) -> Tensor:
    return T.sqrt(T.frobenius_sq(v))


def cmd(x: Tensor, y: Tensor, moment_order: int = 5, bounds: tuple[float, float] = (0.0, 1.0)) -> Tensor:
    """Distance between two batches of feature rows: normalized difference of
    means plus differences of central moments up to `moment_order`."""
    if x.data.ndim != 2 or y.data.ndim != 2 or x.shape[1] != y.shape[1]:
        raise T.ShapeError(f"cmd expects [batch, dim] inputs with equal dim, got {x.shape} and {y.shape}")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("cmd of an empty batch")
    if moment_order < 1:
        raise ValueError(f"moment order must be >= 1, got {moment_order}")
    a, b = bounds
    if not b > a:
        raise ValueError(f"invalid bounds: need b > a, got ({a}, {b})")
    span = abs(b - a)
    mean_x = T.mean(x, axis=0)
    mean_y = T.mean(y, axis=0)
    out = _l2(mean_x - mean_y) * (1.0 / span)
    for k in range(2, moment_order + 1):
        ck_x = T.mean(T.powi(x - mean_x, k), axis=0)
        ck_y = T.mean(T.powi(y - mean_y, k), axis=0)
        out = out + _l2(ck_x - ck_y) * (1.0 / span**k)
    return out


def _features_by_space(features: Features) -> dict[str, Tensor]:
    """Stack the element kinds of each space along the batch axis."""
    return {space: T.concat([features[kind, space] for kind in KINDS], axis=0) for space in SPACES}


def similarity_loss(by_space: dict[str, Tensor], moment_order: int = 5) -> Tensor:
    """Mean CMD over the three space pairs.

    Features are squashed through a sigmoid first so the boundedness
    assumption behind the moment normalization holds.
    """
    squashed = {space: T.sigmoid(by_space[space]) for space in SPACES}
    out = None
    for a, b in SPACE_PAIRS:
        term = cmd(squashed[a], squashed[b], moment_order=moment_order)
        out = term if out is None else out + term
    return out * (1.0 / len(SPACE_PAIRS))


# ---------------------------------------------------------------------------
# Difference loss
# ---------------------------------------------------------------------------


def difference_loss(shared: Features, specific: Features) -> Tensor:
    """Soft orthogonality: squared Frobenius norms of the Gram products
    between specific and shared features (per space) and between the
    specific features of each space pair, summed over element kinds."""
    out = None
    for kind in KINDS:
        for space in SPACES:
            gram = T.matmul(T.transpose(specific[kind, space]), shared[kind, space])
            term = T.frobenius_sq(gram)
            out = term if out is None else out + term
        for a, b in SPACE_PAIRS:
            gram = T.matmul(T.transpose(specific[kind, a]), specific[kind, b])
            out = out + T.frobenius_sq(gram)
    return out


# ---------------------------------------------------------------------------
# Structure loss
# ---------------------------------------------------------------------------


def _triple_cosines(checked: Features, space: str) -> tuple[np.ndarray, Tensor | None, np.ndarray]:
    """Cosine at the relation vertex for every batch row of one space.

    Returns (valid row indices, cosines over those rows, validity mask).
    Rows where either difference vector is numerically zero are excluded.
    """
    d1 = checked["s", space] - checked["r", space]
    d2 = checked["t", space] - checked["r", space]
    n1 = np.sqrt(np.sum(d1.data * d1.data, axis=1))
    n2 = np.sqrt(np.sum(d2.data * d2.data, axis=1))
    valid = (n1 > DEGENERATE_NORM) & (n2 > DEGENERATE_NORM)
    if not valid.any():
        raise ValueError(f"structure loss: all vertices coincide in the {space} space")
    rows = np.nonzero(valid)[0]
    e1 = T.l2_normalize(T.take_rows(d1, rows), axis=1)
    e2 = T.l2_normalize(T.take_rows(d2, rows), axis=1)
    return rows, T.sum_(e1 * e2, axis=1), valid


def structure_loss(checked: Features) -> Tensor:
    """Mean absolute difference of the per-row triple cosines across the
    three space pairs; degenerate rows contribute zero."""
    batch = checked["s", SPACES[0]].shape[0]
    cosines = {space: _triple_cosines(checked, space) for space in SPACES}
    out = None
    for a, b in SPACE_PAIRS:
        rows_a, cos_a, valid_a = cosines[a]
        rows_b, cos_b, valid_b = cosines[b]
        both = valid_a & valid_b
        if not both.any():
            term = Tensor(0.0)
        else:
            # Positions of the jointly valid rows inside each space's
            # compacted cosine vector.
            pos_a = np.searchsorted(rows_a, np.nonzero(both)[0])
            pos_b = np.searchsorted(rows_b, np.nonzero(both)[0])
            gathered_a = T.take_rows(T.reshape(cos_a, (rows_a.size, 1)), pos_a)
            gathered_b = T.take_rows(T.reshape(cos_b, (rows_b.size, 1)), pos_b)
            term = T.sum_(T.absolute(gathered_a - gathered_b)) * (1.0 / batch)
        out = term if out is None else out + term
    return out * (1.0 / len(SPACE_PAIRS))


# ---------------------------------------------------------------------------
# Total
# ---------------------------------------------------------------------------


def total_loss(
    model: IMEModel,
    s_idx,
    r_idx,
    t_idx,
    o_idx,
    weights: LossWeights,
    similarity_features: str = "shared",
    moment_order: int = 5,
    forward: ForwardPass | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """One forward pass feeding all four loss terms.

    `similarity_features` selects which encodings the CMD term compares
    ("shared" follows the stated intent; "specific" is the printed variant).
    """
    if similarity_features not in ("shared", "specific"):
        raise ValueError(f"similarity_features must be 'shared' or 'specific', got {similarity_features!r}")
    fwd = forward if forward is not None else model.forward(s_idx, r_idx, t_idx)
    task = cross_entropy(fwd.scores, o_idx)
    sim_input = fwd.shared if similarity_features == "shared" else fwd.specific
    sim = similarity_loss(_features_by_space(sim_input), moment_order=moment_order)
    diff = difference_loss(fwd.shared, fwd.specific)
    stru = structure_loss(fwd.checked)
    total = task + weights.alpha * sim + weights.beta * diff + weights.gamma * stru
    breakdown = LossBreakdown(task.item(), sim.item(), diff.item(), stru.item(), total.item())
    return total, breakdown
