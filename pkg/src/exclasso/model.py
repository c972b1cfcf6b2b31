"""Problem definition for weighted exclusive-lasso regression.

The model is

    min_x  h(Ax) - <c, x> + lam * sum_j ||w_{g_j} o x_{g_j}||_1^2

with ``h`` either the least-squares loss or the logistic loss.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray


class LossKind(str, enum.Enum):
    """Supported smooth losses ``h``."""

    LEAST_SQUARES = "ls"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, value: "LossKind | str") -> "LossKind":
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {
            "ls": cls.LEAST_SQUARES,
            "least_squares": cls.LEAST_SQUARES,
            "leastsquares": cls.LEAST_SQUARES,
            "logistic": cls.LOGISTIC,
            "logit": cls.LOGISTIC,
        }
        if key not in aliases:
            raise ValueError(f"unknown loss kind {value!r}")
        return aliases[key]


class GroupPartition:
    """Disjoint index groups covering ``{0, ..., n-1}``.

    The groups are kept both as a list of index arrays and in permutation
    form: ``perm`` lists the indices group after group, and
    ``offsets[j]:offsets[j+1]`` slices group ``j`` out of ``x[perm]``.

    Parameters
    ----------
    groups : sequence of sequences of int
        Zero-based feature indices of each group.
    n_features : int, optional
        Expected total size. Inferred from the groups when omitted.
    """

    def __init__(self, groups: Sequence[Sequence[int]], n_features: int | None = None):
        arrays = [np.asarray(g, dtype=np.intp).ravel() for g in groups]
        if not arrays:
            raise ValueError("a partition needs at least one group")
        for j, g in enumerate(arrays):
            if g.size == 0:
                raise ValueError(f"group {j} is empty")
        perm = np.concatenate(arrays)
        n = int(perm.size) if n_features is None else int(n_features)
        if perm.min() < 0 or perm.max() >= n:
            bad = perm[(perm < 0) | (perm >= n)][0]
            raise ValueError(f"index {int(bad)} is outside 0..{n - 1}")
        counts = np.bincount(perm, minlength=n)
        if np.any(counts > 1):
            dup = int(np.flatnonzero(counts > 1)[0])
            raise ValueError(f"index {dup} appears in more than one group")
        if np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"index {missing} is not covered by any group")

        self.groups = tuple(arrays)
        self.perm = perm
        self.perm.setflags(write=False)
        sizes = np.array([g.size for g in arrays], dtype=np.intp)
        self.offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.intp)
        self.offsets.setflags(write=False)
        # group id of every position in permuted order
        self.group_ids = np.repeat(np.arange(len(arrays)), sizes)
        self.group_ids.setflags(write=False)
        self.n_features = n

    @classmethod
    def contiguous(cls, n_groups: int, group_size: int) -> "GroupPartition":
        """``n_groups`` consecutive blocks of ``group_size`` features."""
        idx = np.arange(n_groups * group_size)
        return cls(np.split(idx, n_groups))

    @classmethod
    def from_labels(cls, labels: ArrayLike) -> "GroupPartition":
        """Build a partition from one group label per feature.

        Groups are ordered by label value (``np.unique`` order).
        """
        labels = np.asarray(labels).ravel()
        _, inverse = np.unique(labels, return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        sizes = np.bincount(inverse)
        return cls(np.split(order, np.cumsum(sizes)[:-1]), n_features=labels.size)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> NDArray[np.intp]:
        return np.diff(self.offsets)

    def blocks(self, v_perm: NDArray) -> list[NDArray]:
        """Split a vector already in permuted order into its group blocks."""
        return np.split(v_perm, self.offsets[1:-1])

    def __len__(self) -> int:
        return self.n_groups

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupPartition):
            return NotImplemented
        return (
            self.n_features == other.n_features
            and len(self.groups) == len(other.groups)
            and all(np.array_equal(a, b) for a, b in zip(self.groups, other.groups))
        )

    def __repr__(self) -> str:
        return f"GroupPartition(n_features={self.n_features}, n_groups={self.n_groups})"


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One exclusive-lasso problem ``min h(Ax) - <c,x> + lam * p(x)``."""

    A: NDArray[np.float64]
    b: NDArray[np.float64]
    lam: float
    partition: GroupPartition
    loss: LossKind = LossKind.LEAST_SQUARES
    c: NDArray[np.float64] | None = None
    weights: NDArray[np.float64] | None = None

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64, order="F")
        if A.ndim != 2:
            raise ValueError("A must be a 2-d array")
        m, n = A.shape
        b = np.array(self.b, dtype=np.float64).ravel()
        if b.size != m:
            raise ValueError(f"b has length {b.size}, expected {m}")
        c = np.zeros(n) if self.c is None else np.array(self.c, dtype=np.float64).ravel()
        if c.size != n:
            raise ValueError(f"c has length {c.size}, expected {n}")
        w = np.ones(n) if self.weights is None else np.array(self.weights, dtype=np.float64).ravel()
        if w.size != n:
            raise ValueError(f"weights have length {w.size}, expected {n}")
        if not np.all(w > 0):
            raise ValueError("all weights must be strictly positive")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be a positive finite number")
        if self.partition.n_features != n:
            raise ValueError(
                f"partition covers {self.partition.n_features} features, A has {n} columns"
            )
        loss = LossKind.parse(self.loss)
        if loss is LossKind.LOGISTIC and not np.all(np.isin(b, (-1.0, 1.0))):
            raise ValueError("logistic loss requires labels in {-1, +1}")
        for arr in (A, b, c, w):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "loss", loss)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def with_lambda(self, lam: float) -> "ProblemInstance":
        return ProblemInstance(
            self.A, self.b, lam, self.partition, self.loss, self.c, self.weights
        )


@dataclass
class SolveReport:
    """Outcome of one solver run."""

    x: NDArray[np.float64]
    u: NDArray[np.float64] | None
    solver: str
    converged: bool
    eta_kkt: float
    objective: float
    outer_iters: int = 0
    inner_iters: int = 0
    cg_iters: int = 0
    history: list[tuple[int, float, float]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    nnz_per_group: list[int] = field(default_factory=list)
    message: str = ""

    @property
    def iterations_label(self) -> str:
        """Iteration count as ``outer(inner)``, or just the count for one-level solvers."""
        if self.inner_iters:
            return f"{self.outer_iters}({self.inner_iters})"
        return str(self.outer_iters)


def _check_vector(x: ArrayLike, n: int, name: str = "x") -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != n:
        raise ValueError(f"{name} has length {x.size}, expected {n}")
    return x


def regularizer_value(x: ArrayLike, w: ArrayLike, partition: GroupPartition) -> float:
    """Weighted exclusive-lasso penalty ``sum_j ||w_{g_j} o x_{g_j}||_1^2``."""
    n = partition.n_features
    x = _check_vector(x, n)
    w = _check_vector(w, n, "w")
    wx = np.abs(w * x)[partition.perm]
    sums = np.add.reduceat(wx, partition.offsets[:-1])
    return float(np.dot(sums, sums))


def group_nnz(x: ArrayLike, partition: GroupPartition) -> list[int]:
    """Number of nonzero coefficients in each group."""
    nz = (np.asarray(x) != 0)[partition.perm].astype(np.intp)
    return [int(v) for v in np.add.reduceat(nz, partition.offsets[:-1])]


def primal_objective(inst: ProblemInstance, x: ArrayLike) -> float:
    """``f(x) = h(Ax) - <c,x> + lam * p(x)``."""
    from .loss import loss_value

    x = _check_vector(x, inst.shape[1])
    val = (
        loss_value(inst.loss, inst.A @ x, inst.b)
        - float(inst.c @ x)
        + inst.lam * regularizer_value(x, inst.weights, inst.partition)
    )
    if not np.isfinite(val):
        raise FloatingPointError("objective is not finite")
    return val


def kkt_residual(inst: ProblemInstance, x: ArrayLike) -> float:
    """Relative KKT residual used as the common stopping metric.

    ``||x - Prox_{lam p}(x - A^T grad h(Ax) + c)|| / (1 + ||x|| + ||A^T grad h(Ax)||)``
    """
    from .loss import loss_value_grad
    from .prox import prox_exclusive

    x = _check_vector(x, inst.shape[1])
    grad = inst.A.T @ loss_value_grad(inst.loss, inst.A @ x, inst.b).gradient
    y, _ = prox_exclusive(
        x - grad + inst.c, inst.lam, inst.weights, inst.partition, certificates=False
    )
    return float(np.linalg.norm(x - y) / (1.0 + np.linalg.norm(x) + np.linalg.norm(grad)))
