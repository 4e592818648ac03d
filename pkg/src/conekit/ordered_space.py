"""Finite ordered state space: the nonnegative orthant of l1 over (size, cell).

A state is a K x L array of particle-number densities, K sizes and L spatial
cells.  The order is componentwise, the norm is the plain sum of entries (which
is additive on the cone), and moments are taken against diagonal weights that
act on the size index only.

Cone membership is exact: operations defined on the cone reject negative or
non-finite entries instead of clamping them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, ConeViolation, DomainError, ShapeMismatch

__all__ = [
    "StateVec",
    "DiagonalOperator",
    "cone_norm",
    "leq",
    "moment",
    "apply_diag",
    "scale",
    "semigroup_apply",
    "trapezoid_sum",
]


def _check_cone(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ConeViolation("state has non-finite entries")
    if np.any(arr < 0):
        idx = np.unravel_index(int(np.argmin(arr)), arr.shape)
        raise ConeViolation(f"state leaves the cone at index {idx}: {arr[idx]!r}")


@dataclass(frozen=True, eq=False)
class StateVec:
    """Immutable element of the positive cone.

    ``entries`` may be given as a length-K sequence (one cell) or a K x L array.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch(f"state must be K x L with K, L >= 1, got shape {arr.shape}")
        _check_cone(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "entries", arr)

    @classmethod
    def zeros(cls, sizes: int, cells: int = 1) -> "StateVec":
        return cls(np.zeros((sizes, cells)))

    @classmethod
    def monodisperse(cls, sizes: int, n0: float = 1.0, cells: int = 1) -> "StateVec":
        arr = np.zeros((sizes, cells))
        arr[0, :] = n0
        return cls(arr)

    @property
    def sizes(self) -> int:
        return self.entries.shape[0]

    @property
    def cells(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __add__(self, other: "StateVec") -> "StateVec":
        _same_shape(self, other)
        return StateVec(self.entries + other.entries)

    def __repr__(self) -> str:
        return f"StateVec(sizes={self.sizes}, cells={self.cells}, norm={cone_norm(self)!r})"


def _same_shape(g: StateVec, h: StateVec) -> None:
    if g.shape != h.shape:
        raise ShapeMismatch(f"incomparable states: {g.shape} vs {h.shape}")


@dataclass(frozen=True, eq=False)
class DiagonalOperator:
    """Positive diagonal operator on the size index, weights >= lambda0 > 0.

    ``strict=False`` skips validation; it exists so that the assumption
    auditor can be handed deliberately broken operators.
    """

    weights: np.ndarray
    lambda0: float | None = None
    strict: bool = field(default=True, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        lam0 = float(np.min(w)) if self.lambda0 is None else float(self.lambda0)
        object.__setattr__(self, "lambda0", lam0)
        if not self.strict:
            return
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise AssumptionViolation("diagonal weights must be finite and non-empty")
        if not lam0 > 0:
            raise AssumptionViolation(f"lambda0 must be > 0, got {lam0!r}")
        if np.any(w < lam0):
            k = int(np.argmin(w))
            raise AssumptionViolation(f"weight {w[k]!r} at index {k} is below lambda0={lam0!r}")

    @classmethod
    def affine(cls, sizes: int, lambda0: float = 1.0) -> "DiagonalOperator":
        """Weights lambda_k = lambda0 + k for sizes k = 1..K."""
        return cls(lambda0 + np.arange(1, sizes + 1, dtype=float), lambda0)

    def power(self, p: int) -> "DiagonalOperator":
        return DiagonalOperator(self.weights**p, self.lambda0**p, strict=self.strict)

    @property
    def sizes(self) -> int:
        return self.weights.size

    def column(self) -> np.ndarray:
        """Weights shaped (K, 1) for broadcasting against K x L arrays."""
        return self.weights[:, None]


def _check_op(op: DiagonalOperator, g: StateVec) -> None:
    if op.sizes != g.sizes:
        raise ShapeMismatch(f"operator has {op.sizes} weights, state has {g.sizes} sizes")


def cone_norm(g: StateVec) -> float:
    """Sum of all entries (correctly rounded, so independent of summation order)."""
    return math.fsum(g.entries.ravel())


def leq(g: StateVec, h: StateVec) -> bool:
    _same_shape(g, h)
    return bool(np.all(g.entries <= h.entries))


def moment(op: DiagonalOperator, p: int, g: StateVec) -> float:
    """``||Lambda^p g||`` for p in 0..3."""
    if p not in (0, 1, 2, 3):
        raise DomainError(f"moment order must be 0..3, got {p!r}")
    _check_op(op, g)
    if p == 0:
        return cone_norm(g)
    return math.fsum((op.column() ** p * g.entries).ravel())


def apply_diag(op: DiagonalOperator, p: int, g: StateVec) -> StateVec:
    _check_op(op, g)
    if p == 0:
        return g
    return StateVec(op.column() ** p * g.entries)


def scale(c: float, g: StateVec) -> StateVec:
    if not (np.isfinite(c) and c >= 0):
        raise DomainError(f"cone scaling needs a finite c >= 0, got {c!r}")
    return StateVec(c * g.entries)


def semigroup_apply(c: float, op: DiagonalOperator, t: float, g: StateVec) -> StateVec:
    """Exact ``exp(-c t Lambda) g``, componentwise."""
    if not t >= 0:
        raise DomainError(f"semigroup time must be >= 0, got {t!r}")
    if not c >= 0:
        raise DomainError(f"semigroup rate must be >= 0, got {c!r}")
    _check_op(op, g)
    return StateVec(np.exp(-c * t * op.column()) * g.entries)


def trapezoid_sum(states, h: float) -> StateVec:
    """Composite trapezoid integral of equally spaced cone states."""
    arr = np.asarray([s.entries if isinstance(s, StateVec) else s for s in states], dtype=float)
    if arr.shape[0] < 2:
        return StateVec(np.zeros(arr.shape[1:]))
    w = np.full(arr.shape[0], h)
    w[0] = w[-1] = h / 2
    return StateVec(np.tensordot(w, arr, axes=1))
