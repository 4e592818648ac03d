"""Monotone Picard iteration for df/dt = Q+(f) - Q-(f) on a uniform time grid.

The problem is rewritten with the frozen coefficient ``a_f0 = a(||Lambda f0||)``
as::

    df/dt + a_f0 Lambda f = B(t, f, f)
    B(t, g, h) = Q+(g) - Q-(g) + a(||Lambda g(t)|| + int_0^t Delta(h)) Lambda g(t)

and iterated as ``f_1 = 0``, ``f_2 = S_h f0``,
``f_n = S_h f0 + I[B(f_{n-1}, f_{n-2})]`` where ``S_h`` propagates
``-a_f0 Lambda`` and ``I`` is a positive-weight quadrature.  B is isotone in
both arguments and all weights are positive, so the iterates increase
monotonically from zero.

Two quadratures are available:

``"trapezoid"`` (default)
    Trapezoid rule for the whole right-hand side, i.e. the propagator is the
    Cayley factor ``(1 - x/2) / (1 + x/2)`` with ``x = h a_f0 lambda_k``.  With
    the trapezoid cumulative dissipation this reproduces the conservation
    ledger ``||Lambda f|| + int Delta = ||Lambda f0||`` exactly at the fixed
    point.  Needs ``x <= 2`` for positivity, otherwise ``StiffGrid``.
``"exponential"``
    Exact ``exp(-x)`` propagator with product-trapezoid weights.  Positive for
    any step, but the ledger carries an O(h^2) defect that the ``a(...)``
    feedback amplifies exponentially in time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .audit import audit_assumptions
from .errors import (
    AssumptionViolation,
    DomainError,
    InternalOrderError,
    MaxItersExceeded,
    NonfiniteState,
    ShapeMismatch,
    StiffGrid,
)
from .ordered_space import StateVec, cone_norm, moment

logger = logging.getLogger(__name__)

__all__ = [
    "TimeGrid",
    "Trajectory",
    "SolverConfig",
    "SweepRecord",
    "SolveResult",
    "b_operator",
    "cumulative_delta",
    "propagator",
    "picard_sweep",
    "solve",
    "residual_integral_form",
    "ORDER_SLACK",
    "B_SLACK",
    "SCHEMES",
]

SCHEMES = ("trapezoid", "exponential")
# relative slack for order comparisons between iterates
ORDER_SLACK = 1e-12
# relative slack before a negative B entry is an assumption failure
B_SLACK = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise DomainError(f"horizon must be > 0, got {self.T!r}")
        if int(self.M) != self.M or self.M < 1:
            raise DomainError(f"steps must be an integer >= 1, got {self.M!r}")
        object.__setattr__(self, "M", int(self.M))

    @property
    def h(self) -> float:
        return self.T / self.M

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.M + 1) * self.h
        t[-1] = self.T
        return t

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.M * factor)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States on every grid node, stored as one (M+1, K, L) array."""

    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        arr = np.array(self.states, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] != self.grid.M + 1:
            raise ShapeMismatch(f"trajectory needs {self.grid.M + 1} states, got array {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonfiniteState("trajectory has non-finite entries")
        if np.any(arr < 0):
            raise DomainError("trajectory leaves the cone")
        arr.flags.writeable = False
        object.__setattr__(self, "states", arr)

    @classmethod
    def constant(cls, grid: TimeGrid, g: StateVec) -> "Trajectory":
        return cls(grid, np.broadcast_to(g.entries, (grid.M + 1,) + g.shape))

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, m: int) -> StateVec:
        return StateVec(self.states[m])

    @property
    def shape(self) -> tuple[int, int]:
        return self.states.shape[1:]


@dataclass(frozen=True)
class SolverConfig:
    tol_abs: float = 1e-10
    tol_rel: float = 1e-8
    max_iters: int = 200
    audit_first: bool = True
    audit_samples: int = 256
    audit_seed: int = 0
    scheme: str = "trapezoid"

    def __post_init__(self):
        if not (self.tol_abs > 0 and self.tol_rel > 0):
            raise DomainError("tolerances must be > 0")
        if self.max_iters < 3:
            raise DomainError("max_iters must be >= 3")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")


@dataclass
class SweepRecord:
    """Per-sweep diagnostics.  Margins are relative; >= 0 means the bound holds."""

    sweep: int
    sup_increment: float
    order_violations: int
    apriori_margin: float
    lambda1_margin: float
    pov2_margin: float
    clamped: int


@dataclass
class SolveResult:
    trajectory: Trajectory
    iterations_used: int
    increment_history: list[float]
    a_f0: float
    scheme: str = "trapezoid"
    sweeps: list[SweepRecord] = field(default_factory=list)
    iterates: list[np.ndarray] | None = None
    diagnostics: object | None = None

    @property
    def grid(self) -> TimeGrid:
        return self.trajectory.grid

    @property
    def order_violations(self) -> int:
        return sum(r.order_violations for r in self.sweeps)


# -- array kernels ---------------------------------------------------------


def _lam_norm(weights: np.ndarray, states: np.ndarray) -> np.ndarray:
    return np.sum(weights[:, None] * states, axis=(-2, -1))


def _cumtrap(values: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * h * (values[1:] + values[:-1]), axis=0)
    return out


def _b_arrays(model, states, cum, gain_arr, loss_arr):
    """B at every node plus the number of clamped round-off negatives."""
    lamc = model.lam.column()
    coef = model.a_env(_lam_norm(model.lam.weights, states) + cum)[:, None, None]
    env = coef * lamc * states
    B = (env - loss_arr) + gain_arr
    neg = B < 0
    if np.any(neg):
        scale = env + loss_arr + gain_arr
        if np.any(B < -B_SLACK * scale):
            m, k, x = np.argwhere(B < -B_SLACK * scale)[0]
            raise AssumptionViolation(
                f"B is negative at node {m}, size {k + 1}, cell {x}: the loss envelope (A1) fails there"
            )
        B[neg] = 0.0
    return B, int(neg.sum())


def propagator(a_f0: float, lam: np.ndarray, h: float, scheme: str = "trapezoid"):
    """One-step factor and the two quadrature weights, each shaped (K, 1)."""
    x = a_f0 * h * np.asarray(lam, dtype=float)
    if scheme == "trapezoid":
        if np.any(x > 2.0):
            need = math.ceil(np.max(x) / 2.0)
            raise StiffGrid(
                f"h * a_f0 * lambda_max = {np.max(x):.4g} > 2; refine the grid by a factor of at least {need}"
            )
        P = (1.0 - 0.5 * x) / (1.0 + 0.5 * x)
        w0 = w1 = 0.5 * h / (1.0 + 0.5 * x)
    elif scheme == "exponential":
        P = np.exp(-x)
        small = x < 1e-5
        xs = np.where(small, 1.0, x)
        phi1 = np.where(small, 1.0 - x / 2 + x**2 / 6, -np.expm1(-xs) / xs)
        phi2 = np.where(small, 0.5 - x / 6 + x**2 / 24, (np.expm1(-xs) + xs) / xs**2)
        w1 = h * phi2
        w0 = h * phi1 - w1
    else:
        raise DomainError(f"unknown scheme {scheme!r}")
    return P[:, None], np.asarray(w0)[:, None], np.asarray(w1)[:, None]


def _propagate(f0_arr, B, P, w0, w1):
    out = np.empty_like(B)
    out[0] = f0_arr
    for m in range(1, B.shape[0]):
        out[m] = P * out[m - 1] + w0 * B[m - 1] + w1 * B[m]
    return out


def _order_violations(lo, hi) -> int:
    return int(np.count_nonzero(lo - hi > ORDER_SLACK * np.maximum(lo, hi)))


# -- public operations -----------------------------------------------------


def b_operator(model, g: StateVec, cum_delta: float, a_f0: float | None = None, node: int = 0) -> StateVec:
    """``Q+(g) - Q-(g) + a(||Lambda g|| + cum_delta) Lambda g`` as a cone state.

    ``a_f0`` is accepted for symmetry with the sweep but does not enter B.
    ``node`` is forwarded to time-dependent models.
    """
    if not cum_delta >= 0:
        raise DomainError(f"cumulative dissipation must be >= 0, got {cum_delta!r}")
    arr = g.entries[None]
    ga, lo = model.rates(arr, np.array([node]))
    B, _ = _b_arrays(model, arr, np.array([float(cum_delta)]), ga, lo)
    return StateVec(B[0])


def cumulative_delta(model, traj: Trajectory) -> np.ndarray:
    """Trapezoid running integral of the dissipation along a trajectory."""
    ga, lo = model.rates(traj.states, np.arange(len(traj)))
    return _cumtrap(model.dissipation(ga, lo), traj.grid.h)


def picard_sweep(model, f0: StateVec, prev: Trajectory, prevprev: Trajectory, a_f0: float,
                 grid: TimeGrid, scheme: str = "trapezoid") -> Trajectory:
    """One iterate ``f_new = S f0 + I[B(prev, prevprev)]``.

    ``prevprev <= prev`` is required at every node (up to round-off).
    """
    if prev.grid != grid or prevprev.grid != grid:
        raise ShapeMismatch("iterates must live on the sweep grid")
    if prev.shape != f0.shape or prevprev.shape != f0.shape:
        raise ShapeMismatch("iterates and initial datum differ in shape")
    if _order_violations(prevprev.states, prev.states):
        raise InternalOrderError("previous iterates are not ordered: quadrature broke monotonicity")
    nodes = np.arange(grid.M + 1)
    cum = _cumtrap(model.dissipation(*model.rates(prevprev.states, nodes)), grid.h)
    ga, lo = model.rates(prev.states, nodes)
    B, _ = _b_arrays(model, prev.states, cum, ga, lo)
    P, w0, w1 = propagator(a_f0, model.lam.weights, grid.h, scheme)
    return Trajectory(grid, _propagate(f0.entries, B, P, w0, w1))


def _attach(model, f0, result: SolveResult) -> SolveResult:
    from .diagnostics import build_ledger

    result.diagnostics = build_ledger(model, result, f0)
    return result


def solve(model, f0: StateVec, grid: TimeGrid, cfg: SolverConfig | None = None,
          keep_iterates: bool = False, a_frozen: float | None = None) -> SolveResult:
    """Run the monotone iteration to convergence.

    Stops when ``max_m ||f_n(t_m) - f_{n-1}(t_m)|| <= tol_abs + tol_rel ||Lambda f0||``.
    ``keep_iterates`` stores every iterate (as arrays) on the result.

    ``a_frozen`` replaces ``a(||Lambda f0||)`` by a larger coefficient, e.g. the
    one of a dominating datum when comparing iterates across data.  The fixed
    point then solves the equation with that coefficient, which coincides with
    the original problem only when ``a_frozen == a(||Lambda f0||)``.
    """
    cfg = cfg or SolverConfig()
    if f0.sizes != model.sizes:
        raise ShapeMismatch(f"initial datum has {f0.sizes} sizes, model has {model.sizes}")
    lam, lam1 = model.lam, model.lam1
    nodes = np.arange(grid.M + 1)
    t = grid.nodes

    if cone_norm(f0) == 0.0:
        zero = Trajectory.constant(grid, f0)
        return _attach(model, f0, SolveResult(zero, 0, [], 0.0, cfg.scheme, [],
                                              [zero.states] if keep_iterates else None))
    L0 = moment(lam, 1, f0)
    a_f0 = float(model.a_env(L0))
    if a_frozen is not None:
        if not (math.isfinite(a_frozen) and a_frozen >= a_f0):
            raise DomainError(f"frozen coefficient {a_frozen!r} is below a(||Lambda f0||) = {a_f0!r}")
        a_f0 = float(a_frozen)
    if a_f0 == 0.0:
        const = Trajectory.constant(grid, f0)
        return _attach(model, f0, SolveResult(const, 0, [], 0.0, cfg.scheme, [],
                                              [const.states] if keep_iterates else None))

    if cfg.audit_first:
        base = getattr(model, "base", model)
        report = audit_assumptions(base, cfg.audit_samples, cfg.audit_seed)
        if not report.passed:
            raise AssumptionViolation(f"model fails the assumption audit: {report.failed()}", report)

    P, w0, w1 = propagator(a_f0, lam.weights, grid.h, cfg.scheme)
    if cfg.scheme == "exponential" and np.max(a_f0 * grid.h * lam.weights) > 50:
        logger.info("exponential propagator underflows to 0 for the stiffest sizes")

    L1_0 = moment(lam1, 1, f0)
    L2_0 = moment(lam, 2, f0)
    pov_bound = L2_0 * np.exp(model.rho_env(L1_0) * t)
    tol = cfg.tol_abs + cfg.tol_rel * L0

    f0_arr = f0.entries
    prevprev = np.zeros((grid.M + 1,) + f0.shape)
    delta_pp = np.zeros(grid.M + 1)
    prev = _propagate(f0_arr, np.zeros_like(prevprev), P, w0, w1)
    ga, lo = model.rates(prev, nodes)
    delta_p = model.dissipation(ga, lo)
    iterates = [prevprev, prev] if keep_iterates else None

    history: list[float] = []
    records: list[SweepRecord] = []
    for n in range(1, cfg.max_iters + 1):
        if _order_violations(prevprev, prev):
            raise InternalOrderError(f"iterates lost their order before sweep {n}")
        cum_pp = _cumtrap(delta_pp, grid.h)
        B, clamped = _b_arrays(model, prev, cum_pp, ga, lo)
        new = _propagate(f0_arr, B, P, w0, w1)
        if not np.all(np.isfinite(new)):
            raise NonfiniteState(f"non-finite state in sweep {n}")
        inc = float(np.max(np.sum(np.abs(new - prev), axis=(1, 2))))
        ga, lo = model.rates(new, nodes)
        delta_new = model.dissipation(ga, lo)

        ledger = _lam_norm(lam.weights, new) + _cumtrap(delta_p, grid.h)
        rec = SweepRecord(
            sweep=n,
            sup_increment=inc,
            order_violations=_order_violations(prev, new),
            apriori_margin=float(np.min(L0 - ledger) / L0),
            lambda1_margin=float(np.min(L1_0 - _lam_norm(lam1.weights, new)) / L1_0),
            pov2_margin=float(np.min((pov_bound - _lam_norm(lam.weights**2, new)) / pov_bound)),
            clamped=clamped,
        )
        records.append(rec)
        history.append(inc)
        logger.debug("sweep %d: increment %.3e", n, inc)
        prevprev, delta_pp = prev, delta_p
        prev, delta_p = new, delta_new
        if keep_iterates:
            iterates.append(new)
        if inc <= tol:
            return _attach(model, f0, SolveResult(Trajectory(grid, new), n, history, a_f0, cfg.scheme,
                                                  records, iterates))
    raise MaxItersExceeded(f"no convergence after {cfg.max_iters} sweeps (last increment {history[-1]:.3e})",
                           history)


def residual_integral_form(model, result: SolveResult, f0: StateVec) -> np.ndarray:
    """Per-node l1 gap between f and the trapezoid-evaluated integral form.

    The integral form is ``f0 + int [Q+ - Q-] + int [a(||Lambda f|| + int Delta) - a_f0] Lambda f``.
    """
    traj = result.trajectory
    grid = traj.grid
    states = traj.states
    ga, lo = model.rates(states, np.arange(len(traj)))
    chi = _cumtrap(model.dissipation(ga, lo), grid.h)
    corr = model.a_env(_lam_norm(model.lam.weights, states) + chi) - result.a_f0
    integrand = ga - lo + corr[:, None, None] * model.lam.column() * states
    rhs = f0.entries + _cumtrap(integrand, grid.h)
    return np.sum(np.abs(rhs - states), axis=(1, 2))
