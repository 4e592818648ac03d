"""Exact lattice advection coupled to coagulation.

The shift group acts on the cell index: ``(U^m g)_x = g_{x - m s}`` on a
periodic lattice, where ``s`` is the whole number of cells advanced per time
step.  With ``F(t) = U^{-t} f(t)`` the transport problem becomes a
coagulation problem with time-dependent operators ``U^{-t} Q(U^t F)``, which
the monotone solver handles directly; ``f`` is recovered by shifting back.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IncompatibleGrid, ShapeMismatch
from .kinetic_models import ModelSpec
from .monotone_solver import SolveResult, SolverConfig, TimeGrid, Trajectory, solve
from .ordered_space import StateVec

__all__ = [
    "TransportSpec",
    "ConjugatedModel",
    "shift_apply",
    "conjugated_gain",
    "conjugated_loss",
    "solve_mild",
]

# c*h may miss an integer by this relative amount and still count as one
GRID_SLACK = 1e-9


@dataclass(frozen=True)
class TransportSpec:
    """Periodic lattice of ``cells`` unit-width cells, advection ``speed`` in cells per unit time."""

    cells: int
    speed: float = 0.0

    def __post_init__(self):
        if int(self.cells) != self.cells or self.cells < 2:
            raise DomainError(f"transport needs at least 2 cells, got {self.cells!r}")
        if not math.isfinite(self.speed):
            raise DomainError(f"speed must be finite, got {self.speed!r}")

    def shift_per_step(self, h: float) -> int:
        """Cells advanced per step of length ``h``; must be a whole number."""
        x = self.speed * h
        s = round(x)
        if abs(x - s) > GRID_SLACK * max(1.0, abs(x)):
            raise IncompatibleGrid(f"speed * h = {x!r} is not a whole number of cells")
        return int(s)


def shift_apply(g: StateVec, steps: int) -> StateVec:
    """Cyclic shift of the cell index: entry at cell x moves to cell x + steps."""
    return StateVec(np.roll(g.entries, int(steps), axis=1))


def _roll_per_node(states: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    # out[b, :, x] = states[b, :, x - shifts[b]]
    L = states.shape[-1]
    idx = (np.arange(L)[None, :] - shifts[:, None]) % L
    return np.take_along_axis(states, idx[:, None, :], axis=-1)


class ConjugatedModel:
    """``U^{-m s} Q(U^{m s} g)`` at node m, with everything else delegated to ``base``."""

    def __init__(self, base: ModelSpec, shift: int):
        self.base = base
        self.shift = int(shift)

    def __getattr__(self, name):
        if name == "base":
            raise AttributeError(name)
        return getattr(self.base, name)

    def rates(self, states, nodes=None):
        states = np.asarray(states, dtype=float)
        lead = states.shape[:-2]
        flat = states.reshape((-1,) + states.shape[-2:])
        if nodes is None:
            nodes = np.zeros(flat.shape[0], dtype=int)
        shifts = np.broadcast_to(np.asarray(nodes, dtype=int) * self.shift, lead).ravel()
        ga, lo = self.base.rates(_roll_per_node(flat, shifts))
        ga, lo = _roll_per_node(ga, -shifts), _roll_per_node(lo, -shifts)
        return ga.reshape(states.shape), lo.reshape(states.shape)


def _conjugated(model, transport, m, g, h, which):
    if g.cells != transport.cells:
        raise ShapeMismatch(f"state has {g.cells} cells, transport has {transport.cells}")
    s = int(m) * transport.shift_per_step(h)
    moved = shift_apply(g, s)
    out = model.rates(moved.entries)[which]
    return shift_apply(StateVec(out), -s)


def conjugated_gain(model: ModelSpec, transport: TransportSpec, m: int, g: StateVec, h: float = 1.0) -> StateVec:
    """Gain seen from the co-moving frame at node m of a grid with step ``h``."""
    return _conjugated(model, transport, m, g, h, 0)


def conjugated_loss(model: ModelSpec, transport: TransportSpec, m: int, g: StateVec, h: float = 1.0) -> StateVec:
    return _conjugated(model, transport, m, g, h, 1)


def solve_mild(model: ModelSpec, transport: TransportSpec, f0: StateVec, grid: TimeGrid,
               cfg: SolverConfig | None = None) -> SolveResult:
    """Solve in the co-moving frame, then shift node m forward by ``m * s`` cells."""
    if f0.cells != transport.cells:
        raise ShapeMismatch(f"initial datum has {f0.cells} cells, transport has {transport.cells}")
    s = transport.shift_per_step(grid.h)
    frame = solve(ConjugatedModel(model, s), f0, grid, cfg)
    shifts = np.arange(grid.M + 1) * s
    f = Trajectory(grid, _roll_per_node(np.asarray(frame.trajectory.states), shifts))
    out = dataclasses.replace(frame, trajectory=f, diagnostics=None, iterates=None)
    from .diagnostics import build_ledger

    out.diagnostics = build_ledger(model, out, f0)
    return out
