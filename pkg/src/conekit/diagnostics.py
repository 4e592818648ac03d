"""Per-run ledgers of the conservation and growth bounds, and their CSV form.

Node table columns (in order)::

    t, N, mass, lam_norm, cum_delta, eq5_residual, bound7c_margin

with ``eq5_residual = lam_norm(t) + cum_delta(t) - lam_norm(0)`` (signed) and
``bound7c_margin = ||Lambda^2 f0|| exp(rho(||Lambda_1 f0||) t) - ||Lambda^2 f(t)||``.
The sweep table has ``sweep, sup_increment, order_violations``.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ReportIOError
from .monotone_solver import ORDER_SLACK, SolveResult, _cumtrap, _lam_norm

__all__ = [
    "RunLedger",
    "build_ledger",
    "eq5_ledger",
    "bound7c_margin",
    "emit_csv",
    "read_csv",
    "emit_summary",
    "NODE_COLUMNS",
    "SWEEP_COLUMNS",
    "EQ5_TOL",
    "BOUND7C_TOL",
    "ORDER_SLACK",
    "APRIORI_TOL",
    "POV2_TOL",
]

NODE_COLUMNS = ("t", "N", "mass", "lam_norm", "cum_delta", "eq5_residual", "bound7c_margin")
SWEEP_COLUMNS = ("sweep", "sup_increment", "order_violations")
_INT_COLUMNS = {"sweep", "order_violations"}

# |eq5_residual| <= EQ5_TOL * ||Lambda f0||
EQ5_TOL = 1e-5
# bound7c_margin >= -BOUND7C_TOL * ||Lambda^2 f0||
BOUND7C_TOL = 1e-6
# per-sweep Lambda and Lambda_1 ledgers, relative to their value at f0
APRIORI_TOL = 1e-8
# per-sweep second-moment bound, relative
POV2_TOL = 1e-6


@dataclass
class RunLedger:
    nodes: dict[str, np.ndarray]
    sweeps: dict[str, np.ndarray]
    lam_norm0: float = 0.0
    lam2_norm0: float = 0.0
    sweep_margins: dict[str, float] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "RunLedger":
        return cls({c: np.zeros(0) for c in NODE_COLUMNS},
                   {c: np.zeros(0, dtype=int if c in _INT_COLUMNS else float) for c in SWEEP_COLUMNS})

    def __len__(self) -> int:
        return len(self.nodes["t"])

    def checks(self) -> dict[str, tuple[bool, float]]:
        """Invariant family -> (holds, worst normalized margin)."""
        out = {}
        res = self.nodes["eq5_residual"]
        worst = float(np.max(np.abs(res))) / self.lam_norm0 if len(res) and self.lam_norm0 > 0 else 0.0
        out["eq5"] = (worst <= EQ5_TOL, worst)
        m7 = self.nodes["bound7c_margin"]
        worst = float(np.min(m7)) / self.lam2_norm0 if len(m7) and self.lam2_norm0 > 0 else 0.0
        out["bound7c"] = (worst >= -BOUND7C_TOL, worst)
        viol = int(np.sum(self.sweeps["order_violations"]))
        out["order"] = (viol == 0, float(viol))
        for key, tol in (("apriori", APRIORI_TOL), ("lambda1", APRIORI_TOL), ("pov2", POV2_TOL)):
            worst = self.sweep_margins.get(key, 0.0)
            out[key] = (worst >= -tol, worst)
        return out

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks().values())


def _node_moments(model, states):
    w = model.lam.weights
    k = np.arange(1, model.sizes + 1, dtype=float)
    return (
        states.sum(axis=(1, 2)),
        _lam_norm(k, states),
        _lam_norm(w, states),
        _lam_norm(w**2, states),
    )


def _cum_delta(model, states, h):
    ga, lo = model.rates(states, np.arange(states.shape[0]))
    return _cumtrap(model.dissipation(ga, lo), h)


def eq5_ledger(model, result: SolveResult) -> np.ndarray:
    """Signed ``||Lambda f(t)|| + int_0^t Delta - ||Lambda f0||`` per node."""
    states = np.asarray(result.trajectory.states)
    lam = _lam_norm(model.lam.weights, states)
    return lam + _cum_delta(model, states, result.grid.h) - lam[0]


def bound7c_margin(model, result: SolveResult) -> np.ndarray:
    """Signed slack in the exponential second-moment bound per node."""
    states = np.asarray(result.trajectory.states)
    w = model.lam.weights
    bound = _lam_norm(w**2, states[:1])[0] * np.exp(
        model.rho_env(_lam_norm(model.lam1.weights, states[:1])[0]) * result.grid.nodes)
    return bound - _lam_norm(w**2, states)


def build_ledger(model, result: SolveResult, f0=None) -> RunLedger:
    """Assemble node and sweep tables.  ``f0`` defaults to the first trajectory state."""
    states = np.asarray(result.trajectory.states)
    t = result.grid.nodes
    N, mass, lam, lam2 = _node_moments(model, states)
    cum = _cum_delta(model, states, result.grid.h)
    res = lam + cum - lam[0]
    rho = model.rho_env(_lam_norm(model.lam1.weights, states[:1])[0])
    m7 = lam2[0] * np.exp(rho * t) - lam2
    nodes = dict(zip(NODE_COLUMNS, (t, N, mass, lam, cum, res, m7)))
    sw = result.sweeps
    sweeps = {
        "sweep": np.array([r.sweep for r in sw], dtype=int),
        "sup_increment": np.array([r.sup_increment for r in sw], dtype=float),
        "order_violations": np.array([r.order_violations for r in sw], dtype=int),
    }
    margins = {
        "apriori": min((r.apriori_margin for r in sw), default=0.0),
        "lambda1": min((r.lambda1_margin for r in sw), default=0.0),
        "pov2": min((r.pov2_margin for r in sw), default=0.0),
    }
    return RunLedger(nodes, sweeps, float(lam[0]), float(lam2[0]), margins)


def _fmt(col, x) -> str:
    return str(int(x)) if col in _INT_COLUMNS else repr(float(x))


def emit_csv(ledger: RunLedger, path, table: str = "nodes") -> None:
    """Write one ledger table atomically.  Floats use the shortest round-trip repr."""
    if table == "nodes":
        cols, data = NODE_COLUMNS, ledger.nodes
    elif table == "sweeps":
        cols, data = SWEEP_COLUMNS, ledger.sweeps
    else:
        raise ValueError(f"table must be 'nodes' or 'sweeps', got {table!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in zip(*(data[c] for c in cols)):
        writer.writerow([_fmt(c, x) for c, x in zip(cols, row)])
    path = Path(path)
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise ReportIOError(f"cannot write {path}: {exc}", path) from exc


def read_csv(path) -> dict[str, np.ndarray]:
    """Parse a table written by :func:`emit_csv` back into columns."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ReportIOError(f"cannot read {path}: {exc}", path) from exc
    header, body = rows[0], rows[1:]
    out = {}
    for i, col in enumerate(header):
        dtype = int if col in _INT_COLUMNS else float
        out[col] = np.array([dtype(r[i]) for r in body], dtype=dtype)
    return out


def emit_summary(ledger: RunLedger) -> str:
    """One line: overall verdict, then each invariant family with its worst margin."""
    checks = ledger.checks()
    parts = [f"{name}={'ok' if ok else 'FAIL'}({worst:.3g})" for name, (ok, worst) in checks.items()]
    verdict = "PASS" if all(ok for ok, _ in checks.values()) else "FAIL"
    return f"{verdict} " + " ".join(parts)
