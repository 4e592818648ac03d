"""Numerical certification of the structural assumptions on sampled states.

Each check reduces to "some quantity is >= 0".  Margins are reported relative
to the magnitude of the terms being compared, so a margin of -1e-16 is
round-off and -0.3 is a real violation.  Failures are data: the audit never
raises on a failing model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinetic_models import ModelSpec

__all__ = ["CheckResult", "AuditReport", "audit_assumptions", "sample_states", "AUDIT_SLACK"]

# relative round-off allowance on every audited inequality
AUDIT_SLACK = 1e-12

CHECKS = (
    "A0",
    "gain_isotone",
    "loss_isotone",
    "A1_envelope",
    "A1_isotone",
    "A2_nonneg",
    "A2_isotone",
    "A3_lambda1",
    "A3_povzner",
    "aQ_k1",
    "aQ_k2",
    "a54",
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_margin: float
    witness: dict | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "witness": self.witness,
        }


@dataclass
class AuditReport:
    checks: dict[str, CheckResult]
    samples: int
    seed: int
    sizes: int
    cells: int
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "samples": self.samples,
            "seed": self.seed,
            "sizes": self.sizes,
            "cells": self.cells,
            "checks": {name: c.to_dict() for name, c in self.checks.items()},
        }

    def summary(self) -> str:
        parts = [f"{name}={'ok' if c.passed else 'FAIL'}({c.worst_margin:.3g})" for name, c in self.checks.items()]
        return ("PASS " if self.passed else "FAIL ") + " ".join(parts)


def sample_states(rng: np.random.Generator, n: int, sizes: int, cells: int):
    """Draw ``n`` ordered pairs g <= h.

    Strata cycle through half-normal entries at scales 0.1, 1, 10 and a sparse
    stratum with 90% zeros.  ``h = g + p`` with ``p`` drawn the same way.
    """
    shape = (n, sizes, cells)
    stratum = np.arange(n) % 4
    scales = np.array([0.1, 1.0, 10.0, 1.0])[stratum][:, None, None]
    sparse_rows = (stratum == 3)[:, None, None]

    def draw():
        x = np.abs(rng.standard_normal(shape)) * scales
        keep = rng.random(shape) >= 0.9
        return np.where(sparse_rows & ~keep, 0.0, x)

    g = draw()
    h = g + draw()
    return g, h


def _rel(diff, scale):
    """diff / scale; 0/0 compares nothing and maps to +inf so it never is the worst case."""
    scale = np.abs(scale)
    out = np.full(np.broadcast(diff, scale).shape, np.inf)
    np.divide(diff, scale, out=out, where=scale > 0)
    neg = (scale == 0) & (diff < 0)
    out[neg] = -np.inf
    return out


class _Tracker:
    def __init__(self, name):
        self.name = name
        self.worst = np.inf
        self.where = None

    def update(self, margins, offset):
        # margins: (n, ...) -> reduce per sample
        per = margins.reshape(margins.shape[0], -1).min(axis=1)
        i = int(np.argmin(per))
        if per[i] < self.worst:
            self.worst = float(per[i])
            self.where = offset + i


def _norm(w, arr):
    return np.sum(w[:, None] * arr, axis=(-2, -1))


def audit_assumptions(model: ModelSpec, samples: int = 10_000, seed: int = 0, sizes: int | None = None,
                      chunk: int = 1000) -> AuditReport:
    """Check A0-A3, the loss bound for Lambda^0 and Lambda^1, and the norm chain on random states.

    ``sizes`` must match the model's truncation level if given (the model fixes K).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    K = model.sizes
    if sizes is not None and sizes != K:
        raise ValueError(f"model is truncated at K={K}, audit asked for K={sizes}")
    L = 1 if model.kernel.modulation is None else model.kernel.modulation.size
    lam = model.lam.weights
    lam1 = model.lam1.weights
    lam0 = model.lam.lambda0
    a = model.a_env
    rho = model.rho_env

    checks = {}
    ok0 = bool(np.all(np.isfinite(lam)) and lam0 > 0 and np.all(lam >= lam0) and np.all(lam1 >= 0))
    k0 = int(np.argmin(lam))
    checks["A0"] = CheckResult(
        "A0",
        ok0,
        float(min(lam0, lam.min() - lam0) / max(lam.max(), 1.0)),
        {"index": k0, "weight": float(lam[k0]), "lambda0": float(lam0)},
    )

    trackers = {name: _Tracker(name) for name in CHECKS[1:]}
    rng = np.random.default_rng(seed)
    g_all, h_all = sample_states(rng, samples, K, L)
    lamc = lam[:, None]
    for start in range(0, samples, chunk):
        g = g_all[start:start + chunk]
        h = h_all[start:start + chunk]
        gp, gm = model.rates(g)
        hp, hm = model.rates(h)
        ng1 = _norm(lam, g)
        nh1 = _norm(lam, h)
        ag = a(ng1)[:, None, None]
        ah = a(nh1)[:, None, None]

        trackers["gain_isotone"].update(_rel(hp - gp, hp), start)
        trackers["loss_isotone"].update(_rel(hm - gm, hm), start)

        env_g = ag * lamc * g
        env_h = ah * lamc * h
        trackers["A1_envelope"].update(_rel(env_g - gm, env_g + gm), start)
        trackers["aQ_k1"].update(_rel(env_g - gm, env_g + gm), start)
        fg = env_g - gm
        fh = env_h - hm
        trackers["A1_isotone"].update(_rel(fh - fg, env_h + hm + env_g + gm), start)
        env2 = ag * lamc**2 * g
        trackers["aQ_k2"].update(_rel(env2 - lamc * gm, env2 + lamc * gm), start)

        up_g, down_g = _norm(lam, gm), _norm(lam, gp)
        up_h, down_h = _norm(lam, hm), _norm(lam, hp)
        dg = up_g - down_g
        dh = up_h - down_h
        trackers["A2_nonneg"].update(_rel(dg, up_g + down_g), start)
        trackers["A2_isotone"].update(_rel(dh - dg, up_h + down_h + up_g + down_g), start)

        l1m, l1p = _norm(lam1, gm), _norm(lam1, gp)
        trackers["A3_lambda1"].update(_rel(l1m - l1p, l1m + l1p), start)
        l2m, l2p = _norm(lam**2, gm), _norm(lam**2, gp)
        pov = rho(_norm(lam1, g)) * _norm(lam**2, g)
        trackers["A3_povzner"].update(_rel(l2m + pov - l2p, l2m + pov + l2p), start)

        n_p, n_m = gp.sum(axis=(-2, -1)), gm.sum(axis=(-2, -1))
        top = a(ng1) * _norm(lam**2, g) / lam0 if lam0 > 0 else np.full(ng1.shape, -np.inf)
        links = np.stack([
            _rel(down_g / lam0 - n_p, down_g / lam0 + n_p) if lam0 > 0 else np.full(ng1.shape, -np.inf),
            _rel(up_g / lam0 - n_m, up_g / lam0 + n_m) if lam0 > 0 else np.full(ng1.shape, -np.inf),
            _rel(up_g - down_g, up_g + down_g),
            _rel(top - up_g / lam0, top + up_g / lam0) if lam0 > 0 else np.full(ng1.shape, -np.inf),
        ], axis=1)
        trackers["a54"].update(links, start)

    pair_checks = {"gain_isotone", "loss_isotone", "A1_isotone", "A2_isotone"}
    for name, tr in trackers.items():
        i = tr.where
        witness = {"sample": i, "seed": seed, "g": g_all[i].tolist()}
        if name in pair_checks:
            witness["h"] = h_all[i].tolist()
        worst = tr.worst if np.isfinite(tr.worst) or tr.worst < 0 else 0.0
        checks[name] = CheckResult(name, bool(tr.worst >= -AUDIT_SLACK), worst, witness)
    return AuditReport(checks, samples, seed, K, L)
