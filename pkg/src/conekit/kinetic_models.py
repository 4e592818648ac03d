"""Truncated Smoluchowski coagulation as a gain/loss pair on the cone.

Gain and loss per cell x (sizes i, j, k run over 1..K)::

    gain_k = 1/2 * m_x * sum_{i+j=k} K(i, j) g_i g_j
    loss_k = m_x * g_k * sum_j K(k, j) g_j

The kernel is zeroed whenever i + j > K ("conservative truncation"), so the
truncated system keeps all mass inside sizes 1..K and the dissipation
``||Lambda Q-|| - ||Lambda Q+||`` stays exactly nonnegative for
lambda_k = lambda0 + k.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import AssumptionViolation, ConeViolation, DomainError, NoDefault, ShapeMismatch
from .ordered_space import DiagonalOperator, StateVec

__all__ = [
    "FAMILIES",
    "KernelSpec",
    "LinearEnvelope",
    "ModelSpec",
    "gain",
    "loss",
    "delta",
    "default_envelopes",
    "build_model",
    "load_kernel_csv",
    "DELTA_SLACK",
]

FAMILIES = ("constant", "additive", "multiplicative", "tabulated")

# relative slack below which a negative dissipation is treated as round-off
DELTA_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Coagulation kernel family with an optional per-cell rate modulation.

    ``kappa`` multiplies every family, including tabulated rates.
    """

    family: str
    kappa: float = 1.0
    table: np.ndarray | None = None
    modulation: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not (math.isfinite(self.kappa) and self.kappa >= 0):
            raise DomainError(f"kappa must be finite and >= 0, got {self.kappa!r}")
        if self.family == "tabulated":
            if self.table is None:
                raise DomainError("tabulated kernel needs a rate table")
            tab = np.array(self.table, dtype=float)
            if tab.ndim != 2 or tab.shape[0] != tab.shape[1]:
                raise DomainError(f"rate table must be square, got shape {tab.shape}")
            if not np.all(np.isfinite(tab)) or np.any(tab < 0):
                raise DomainError("rate table entries must be finite and >= 0")
            if not np.array_equal(tab, tab.T):
                i, j = np.argwhere(tab != tab.T)[0]
                raise DomainError(f"rate table is not symmetric at ({i + 1}, {j + 1})")
            tab.flags.writeable = False
            object.__setattr__(self, "table", tab)
        elif self.table is not None:
            raise DomainError(f"family {self.family!r} takes no rate table")
        if self.modulation is not None:
            mod = np.array(self.modulation, dtype=float).ravel()
            if mod.size == 0 or not np.all(np.isfinite(mod)) or np.any(mod <= 0):
                raise DomainError("spatial modulation must be finite and > 0 in every cell")
            mod.flags.writeable = False
            object.__setattr__(self, "modulation", mod)

    @property
    def max_modulation(self) -> float:
        return 1.0 if self.modulation is None else float(self.modulation.max())

    def rate_matrix(self, sizes: int) -> np.ndarray:
        """Truncated K x K rates, zero where i + j > K."""
        i = np.arange(1, sizes + 1, dtype=float)
        if self.family == "constant":
            rates = np.ones((sizes, sizes))
        elif self.family == "additive":
            rates = i[:, None] + i[None, :]
        elif self.family == "multiplicative":
            rates = i[:, None] * i[None, :]
        else:
            rates = np.zeros((sizes, sizes))
            n = min(sizes, self.table.shape[0])
            rates[:n, :n] = self.table[:n, :n]
        rates = self.kappa * rates
        rates[i[:, None] + i[None, :] > sizes] = 0.0
        return rates


@dataclass(frozen=True)
class LinearEnvelope:
    """x -> alpha + beta * x with alpha, beta >= 0 (nondecreasing and convex)."""

    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"envelope {name} must be finite and >= 0, got {v!r}")

    def __call__(self, x):
        return self.alpha + self.beta * x


def _gain_map(rates: np.ndarray) -> sparse.csr_matrix:
    # row i+j+1 (size i+j+2) collects pair (i, j); the 1/2 is folded in
    K = rates.shape[0]
    i, j = np.nonzero(rates)
    return sparse.csr_matrix((0.5 * rates[i, j], (i + j + 1, i * K + j)), shape=(K, K * K))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Gain/loss pair with its moment operators and scalar envelopes.

    The truncation level K is fixed by ``lam``.  ``lam1`` defaults to ``lam``.
    """

    kernel: KernelSpec
    lam: DiagonalOperator
    a_env: LinearEnvelope
    rho_env: LinearEnvelope
    lam1: DiagonalOperator | None = None
    _rates: np.ndarray = field(init=False, repr=False)
    _gmap: sparse.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        if self.lam1 is None:
            object.__setattr__(self, "lam1", self.lam)
        if self.lam1.sizes != self.lam.sizes:
            raise ShapeMismatch("lam and lam1 must have the same number of sizes")
        rates = self.kernel.rate_matrix(self.lam.sizes)
        rates.flags.writeable = False
        object.__setattr__(self, "_rates", rates)
        object.__setattr__(self, "_gmap", _gain_map(rates))

    @property
    def sizes(self) -> int:
        return self.lam.sizes

    @property
    def rate_matrix(self) -> np.ndarray:
        return self._rates

    def rates(self, states: np.ndarray, nodes=None) -> tuple[np.ndarray, np.ndarray]:
        """Gain and loss for raw arrays of shape (..., K, L); ``nodes`` is ignored."""
        states = np.asarray(states, dtype=float)
        K = self.sizes
        if states.ndim < 2 or states.shape[-2] != K:
            raise ShapeMismatch(f"expected (..., {K}, L) states, got {states.shape}")
        L = states.shape[-1]
        mod = self.kernel.modulation
        if mod is not None and mod.size != L:
            raise ShapeMismatch(f"kernel modulation has {mod.size} cells, state has {L}")
        lead = states.shape[:-2]
        s = states.reshape(-1, K, L)
        B = s.shape[0]
        outer = s[:, :, None, :] * s[:, None, :, :]
        pairs = outer.reshape(B, K * K, L).transpose(1, 0, 2).reshape(K * K, B * L)
        g = np.asarray(self._gmap @ pairs).reshape(K, B, L).transpose(1, 0, 2)
        l = s * np.einsum("kj,bjl->bkl", self._rates, s)
        if mod is not None:
            g = g * mod
            l = l * mod
        return g.reshape(lead + (K, L)), l.reshape(lead + (K, L))

    def dissipation(self, gain_arr: np.ndarray, loss_arr: np.ndarray) -> np.ndarray:
        """Delta over the leading axes, from precomputed gain/loss arrays."""
        lam = self.lam.column()
        up = np.sum(lam * loss_arr, axis=(-2, -1))
        down = np.sum(lam * gain_arr, axis=(-2, -1))
        d = up - down
        bad = d < -DELTA_SLACK * up
        if np.any(bad):
            raise AssumptionViolation(
                f"negative dissipation {float(np.min(d))!r}: Lambda does not satisfy A2 for this kernel"
            )
        return np.maximum(d, 0.0)


def _state(g) -> StateVec:
    if not isinstance(g, StateVec):
        raise ConeViolation("expected a StateVec")
    return g


def gain(model: ModelSpec, g: StateVec) -> StateVec:
    return StateVec(model.rates(_state(g).entries)[0])


def loss(model: ModelSpec, g: StateVec) -> StateVec:
    return StateVec(model.rates(_state(g).entries)[1])


def delta(model: ModelSpec, g: StateVec) -> float:
    """Dissipation ``||Lambda Q-(g)|| - ||Lambda Q+(g)||`` (>= 0 under A2)."""
    ga, lo = model.rates(_state(g).entries)
    return float(model.dissipation(ga, lo))


def default_envelopes(kernel: KernelSpec, lambda0: float = 1.0):
    """Envelopes ``(a, rho, lambda1)`` under which the bundled kernels pass the audit.

    ``lambda1`` is ``"lambda"`` or ``"lambda_squared"``.  All envelopes scale
    with ``kappa`` and the largest spatial modulation.
    """
    if not lambda0 > 0:
        raise DomainError(f"lambda0 must be > 0, got {lambda0!r}")
    c = kernel.kappa * kernel.max_modulation
    if kernel.family == "constant":
        return LinearEnvelope(0.0, c / lambda0**2), LinearEnvelope(0.0, c / lambda0), "lambda"
    if kernel.family == "additive":
        return LinearEnvelope(0.0, c / lambda0), LinearEnvelope(0.0, 2.0 * c), "lambda"
    if kernel.family == "multiplicative":
        return LinearEnvelope(0.0, c), LinearEnvelope(0.0, c), "lambda_squared"
    raise NoDefault(f"no default envelopes for a {kernel.family} kernel; supply a and rho")


def build_model(
    kernel: KernelSpec,
    sizes: int,
    lambda0: float = 1.0,
    a_env: LinearEnvelope | None = None,
    rho_env: LinearEnvelope | None = None,
    lambda1: str | DiagonalOperator | None = None,
) -> ModelSpec:
    """Assemble a model with lambda_k = lambda0 + k, filling defaults where missing."""
    if sizes < 1:
        raise DomainError(f"need at least one size, got {sizes}")
    lam = DiagonalOperator.affine(sizes, lambda0)
    if a_env is None or rho_env is None or lambda1 is None:
        try:
            da, drho, dl1 = default_envelopes(kernel, lambda0)
        except NoDefault:
            if a_env is None or rho_env is None:
                raise
            da, drho, dl1 = a_env, rho_env, "lambda"
        a_env = da if a_env is None else a_env
        rho_env = drho if rho_env is None else rho_env
        lambda1 = dl1 if lambda1 is None else lambda1
    if isinstance(lambda1, str):
        if lambda1 == "lambda":
            lam1 = lam
        elif lambda1 == "lambda_squared":
            lam1 = lam.power(2)
        else:
            raise DomainError(f"lambda1 must be 'lambda' or 'lambda_squared', got {lambda1!r}")
    else:
        lam1 = lambda1
    return ModelSpec(kernel, lam, a_env, rho_env, lam1)


def load_kernel_csv(path, kappa: float = 1.0, modulation=None) -> KernelSpec:
    """Read a tabulated kernel from CSV with header ``i,j,rate`` (1-based sizes).

    Each row also sets the mirrored pair; missing pairs are 0.  Conflicting
    values for (i, j) and (j, i) are an error.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["i", "j", "rate"]:
            raise DomainError(f"{path}: header must be 'i,j,rate', got {header!r}")
        entries = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                i, j, rate = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError) as exc:
                raise DomainError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if i < 1 or j < 1:
                raise DomainError(f"{path}:{lineno}: sizes are 1-based, got ({i}, {j})")
            for key in ((i, j), (j, i)):
                if key in entries and entries[key] != rate:
                    raise DomainError(f"{path}:{lineno}: asymmetric rates for pair {key}")
                entries[key] = rate
    n = max((max(k) for k in entries), default=1)
    table = np.zeros((n, n))
    for (i, j), rate in entries.items():
        table[i - 1, j - 1] = rate
    return KernelSpec("tabulated", kappa=kappa, table=table, modulation=modulation)
