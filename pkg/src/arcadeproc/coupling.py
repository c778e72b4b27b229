"""Target random vectors: marginals, couplings, convex order, sampling.

A coupling is modelled as a Markov chain in the targets: an initial marginal
for ``X_0`` plus one conditional step kernel per arc.  Step kernels expose
their conditional law given the current value either as atoms (discrete and
affine-branch kernels) or as a Gaussian, which is exactly what the filtering
layer needs.  Martingale flags are verified, never trusted.

Sampling draws from the dedicated "X" stream so target draws are independent
of driver noise by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError
from .streams import stream_rng

__all__ = [
    "DiscreteMarginal",
    "UniformMarginal",
    "GaussianMarginal",
    "DegenerateMarginal",
    "DiscreteRowKernel",
    "AffineBranchKernel",
    "GaussianStepKernel",
    "DeterministicAffineKernel",
    "IndependentStepKernel",
    "CouplingKernel",
    "check_convex_order",
    "convex_order_report",
    "sample_coupling",
    "builtin_kernels",
    "kernel_from_json",
    "comonotone_kernel",
    "gaussian_marginal",
    "uniform_marginal",
]

_W_TOL = 1e-12
_MG_TOL = 1e-9


# ---------------------------------------------------------------------------
# Marginals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteMarginal:
    """Finitely supported law: strictly increasing values, positive weights."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.ndim != 1 or v.shape != w.shape or v.size == 0:
            raise ConfigError("values and weights must be matching 1-d arrays")
        if np.any(np.diff(v) <= 0):
            raise ConfigError("atom values must be strictly increasing")
        if np.any(w <= 0):
            raise ConfigError("atom weights must be positive")
        if abs(w.sum() - 1.0) > _W_TOL:
            raise ConfigError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "DiscreteMarginal":
        arr = np.asarray(pairs, dtype=float)
        order = np.argsort(arr[:, 0])
        return cls(arr[order, 0], arr[order, 1])

    def mean(self) -> float:
        return float(self.values @ self.weights)

    def second_moment(self) -> float:
        return float((self.values ** 2) @ self.weights)

    def variance(self) -> float:
        return self.second_moment() - self.mean() ** 2

    def call_value(self, k: float) -> float:
        """Integrated call function ``E[(X - k)^+]``."""
        return float(np.maximum(self.values - k, 0.0) @ self.weights)

    def cdf(self, x) -> np.ndarray:
        cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        idx = np.searchsorted(self.values, np.asarray(x, dtype=float), side="right")
        return cum[idx]

    def quantile(self, q) -> np.ndarray:
        """Right-continuous quantile (generalized inverse of the CDF)."""
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, np.asarray(q, dtype=float), side="left")
        idx = np.clip(idx, 0, self.values.size - 1)
        return self.values[idx]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.values, size=n, p=self.weights)

    def config_dict(self) -> dict:
        return {"atoms": [[float(v), float(w)] for v, w in zip(self.values, self.weights)]}


@dataclass(frozen=True)
class UniformMarginal:
    lo: float
    hi: float

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def variance(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0

    def second_moment(self) -> float:
        return self.variance() + self.mean() ** 2

    def quantile(self, q):
        return self.lo + (self.hi - self.lo) * np.asarray(q, dtype=float)

    def cdf(self, x):
        return np.clip((np.asarray(x, float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=n)

    def discretize(self, m: int, method: str = "cell_mean") -> DiscreteMarginal:
        # for the uniform law cell means coincide with mid-quantile atoms
        q = (np.arange(m) + 0.5) / m
        return DiscreteMarginal(self.quantile(q), np.full(m, 1.0 / m))

    def config_dict(self) -> dict:
        return {"dist": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class GaussianMarginal:
    mu: float
    var: float

    def mean(self) -> float:
        return self.mu

    def variance(self) -> float:
        return self.var

    def second_moment(self) -> float:
        return self.var + self.mu ** 2

    def quantile(self, q):
        return self.mu + math.sqrt(self.var) * ndtri(np.asarray(q, dtype=float))

    def cdf(self, x):
        from scipy.special import ndtr
        return ndtr((np.asarray(x, float) - self.mu) / math.sqrt(self.var))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu + math.sqrt(self.var) * rng.standard_normal(n)

    def discretize(self, m: int, method: str = "cell_mean") -> DiscreteMarginal:
        return gaussian_marginal(self.mu, self.var, m, method)

    def config_dict(self) -> dict:
        return {"dist": "normal", "mean": self.mu, "var": self.var}


@dataclass(frozen=True)
class DegenerateMarginal:
    value: float

    def mean(self) -> float:
        return self.value

    def variance(self) -> float:
        return 0.0

    def second_moment(self) -> float:
        return self.value ** 2

    def quantile(self, q):
        return np.full_like(np.asarray(q, dtype=float), self.value)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.full(n, self.value)

    def discretize(self, m: int, method: str = "cell_mean") -> DiscreteMarginal:
        return DiscreteMarginal(np.asarray([self.value]), np.asarray([1.0]))

    def config_dict(self) -> dict:
        return {"dist": "degenerate", "value": self.value}


def uniform_marginal(lo: float, hi: float, m: int) -> DiscreteMarginal:
    """Equal-weight quantile discretization of U[lo, hi]."""
    return UniformMarginal(lo, hi).discretize(m)


def gaussian_marginal(mu: float, var: float, m: int, method: str = "cell_mean") -> DiscreteMarginal:
    """Equal-weight m-point discretization of N(mu, var).

    ``cell_mean`` places each atom at the conditional mean of its probability
    cell, which preserves the mean exactly and keeps second moments much
    closer to the continuous law than mid-quantile atoms; ``midpoint`` uses
    the (k - 1/2)/m quantiles.
    """
    if m < 1:
        raise ConfigError("need at least one atom")
    sd = math.sqrt(var)
    if method == "midpoint":
        z = ndtri((np.arange(m) + 0.5) / m)
    elif method == "cell_mean":
        edges = np.arange(m + 1) / m
        zed = np.empty(m + 1)
        zed[0], zed[-1] = -np.inf, np.inf
        zed[1:-1] = ndtri(edges[1:-1])
        phi = np.where(np.isfinite(zed), np.exp(-0.5 * zed ** 2) / math.sqrt(2 * math.pi), 0.0)
        z = m * (phi[:-1] - phi[1:])
    else:
        raise ConfigError(f"unknown discretization method {method!r}")
    return DiscreteMarginal(mu + sd * z, np.full(m, 1.0 / m))


# ---------------------------------------------------------------------------
# Step kernels
# ---------------------------------------------------------------------------

class StepKernel:
    """Conditional law of the next target given the current one."""

    conditional_kind = "atoms"  # or "gaussian"

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def atoms_given(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (values, probs) with shape (len(x), n_atoms)."""
        raise NotImplementedError

    def gaussian_given(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        raise NotImplementedError

    def mean_given(self, x: np.ndarray) -> np.ndarray:
        if self.conditional_kind == "atoms":
            v, w = self.atoms_given(np.asarray(x, dtype=float))
            return np.sum(v * w, axis=-1)
        mean, _ = self.gaussian_given(np.asarray(x, dtype=float))
        return mean

    def martingale_residual(self, probe: np.ndarray) -> float:
        probe = np.asarray(probe, dtype=float)
        return float(np.max(np.abs(self.mean_given(probe) - probe)))

    def config_dict(self) -> dict:  # pragma: no cover - overridden
        return {"kind": type(self).__name__}


@dataclass(frozen=True)
class DiscreteRowKernel(StepKernel):
    """Row-stochastic matrix over fixed current/next atom grids."""

    x_values: np.ndarray
    y_values: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_values, dtype=float)
        y = np.asarray(self.y_values, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        if g.shape != (x.size, y.size):
            raise ConfigError("gamma shape must be (len(x), len(y))")
        if np.any(g < -1e-15):
            raise ConfigError("gamma has negative entries")
        rows = g.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > _W_TOL:
            raise ConfigError("gamma rows must sum to 1")
        object.__setattr__(self, "x_values", x)
        object.__setattr__(self, "y_values", y)
        object.__setattr__(self, "gamma", np.clip(g, 0.0, None))

    def _row_index(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.x_values, x)
        idx = np.clip(idx, 0, self.x_values.size - 1)
        left = np.clip(idx - 1, 0, self.x_values.size - 1)
        use_left = np.abs(self.x_values[left] - x) < np.abs(self.x_values[idx] - x)
        idx = np.where(use_left, left, idx)
        if np.max(np.abs(self.x_values[idx] - x)) > 1e-9 * max(1.0, float(np.max(np.abs(self.x_values)))):
            raise ConfigError("conditioning value is not an atom of the kernel")
        return idx

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        rows = self.gamma[self._row_index(x)]
        u = rng.random(x.size)
        cum = np.cumsum(rows, axis=1)
        pick = (u[:, None] > cum).sum(axis=1)
        return self.y_values[np.clip(pick, 0, self.y_values.size - 1)]

    def atoms_given(self, x):
        x = np.asarray(x, dtype=float)
        rows = self.gamma[self._row_index(x)]
        vals = np.broadcast_to(self.y_values, rows.shape)
        return vals, rows

    def config_dict(self):
        return {"kind": "discrete_kernel",
                "x_values": self.x_values.tolist(),
                "y_values": self.y_values.tolist(),
                "gamma": self.gamma.tolist()}


@dataclass(frozen=True)
class AffineBranchKernel(StepKernel):
    """Next value is ``a_b x + c_b`` with probability ``p_b`` per branch."""

    branches: tuple[tuple[float, float, float], ...]  # (slope, intercept, prob)

    def __post_init__(self):
        br = tuple((float(a), float(c), float(p)) for a, c, p in self.branches)
        total = sum(p for _, _, p in br)
        if abs(total - 1.0) > _W_TOL:
            raise ConfigError("branch probabilities must sum to 1")
        if any(p <= 0 for _, _, p in br):
            raise ConfigError("branch probabilities must be positive")
        object.__setattr__(self, "branches", br)

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        probs = np.asarray([p for _, _, p in self.branches])
        pick = rng.choice(len(self.branches), size=x.size, p=probs)
        slopes = np.asarray([a for a, _, _ in self.branches])[pick]
        icepts = np.asarray([c for _, c, _ in self.branches])[pick]
        return slopes * x + icepts

    def atoms_given(self, x):
        x = np.asarray(x, dtype=float)
        vals = np.stack([a * x + c for a, c, _ in self.branches], axis=-1)
        probs = np.broadcast_to(
            np.asarray([p for _, _, p in self.branches]), vals.shape
        )
        return vals, probs

    def config_dict(self):
        return {"kind": "affine_branch", "branches": [list(b) for b in self.branches]}


@dataclass(frozen=True)
class GaussianStepKernel(StepKernel):
    """``X' | X = x ~ N(slope * x + intercept, var)``."""

    var: float
    slope: float = 1.0
    intercept: float = 0.0
    conditional_kind = "gaussian"

    def __post_init__(self):
        if self.var <= 0:
            raise ConfigError("Gaussian step needs positive variance")

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        return self.slope * x + self.intercept + math.sqrt(self.var) * rng.standard_normal(x.size)

    def gaussian_given(self, x):
        x = np.asarray(x, dtype=float)
        return self.slope * x + self.intercept, float(self.var)

    def density_given(self, x: float):
        mean = self.slope * x + self.intercept
        var = self.var

        def pdf(y):
            return np.exp(-0.5 * (np.asarray(y) - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)

        return pdf, mean, var

    def config_dict(self):
        return {"kind": "gaussian_step", "var": self.var,
                "slope": self.slope, "intercept": self.intercept}


@dataclass(frozen=True)
class DeterministicAffineKernel(StepKernel):
    """Deterministic map ``X' = a X + c`` (antithetic: a=-1; comonotone dilation: a>1)."""

    slope: float
    intercept: float = 0.0

    def sample(self, x, rng):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def atoms_given(self, x):
        x = np.asarray(x, dtype=float)
        return (self.slope * x + self.intercept)[..., None], np.ones(x.shape + (1,))

    def config_dict(self):
        return {"kind": "deterministic_affine", "slope": self.slope, "intercept": self.intercept}


@dataclass(frozen=True)
class IndependentStepKernel(StepKernel):
    """Next target is drawn from a fixed discrete law, independent of the past."""

    marginal: DiscreteMarginal

    def sample(self, x, rng):
        return self.marginal.sample(np.asarray(x).size, rng)

    def atoms_given(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape + (self.marginal.values.size,)
        return (np.broadcast_to(self.marginal.values, shape),
                np.broadcast_to(self.marginal.weights, shape))

    def config_dict(self):
        return {"kind": "product", "marginal": self.marginal.config_dict()}


# ---------------------------------------------------------------------------
# Chain-level coupling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingKernel:
    """Joint law of ``(X_0, ..., X_n)`` as initial marginal plus step kernels."""

    initial: object
    steps: tuple[StepKernel, ...]
    name: str = "custom"
    martingale: bool = field(default=False)

    def __post_init__(self):
        if not self.steps:
            raise ConfigError("a coupling needs at least one step kernel")
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "martingale", self.verify_martingale())

    @property
    def n_targets(self) -> int:
        return len(self.steps) + 1

    def _probe_values(self) -> np.ndarray:
        init = self.initial
        if isinstance(init, DiscreteMarginal):
            return init.values
        if isinstance(init, DegenerateMarginal):
            return np.asarray([init.value])
        qs = np.linspace(0.005, 0.995, 41)
        return np.asarray(init.quantile(qs), dtype=float)

    def verify_martingale(self, tol: float = _MG_TOL) -> bool:
        """Check ``E[X_{k+1} | X_k = x] = x`` on probe values, step by step."""
        probe = self._probe_values()
        for step in self.steps:
            try:
                if step.martingale_residual(probe) > tol:
                    return False
            except ConfigError:
                return False
            # propagate probes through deterministic/affine maps where cheap
            if isinstance(step, DeterministicAffineKernel):
                probe = step.slope * probe + step.intercept
            elif isinstance(step, DiscreteRowKernel):
                probe = step.y_values
            elif isinstance(step, AffineBranchKernel):
                vals = np.concatenate([a * probe + c for a, c, _ in step.branches])
                probe = np.unique(vals)
            # Gaussian steps keep the same probe grid
        return True

    def sample(self, n_samples: int, seed: int, block: int = 0) -> np.ndarray:
        rng = stream_rng(seed, "X", block)
        out = np.empty((n_samples, self.n_targets))
        out[:, 0] = self.initial.sample(n_samples, rng)
        for k, step in enumerate(self.steps):
            out[:, k + 1] = step.sample(out[:, k], rng)
        return out

    def pushforward(self, k: int) -> DiscreteMarginal:
        """Marginal of ``X_k`` for fully discrete chains."""
        if not isinstance(self.initial, DiscreteMarginal):
            raise ConfigError("pushforward needs a discrete initial marginal")
        values = self.initial.values.copy()
        weights = self.initial.weights.copy()
        for step in self.steps[:k]:
            v, w = step.atoms_given(values)
            flat_v = v.reshape(-1)
            flat_w = (w * weights[:, None]).reshape(-1)
            values, weights = _merge_atoms(flat_v, flat_w)
        return DiscreteMarginal(values, weights)

    def enumerate_suffixes(self, m: int, x_m: float) -> tuple[np.ndarray, np.ndarray]:
        """All chain continuations ``(X_{m+1}, ..., X_n)`` from ``X_m = x_m``.

        Returns (paths, probs) with paths of shape (n_paths, n - m); only
        defined for atom-valued step kernels.
        """
        paths = np.asarray([[float(x_m)]])
        probs = np.asarray([1.0])
        for step in self.steps[m:]:
            v, w = step.atoms_given(paths[:, -1])
            n_out = v.shape[-1]
            rep = np.repeat(paths, n_out, axis=0)
            paths = np.concatenate([rep, v.reshape(-1, 1)], axis=1)
            probs = (probs[:, None] * w).reshape(-1)
        keep = probs > 0
        return paths[keep, 1:], probs[keep] / probs[keep].sum()

    def config_dict(self) -> dict:
        return {
            "name": self.name,
            "initial": self.initial.config_dict(),
            "steps": [s.config_dict() for s in self.steps],
            "martingale": bool(self.martingale),
        }


def _merge_atoms(values: np.ndarray, weights: np.ndarray,
                 tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values)
    v, w = values[order], weights[order]
    out_v, out_w = [v[0]], [w[0]]
    for vi, wi in zip(v[1:], w[1:]):
        if vi - out_v[-1] <= tol * max(1.0, abs(vi)):
            out_w[-1] += wi
        else:
            out_v.append(vi)
            out_w.append(wi)
    w = np.asarray(out_w)
    return np.asarray(out_v), w / w.sum()


# ---------------------------------------------------------------------------
# Convex order
# ---------------------------------------------------------------------------

def convex_order_report(mu: DiscreteMarginal, nu: DiscreteMarginal,
                        tol: float = 1e-9) -> tuple[bool, float, dict]:
    """Equal means plus dominated call functions at every atom of both supports.

    For finitely supported laws, checking the call functions
    ``k -> E[(X - k)^+]`` at the union of atoms is sufficient.  Returns
    (ok, worst violation, witness), the witness naming the failing strike.
    """
    mean_gap = abs(mu.mean() - nu.mean())
    worst = mean_gap
    witness: dict = {}
    if mean_gap > tol:
        witness = {"kind": "mean", "mu_mean": mu.mean(), "nu_mean": nu.mean()}
    strikes = np.union1d(mu.values, nu.values)
    gaps = np.asarray([mu.call_value(k) - nu.call_value(k) for k in strikes])
    j = int(np.argmax(gaps))
    if gaps[j] > worst:
        worst = float(gaps[j])
    if gaps[j] > tol and "kind" not in witness:
        witness = {
            "kind": "call_function",
            "strike": float(strikes[j]),
            "mu_call": mu.call_value(float(strikes[j])),
            "nu_call": nu.call_value(float(strikes[j])),
        }
    ok = mean_gap <= tol and gaps[j] <= tol
    return ok, float(worst), witness


def check_convex_order(mu: DiscreteMarginal, nu: DiscreteMarginal,
                       tol: float = 1e-9) -> bool:
    ok, _, _ = convex_order_report(mu, nu, tol)
    return ok


# ---------------------------------------------------------------------------
# Builtins, JSON, sampling
# ---------------------------------------------------------------------------

def binary_pm1_kernel() -> CouplingKernel:
    """X_0 uniform on {-1, 1}; X_1 = X_0 +- 1 with equal probability."""
    init = DiscreteMarginal(np.asarray([-1.0, 1.0]), np.asarray([0.5, 0.5]))
    step = AffineBranchKernel(((1.0, -1.0, 0.5), (1.0, 1.0, 0.5)))
    return CouplingKernel(init, (step,), name="binary_pm1")


def uniform_mot_kernel() -> CouplingKernel:
    """X_0 ~ U[-1,1]; X_1 = 1.5 X_0 + 0.5 w.p. 3/4, else -0.5 X_0 - 1.5."""
    init = UniformMarginal(-1.0, 1.0)
    step = AffineBranchKernel(((1.5, 0.5, 0.75), (-0.5, -1.5, 0.25)))
    return CouplingKernel(init, (step,), name="uniform_mot")


def gaussian_n01_kernel() -> CouplingKernel:
    """X_0 ~ N(0,1); X_1 | X_0 ~ N(X_0, 1) (so X_1 ~ N(0,2))."""
    return CouplingKernel(GaussianMarginal(0.0, 1.0), (GaussianStepKernel(var=1.0),),
                          name="gaussian_n01")


def brownian_coupling(sigma2: float = 1.0, horizon: float = 1.0) -> CouplingKernel:
    """Bivariate normal with Cov = [[s2, s2], [s2, s2 + T]]."""
    return CouplingKernel(GaussianMarginal(0.0, sigma2),
                          (GaussianStepKernel(var=horizon),),
                          name="brownian")


def antithetic_pm1_chain(n_arcs: int = 5) -> CouplingKernel:
    """Y_0 uniform on {-1, 1}; Y_i = -Y_{i-1}."""
    init = DiscreteMarginal(np.asarray([-1.0, 1.0]), np.asarray([0.5, 0.5]))
    steps = tuple(DeterministicAffineKernel(-1.0) for _ in range(n_arcs))
    return CouplingKernel(init, steps, name="antithetic_pm1")


def independent_pm1_chain(n_arcs: int = 5) -> CouplingKernel:
    """Independent uniform {-1, 1} targets at every date."""
    init = DiscreteMarginal(np.asarray([-1.0, 1.0]), np.asarray([0.5, 0.5]))
    step = IndependentStepKernel(init)
    return CouplingKernel(init, tuple(step for _ in range(n_arcs)),
                          name="independent_pm1")


def comonotone_uniform_kernel() -> CouplingKernel:
    """Quantile coupling of U[-1,1] with U[-2,2]: X_1 = 2 X_0."""
    return CouplingKernel(UniformMarginal(-1.0, 1.0),
                          (DeterministicAffineKernel(2.0),),
                          name="comonotone_uniform")


def binary_chain_kernel(n_arcs: int = 2) -> CouplingKernel:
    """X_0 uniform on {-1, 1}; every step adds an independent +-1."""
    init = DiscreteMarginal(np.asarray([-1.0, 1.0]), np.asarray([0.5, 0.5]))
    step = AffineBranchKernel(((1.0, -1.0, 0.5), (1.0, 1.0, 0.5)))
    return CouplingKernel(init, tuple(step for _ in range(n_arcs)),
                          name=f"binary_chain_{n_arcs}")


def deterministic_kernel(value: float = 0.0, n_arcs: int = 1) -> CouplingKernel:
    """All targets equal to a constant (zero coupling)."""
    init = DegenerateMarginal(value)
    steps = tuple(DeterministicAffineKernel(1.0) for _ in range(n_arcs))
    return CouplingKernel(init, steps, name="deterministic")


def comonotone_kernel(mu: DiscreteMarginal, nu: DiscreteMarginal) -> CouplingKernel:
    """Northwest-corner quantile coupling of two discrete marginals."""
    m, n = mu.values.size, nu.values.size
    gamma = np.zeros((m, n))
    remaining_mu = mu.weights.copy()
    remaining_nu = nu.weights.copy()
    i = j = 0
    while i < m and j < n:
        mass = min(remaining_mu[i], remaining_nu[j])
        gamma[i, j] += mass
        remaining_mu[i] -= mass
        remaining_nu[j] -= mass
        if remaining_mu[i] <= 1e-15:
            i += 1
        if j < n and remaining_nu[j] <= 1e-15:
            j += 1
    gamma /= gamma.sum(axis=1, keepdims=True)
    step = DiscreteRowKernel(mu.values, nu.values, gamma)
    return CouplingKernel(mu, (step,), name="comonotone")


def product_kernel(mu: DiscreteMarginal, nu: DiscreteMarginal) -> CouplingKernel:
    return CouplingKernel(mu, (IndependentStepKernel(nu),), name="product")


def builtin_kernels() -> dict[str, CouplingKernel]:
    """Catalog of named, validated couplings."""
    return {
        "binary_pm1": binary_pm1_kernel(),
        "uniform_mot": uniform_mot_kernel(),
        "gaussian_n01": gaussian_n01_kernel(),
        "brownian": brownian_coupling(),
        "antithetic_pm1": antithetic_pm1_chain(),
        "independent_pm1": independent_pm1_chain(),
        "comonotone_uniform": comonotone_uniform_kernel(),
        "binary_chain_2": binary_chain_kernel(2),
        "deterministic": deterministic_kernel(),
    }


_PRESET_FACTORIES = {
    "binary_pm1": lambda **kw: binary_pm1_kernel(),
    "uniform_mot": lambda **kw: uniform_mot_kernel(),
    "gaussian_n01": lambda **kw: gaussian_n01_kernel(),
    "brownian": lambda **kw: brownian_coupling(**kw),
    "antithetic_pm1": lambda **kw: antithetic_pm1_chain(**kw),
    "independent_pm1": lambda **kw: independent_pm1_chain(**kw),
    "comonotone_uniform": lambda **kw: comonotone_uniform_kernel(),
    "binary_chain": lambda **kw: binary_chain_kernel(**kw),
    "deterministic": lambda **kw: deterministic_kernel(**kw),
}


def kernel_from_json(doc: dict) -> CouplingKernel:
    """Build a coupling from a JSON document: preset or explicit matrices."""
    if "preset" in doc:
        name = doc["preset"]
        if name not in _PRESET_FACTORIES:
            raise ConfigError(f"unknown coupling preset {name!r}")
        return _PRESET_FACTORIES[name](**doc.get("params", {}))
    if "atoms_mu" in doc:
        mu = DiscreteMarginal.from_pairs(doc["atoms_mu"])
        y = np.asarray(doc["values_nu"], dtype=float)
        gamma = np.asarray(doc["gamma"], dtype=float)
        step = DiscreteRowKernel(mu.values, y, gamma)
        return CouplingKernel(mu, (step,), name="discrete_kernel")
    raise ConfigError("coupling document needs 'preset' or 'atoms_mu'")


def sample_coupling(kernel: CouplingKernel, n_samples: int, seed: int,
                    block: int = 0) -> np.ndarray:
    """I.i.d. draws of the target vector from the dedicated 'X' stream."""
    if n_samples < 1:
        raise ConfigError("n_samples must be positive")
    return kernel.sample(n_samples, seed, block)
