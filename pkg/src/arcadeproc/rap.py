"""Randomized arcade processes: signal plus independent arcade noise.

A randomized arcade interpolates path-wise through the targets:
``I_t = sum_i g_i(t) X_i + A_t`` with signal coefficients ``g_i`` and an
arcade ``A``.  The module covers path assembly, the nearly-Markov
verification (arcade factorization plus the two signal-coefficient
conditions), the one-arc conditional-mean identity, and process mimicry.

The nearly-Markov check certifies the forward-time property only: the
conditional law of the future given the history depends on the current
value and the already-revealed targets.  The time-reversed analogue (which
would instead require each ``g_j`` to vanish after ``T_{j+1}``) is out of
scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arcade import (
    ArcadeConfig,
    MarkovCheckReport,
    ap_cov,
    ap_mean,
    build_ap_paths,
    markov_factorization_check,
)
from .coupling import CouplingKernel
from .drivers import GaussMarkovDriver, PathBundle, brownian_driver, config_hash, simulate_driver
from .errors import ConfigError, DegenerateError, DomainError
from .partition import (
    CoefficientSet,
    Partition,
    piecewise_linear_coefficients,
    validate_coefficient_set,
)
from .streams import stream_rng

__all__ = [
    "RapConfig",
    "NearlyMarkovReport",
    "MimicResult",
    "build_rap_paths",
    "nearly_markov_check",
    "conditional_mean_rap",
    "mimic_process",
    "carryover_signal_coefficients",
    "fbm_paths",
]

_VAR_FLOOR = 1e-14


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RapConfig:
    """Arcade noise, signal coefficients, and a coupling for the targets.

    With ``standard=True`` the constructor additionally verifies the signal
    structure that makes the process automatically nearly-Markov: each
    ``g_j`` (j >= 1) vanishes up to ``T_{j-1}`` and coincides with the noise
    coefficient ``f_j`` on ``[T_{j-1}, T_j]``.
    """

    arcade: ArcadeConfig
    signal: CoefficientSet
    coupling: CouplingKernel
    standard: bool = False

    def __post_init__(self):
        p = self.arcade.partition
        if self.signal.partition.dates != p.dates or \
                self.signal.partition.steps_per_arc != p.steps_per_arc:
            raise ConfigError("signal and noise coefficients use different partitions")
        report = validate_coefficient_set(self.signal, tol=1e-9)
        if not report.passed:
            raise ConfigError("signal coefficients violate the node identities")
        if self.coupling.n_targets != p.n_arcs + 1:
            raise ConfigError(
                f"coupling provides {self.coupling.n_targets} targets for "
                f"{p.n_arcs + 1} dates"
            )
        if self.standard:
            resid = _standard_signal_residual(self)
            if resid > 1e-9:
                raise ConfigError(
                    f"standard flag set but signal deviates from the standard "
                    f"structure by {resid:.2e}"
                )

    @property
    def partition(self) -> Partition:
        return self.arcade.partition

    def config_dict(self) -> dict:
        return {
            "arcade": self.arcade.config_dict(),
            "signal": self.signal.config_dict(),
            "coupling": self.coupling.config_dict(),
            "standard": bool(self.standard),
        }


def _standard_signal_residual(cfg: RapConfig) -> float:
    """Max deviation from g_j = 0 before T_{j-1} and g_j = f_j on its arc."""
    p = cfg.partition
    grid = p.grid
    worst = 0.0
    for j in range(1, p.n_arcs + 1):
        gj = np.asarray(cfg.signal.eval(j, grid), dtype=float)
        before = grid <= p.dates[j - 1] + 1e-15
        if np.any(before):
            worst = max(worst, float(np.max(np.abs(gj[before]))))
        on_arc = (grid >= p.dates[j - 1]) & (grid <= p.dates[j])
        fj = np.asarray(cfg.arcade.coeffs.eval(j, grid[on_arc]), dtype=float)
        worst = max(worst, float(np.max(np.abs(gj[on_arc] - fj))))
    return worst


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

def build_rap_paths(cfg: RapConfig, n_paths: int, seed: int,
                    block: int = 0) -> tuple[PathBundle, np.ndarray]:
    """Simulate driver + targets and assemble the randomized arcade paths.

    Returns the path bundle together with the sampled target matrix
    ``X`` of shape (paths, n+1).  Driver noise uses stream "D", targets
    stream "X", so the two are independent.
    """
    p = cfg.partition
    driver_paths = simulate_driver(cfg.arcade.driver, p, n_paths, seed, block)
    ap = build_ap_paths(cfg.arcade, driver_paths)
    x = cfg.coupling.sample(n_paths, seed, block)
    gmat = cfg.signal.grid_matrix()
    values = ap.values + x @ gmat
    meta = {"kind": "rap", "config": cfg.config_dict(), "block": block}
    meta["config_hash"] = config_hash(meta)
    return PathBundle(grid=p.grid, values=values, seed=seed, meta=meta), x


# ---------------------------------------------------------------------------
# Nearly-Markov verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NearlyMarkovReport:
    """Residuals of the three nearly-Markov conditions."""

    passed: bool
    markov: MarkovCheckReport
    vanish_residual: float       # max |g_j| on [T_0, T_{j-1}]
    match_residual: float        # max proportionality defect of g_j vs A1 on its arc
    a1_right_limits: tuple[float, ...]
    tol: float

    def as_dict(self) -> dict:
        return {
            "pass": bool(self.passed),
            "noise_markov": self.markov.as_dict(),
            "vanish_residual": self.vanish_residual,
            "match_residual": self.match_residual,
            "a1_right_limits": [float(v) for v in self.a1_right_limits],
            "tol": self.tol,
        }


def nearly_markov_check(cfg: RapConfig, tol: float = 1e-8) -> NearlyMarkovReport:
    """Verify the sufficient conditions for the nearly-Markov property.

    Condition 1 is Markovianity of the noise arcade (covariance
    factorization).  Condition 2 splits into the vanishing requirement
    ``g_j = 0`` on ``[T_0, T_{j-1}]`` and the matching requirement
    ``g_j(x) A1(T_j) = A1(x)`` on ``[T_{j-1}, T_j]``.  The matching part is
    checked in scale-free form, as proportionality between ``g_j`` and the
    extracted ``A1`` on the arc's interior grid nodes, which avoids
    evaluating ``A1`` at the arc endpoint where the anchored formulas
    degenerate to 0/0.
    """
    p = cfg.partition
    markov = markov_factorization_check(cfg.arcade, tol=tol)
    vanish = 0.0
    match = 0.0
    limits: list[float] = []
    if markov.passed:
        fact = markov.factorization
        steps = p.steps_per_arc
        for j in range(1, p.n_arcs + 1):
            grid = p.grid
            gj = np.asarray(cfg.signal.eval(j, grid), dtype=float)
            before = grid <= p.dates[j - 1] + 1e-15
            if np.any(before):
                vanish = max(vanish, float(np.max(np.abs(gj[before]))))
            nodes = grid[(j - 1) * steps + 1: j * steps]
            a1 = fact.a1[j - 1][1:-1]
            gvals = np.asarray(cfg.signal.eval(j, nodes), dtype=float)
            ref = int(np.argmax(np.abs(gvals)))
            scale = max(float(np.max(np.abs(a1))), _VAR_FLOOR)
            if abs(gvals[ref]) < 1e-12:
                # signal vanishes on the whole arc: A1 must too
                match = max(match, float(np.max(np.abs(a1))) / scale)
                limits.append(0.0)
                continue
            c = a1[ref] / gvals[ref]
            match = max(match, float(np.max(np.abs(a1 - c * gvals))) / scale)
            limits.append(float(c))
    passed = markov.passed and vanish <= tol and match <= tol
    return NearlyMarkovReport(passed, markov, vanish, match, tuple(limits), tol)


# ---------------------------------------------------------------------------
# One-arc conditional mean
# ---------------------------------------------------------------------------

def conditional_mean_rap(cfg: RapConfig, s: float, t: float,
                         x0: float, m_s: float, i_s: float) -> float:
    """Affine conditional-mean identity ``E[I_t | F_s]`` for one-arc processes.

    With ``a = K_A(s,t) / K_A(s,s)`` (the Markov ratio ``A2(t)/A2(s)``),

    ``E[I_t | F_s] = (g0(t) - a g0(s)) X_0 + (g1(t) - a g1(s)) M_s
    + a I_s + mu_A(t) - a mu_A(s)``.
    """
    p = cfg.partition
    if p.n_arcs != 1:
        raise ConfigError("the conditional-mean identity is a one-arc operation")
    if t < s:
        raise DomainError("need s <= t")
    p.check_domain(s)
    p.check_domain(t)
    if t == s:
        return float(i_s)
    var_s = float(ap_cov(cfg.arcade, s, s))
    if var_s <= _VAR_FLOOR:
        raise DegenerateError("conditioning time has zero noise variance")
    a = float(ap_cov(cfg.arcade, s, t)) / var_s
    g0_t, g0_s = cfg.signal.eval(0, t), cfg.signal.eval(0, s)
    g1_t, g1_s = cfg.signal.eval(1, t), cfg.signal.eval(1, s)
    mu_t, mu_s = ap_mean(cfg.arcade, t), ap_mean(cfg.arcade, s)
    return float(
        (g0_t - a * g0_s) * x0
        + (g1_t - a * g1_s) * m_s
        + a * i_s
        + mu_t - a * mu_s
    )


# ---------------------------------------------------------------------------
# Mimicry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MimicResult:
    paths: PathBundle
    targets: np.ndarray
    sup_distances: np.ndarray

    def median_sup_distance(self) -> float:
        return float(np.median(self.sup_distances))


def mimic_process(target: PathBundle, p: Partition,
                  driver: GaussMarkovDriver | None = None,
                  seed: int = 0, noise_scale: float = 1.0) -> MimicResult:
    """Interpolate each target path through its own date values.

    The targets are read off the given paths at the partition dates and the
    randomized arcade uses piecewise-linear coefficients for both signal and
    noise.  The target grid must contain every node of the partition grid;
    the per-path sup distance is measured across the partition grid.
    ``noise_scale`` rescales the arcade (0 turns the noise off).
    """
    idx = _locate_nodes(target.grid, p.grid)
    y_nodes = target.values[:, idx]                     # (P, K)
    x = y_nodes[:, p.date_indices]                      # (P, n+1)
    coeffs = piecewise_linear_coefficients(p)
    gmat = coeffs.grid_matrix()
    signal = x @ gmat
    if noise_scale != 0.0:
        drv = driver if driver is not None else brownian_driver()
        cfg = ArcadeConfig(drv, coeffs)
        dpaths = simulate_driver(drv, p, target.n_paths, seed)
        noise = noise_scale * build_ap_paths(cfg, dpaths).values
    else:
        noise = np.zeros_like(signal)
    values = signal + noise
    sup = np.max(np.abs(values - y_nodes), axis=1)
    meta = {"kind": "mimic", "partition": p.config_dict(),
            "noise_scale": noise_scale}
    meta["config_hash"] = config_hash(meta)
    bundle = PathBundle(grid=p.grid, values=values, seed=seed, meta=meta)
    return MimicResult(bundle, x, sup)


def _locate_nodes(fine: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(fine, coarse)
    idx = np.clip(idx, 0, fine.size - 1)
    left = np.clip(idx - 1, 0, fine.size - 1)
    use_left = np.abs(fine[left] - coarse) < np.abs(fine[idx] - coarse)
    idx = np.where(use_left, left, idx)
    if np.max(np.abs(fine[idx] - coarse)) > 1e-9:
        raise ConfigError("target grid does not refine the partition grid")
    return idx


def fbm_paths(grid: Sequence[float], n_paths: int, seed: int,
              hurst: float = 0.75) -> PathBundle:
    """Fractional Brownian paths by dense Cholesky (mimicry demo plumbing)."""
    g = np.asarray(grid, dtype=float)
    two_h = 2.0 * hurst
    cov = 0.5 * (
        g[:, None] ** two_h + g[None, :] ** two_h
        - np.abs(g[:, None] - g[None, :]) ** two_h
    )
    active = g > 0
    chol = np.zeros((g.size, g.size))
    idx = np.where(active)[0]
    sub = cov[np.ix_(idx, idx)] + 1e-12 * np.eye(idx.size)
    chol[np.ix_(idx, idx)] = np.linalg.cholesky(sub)
    rng = stream_rng(seed, "fbm")
    vals = rng.standard_normal((n_paths, g.size)) @ chol.T
    meta = {"kind": "fbm", "hurst": hurst}
    return PathBundle(grid=g, values=vals, seed=seed, meta=meta)


# ---------------------------------------------------------------------------
# Two-arc carryover signal family
# ---------------------------------------------------------------------------

def carryover_signal_coefficients(p: Partition) -> CoefficientSet:
    """Signal coefficients that keep the carryover noise family nearly-Markov.

    Pairs with :func:`arcadeproc.partition.carryover_noise_coefficients` on
    two arcs: ``g_1`` is the hat function, ``g_2`` vanishes on the first arc
    and on the second arc follows the noise factor ``A1`` (rescaled to reach
    one at ``T_2``), with a slope break at the arc midpoint; ``g_0`` reuses
    the carryover noise coefficient.  All pieces are linear with breakpoints
    on the grid, so the explicit table is exact for even ``steps_per_arc``.
    """
    if p.n_arcs != 2:
        raise ConfigError("carryover signal family is defined on exactly two arcs")
    if p.steps_per_arc % 2:
        raise ConfigError("carryover signal family needs an even steps_per_arc")
    t0, t1, t2 = p.dates
    mid = 0.5 * (t1 + t2)
    g = p.grid

    g0 = np.where(g <= mid, (t1 - g) / (t1 - t0), -(t2 - g) / (t1 - t0))
    g1 = np.where(g <= t1, (g - t0) / (t1 - t0), (t2 - g) / (t2 - t1))
    lower = (g - t1) / (t2 - t1) + (g - t1) * t0 / (t1 - t0) ** 2
    upper = (g - t1) / (t2 - t1) + (t2 - g) * t0 / (t1 - t0) ** 2
    g2 = np.where(g <= t1, 0.0, np.where(g <= mid, lower, upper))
    table = np.vstack([g0, g1, g2])
    table[:, p.date_indices] = np.eye(3)
    return CoefficientSet(p, "explicit_table", "signal", table=table)
