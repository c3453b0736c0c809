"""Monte Carlo estimators built on replica batches.

Survival probabilities, expected-size curves with an exponential tail fit, the
time integral of the expected size, upper-invariant densities and a
finite-size pseudo-critical value.  Everything is a deterministic function of
the inputs and the master seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .dynamics import ModelParams, ParameterError, all_ones
from .graphs import Graph
from .montecarlo import replica_sizes, survival_thresholds


class FitError(ValueError):
    """Tail fit impossible (too few usable points)."""


class BracketError(ValueError):
    """The rate bracket does not straddle the survival threshold."""

    def __init__(self, msg, proxy_lo=None, proxy_hi=None):
        super().__init__(msg)
        self.proxy_lo = proxy_lo
        self.proxy_hi = proxy_hi


@dataclass
class Estimate:
    value: float
    std_error: float
    replicas: int
    seed: int
    divergent: bool = False

    def __post_init__(self):
        if self.std_error < 0 or self.replicas < 1:
            raise ParameterError("Estimate needs std_error >= 0 and replicas >= 1")

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        return abs(self.value - target) <= sigmas * self.std_error


@dataclass
class TailFit:
    rate: float  # decay rate gamma of log E|A_t| ~ log C - gamma t
    amplitude: float  # C
    window: tuple
    r_squared: float
    rate_ci: tuple
    decaying: bool


@dataclass
class CurveEstimate:
    grid: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    replicas: int
    seed: int
    fit: TailFit | None = None
    boot: dict = field(default_factory=dict, repr=False)

    def point(self, i: int) -> Estimate:
        return Estimate(float(self.mean[i]), float(self.std_error[i]), self.replicas, self.seed)


@dataclass
class CriticalEstimate:
    lambda_hat: float
    ci_lo: float
    ci_hi: float
    protocol: dict
    steps: list = field(default_factory=list)  # (lambda, proxy, stderr) per bisection step
    graph: str = ""
    thresholds: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.ci_lo = min(self.ci_lo, self.lambda_hat)
        self.ci_hi = max(self.ci_hi, self.lambda_hat)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_hi - self.ci_lo)


def _seed_set(g: Graph, A0) -> list:
    A0 = [g.origin] if A0 is None else list(A0)
    if not A0:
        raise ParameterError("initial set must be nonempty")
    return A0


def estimate_survival(
    g: Graph, params: ModelParams, A0: Iterable | None, T: float, replicas: int, seed: int, workers: int = 1
) -> Estimate:
    """Fraction of replicas with ``A_T`` nonempty, with binomial standard error."""
    A0 = _seed_set(g, A0)
    if replicas < 1:
        raise ParameterError(f"replicas must be >= 1, got {replicas}")
    if T == 0:
        return Estimate(1.0, 0.0, replicas, seed)
    sizes = replica_sizes(g, params, A0, [T], replicas, seed, workers)
    p = float(np.mean(sizes[:, 0] > 0))
    return Estimate(p, math.sqrt(p * (1 - p) / replicas), replicas, seed)


def _fit_window(grid: np.ndarray, window) -> np.ndarray:
    if window is None:
        lo = grid[0] + 2.0 * (grid[-1] - grid[0]) / 3.0
        hi = grid[-1]
    else:
        lo, hi = window
    return (grid >= lo) & (grid <= hi)


def _line_fit(t: np.ndarray, y: np.ndarray):
    ok = y > 0
    if ok.sum() < 3:
        return None
    slope, icept = np.polyfit(t[ok], np.log(y[ok]), 1)
    return -slope, math.exp(icept)


def _boot_weights(replicas: int, n_boot: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0xB007])
    return rng.multinomial(replicas, np.full(replicas, 1.0 / replicas), size=n_boot) / replicas


def estimate_expected_infected_curve(
    g: Graph,
    params: ModelParams,
    A0: Iterable | None,
    grid: Sequence[float],
    replicas: int,
    seed: int,
    fit_window: tuple | None = None,
    bootstrap: int = 200,
    workers: int = 1,
    confidence: float = 0.95,
) -> CurveEstimate:
    """Mean ``|A_t|`` on ``grid`` with an exponential fit to the tail.

    The fit is least squares of ``log E|A_t|`` against ``t`` over ``fit_window``
    (default: the last third of the grid); its confidence interval comes from
    resampling replicas.
    """
    A0 = _seed_set(g, A0)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ParameterError("grid must be strictly increasing and start at t >= 0")
    sizes = replica_sizes(g, params, A0, grid, replicas, seed, workers).astype(float)
    mean = sizes.mean(axis=0)
    se = sizes.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros_like(mean)
    curve = CurveEstimate(grid, mean, se, replicas, seed)
    sel = _fit_window(grid, fit_window)
    if sel.sum() < 3:
        raise FitError(f"fit window holds {int(sel.sum())} grid points; need at least 3")
    fitted = _line_fit(grid[sel], mean[sel])
    if fitted is None:
        raise FitError("fewer than 3 fit-window points with a positive mean")
    rate, amp = fitted
    resid_y = np.log(mean[sel][mean[sel] > 0])
    resid_t = grid[sel][mean[sel] > 0]
    pred = math.log(amp) - rate * resid_t
    ss_res = float(np.sum((resid_y - pred) ** 2))
    ss_tot = float(np.sum((resid_y - resid_y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    boot_rates, boot_integrals = [], []
    if bootstrap > 0 and replicas > 1:
        W = _boot_weights(replicas, bootstrap, seed)
        boot_means = W @ sizes
        for bm in boot_means:
            f = _line_fit(grid[sel], bm[sel])
            if f is None:
                continue
            boot_rates.append(f[0])
            boot_integrals.append(_integral(grid, bm, f[0], f[1]))
    alpha = 1.0 - confidence
    if boot_rates:
        ci = tuple(float(q) for q in np.quantile(boot_rates, [alpha / 2, 1 - alpha / 2]))
    else:
        ci = (rate, rate)
    curve.fit = TailFit(
        rate=float(rate),
        amplitude=float(amp),
        window=(float(grid[sel][0]), float(grid[sel][-1])),
        r_squared=r2,
        rate_ci=ci,
        decaying=ci[0] > 0,
    )
    curve.boot = {"rates": np.array(boot_rates), "integrals": np.array(boot_integrals)}
    return curve


def _integral(grid, mean, rate, amp) -> float:
    body = float(np.trapezoid(mean, grid)) if grid.size > 1 else 0.0
    if rate <= 0:
        return math.inf
    return body + amp * math.exp(-rate * grid[-1]) / rate


def integrability_functional(curve: CurveEstimate) -> Estimate:
    """Integral of ``E|A_t|`` over the grid plus the fitted exponential tail.

    Returns an ``Estimate`` with ``divergent=True`` and an infinite value when
    the decay-rate interval reaches zero.
    """
    fit = curve.fit
    if fit is None:
        raise FitError("curve has no tail fit")
    if not fit.decaying:
        return Estimate(math.inf, 0.0, curve.replicas, curve.seed, divergent=True)
    value = _integral(curve.grid, curve.mean, fit.rate, fit.amplitude)
    boots = curve.boot.get("integrals", np.array([]))
    boots = boots[np.isfinite(boots)] if boots.size else boots
    se = float(np.std(boots, ddof=1)) if boots.size > 1 else 0.0
    return Estimate(value, se, curve.replicas, curve.seed)


def estimate_density(
    g: Graph, params: ModelParams, T_relax: float, replicas: int, seed: int, workers: int = 1
) -> Estimate:
    """Mean infected fraction at ``T_relax`` starting from all sites infected."""
    if not g.finite:
        raise ParameterError("density estimation needs a finite graph")
    if T_relax < 0:
        raise ParameterError(f"T_relax must be >= 0, got {T_relax}")
    if T_relax == 0:
        return Estimate(1.0, 0.0, replicas, seed)
    n = g.n_vertices
    sizes = replica_sizes(g, params, all_ones(g), [T_relax], replicas, seed, workers)
    frac = sizes[:, 0] / n
    se = float(frac.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return Estimate(float(frac.mean()), se, replicas, seed)


@dataclass(frozen=True)
class CriticalProtocol:
    """Finite-size survival protocol: truncation is the graph itself."""

    horizon: float = 200.0
    threshold: float = 0.05
    replicas: int = 2000
    seed: int = 0
    lam_lo: float = 0.0
    lam_hi: float = 2.0
    bootstrap: int = 1000
    tol: float = 1e-4
    window: float = 1.0
    confidence: float = 0.95
    init: tuple | None = None

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ParameterError(f"threshold must be in (0, 1), got {self.threshold}")
        if not 0 <= self.lam_lo < self.lam_hi:
            raise ParameterError(f"need 0 <= lam_lo < lam_hi, got {self.lam_lo}, {self.lam_hi}")
        if self.replicas < 1:
            raise ParameterError("replicas must be >= 1")

    def describe(self, g: Graph) -> dict:
        d = asdict(self)
        d["init"] = None if self.init is None else [list(v) if isinstance(v, tuple) else v for v in self.init]
        d["n_vertices"] = g.n_vertices
        return d


def _proxy(sorted_thr: np.ndarray, lam: float) -> float:
    return np.searchsorted(sorted_thr, lam, side="left") / sorted_thr.size


def survival_sweep(thresholds: np.ndarray, lambdas: Sequence[float]) -> list[tuple]:
    """``(lam, proxy, stderr)`` for each ``lam`` from one set of replica thresholds."""
    srt = np.sort(thresholds)
    out = []
    for lam in lambdas:
        q = float(_proxy(srt, lam))
        out.append((float(lam), q, math.sqrt(q * (1 - q) / srt.size)))
    return out


def _bisect(sorted_thr, lo, hi, threshold, tol, steps=None) -> float:
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        p = _proxy(sorted_thr, mid)
        if steps is not None:
            steps.append((mid, p))
        if p < threshold:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def critical_thresholds(g: Graph, protocol: CriticalProtocol, workers: int = 1) -> np.ndarray:
    init = _seed_set(g, protocol.init)
    return survival_thresholds(
        g, init, protocol.horizon, protocol.lam_hi, protocol.replicas, protocol.seed, protocol.window, workers
    )


def _critical_from_thresholds(g: Graph, thr: np.ndarray, protocol: CriticalProtocol, boot_idx=None):
    p = protocol
    srt = np.sort(thr)
    n = srt.size
    p_lo, p_hi = _proxy(srt, p.lam_lo), _proxy(srt, p.lam_hi)
    if not (p_lo < p.threshold <= p_hi):
        raise BracketError(
            f"bracket [{p.lam_lo}, {p.lam_hi}] does not straddle threshold {p.threshold}: "
            f"survival proxy {p_lo:.4f} at lam_lo, {p_hi:.4f} at lam_hi",
            p_lo,
            p_hi,
        )
    raw_steps: list = []
    lam_hat = _bisect(srt, p.lam_lo, p.lam_hi, p.threshold, p.tol, raw_steps)
    steps = [(float(lam), float(q), math.sqrt(q * (1 - q) / n)) for lam, q in raw_steps]
    boots = None
    if boot_idx:
        boots = np.array([_bisect(np.sort(thr[ix]), p.lam_lo, p.lam_hi, p.threshold, p.tol) for ix in boot_idx])
        a = 1.0 - p.confidence
        lo, hi = np.quantile(boots, [a / 2, 1 - a / 2])
    else:
        lo = hi = lam_hat
    est = CriticalEstimate(float(lam_hat), float(lo), float(hi), p.describe(g), steps, repr(g), thr)
    return est, boots


def _boot_indices(n: int, protocol: CriticalProtocol) -> list:
    rng = np.random.default_rng([int(protocol.seed) & 0xFFFFFFFFFFFFFFFF, 0xC217])
    return [rng.integers(0, n, n) for _ in range(protocol.bootstrap)]


def estimate_critical(
    g: Graph, protocol: CriticalProtocol, lam_range: tuple | None = None, workers: int = 1
) -> CriticalEstimate:
    """Bisection in ``lam`` of the finite-seed survival proxy ``P(A_T nonempty)``.

    All bisection steps share the same replicas (common random numbers in
    ``lam``), so the proxy is monotone in ``lam`` and bisection converges to
    the ``threshold`` quantile of the replicas' survival thresholds.  The
    interval is a percentile bootstrap over replicas.
    """
    if lam_range is not None:
        protocol = replace(protocol, lam_lo=lam_range[0], lam_hi=lam_range[1])
    thr = critical_thresholds(g, protocol, workers)
    est, _ = _critical_from_thresholds(g, thr, protocol, _boot_indices(thr.size, protocol))
    return est


@dataclass
class CriticalComparison:
    base: CriticalEstimate
    perturbed: CriticalEstimate
    delta: float
    delta_ci_lo: float
    delta_ci_hi: float
    common_random_numbers: bool

    @property
    def contains_zero(self) -> bool:
        return self.delta_ci_lo <= 0.0 <= self.delta_ci_hi

    @property
    def half_width(self) -> float:
        return 0.5 * (self.delta_ci_hi - self.delta_ci_lo)


def compare_critical(g: Graph, g_prime: Graph, protocol: CriticalProtocol, workers: int = 1) -> CriticalComparison:
    """Paired pseudo-critical values of ``g`` and ``g_prime`` and their difference.

    When both graphs share a base, replica ``k`` of both runs uses the same
    construction and the bootstrap resamples replica pairs jointly.
    """
    crn = g.base == g_prime.base
    thr = critical_thresholds(g, protocol, workers)
    thr2 = critical_thresholds(g_prime, protocol, workers)
    idx = _boot_indices(thr.size, protocol)
    est, boots = _critical_from_thresholds(g, thr, protocol, idx)
    if crn:
        idx2 = idx
    else:
        idx2 = _boot_indices(thr2.size, replace(protocol, seed=protocol.seed + 1))
    est2, boots2 = _critical_from_thresholds(g_prime, thr2, protocol, idx2)
    delta = est2.lambda_hat - est.lambda_hat
    if boots is None or boots2 is None:
        lo = hi = delta
    else:
        a = 1.0 - protocol.confidence
        lo, hi = np.quantile(boots2 - boots, [a / 2, 1 - a / 2])
    return CriticalComparison(est, est2, float(delta), float(min(lo, delta)), float(max(hi, delta)), crn)
