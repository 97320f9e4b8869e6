"""Hyperbolic times, expansion and recurrence times, and Monte Carlo tail estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .maps import BatchOrbit, MapModel, as_points
from .rng import make_rng, uniform_in_ball, uniform_points


@dataclass
class OrbitTrace:
    x0: np.ndarray
    log_inv_norm: np.ndarray
    log_det: np.ndarray
    crit_dist: np.ndarray
    points: Optional[np.ndarray] = None
    singular: bool = False

    @property
    def n(self) -> int:
        return len(self.log_inv_norm)

    @property
    def has_critical(self) -> bool:
        return not bool(np.all(np.isinf(self.crit_dist)))


@dataclass(frozen=True)
class HypConfig:
    sigma: float
    delta_hyp: float = 0.1
    b: float = 0.25
    lam: float = 0.5
    eps_rec: float = 0.1
    delta_rec: float = 0.1
    beta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (0, 1)")
        if self.b <= 0 or 2.0 * self.b >= min(1.0, 1.0 / self.beta):
            raise ValueError("need 0 < 2b < min(1, 1/beta)")
        for name in ("delta_hyp", "lam", "eps_rec", "delta_rec"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def trace_orbit(m: MapModel, x0, n: int, keep_points: bool = False) -> OrbitTrace:
    if n < 1:
        raise ValueError("orbit length must be >= 1")
    x = as_points(x0, m.dim)
    if len(x) != 1:
        raise ValueError("trace_orbit follows one point")
    L = np.empty(n)
    LD = np.empty(n)
    D = np.empty(n)
    pts = np.empty((n, m.dim)) if keep_points else None
    x0 = x[0].copy()
    orbit = BatchOrbit(m, x)
    for j in range(n):
        xj, _, ld, li, cd = orbit.step()
        if keep_points:
            pts[j] = xj[0]
        if not (np.isfinite(ld[0]) and np.isfinite(li[0])):
            return OrbitTrace(x0, L[:j], LD[:j], D[:j], None if pts is None else pts[:j], True)
        L[j], LD[j], D[j] = li[0], ld[0], cd[0]
    return OrbitTrace(x0, L, LD, D, pts)


def trace_batch(m: MapModel, X0, n: int):
    """Cocycle arrays (samples, n) for a batch of orbits: (log_inv_norm, log_det, crit_dist)."""
    X = as_points(X0, m.dim)
    L = np.empty((len(X), n))
    LD = np.empty((len(X), n))
    D = np.empty((len(X), n))
    orbit = BatchOrbit(m, X)
    for j in range(n):
        _, _, LD[:, j], L[:, j], D[:, j] = orbit.step()
    return L, LD, D


# ---------------------------------------------------------------------------
# hyperbolic times
# ---------------------------------------------------------------------------


def _truncated_log_dist(D, delta):
    with np.errstate(divide="ignore"):
        return np.where(D < delta, np.log(D), 0.0)


def _window_threshold(logd, b_logs):
    """Smallest k >= 0 with logd >= k * b_logs (b_logs < 0); inf if none."""
    logd = np.asarray(logd, dtype=float)
    k = np.where(np.isfinite(logd), np.ceil(logd / b_logs), np.inf)
    k = np.maximum(k, 0.0)
    fin = np.isfinite(k)
    # the ceil above may be off by one after rounding; settle it with the
    # exact expression used by the definitional check
    kk = k[fin]
    ld = logd[fin]
    for _ in range(2):
        down = (kk > 0) & (ld >= (kk - 1) * b_logs)
        kk = np.where(down, kk - 1, kk)
        up = ld < kk * b_logs
        kk = np.where(up, kk + 1, kk)
    k[fin] = kk
    return k


def hyperbolic_mask(L, D, cfg: HypConfig, has_critical: Optional[bool] = None):
    """Boolean array (samples, n); column n-1 flags n as a hyperbolic time.

    Condition on derivatives: P_n = sum_{j<n}(log sigma - L_j) must be a running
    maximum (Pliss scan with c1 = -log sigma).  Distance condition: for every
    j < n the truncated distance at step j tolerates windows up to n - j.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if has_critical is None:
        has_critical = not bool(np.all(np.isinf(D)))
    logs = math.log(cfg.sigma)
    s, n = L.shape
    mask = np.zeros((s, n), dtype=bool)
    q = np.zeros(s)
    best = np.zeros(s)
    need = np.zeros(s)  # max_{j<n}(j + k_min(j))
    if has_critical:
        kmin = _window_threshold(_truncated_log_dist(D, cfg.delta_hyp), cfg.b * logs)
    for j in range(n):
        q = q + (logs - L[:, j])
        ok = q >= best
        best = np.maximum(best, q)
        if has_critical:
            need = np.maximum(need, j + kmin[:, j])
            ok &= (j + 1) >= need
        mask[:, j] = ok
    return mask


def hyperbolic_times(trace: OrbitTrace, cfg: HypConfig) -> list:
    if trace.singular:
        raise ValueError("trace hit the critical set; hyperbolic times undefined")
    mask = hyperbolic_mask(trace.log_inv_norm[None, :], trace.crit_dist[None, :], cfg, trace.has_critical)
    return [int(i) + 1 for i in np.flatnonzero(mask[0])]


def hyperbolic_times_bruteforce(trace: OrbitTrace, cfg: HypConfig) -> list:
    """O(n^2) check of both window conditions for every 1 <= k <= n."""
    logs = math.log(cfg.sigma)
    b_logs = cfg.b * logs
    L = trace.log_inv_norm
    logd = _truncated_log_dist(trace.crit_dist, cfg.delta_hyp)
    crit = trace.has_critical
    out = []
    for n in range(1, trace.n + 1):
        ok = True
        s = 0.0
        for k in range(1, n + 1):
            j = n - k
            s += logs - L[j]
            if s < 0:
                ok = False
                break
            if crit and not logd[j] >= k * b_logs:
                ok = False
                break
        if ok:
            out.append(n)
    return out


# ---------------------------------------------------------------------------
# expansion and recurrence times
# ---------------------------------------------------------------------------


def _first_stable_time(values, bound):
    """min N with (1/n) sum_{i<n} values_i <= bound for all N <= n <= horizon."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return None
    avg = np.cumsum(v) / np.arange(1, len(v) + 1)
    bad = np.flatnonzero(avg > bound)
    if len(bad) == 0:
        return 1
    last = int(bad[-1]) + 1
    if last == len(v):
        return None
    return last + 1


def expansion_time(trace: OrbitTrace, lam: float):
    """Horizon-bounded expansion time; None means E > horizon."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return _first_stable_time(trace.log_inv_norm, -lam)


def recurrence_time(trace: OrbitTrace, eps: float, delta: float):
    """Horizon-bounded slow-recurrence time; 1 when the critical set is empty."""
    if eps <= 0 or delta <= 0:
        raise ValueError("eps and delta must be positive")
    if not trace.has_critical:
        return 1
    return _first_stable_time(-_truncated_log_dist(trace.crit_dist, delta), eps)


def _batch_times(m: MapModel, X, horizon: int, cfg: HypConfig):
    """Online E and R for a batch; censored values reported as horizon + 1."""
    s = len(X)
    sumL = np.zeros(s)
    sumR = np.zeros(s)
    lastE = np.zeros(s, dtype=np.int64)
    lastR = np.zeros(s, dtype=np.int64)
    crit = m.has_critical
    orbit = BatchOrbit(m, X)
    for j in range(horizon):
        _, _, _, L, D = orbit.step()
        sumL += L
        n = j + 1
        lastE[sumL / n > -cfg.lam] = n
        if crit:
            sumR -= _truncated_log_dist(D, cfg.delta_rec)
            lastR[sumR / n > cfg.eps_rec] = n
    E = np.where(lastE == horizon, horizon + 1, lastE + 1)
    R = np.where(lastR == horizon, horizon + 1, lastR + 1) if crit else np.ones(s, dtype=np.int64)
    return E, R


# ---------------------------------------------------------------------------
# tail of the non-expanding set
# ---------------------------------------------------------------------------


@dataclass
class TailEstimate:
    n_values: np.ndarray
    mhat: np.ndarray
    stderr: np.ndarray
    gamma_hat: float
    C_hat: float
    fit_r2: float
    sample_count: int
    censored_fraction: float = 0.0
    notice: str = ""

    header = ["n", "mhat", "stderr"]

    def csv_rows(self):
        return [[int(n), float(v), float(e)] for n, v, e in zip(self.n_values, self.mhat, self.stderr)]


def fit_power_tail(n_values, mhat, floor: float = 0.0):
    """Least squares of log mhat = log C - gamma log n over entries above floor.

    Returns (gamma, C, r2, used_count).  An identically zero tail gives the
    +inf sentinel; fewer than three usable points give NaN.
    """
    n = np.asarray(n_values, dtype=float)
    y = np.asarray(mhat, dtype=float)
    use = (y > floor) & (y > 0) & (n > 0)
    if not np.any(y > 0):
        return math.inf, 0.0, float("nan"), 0
    if use.sum() < 3:
        return float("nan"), float("nan"), float("nan"), int(use.sum())
    lx, ly = np.log(n[use]), np.log(y[use])
    slope, icpt = np.polyfit(lx, ly, 1)
    pred = icpt + slope * lx
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), float(math.exp(icpt)), r2, int(use.sum())


def tail_measure(
    m: MapModel,
    cfg: HypConfig,
    n_max: int,
    samples: int,
    seed: int,
    burn_in: Optional[int] = None,
) -> TailEstimate:
    """Monte Carlo estimate of m(Gamma_n) = m{E > n or R > n}, n = 1..n_max.

    Points whose E or R is not certified within the horizon count as members
    of every Gamma_n (conservative).
    """
    if samples < 100:
        raise ValueError("tail estimation needs >= 100 samples")
    horizon = n_max + (n_max if burn_in is None else burn_in)
    X = uniform_points(m.space, samples, make_rng(seed, 1))
    E, R = _batch_times(m, X, horizon, cfg)
    T = np.maximum(E, R)
    n_values = np.arange(1, n_max + 1)
    # fraction with max(E, R) > n, via a histogram of T
    counts = np.bincount(np.minimum(T, horizon + 1), minlength=horizon + 2)
    above = samples - np.cumsum(counts)  # above[n] = #{T > n}
    mhat = above[n_values] / samples
    stderr = np.sqrt(mhat * (1.0 - mhat) / samples)
    gamma, C, r2, used = fit_power_tail(n_values, mhat, floor=5.0 / samples)
    notice = ""
    if math.isinf(gamma):
        notice = "mhat identically zero: super-polynomial tail"
    elif math.isnan(gamma):
        # the tail fell under the floor within a couple of levels: too fast
        # for any power law to be resolved at this sample size
        gamma = math.inf
        notice = f"only {used} levels above the Monte Carlo floor: super-polynomial at this resolution"
    return TailEstimate(
        n_values, mhat, stderr, gamma, C, r2, samples,
        censored_fraction=float(np.mean(T > horizon)), notice=notice,
    )


def default_lambda(m: MapModel, samples: int = 2000, n: int = 200, seed: int = 0) -> float:
    """Half the ensemble mean of -log||Df^{-1}|| along orbits."""
    X = uniform_points(m.space, samples, make_rng(seed, 2))
    total = 0.0
    for _ in range(n):
        X, _, _, L, _ = m.cocycles(X)
        total += float(np.mean(-L[np.isfinite(L)]))
    return 0.5 * total / n


def choose_delta_rec(m: MapModel, eps: float, samples: int = 2000, n: int = 200, seed: int = 0, imax: int = 30) -> float:
    """Largest delta in {2^-i} whose ensemble slow-recurrence average is below eps."""
    if not m.has_critical:
        return 1.0
    X = uniform_points(m.space, samples, make_rng(seed, 3))
    D = np.empty((samples, n))
    for j in range(n):
        X, _, _, _, D[:, j] = m.cocycles(X)
    for i in range(1, imax + 1):
        delta = 2.0 ** (-i)
        if float(np.mean(-_truncated_log_dist(D, delta))) < eps:
            return delta
    raise ValueError(f"no delta >= 2^-{imax} meets eps={eps}")


# ---------------------------------------------------------------------------
# frequency of hyperbolic times
# ---------------------------------------------------------------------------


@dataclass
class FrequencyReport:
    freq: np.ndarray  # freq[j-1] = fraction of samples with j hyperbolic
    average: float
    stderr: float
    theta: float
    margin: float
    passed: bool
    samples: int

    header = ["j", "freq_j"]

    def csv_rows(self):
        return [[j + 1, float(v)] for j, v in enumerate(self.freq)]


def frequency_check(
    m: MapModel,
    center,
    radius: float,
    cfg: HypConfig,
    n: int,
    samples: int,
    seed: int,
    theta: float,
) -> FrequencyReport:
    """Averaged frequency (1/n) sum_j m(A cap H_j)/m(A) against theta/2.

    Passes when the estimate is at least theta/2 - 2 stderr.
    """
    if samples < 100:
        raise ValueError("frequency check needs >= 100 samples")
    if radius <= 0:
        raise ValueError("degenerate region: radius must be positive")
    X = uniform_in_ball(m.space, center, radius, samples, make_rng(seed, 4))
    if len(X) == 0:
        raise ValueError("degenerate region: no samples fall in A")
    L, _, D = trace_batch(m, X, n)
    good = np.all(np.isfinite(L), axis=1)
    mask = hyperbolic_mask(L[good], D[good], cfg, m.has_critical)
    per_sample = mask.mean(axis=1)
    avg = float(per_sample.mean())
    se = float(per_sample.std(ddof=1) / math.sqrt(len(per_sample)))
    margin = avg - (theta / 2.0 - 2.0 * se)
    return FrequencyReport(mask.mean(axis=0), avg, se, theta, margin, margin >= 0, int(good.sum()))
