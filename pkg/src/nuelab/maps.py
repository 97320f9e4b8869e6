"""Phase spaces, concrete map families and their derivative cocycles.

Points are always handled as float arrays of shape ``(m, d)``; single points
are promoted to ``(1, d)``.  Jacobians come back with shape ``(m, d, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import make_rng

# ---------------------------------------------------------------------------
# phase spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseSpace:
    kind: str  # "circle", "torus" or "interval"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("circle", "torus", "interval"):
            raise ValueError(f"unknown phase space kind {self.kind!r}")
        if self.kind != "interval" and (self.lo, self.hi) != (0.0, 1.0):
            raise ValueError("tori are normalized to [0, 1)^d")
        if self.hi <= self.lo:
            raise ValueError("empty interval")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "torus" else 1

    @property
    def periodic(self) -> bool:
        return self.kind != "interval"

    @property
    def volume(self) -> float:
        return 1.0 if self.periodic else self.hi - self.lo

    @property
    def diameter(self) -> float:
        if self.kind == "torus":
            return math.sqrt(2.0) / 2.0
        if self.kind == "circle":
            return 0.5
        return self.hi - self.lo

    def wrap(self, X):
        X = np.asarray(X, dtype=float)
        if self.periodic:
            X = X - np.floor(X)
            # floor(x) == x can leave exactly 1.0 after rounding of tiny negatives
            X[X >= 1.0] = 0.0
            return X
        return np.clip(X, self.lo, self.hi)

    def displacement(self, X, Y):
        """Shortest displacement Y - X (coordinate-wise, wrapped on tori)."""
        D = np.asarray(Y, dtype=float) - np.asarray(X, dtype=float)
        if self.periodic:
            D = D - np.round(D)
        return D

    def distance(self, X, Y):
        D = self.displacement(X, Y)
        return np.sqrt(np.sum(D * D, axis=-1))

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.periodic:
            return np.all(np.isfinite(X), axis=-1)
        return np.all((X >= self.lo) & (X <= self.hi), axis=-1)


CIRCLE = PhaseSpace("circle")
TORUS = PhaseSpace("torus")


def as_points(x, dim: int) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, dim) if X.shape[0] == dim else X.reshape(-1, dim)
    if X.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {X.shape}")
    return X


# ---------------------------------------------------------------------------
# linear algebra for d <= 2
# ---------------------------------------------------------------------------


def log_det_and_inv_norm(J: np.ndarray):
    """Closed-form log|det J| and log||J^{-1}|| for stacks of 1x1 or 2x2 matrices.

    Singular matrices give log_det = -inf and log_inv_norm = +inf.
    """
    J = np.asarray(J, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if J.shape[-1] == 1:
            a = np.abs(J[..., 0, 0])
            log_det = np.log(a)
            return log_det, -log_det
        a, b = J[..., 0, 0], J[..., 0, 1]
        c, d = J[..., 1, 0], J[..., 1, 1]
        det = np.abs(a * d - b * c)
        fro2 = a * a + b * b + c * c + d * d
        disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
        s_max = np.sqrt(0.5 * (fro2 + disc))
        log_det = np.log(det)
        # s_min = det / s_max avoids cancellation in (fro2 - disc)
        log_inv_norm = np.log(s_max) - log_det
    return log_det, log_inv_norm


def operator_norm(J: np.ndarray) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if J.shape[-1] == 1:
        return np.abs(J[..., 0, 0])
    a, b = J[..., 0, 0], J[..., 0, 1]
    c, d = J[..., 1, 0], J[..., 1, 1]
    det = np.abs(a * d - b * c)
    fro2 = a * a + b * b + c * c + d * d
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
    return np.sqrt(0.5 * (fro2 + disc))


def inverse_2x2(J: np.ndarray) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if J.shape[-1] == 1:
        return 1.0 / J
    a, b = J[..., 0, 0], J[..., 0, 1]
    c, d = J[..., 1, 0], J[..., 1, 1]
    det = a * d - b * c
    out = np.empty_like(J)
    out[..., 0, 0] = d / det
    out[..., 0, 1] = -b / det
    out[..., 1, 0] = -c / det
    out[..., 1, 1] = a / det
    return out


# ---------------------------------------------------------------------------
# map model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MapModel:
    """A concrete dynamical system with closed-form derivative.

    ``preimages`` (optional) maps an ``(m, d)`` array to ``(deg, m, d)``: all
    inverse-branch images, branch index first.
    """

    name: str
    space: PhaseSpace
    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    critical: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    B: float = 2.0
    beta: float = 1.0
    params: dict = field(default_factory=dict)
    preimages: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lattice_k: Optional[int] = None  # x -> k x mod 1 can be iterated exactly

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def has_critical(self) -> bool:
        return len(self.critical) > 0

    def __call__(self, X):
        return self.space.wrap(self.f(as_points(X, self.dim)))

    def jacobian(self, X):
        return self.jac(as_points(X, self.dim))

    def crit_dist(self, X) -> np.ndarray:
        X = as_points(X, self.dim)
        if not self.has_critical:
            return np.full(len(X), np.inf)
        d = np.stack([self.space.distance(X, c[None, :]) for c in self.critical])
        return d.min(axis=0)

    def cocycles(self, X):
        """(image, jac, log_det, log_inv_norm, crit_dist) for a batch of points."""
        X = as_points(X, self.dim)
        J = self.jac(X)
        log_det, log_inv = log_det_and_inv_norm(J)
        return self.space.wrap(self.f(X)), J, log_det, log_inv, self.crit_dist(X)


# prime modulus with 2 and 3 as primitive roots: on the lattice x = s/Q the map
# s -> k s mod Q has period Q - 1, so orbits never collapse onto the fixed
# point the way binary floating-point doubling does
LATTICE_Q = 576460752303423389


class BatchOrbit:
    """Forward orbits of a batch of points.

    Circle maps x -> kx with ``lattice_k`` set are iterated exactly on the
    rational lattice s/Q; everything else iterates in floating point.
    """

    def __init__(self, m: MapModel, X):
        self.map = m
        X = m.space.wrap(as_points(X, m.dim))
        if m.lattice_k is not None:
            self.state = np.rint(X[:, 0] * LATTICE_Q).astype(np.int64) % LATTICE_Q
        else:
            self.state = X.copy()

    @classmethod
    def from_state(cls, m: MapModel, state) -> "BatchOrbit":
        """Resume from stored states (lattice integers or float points)."""
        self = cls.__new__(cls)
        self.map = m
        self.state = np.array(state, copy=True)
        return self

    @property
    def points(self) -> np.ndarray:
        if self.map.lattice_k is not None:
            return (self.state / LATTICE_Q).reshape(-1, 1)
        return self.state

    def step(self):
        """Cocycle data at the current points, then advance one step."""
        X = self.points
        img, J, ld, li, cd = self.map.cocycles(X)
        if self.map.lattice_k is not None:
            self.state = (self.state * self.map.lattice_k) % LATTICE_Q
        else:
            self.state = img
        return X, J, ld, li, cd


@dataclass(frozen=True)
class JetData:
    image: np.ndarray
    jac: np.ndarray
    log_det: float
    log_inv_norm: float
    crit_dist: float
    singular: bool = False


def jet(m: MapModel, x) -> JetData:
    X = as_points(x, m.dim)
    if len(X) != 1:
        raise ValueError("jet evaluates a single point; use MapModel.cocycles for batches")
    img, J, ld, li, cd = m.cocycles(X)
    singular = not (np.isfinite(ld[0]) and np.isfinite(li[0]))
    return JetData(img[0], J[0], float(ld[0]), float(li[0]), float(cd[0]), singular)


def truncated_crit_distance(m: MapModel, x, delta: float):
    """dist(x, C) below delta, 1 otherwise (and 1 when C is empty)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    d = m.crit_dist(x)
    out = np.where(d < delta, d, 1.0)
    return float(out[0]) if out.shape == (1,) else out


# ---------------------------------------------------------------------------
# concrete families
# ---------------------------------------------------------------------------


def expanding_circle(k: int = 2) -> MapModel:
    """x -> k x mod 1 on the circle."""
    k = int(k)

    def pre(Y):
        return np.stack([(Y + j) / k for j in range(k)])

    return MapModel(
        name="doubling" if k == 2 else f"circle_x{k}",
        space=CIRCLE,
        f=lambda X: k * X,
        jac=lambda X: np.full((len(X), 1, 1), float(k)),
        B=2.0 * k,
        beta=1.0,
        params={"k": k},
        preimages=pre,
        lattice_k=k if k in (2, 3) else None,
    )


def doubling() -> MapModel:
    return expanding_circle(2)


def tent() -> MapModel:
    space = PhaseSpace("interval", 0.0, 1.0)

    def pre(Y):
        return np.stack([Y / 2.0, 1.0 - Y / 2.0])

    return MapModel(
        name="tent",
        space=space,
        f=lambda X: 1.0 - np.abs(1.0 - 2.0 * X),
        jac=lambda X: np.where(X < 0.5, 2.0, -2.0).reshape(-1, 1, 1),
        B=4.0,
        beta=1.0,
        preimages=pre,
    )


def chebyshev() -> MapModel:
    """f(x) = 1 - 2x^2 on [-1, 1]; critical point at 0, |f'(x)| = 4 dist(x, 0)."""
    space = PhaseSpace("interval", -1.0, 1.0)

    def pre(Y):
        r = np.sqrt(np.clip((1.0 - Y) / 2.0, 0.0, 1.0))
        return np.stack([-r, r])

    return MapModel(
        name="chebyshev",
        space=space,
        f=lambda X: 1.0 - 2.0 * X * X,
        jac=lambda X: (-4.0 * X).reshape(-1, 1, 1),
        critical=np.zeros((1, 1)),
        B=8.0,
        beta=1.0,
        preimages=pre,
    )


def identity(space: PhaseSpace = CIRCLE) -> MapModel:
    d = space.dim
    return MapModel(
        name="identity",
        space=space,
        f=lambda X: np.array(X, dtype=float),
        jac=lambda X: np.broadcast_to(np.eye(d), (len(X), d, d)).copy(),
        B=2.0,
        beta=1.0,
    )


# ---------------------------------------------------------------------------
# deformed expanding torus map
# ---------------------------------------------------------------------------

# max over the unit ball of rho (1 - rho^2)^2, attained at rho = 1/sqrt(5)
_BUMP_SLOPE = 16.0 / (25.0 * math.sqrt(5.0))


@dataclass(frozen=True)
class ExampleFamilyConfig:
    k: int = 3
    a: float = 0.0
    q: tuple = (0.5, 0.5)
    r_V: float = 0.15
    bump: str = "poly3"  # (1 - (r/r_V)^2)^3 inside V

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("base degree k must be >= 2")
        if self.a < 0:
            raise ValueError("deformation amplitude must be >= 0")
        if self.r_V <= 0:
            raise ValueError("r_V must be positive")
        if self.bump != "poly3":
            raise ValueError(f"unknown bump profile {self.bump!r}")


def bump(cfg: ExampleFamilyConfig, X):
    """Bump value and its two partials at points X (shape (m, 2))."""
    D = TORUS.displacement(np.asarray(cfg.q)[None, :], X)
    r2 = np.sum(D * D, axis=-1) / cfg.r_V**2
    inside = r2 < 1.0
    s = np.where(inside, 1.0 - r2, 0.0)
    phi = s**3
    g = -6.0 * s**2 / cfg.r_V**2
    return phi, g * D[:, 0], g * D[:, 1]


def max_bump_slope(r_V: float) -> float:
    """sup |d phi / dx| for the poly3 bump of radius r_V."""
    return 6.0 * _BUMP_SLOPE / r_V


class DegenerateMapError(ValueError):
    def __init__(self, msg, point=None, value=None):
        super().__init__(msg)
        self.point = point
        self.value = value


def _example_map(cfg: ExampleFamilyConfig) -> MapModel:
    k, a = float(cfg.k), float(cfg.a)

    def f(X):
        phi, _, _ = bump(cfg, X)
        out = np.empty_like(X)
        out[:, 0] = k * X[:, 0] + a * phi
        out[:, 1] = k * X[:, 1]
        return out

    def jac(X):
        _, px, py = bump(cfg, X)
        J = np.zeros((len(X), 2, 2))
        J[:, 0, 0] = k + a * px
        J[:, 0, 1] = a * py
        J[:, 1, 1] = k
        return J

    def pre(Y):
        # y-branches are exact; along x the lift g(x) = kx + a phi(x, y) is
        # strictly increasing (det > 0), so each branch is found by bisection
        ki = int(cfg.k)
        out = []
        for j in range(ki):
            y = (Y[:, 1] + j) / k
            g0 = a * bump(cfg, np.stack([np.zeros_like(y), y], axis=1))[0]
            base = g0 + np.mod(Y[:, 0] - g0, 1.0)
            for i in range(ki):
                t = base + i
                lo = np.zeros_like(y)
                hi = np.ones_like(y)
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    gm = k * mid + a * bump(cfg, np.stack([mid, y], axis=1))[0]
                    below = gm < t
                    lo = np.where(below, mid, lo)
                    hi = np.where(below, hi, mid)
                out.append(np.stack([0.5 * (lo + hi), y], axis=1))
        return TORUS.wrap(np.stack(out))

    slope = max_bump_slope(cfg.r_V)
    s_max = math.hypot(k + a * slope, a * slope) + k
    B = max(2.0, 2.0 * s_max, 2.0 / max(k - a * slope, 1e-12))
    return MapModel(
        name="example",
        space=TORUS,
        f=f,
        jac=jac,
        B=B,
        beta=1.0,
        params={"k": cfg.k, "a": cfg.a, "q": tuple(cfg.q), "r_V": cfg.r_V},
        preimages=pre,
    )


def certification_points(cfg: ExampleFamilyConfig, grid: int = 512, refine: int = 4):
    """Global lattice of grid^2 cell centers plus a refined lattice covering V."""
    g = (np.arange(grid) + 0.5) / grid
    P = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    n_loc = int(math.ceil(2 * cfg.r_V * grid)) * refine
    h_loc = 2.0 * cfg.r_V / n_loc
    loc = cfg.r_V * (-1.0 + (np.arange(n_loc) + 0.5) * 2.0 / n_loc)
    L = np.stack(np.meshgrid(loc, loc, indexing="ij"), axis=-1).reshape(-1, 2)
    L = TORUS.wrap(L + np.asarray(cfg.q)[None, :])
    return np.concatenate([P, L]), min(1.0 / grid, h_loc)


def build_example_family(cfg: ExampleFamilyConfig, grid: int = 512) -> MapModel:
    """The torus map (kx + a phi(x, y), ky) mod 1 with phi the bump supported in V.

    Refuses amplitudes for which det Df <= 0 somewhere on the certification
    lattice, reporting the arg-min of the determinant.
    """
    if cfg.r_V >= 1.0 / (2.0 * cfg.k):
        raise DegenerateMapError(
            f"r_V={cfg.r_V} too large: base map not injective on V (need r_V < 1/(2k))"
        )
    m = _example_map(cfg)
    if cfg.a > 0:
        P, _ = certification_points(cfg, grid)
        det = np.linalg.det(m.jac(P))
        i = int(np.argmin(det))
        if det[i] <= 0:
            raise DegenerateMapError(
                f"det Df <= 0 at {P[i].tolist()} (det={det[i]:.4g}); amplitude a={cfg.a} too large",
                point=P[i],
                value=det[i],
            )
    return m


def example_base(k: int = 3) -> MapModel:
    return build_example_family(ExampleFamilyConfig(k=k, a=0.0))


# ---------------------------------------------------------------------------
# certification of the deformation conditions
# ---------------------------------------------------------------------------


@dataclass
class ConditionRow:
    condition: str
    margin: float
    worst_point: tuple
    passed: bool

    def __post_init__(self):
        self.margin = float(self.margin)
        self.worst_point = tuple(float(v) for v in np.atleast_1d(self.worst_point))
        self.passed = bool(self.passed)

    def csv_row(self):
        x = self.worst_point[0] if len(self.worst_point) > 0 else float("nan")
        y = self.worst_point[1] if len(self.worst_point) > 1 else float("nan")
        return [self.condition, self.margin, x, y, int(self.passed)]


@dataclass
class ConditionReport:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def violations(self) -> list:
        return [r for r in self.rows if not r.passed]

    header = ["condition", "margin", "worst_point_x", "worst_point_y", "pass"]

    def csv_rows(self):
        return [r.csv_row() for r in self.rows]


ValidationReport = ConditionReport


def _lipschitz_slack(values: np.ndarray, grid: int, h: float) -> float:
    """Declared slack: observed neighbour variation on the global lattice,
    scaled to half a cell diagonal at the finest spacing used."""
    V = values[: grid * grid].reshape(grid, grid)
    dx = np.abs(np.diff(V, axis=0, append=V[:1])).max()
    dy = np.abs(np.diff(V, axis=1, append=V[:, :1])).max()
    lip = max(dx, dy) * grid
    return lip * h * math.sqrt(2.0) / 2.0


def verify_example_conditions(
    m: MapModel,
    V_center,
    V_radius: float,
    sigma0: float,
    sigma1: float,
    delta_V: float,
    grid: int = 512,
) -> ConditionReport:
    """Grid certification of the volume-expansion / not-too-contracting conditions.

    Outside V the bound is ||Df^{-1}|| < 1/sigma0 (sigma0 > 1).
    """
    if grid < 64:
        raise ValueError("certification grid must have >= 64 points per axis")
    cfg = ExampleFamilyConfig(
        k=int(m.params.get("k", 3)), a=float(m.params.get("a", 0.0)),
        q=tuple(V_center), r_V=float(V_radius),
    )
    P, h = certification_points(cfg, grid)
    ld, li = log_det_and_inv_norm(m.jacobian(P))
    det = np.exp(ld)
    inv = np.exp(li)
    rV = TORUS.distance(P, np.asarray(V_center)[None, :])
    rows = []

    slack = _lipschitz_slack(det, grid, h)
    i = int(np.argmin(det))
    margin = det[i] - slack - sigma1
    rows.append(ConditionRow("volume_expanding", float(margin), tuple(P[i]), margin > 0))

    slack_inv = _lipschitz_slack(inv, grid, h)
    inV = rV <= V_radius + h
    if inV.any():
        j = np.flatnonzero(inV)[int(np.argmax(inv[inV]))]
        margin = (1.0 + delta_V) - (inv[j] + slack_inv)
        rows.append(ConditionRow("not_too_contracting_on_V", float(margin), tuple(P[j]), margin > 0))

    out = rV > V_radius
    j = np.flatnonzero(out)[int(np.argmax(inv[out]))]
    margin = 1.0 / sigma0 - (inv[j] + slack_inv)
    rows.append(ConditionRow("expanding_outside_V", float(margin), tuple(P[j]), margin > 0))
    return ConditionReport(rows)


def certify_amplitude(
    base: ExampleFamilyConfig,
    sigma0: float,
    sigma1: float,
    delta_V: float,
    grid: int = 512,
    tol: float = 1e-4,
) -> float:
    """Largest amplitude a (to ``tol``) whose map passes grid certification."""

    def ok(a):
        cfg = ExampleFamilyConfig(k=base.k, a=a, q=base.q, r_V=base.r_V)
        try:
            m = build_example_family(cfg, grid)
        except DegenerateMapError:
            return False
        return verify_example_conditions(m, cfg.q, cfg.r_V, sigma0, sigma1, delta_V, grid).passed

    if not ok(0.0):
        raise DegenerateMapError("undeformed map fails the certification constants")
    lo, hi = 0.0, base.k / max_bump_slope(base.r_V)
    if ok(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


# ---------------------------------------------------------------------------
# non-degeneracy of the critical set
# ---------------------------------------------------------------------------


def validate_nondegeneracy(m: MapModel, samples: int, seed: int, B=None, beta=None) -> ValidationReport:
    """Sampled check of the power-of-distance bounds and the local Lipschitz bounds.

    With an empty critical set the distance factor is replaced by 1 (uniform
    derivative bounds and a global Lipschitz constant).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    B = m.B if B is None else B
    beta = m.beta if beta is None else beta
    rng = make_rng(seed, 1)
    d = m.dim
    sp = m.space
    X = sp.lo + (sp.hi - sp.lo) * rng.random((samples, d))
    dist = m.crit_dist(X)
    keep = dist > 0
    X, dist = X[keep], dist[keep]
    dfac = np.where(np.isfinite(dist), dist, 1.0)

    V = rng.normal(size=(len(X), d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    J = m.jacobian(X)
    Jv = np.linalg.norm(np.einsum("mij,mj->mi", J, V), axis=1)
    with np.errstate(divide="ignore"):
        lower = np.log(Jv) - np.log(dfac**beta / B)
        upper = np.log(B * dfac ** (-beta)) - np.log(Jv)

    # pairs with dist(x, y) < dist(x, C)/2
    radius = np.where(np.isfinite(dist), dist / 2.0, 0.5) * rng.random(len(X)) * 0.999
    W = rng.normal(size=(len(X), d))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    Y = X + radius[:, None] * W
    if sp.periodic:
        Y = sp.wrap(Y)
    inside = sp.contains(Y)
    dxy = sp.distance(X, Y)
    ldx, lix = log_det_and_inv_norm(J)
    ldy, liy = log_det_and_inv_norm(m.jacobian(Y))
    bound = B * dxy / dfac**beta
    s2 = np.where(inside, bound - np.abs(lix - liy), np.inf)
    s3 = np.where(inside, bound - np.abs(ldx - ldy), np.inf)

    rows = []
    for name, marg in (("s1_lower", lower), ("s1_upper", upper), ("s2_lipschitz_inv_norm", s2), ("s3_lipschitz_log_det", s3)):
        marg = np.where(np.isnan(marg), -np.inf, marg)
        i = int(np.argmin(marg))
        pt = tuple(np.atleast_1d(X[i]).tolist())
        rows.append(ConditionRow(name, float(marg[i]), pt, bool(marg[i] >= 0)))
    return ConditionReport(rows)


# ---------------------------------------------------------------------------
# constants of the deformation example
# ---------------------------------------------------------------------------


def binary_entropy(t: float) -> float:
    if t <= 0.0 or t >= 1.0:
        return 0.0
    return -t * math.log(t) - (1.0 - t) * math.log(1.0 - t)


def counting_residual(theta: float, p: int, sigma1: float) -> float:
    """(1 - theta) log sigma1 - gamma(theta) - theta log p; positive means admissible."""
    return (1.0 - theta) * math.log(sigma1) - binary_entropy(theta) - theta * math.log(p)


def theta_from_counting(p: int, sigma1: float, floor: float = 1e-6) -> float:
    """Largest theta in (0, 1/2] with e^{gamma(theta)} p^theta < sigma1^{1 - theta}."""
    if sigma1 <= 1.0:
        raise ValueError("sigma1 must exceed 1 (volume expansion)")
    if p < 1:
        raise ValueError("p must be >= 1")
    if counting_residual(0.5, p, sigma1) > 0:
        return 0.5
    if counting_residual(floor, p, sigma1) <= 0:
        return 0.0
    lo, hi = floor, 0.5
    # the residual is concave in theta and positive at 0+, so the admissible
    # set is an interval starting at 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if counting_residual(mid, p, sigma1) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def lambda_from_theta(sigma0: float, delta_V: float, theta: float):
    """theta log sigma0 - (1 - theta) log(1 + delta_V) if positive, else None."""
    lam = theta * math.log(sigma0) - (1.0 - theta) * math.log1p(delta_V)
    return lam if lam > 0 else None


# ---------------------------------------------------------------------------
# registry for configs
# ---------------------------------------------------------------------------


def map_from_name(name: str, params: Optional[dict] = None) -> MapModel:
    params = dict(params or {})
    if name == "doubling":
        return doubling()
    if name == "circle":
        return expanding_circle(int(params.get("k", 2)))
    if name == "tent":
        return tent()
    if name == "chebyshev":
        return chebyshev()
    if name == "identity":
        return identity(TORUS if params.get("space") == "torus" else CIRCLE)
    if name == "example":
        cfg = ExampleFamilyConfig(
            k=int(params.get("k", 3)),
            a=float(params.get("a", 0.0)),
            q=tuple(params.get("q", (0.5, 0.5))),
            r_V=float(params.get("r_V", 0.15)),
        )
        return build_example_family(cfg)
    raise ValueError(f"unknown map family {name!r}")
