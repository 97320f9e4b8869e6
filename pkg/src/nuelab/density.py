"""Invariant densities on cell grids: Ulam matrices, the tower pushforward, L1 sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.stats import spearmanr

from .maps import BatchOrbit, ExampleFamilyConfig, MapModel, PhaseSpace, build_example_family
from .rng import make_rng
from .tower import box_cell, pullback, rep_states


class NonConvergence(RuntimeError):
    def __init__(self, msg, residual=math.nan):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class Grid:
    """Uniform product grid of cells over a phase space."""

    space: PhaseSpace
    n: tuple  # cells per axis

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        if len(n) != self.space.dim or min(n) < 1:
            raise ValueError(f"need {self.space.dim} positive cell counts, got {self.n}")
        object.__setattr__(self, "n", n)

    @classmethod
    def regular(cls, space: PhaseSpace, n: int) -> "Grid":
        return cls(space, (n,) * space.dim)

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def widths(self) -> np.ndarray:
        return (self.space.hi - self.space.lo) / np.asarray(self.n, dtype=float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def volumes(self) -> np.ndarray:
        return np.full(self.size, self.cell_volume)

    def lower_corners(self) -> np.ndarray:
        idx = np.stack(np.unravel_index(np.arange(self.size), self.n), axis=1)
        return self.space.lo + idx * self.widths

    def centers(self) -> np.ndarray:
        return self.lower_corners() + 0.5 * self.widths

    def cell_of(self, X) -> np.ndarray:
        """Flat cell index of each point; interval points are clamped to the edge cells."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        if self.space.periodic:
            X = self.space.wrap(X)
        u = np.floor((X - self.space.lo) / self.widths).astype(np.int64)
        u = np.clip(u, 0, np.asarray(self.n) - 1)
        return np.ravel_multi_index(tuple(u.T), self.n)


@dataclass
class DensityEstimate:
    grid: Grid
    weights: np.ndarray  # density value per cell
    normalized: bool = True
    residual: float = math.nan

    @property
    def masses(self) -> np.ndarray:
        return self.weights * self.grid.volumes

    @property
    def integral(self) -> float:
        return float(self.masses.sum())

    @property
    def header(self):
        return ["cell_id", "x", "y", "value"] if self.grid.dim == 2 else ["cell_id", "x", "value"]

    def csv_rows(self):
        C = self.grid.centers()
        return [[i, *map(float, C[i]), float(self.weights[i])] for i in range(self.grid.size)]


def density_from_masses(grid: Grid, masses, residual: float = math.nan) -> DensityEstimate:
    masses = np.asarray(masses, dtype=float)
    total = masses.sum()
    if not total > 0:
        raise ValueError("zero total mass")
    return DensityEstimate(grid, masses / total / grid.volumes, True, residual)


def uniform_density(grid: Grid) -> DensityEstimate:
    return DensityEstimate(grid, np.full(grid.size, 1.0 / grid.space.volume))


def arcsine_density(grid: Grid) -> DensityEstimate:
    """Cell averages of 1/(pi sqrt(1 - x^2)) on [-1, 1] (exact per cell)."""
    if grid.dim != 1 or float(np.min(grid.space.lo)) != -1.0 or float(np.max(grid.space.hi)) != 1.0:
        raise ValueError("arcsine density lives on [-1, 1]")
    edges = np.linspace(-1.0, 1.0, grid.n[0] + 1)
    mass = np.diff(np.arcsin(np.clip(edges, -1.0, 1.0))) / math.pi
    return DensityEstimate(grid, mass / grid.widths[0])


def l1_distance(h1: DensityEstimate, h2: DensityEstimate) -> float:
    if h1.grid != h2.grid:
        raise ValueError("densities live on different grids")
    return float(np.sum(np.abs(h1.weights - h2.weights) * h1.grid.volumes))


# ---------------------------------------------------------------------------
# Ulam matrix and its fixed density
# ---------------------------------------------------------------------------


@dataclass
class TransferMatrix:
    grid: Grid
    P: sparse.csr_matrix  # row-stochastic, rows = source cells
    samples_per_cell: int
    seed: int


def _strata(samples: int, dim: int) -> int:
    """Strata per axis when ``samples`` is a perfect d-th power, else 1."""
    s = int(round(samples ** (1.0 / dim)))
    return s if s**dim == samples else 1


def cell_samples(grid: Grid, cells: np.ndarray, samples: int, rng) -> np.ndarray:
    """Jittered stratified samples: ``samples`` points per listed cell, cell-major."""
    d = grid.dim
    s = _strata(samples, d)
    if s > 1:
        sub = np.stack(np.unravel_index(np.arange(samples), (s,) * d), axis=1).astype(float)
    else:
        sub = np.zeros((samples, d))
    U = (sub[None, :, :] + rng.random((len(cells), samples, d))) / s
    lo = grid.lower_corners()[cells]
    return (lo[:, None, :] + U * grid.widths).reshape(-1, d)


def transfer_matrix(
    m: MapModel, grid: Grid, samples_per_cell: int, seed: int, chunk: int = 1 << 20
) -> TransferMatrix:
    """Row i is the histogram of f over ``samples_per_cell`` stratified samples of cell i."""
    if samples_per_cell < 16:
        raise ValueError("samples_per_cell must be >= 16")
    if grid.space != m.space:
        raise ValueError("grid and map live on different spaces")
    rng = make_rng(seed, 41)
    per = max(1, chunk // samples_per_cell)
    rows, cols = [], []
    for start in range(0, grid.size, per):
        cells = np.arange(start, min(start + per, grid.size))
        X = cell_samples(grid, cells, samples_per_cell, rng)
        Y = m(X)
        rows.append(np.repeat(cells, samples_per_cell))
        cols.append(grid.cell_of(Y))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    P = sparse.coo_matrix(
        (np.full(len(r), 1.0 / samples_per_cell), (r, c)), shape=(grid.size, grid.size)
    ).tocsr()
    P.sum_duplicates()
    return TransferMatrix(grid, P, samples_per_cell, seed)


def _power_iteration(P: sparse.csr_matrix, p0: np.ndarray, tol: float, max_iter: int, renormalize: bool):
    PT = P.T.tocsr()
    p = p0 / p0.sum()
    res = math.inf
    for _ in range(max_iter):
        q = PT @ p
        if renormalize:
            s = q.sum()
            if not s > 0:
                raise NonConvergence("all mass escaped", math.inf)
            q /= s
        res = float(np.abs(q - p).sum())
        p = q
        if res <= tol:
            break
    q = PT @ p
    if renormalize:
        q /= q.sum()
    res = float(np.abs(q - p).sum())
    return p, res


def stationary_density(T: TransferMatrix, tol: float = 1e-10, max_iter: int = 20000) -> DensityEstimate:
    """Power iteration from the uniform density; the returned residual is ||hP - h||_1."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    p0 = T.grid.volumes / T.grid.space.volume
    p, res = _power_iteration(T.P, p0, tol, max_iter, renormalize=False)
    if res > tol:
        raise NonConvergence(f"power iteration did not reach tol={tol}: residual {res:.3e}", res)
    return density_from_masses(T.grid, p, res)


def invariance_residual(T: TransferMatrix, h: DensityEstimate) -> float:
    """||P h - h||_1 of a density under an (independent) Ulam matrix."""
    p = h.masses
    return float(np.abs(T.P.T @ p - p).sum())


# ---------------------------------------------------------------------------
# induced density and the pushforward along the tower
# ---------------------------------------------------------------------------


@dataclass
class PushforwardResult:
    mu_F: np.ndarray  # induced invariant masses per partition cell (zero off returned cells)
    mu_F_residual: float
    mu: DensityEstimate  # normalized pushforward on the global grid
    total_mass: float  # before normalization
    tower_integral: float  # sum over elements of R mu_F(element)
    conservation_error: float  # relative
    sum_R: float  # sum of R m(element), reported
    escaped_mass: float  # induced images landing off the returned cells, per unit mass
    censored_fraction: float


def _disk_targets(P, k: int, rng) -> np.ndarray:
    """k uniform points of Delta_0 per element, element-major."""
    E = len(P.elements)
    d = P.dim
    out = np.empty((E * k, d))
    got = 0
    while got < E * k:
        need = E * k - got
        U = 2.0 * rng.random((2 * need + 16, d)) - 1.0
        U = U[np.sum(U * U, axis=1) < 1.0][:need]
        out[got:got + len(U)] = U
        got += len(U)
    X = np.asarray(P.disk.p, dtype=float)[None, :] + P.disk.delta0 * out
    return P.map.space.wrap(X) if P.map.space.periodic else X


def induced_density_and_pushforward(
    P,
    grid: Grid,
    tol: float = 1e-12,
    samples_per_element: int = 8,
    seed: int = 0,
    max_iter: int = 20000,
) -> PushforwardResult:
    """mu_F of the induced map on the partition cells, then sum_j f^j_*(mu_F | {R > j}).

    Each element maps onto Delta_0 along the branch of its center cell; its
    row spreads the element's mass over the cells of Delta_0 with weights
    1/|det DF| at pullbacks of uniform targets.  Targets on censored cells
    leave the chain and mu_F is the renormalized (quasi-stationary) fixed
    point; the escaped fraction is reported.  The pushforward deposits
    mu_F(cell) on the global grid at f^j of the cell's representative for
    every level j < R(cell).
    """
    if P.censored_fraction >= 0.10:
        raise ValueError(
            f"censored mass {P.censored_fraction:.1%} >= 10%: the pushforward would be truncated"
        )
    if not P.elements:
        raise ValueError("partition has no elements")
    m = P.map
    if grid.space != m.space:
        raise ValueError("grid and map live on different spaces")
    cells = np.flatnonzero(P.in_delta0 & (P.R > 0))
    nc = len(cells)
    local = np.full(len(P.R), -1, dtype=np.int64)
    local[cells] = np.arange(nc)
    E = len(P.elements)
    k = samples_per_element
    rng = make_rng(seed, 51)

    # element rows from pulled-back targets
    T = _disk_targets(P, k, rng)
    owner = np.repeat(np.arange(E), k)
    steps = np.array([el.R for el in P.elements])
    centers = np.array([el.center for el in P.elements])
    start = rep_states(P, centers)
    with np.errstate(all="ignore"):
        D0, _, ld, _, _ = pullback(m, start, owner, steps, T)
    w = np.exp(-(ld - np.repeat(ld.reshape(E, k).min(axis=1), k)))
    w[~np.isfinite(w)] = 0.0
    tot = np.bincount(owner, weights=w, minlength=E)
    if np.any(tot <= 0):
        raise NonConvergence("an element has no usable branch samples", math.inf)
    w /= tot[owner]
    dst = local[np.maximum(box_cell(P, T), 0)]
    dst[box_cell(P, T) < 0] = -1
    keep = dst >= 0
    Wm = sparse.coo_matrix((w[keep], (owner[keep], dst[keep])), shape=(E, nc)).tocsr()
    agg = sparse.coo_matrix(
        (np.ones(nc), (np.arange(nc), P.elem[cells])), shape=(nc, E)
    ).tocsr()

    p = np.full(nc, 1.0 / nc)
    res = math.inf
    escaped = 0.0
    WT, aggT = Wm.T.tocsr(), agg.T.tocsr()
    for _ in range(max_iter):
        q = WT @ (aggT @ p)
        s = q.sum()
        if not s > 0:
            raise NonConvergence("all mass escaped", math.inf)
        escaped = 1.0 - s
        q /= s
        res = float(np.abs(q - p).sum())
        p = q
        if res <= tol:
            break
    if res > tol:
        raise NonConvergence(f"induced power iteration did not reach tol={tol}: residual {res:.3e}", res)
    muF = p

    # pushforward along representative orbits: cell c carries mu_F(c) at
    # f^j(rep_c) for j = 0..R(c)-1; each representative is one stratified
    # sample of the cell, whose image is not tracked beyond the branch
    acc = np.zeros(grid.size)
    Rc = P.R[cells]
    orbit = BatchOrbit.from_state(m, rep_states(P, cells))
    for j in range(int(Rc.max())):
        live = Rc > j
        acc += np.bincount(grid.cell_of(orbit.points[live]), weights=muF[live], minlength=grid.size)
        orbit.step()
    Rc = P.R[cells]
    total = float(acc.sum())
    tower = float(np.sum(P.R[cells] * muF))
    cons = abs(total - tower) / tower
    sum_R = float(sum(el.R * len(el.cells) for el in P.elements) * P.cell_volume)
    full = np.zeros(len(P.R))
    full[cells] = muF
    return PushforwardResult(full, res, density_from_masses(grid, acc), total, tower, cons, sum_R,
                             escaped, P.censored_fraction)


# ---------------------------------------------------------------------------
# statistical stability along the example family
# ---------------------------------------------------------------------------


@dataclass
class StabilityCurve:
    a0: float
    a: list
    distances: list
    floor: float
    spearman: float
    pipeline: str
    grid_n: tuple
    seed: int
    floor_parts: dict = field(default_factory=dict)

    header = ["a", "distance", "floor"]

    def csv_rows(self):
        return [[float(a), float(d), float(self.floor)] for a, d in zip(self.a, self.distances)]

    @property
    def decreasing(self) -> bool:
        return bool(self.spearman >= 0.9)

    @property
    def below_floor_at_smallest(self) -> bool:
        off = [abs(a - self.a0) for a in self.a]
        i = int(np.argmin(off))
        return bool(self.distances[i] <= self.floor)


def _coarsen(h: DensityEstimate, factor: int) -> DensityEstimate:
    """Average a density over blocks of factor^d cells."""
    n = h.grid.n
    if any(v % factor for v in n):
        raise ValueError("grid does not coarsen by this factor")
    W = h.weights.reshape(n)
    for ax in range(len(n)):
        shape = list(W.shape)
        shape[ax : ax + 1] = [shape[ax] // factor, factor]
        W = W.reshape(shape).mean(axis=ax + 1)
    return DensityEstimate(Grid(h.grid.space, tuple(v // factor for v in n)), W.reshape(-1), h.normalized)


def stability_sweep(
    family: ExampleFamilyConfig,
    a0: float,
    a_list: Sequence[float],
    grid: Grid,
    pipeline: str = "direct",
    seed: int = 0,
    *,
    a_max: float,
    samples_per_cell: int = 16,
    tol: float = 1e-10,
    tower_density: Optional[Callable[[MapModel, int], DensityEstimate]] = None,
) -> StabilityCurve:
    """||h_a - h_a0||_1 along a parameter sweep, with the Monte Carlo / grid floor.

    All maps share one seed (common random numbers).  The floor is the larger
    of the seed discrepancy at a0 and the discrepancy between the grid and
    its 2x refinement (compared on the grid itself).  ``pipeline="tower"``
    needs ``tower_density(map, seed)``.
    """
    for a in [a0, *a_list]:
        if not 0.0 <= a <= a_max:
            raise ValueError(f"a={a} outside the certified range [0, {a_max}]")
    if pipeline not in ("direct", "tower"):
        raise ValueError(f"unknown pipeline {pipeline!r}")
    if pipeline == "tower" and tower_density is None:
        raise ValueError("the tower pipeline needs tower_density")

    def fmap(a):
        return build_example_family(
            ExampleFamilyConfig(k=family.k, a=a, q=family.q, r_V=family.r_V, bump=family.bump)
        )

    def dens(a, s, g=grid):
        m = fmap(a)
        if pipeline == "tower":
            return tower_density(m, s)
        return stationary_density(transfer_matrix(m, g, samples_per_cell, s), tol)

    h0 = dens(a0, seed)
    dist = [0.0 if a == a0 else l1_distance(dens(a, seed), h0) for a in a_list]
    seed_gap = l1_distance(dens(a0, seed + 1), h0)
    parts = {"seed": seed_gap}
    if pipeline == "direct":
        fine = Grid(grid.space, tuple(2 * v for v in grid.n))
        parts["resolution"] = l1_distance(_coarsen(dens(a0, seed, fine), 2), h0)
    floor = max(parts.values())
    off = [abs(a - a0) for a in a_list]
    if len(a_list) >= 2 and len(set(off)) > 1:
        rho = float(spearmanr(off, dist).statistic)
    else:
        rho = float("nan")
    return StabilityCurve(a0, [float(a) for a in a_list], dist, floor, rho, pipeline, grid.n, seed, parts)
