"""Grid realization of the inductive Markov partition of a small ball.

The ball Delta_0 = B(p, delta0) is covered by a regular grid of cells of side
h, padded by one ring of cells so that every cell of Delta_0 has all its face
neighbours.  Each cell is followed through a single representative point.  At
step n the cells whose n-th image lies in B(p, 2 sqrt(delta0)) and which are
still eligible are grouped into face-connected components; a component is a
full preimage (it is mapped onto the big ball) when none of its face
neighbours outside the eligible set also lands in the big ball.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .constants import ConstantsLedger
from .hyptimes import HypConfig, _truncated_log_dist, _window_threshold
from .maps import BatchOrbit, MapModel, as_points, log_det_and_inv_norm, operator_norm
from .rng import make_rng, uniform_in_ball


class CollarViolation(RuntimeError):
    """A new collar overlaps cells still waiting in an older collar."""


class NoBasePoint(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# base point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseDisk:
    p: tuple
    delta0: float
    N0: int = 0
    K0: float = 1.0
    D0: float = 0.0
    periodic: bool = True

    def __post_init__(self):
        if not 0 < self.delta0 < 0.25:
            raise ValueError("delta0 must lie in (0, 1/4) so that the four radii are ordered")
        if self.periodic and 2.0 * math.sqrt(self.delta0) >= 0.5:
            raise ValueError("B(p, 2 sqrt(delta0)) must be embedded in the torus: need delta0 < 1/16")

    @property
    def radii(self):
        r = math.sqrt(self.delta0)
        return (self.delta0, 2.0 * self.delta0, r, 2.0 * r)

    def same_as(self, other: "BaseDisk") -> bool:
        return tuple(self.p) == tuple(other.p) and self.delta0 == other.delta0


def preimage_tree(m: MapModel, p, depth: int):
    """Levels [p], f^-1 p, ..., f^-depth p as arrays of points."""
    if m.preimages is None:
        raise ValueError(f"map {m.name} has no inverse branches")
    levels = [as_points(p, m.dim)]
    for _ in range(depth):
        P = m.preimages(levels[-1])
        levels.append(P.reshape(-1, m.dim))
    return levels


def covering_radius_at_most(space, P: np.ndarray, r: float, max_points: int = 4_000_000, max_depth: int = 30):
    """Certify that every point of the space lies within r of P.

    Test cells of side g are accepted when the distance from their center to
    P plus half their diagonal is at most r; ambiguous cells are subdivided.
    Returns True (certified), False (a witness farther than r was found) or
    None (undecided within the point budget).
    """
    d = space.dim
    Q = space.wrap(P) if space.periodic else P
    tree = cKDTree(Q, boxsize=1.0 if space.periodic else None)
    n_axis = max(1, int(math.ceil((space.hi - space.lo) / r)))
    g = (space.hi - space.lo) / n_axis
    if n_axis**d > max_points:
        return None
    ax = space.lo + (np.arange(n_axis) + 0.5) * g
    T = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    kids = np.stack(np.meshgrid(*([np.array([-0.25, 0.25])] * d), indexing="ij"), axis=-1).reshape(-1, d)
    for _ in range(max_depth):
        dist, _ = tree.query(T)
        if np.any(dist > r):
            return False
        amb = dist + g * math.sqrt(d) / 2.0 > r
        if not amb.any():
            return True
        T = (T[amb][:, None, :] + g * kids[None, :, :]).reshape(-1, d)
        g /= 2.0
        if len(T) > max_points:
            return None
    return None


def spacing_at_most(space, P: np.ndarray, r: float) -> bool:
    """1D reading: consecutive points of P (on the circle/interval) at most r apart."""
    if space.dim != 1:
        raise ValueError("gap test is one-dimensional")
    x = np.sort(space.wrap(P)[:, 0] if space.periodic else P[:, 0])
    gaps = np.diff(x)
    if space.periodic:
        gaps = np.append(gaps, x[0] + 1.0 - x[-1])
    else:
        gaps = np.concatenate([[x[0] - space.lo], gaps, [space.hi - x[-1]]])
    return bool(gaps.max() <= r + 1e-15)


def measure_branch_constants(m: MapModel, p, delta0: float, N0: int, samples: int = 2048, seed: int = 0):
    """(K0, D0) over inverse branches of B(p, 2 sqrt(delta0)) up to depth N0.

    K0 bounds ||Df^j|| and ||Df^j^{-1}|| on j-preimages; D0 is the largest
    observed ratio |log det Df^j(x) - log det Df^j(y)| / dist(f^j x, f^j y).
    """
    rng = make_rng(seed, 11)
    r3 = 2.0 * math.sqrt(delta0)
    Y1 = uniform_in_ball(m.space, p, r3, samples, rng)
    Y2 = uniform_in_ball(m.space, p, r3, samples, rng)
    if N0 == 0:
        return 1.0, 0.0
    # walk both samples down the same branches
    lv1, lv2 = [Y1], [Y2]
    for _ in range(N0):
        P1 = m.preimages(lv1[-1])
        P2 = m.preimages(lv2[-1])
        pick = rng.integers(0, P1.shape[0], size=samples)
        lv1.append(P1[pick, np.arange(samples)])
        lv2.append(P2[pick, np.arange(samples)])
    K0 = 1.0
    D0 = 0.0
    for j in range(1, N0 + 1):
        X1, X2 = lv1[j], lv2[j]
        M1 = np.broadcast_to(np.eye(m.dim), (samples, m.dim, m.dim)).copy()
        ld1 = np.zeros(samples)
        ld2 = np.zeros(samples)
        Z1, Z2 = X1, X2
        for _ in range(j):
            J1 = m.jacobian(Z1)
            M1 = J1 @ M1
            ld1 += log_det_and_inv_norm(J1)[0]
            ld2 += log_det_and_inv_norm(m.jacobian(Z2))[0]
            Z1, Z2 = m(Z1), m(Z2)
        nrm = operator_norm(M1)
        _, li = log_det_and_inv_norm(M1)
        if not np.all(np.isfinite(li)):
            raise NoBasePoint("an inverse branch meets the critical set")
        K0 = max(K0, float(nrm.max()), float(np.exp(li).max()))
        sep = m.space.distance(lv1[0], lv2[0])
        ok = sep > 1e-12
        if ok.any():
            D0 = max(D0, float((np.abs(ld1 - ld2)[ok] / sep[ok]).max()))
    return K0, D0


def choose_base_point(
    m: MapModel,
    delta1: float,
    N0_cap: int,
    delta0: float = 0.01,
    candidates: Optional[Sequence] = None,
    density: str = "covering",
    seed: int = 0,
    max_points: int = 5_000_000,
) -> BaseDisk:
    """First candidate p whose preimages up to some depth N0 <= N0_cap are
    delta1/3-dense and avoid the critical set.

    ``density="covering"`` asks every point of the space to lie within
    delta1/3 of the preimage set; ``density="spacing"`` (1D only) asks
    consecutive preimages to be at most delta1/3 apart.
    """
    sp = m.space
    if candidates is None:
        n = 8
        ax = sp.lo + (sp.hi - sp.lo) * ((np.arange(n) + 0.5) / n + 0.0123)
        candidates = np.stack(np.meshgrid(*([ax] * m.dim), indexing="ij"), axis=-1).reshape(-1, m.dim)
    r = delta1 / 3.0
    for p in np.asarray(candidates, dtype=float).reshape(-1, m.dim):
        if m.has_critical and m.crit_dist(p)[0] <= 0:
            continue
        if m.preimages is None:
            raise ValueError(f"map {m.name} has no inverse branches")
        level = p[None, :]
        P = level
        for j in range(N0_cap + 1):
            if j > 0:
                n_branches = m.preimages(level[:1]).shape[0]
                if len(P) + n_branches * len(level) > max_points:
                    break
                level = m.preimages(level).reshape(-1, m.dim)
                P = np.concatenate([P, level])
            if m.has_critical and np.any(m.crit_dist(level) <= 0):
                break
            ok = spacing_at_most(sp, P, r) if density == "spacing" else covering_radius_at_most(sp, P, r)
            if ok:
                K0, D0 = measure_branch_constants(m, p, delta0, j, seed=seed)
                return BaseDisk(tuple(float(v) for v in p), delta0, j, K0, D0, sp.periodic)
    raise NoBasePoint(
        f"no admissible base point with N0 <= {N0_cap} within {max_points} preimages; "
        "increase N0_cap or max_points"
    )


# ---------------------------------------------------------------------------
# partition
# ---------------------------------------------------------------------------


@dataclass
class Element:
    id: int
    R: int
    cells: np.ndarray  # flat box indices
    center: int


@dataclass
class TowerPartition:
    map: MapModel
    disk: BaseDisk
    h: float
    n_max: int
    R0: int
    eps: float
    sigma: float
    shape: tuple
    centers: np.ndarray  # (cells, d) box cell centers
    reps: np.ndarray  # (cells, d) representative points
    rep_state: Optional[np.ndarray]  # exact lattice states for lattice maps
    in_delta0: np.ndarray  # bool (cells,)
    R: np.ndarray  # int (cells,), 0 = not returned by n_max
    t: np.ndarray  # collar counters at n_max
    elem: np.ndarray  # element id per cell, -1 if none
    elements: list
    history: dict
    k_max: int
    seed: int
    jitter: float

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def n_cells(self) -> int:
        return int(self.in_delta0.sum())

    @property
    def delta0_measure(self) -> float:
        return self.n_cells * self.cell_volume

    @property
    def returned(self) -> np.ndarray:
        return self.R > 0

    @property
    def censored(self) -> np.ndarray:
        return self.in_delta0 & (self.R == 0)

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.sum() / self.n_cells)

    def level_mask(self, j: int) -> np.ndarray:
        return self.R == j

    def comparable(self, other: "TowerPartition") -> bool:
        return (
            self.disk.same_as(other.disk)
            and self.shape == other.shape
            and self.h == other.h
            and self.seed == other.seed
            and self.jitter == other.jitter
        )

    def csv_header(self) -> list:
        return [
            f"# map={self.map.name}",
            f"# params={self.map.params}",
            f"# p={list(self.disk.p)}",
            f"# delta0={self.disk.delta0!r}",
            f"# h={self.h!r}",
            f"# n_max={self.n_max}",
        ]

    def csv_rows(self):
        rows = []
        for c in np.flatnonzero(self.in_delta0):
            x = self.centers[c]
            if self.R[c] > 0:
                status, val = "returned", int(self.R[c])
            elif self.t[c] > 0:
                status, val = "collar", int(self.t[c])
            else:
                status, val = "unassigned", 0
            y = float(x[1]) if len(x) > 1 else ""
            rows.append([int(c), float(x[0]), y, status, val])
        return rows


def grid_geometry(disk: BaseDisk, dim: int, h: float):
    """(h, n_axis, centers, in_delta0) for the padded grid over B(p, delta0)."""
    ncell = int(round(2.0 * disk.delta0 / h))
    if ncell < 1 or abs(ncell * h - 2.0 * disk.delta0) > 1e-9 * disk.delta0:
        raise ValueError("h must divide the diameter 2 delta0")
    h = 2.0 * disk.delta0 / ncell
    nb = ncell + 2
    ax = (np.arange(nb) - 0.5) * h - disk.delta0
    off = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    inside = np.sqrt(np.sum(off * off, axis=1)) < disk.delta0
    centers = off + np.asarray(disk.p, dtype=float)[None, :]
    return h, nb, centers, inside


def ring_index(u, sigma: float, k_max: int):
    """Smallest s >= 1 with sigma^(s/2) < u (u = dist/delta0 - 1), capped at k_max."""
    u = np.asarray(u, dtype=float)
    u2 = u * u
    with np.errstate(divide="ignore"):
        s = np.floor(np.log(u2) / math.log(sigma)) + 1.0
    s = np.where(np.isfinite(s), s, float(k_max))
    s = np.clip(s, 1.0, float(k_max))
    for _ in range(2):
        down = (s > 1) & (sigma ** (s - 1) < u2)
        s = np.where(down, s - 1, s)
        up = (s < k_max) & ~(sigma**s < u2)
        s = np.where(up, s + 1, s)
    return s.astype(np.int64)


def ring_cap(delta0: float, sigma: float, h: float) -> int:
    """First k whose ring delta0 sigma^((k-1)/2) (1 - sigma^(1/2)) is thinner than h."""
    w = delta0 * (1.0 - math.sqrt(sigma))
    k = 1
    while w * sigma ** ((k - 1) / 2.0) >= h:
        k += 1
    return k


def box_cell_coords(P: "TowerPartition", X) -> np.ndarray:
    """Integer box coordinates of the cells containing X (may fall outside the box)."""
    p = np.asarray(P.disk.p, dtype=float)[None, :]
    D = P.map.space.displacement(p, X) if P.map.space.periodic else np.asarray(X) - p
    return np.floor(D / P.h + 0.5 * P.shape[0]).astype(np.int64)


def box_cell(P: "TowerPartition", X) -> np.ndarray:
    """Flat box cell containing each point, -1 outside the box."""
    u = box_cell_coords(P, X)
    ok = np.all((u >= 0) & (u < P.shape[0]), axis=1)
    out = np.full(len(u), -1, dtype=np.int64)
    out[ok] = np.ravel_multi_index(tuple(u[ok].T), P.shape)
    return out


def _face_pairs(shape):
    """Flat index pairs (c, c + e_ax) of face-adjacent cells, one array pair per axis."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    out = []
    for ax in range(len(shape)):
        lo = [slice(None)] * len(shape)
        hi = [slice(None)] * len(shape)
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        out.append((idx[tuple(lo)].reshape(-1), idx[tuple(hi)].reshape(-1)))
    return out


def build_partition(
    m: MapModel,
    ledger: Optional[ConstantsLedger],
    disk: BaseDisk,
    h: float,
    n_max: int,
    *,
    R0: Optional[int] = None,
    sigma: Optional[float] = None,
    delta_hyp: Optional[float] = None,
    b: Optional[float] = None,
    eps: Optional[float] = None,
    seed: int = 0,
    jitter: float = 1.0,
    min_cells: int = 1000,
    on_step: Optional[Callable] = None,
) -> TowerPartition:
    """Run the inductive construction up to n_max.

    Constants default to the ledger's; R0 can be overridden because the
    ledger's proof-grade value usually exceeds any affordable horizon.
    """
    if ledger is not None:
        sigma = ledger.sigma if sigma is None else sigma
        delta_hyp = ledger.base.delta_hyp if delta_hyp is None else delta_hyp
        b = ledger.base.b if b is None else b
        eps = ledger.eps_collar if eps is None else eps
        R0 = ledger.R0 if R0 is None else R0
    if sigma is None or eps is None or R0 is None:
        raise ValueError("sigma, eps and R0 are needed (from a ledger or explicitly)")
    delta_hyp = 0.1 if delta_hyp is None else delta_hyp
    b = 0.25 if b is None else b
    cfg = HypConfig(sigma=sigma, delta_hyp=delta_hyp, b=b, beta=m.beta)
    dim = m.dim
    h, nb, centers, in0 = grid_geometry(disk, dim, h)
    if in0.sum() < min_cells:
        raise ValueError(f"only {int(in0.sum())} cells cover Delta_0; need >= {min_cells} (decrease h)")
    shape = (nb,) * dim
    ncells = len(centers)
    rng = make_rng(seed, 21)
    reps = centers + jitter * h * (rng.random(centers.shape) - 0.5)
    reps = m.space.wrap(reps) if m.space.periodic else np.clip(reps, m.space.lo, m.space.hi)
    orbit = BatchOrbit(m, reps)
    rep_state = orbit.state.copy() if m.lattice_k is not None else None
    if rep_state is not None:
        reps = orbit.points.copy()

    p = np.asarray(disk.p, dtype=float)[None, :]
    r0, r1, _, r3 = disk.radii
    N0 = disk.N0
    k_max = ring_cap(disk.delta0, sigma, h)
    logs = math.log(sigma)

    # hyperbolic-time scan state
    q = np.zeros(ncells)
    best = np.zeros(ncells)
    need = np.zeros(ncells)
    last_hyp = np.zeros(ncells, dtype=np.int64)

    R = np.zeros(ncells, dtype=np.int64)
    t = np.zeros(ncells, dtype=np.int64)
    elem = np.full(ncells, -1, dtype=np.int64)
    alive = in0.copy()
    A_prev = in0.copy()
    B_prev = np.zeros(ncells, dtype=bool)
    elements = []
    hist = {k: np.zeros(n_max + 1, dtype=np.int64) for k in
            ("R", "A", "B", "Delta", "BA", "AB", "AR", "AH", "Aeps", "violations")}
    hist["A"][0] = hist["Delta"][0] = int(in0.sum())
    pairs = _face_pairs(shape)
    link = disk.delta0

    for n in range(1, n_max + 1):
        _, _, _, li, cd = orbit.step()
        q += logs - li
        hyp = q >= best
        np.maximum(best, q, out=best)
        if m.has_critical:
            kmin = _window_threshold(_truncated_log_dist(cd, cfg.delta_hyp), cfg.b * logs)
            np.maximum(need, (n - 1) + kmin, out=need)
            hyp &= n >= need
        last_hyp[hyp] = n
        Y = orbit.points
        d = m.space.distance(Y, p)

        if n <= R0:
            hist["A"][n] = hist["Delta"][n] = hist["Aeps"][n] = int(in0.sum())
            hist["AH"][n] = int((in0 & hyp).sum())
            continue

        # image gaps across every face of the box
        gaps = [m.space.distance(Y[i], Y[j]) for i, j in pairs]

        # A^eps_{n-1}: A_{n-1} plus collar cells whose n-th image is within
        # eps of the image of an adjacent A_{n-1} cell (half the image gap)
        Aeps = A_prev.copy()
        if B_prev.any():
            near = np.zeros(ncells, dtype=bool)
            for (i, j), g in zip(pairs, gaps):
                close = 0.5 * g < eps
                near[i[B_prev[i] & A_prev[j] & close]] = True
                near[j[B_prev[j] & A_prev[i] & close]] = True
            Aeps |= near

        # components of W = A^eps ∩ f^-n(big ball): face neighbours are joined
        # only if their images are closer than delta0, i.e. the segment
        # between them is followed continuously by f^n at this resolution
        S = d < r3
        W = Aeps & S
        SnotW = S & ~W
        ei, ej = [], []
        cut_cells = []
        for (i, j), g in zip(pairs, gaps):
            linked = g < link
            both = linked & W[i] & W[j]
            ei.append(i[both])
            ej.append(j[both])
            cut_cells.append(i[linked & W[i] & SnotW[j]])
            cut_cells.append(j[linked & W[j] & SnotW[i]])
        ei = np.concatenate(ei)
        ej = np.concatenate(ej)
        graph = sparse.coo_matrix((np.ones(len(ei), dtype=np.int8), (ei, ej)), shape=(ncells, ncells))
        _, comp = csgraph.connected_components(graph, directed=False)
        labels = np.zeros(ncells, dtype=np.int64)
        cells_W = np.flatnonzero(W)
        _, lab_W = np.unique(comp[cells_W], return_inverse=True)
        lab_W = lab_W + 1
        labels[cells_W] = lab_W
        nlab = int(lab_W.max()) if len(lab_W) else 0
        qual = np.zeros(nlab + 1, dtype=bool)
        if nlab:
            # cut components: a linked face neighbour outside W lands in the big ball
            cut = np.zeros(nlab + 1, dtype=bool)
            cut[labels[np.concatenate(cut_cells)]] = True
            order = np.lexsort((cells_W, d[cells_W], lab_W))
            first = np.ones(len(order), dtype=bool)
            first[1:] = lab_W[order][1:] != lab_W[order][:-1]
            center_of = np.zeros(nlab + 1, dtype=np.int64)
            center_of[lab_W[order][first]] = cells_W[order][first]
            has_core = np.zeros(nlab + 1, dtype=bool)
            has_core[np.unique(lab_W[d[cells_W] < r0])] = True
            hyp_ok = last_hyp[center_of] >= max(1, n - N0)
            qual = has_core & ~cut & hyp_ok
            qual[0] = False
        U3 = qual[labels]
        U0 = U3 & (d < r0)
        U1 = U3 & (d < r1)
        overlap = U1 & B_prev
        if overlap.any():
            raise CollarViolation(
                f"step {n}: {int(overlap.sum())} cells of a new collar have t_(n-1) >= 1; "
                "eps_collar is too large for this grid"
            )
        if U0.any():
            for lab in np.unique(labels[U0]):
                cells = np.flatnonzero(U0 & (labels == lab))
                eid = len(elements)
                elements.append(Element(eid, n, cells, int(center_of[lab])))
                elem[cells] = eid
            R[U0] = n

        collar = U1 & ~U0
        t_new = np.where(A_prev, 0, np.where(B_prev, t - 1, 0))
        if collar.any():
            t_new[collar] = ring_index(d[collar] / r0 - 1.0, sigma, k_max)
        alive &= ~U0
        t = np.where(alive, t_new, 0)
        A = alive & (t == 0)
        B = alive & (t > 0)

        hist["R"][n] = int(U0.sum())
        hist["A"][n] = int(A.sum())
        hist["B"][n] = int(B.sum())
        hist["Delta"][n] = int(alive.sum())
        hist["BA"][n] = int((B_prev & A).sum())
        hist["AB"][n] = int((A_prev & B).sum())
        hist["AR"][n] = int((A_prev & U0).sum())
        hist["AH"][n] = int((A_prev & hyp).sum())
        hist["Aeps"][n] = int(Aeps.sum())
        A_prev, B_prev = A, B
        if on_step is not None:
            on_step(n, hist)

    return TowerPartition(
        map=m, disk=disk, h=h, n_max=n_max, R0=R0, eps=eps, sigma=sigma, shape=shape,
        centers=centers, reps=reps, rep_state=rep_state, in_delta0=in0, R=R, t=t, elem=elem,
        elements=elements, history=hist, k_max=k_max, seed=seed, jitter=jitter,
    )


# ---------------------------------------------------------------------------
# induced map checks
# ---------------------------------------------------------------------------


def rep_states(P: "TowerPartition", idx) -> np.ndarray:
    """Orbit states of representatives (exact lattice integers when available)."""
    return P.rep_state[idx] if P.rep_state is not None else P.reps[idx]


def _relative_orbit(m: MapModel, start, owner, steps, D0, visit: Optional[Callable] = None):
    """Follow rep[owner] + D0 for steps[owner] iterates, as displacements from
    the orbits of the representatives (given by their orbit states).
    ``visit(j, active, points)`` sees f^j of every sample with j < its step count.

    Displacements below 1e-8 are pushed by the Jacobian along the orbit of
    the representative (second-order error below round-off), larger ones by
    direct differences of images.  Samples stop at their own step count.
    Returns (f^R(rep) per sample, displacements, Df^R, log|det Df^R|).
    """
    owner = np.asarray(owner)
    steps = np.asarray(steps)
    n = int(steps.max()) if len(steps) else 0
    samp_steps = steps[owner]
    orbit = BatchOrbit.from_state(m, start)
    D = np.array(D0, dtype=float)
    k, d = D.shape
    M = np.broadcast_to(np.eye(d), (k, d, d)).copy()
    ld = np.zeros(k)
    Z = np.empty((k, d))
    for j in range(n):
        z_all = orbit.points
        act = samp_steps > j
        done = samp_steps == j
        Z[done] = z_all[owner[done]]
        live = steps > j
        Jz_all = np.zeros((len(z_all), d, d))
        fz_all = np.zeros_like(z_all)
        Jz_all[live] = m.jacobian(z_all[live])
        fz_all[live] = m.f(z_all[live])
        o = owner[act]
        z = z_all[o]
        Da = D[act]
        X = z + Da
        if visit is not None:
            visit(j, act, m.space.wrap(X) if m.space.periodic else X)
        J = m.jacobian(X)
        ld[act] += log_det_and_inv_norm(J)[0]
        M[act] = J @ M[act]
        lin = np.einsum("mij,mj->mi", Jz_all[o], Da)
        fz = fz_all[o]
        direct = m.space.displacement(fz, m.f(X)) if m.space.periodic else m.f(X) - fz
        small = np.sqrt(np.sum(Da * Da, axis=1)) < 1e-8
        D[act] = np.where(small[:, None], lin, direct)
        orbit.step()
    done = samp_steps == n
    Z[done] = orbit.points[owner[done]]
    return Z, D, M, ld


def pullback(m: MapModel, start, owner, steps, T, newton: int = 4, rtol: float = 1e-8):
    """Displacements D0 with f^R(rep + D0) = T along the branch of each rep.

    Newton steps stop early once every residual is below ``rtol`` (the
    round-off floor of direct image differences amplified along the branch).
    Returns (D0, Df^R, log det, image of the representative, residual).
    """
    k = len(T)
    D0 = np.zeros((k, m.dim))
    zR, DR, MX, ld = _relative_orbit(m, start, owner, steps, D0)
    target = m.space.displacement(zR, T) if m.space.periodic else T - zR
    for _ in range(newton + 1):
        D0 = D0 + np.linalg.solve(MX, (target - DR)[..., None])[..., 0]
        _, DR, MX, ld = _relative_orbit(m, start, owner, steps, D0)
        resid = np.sqrt(np.sum((target - DR) ** 2, axis=1))
        if not resid.max() > rtol:
            break
    return D0, MX, ld, zR, resid


@dataclass
class InducedMapReport:
    rows: list  # per element: id, R, max ||DF^-1||, distortion margin, Markov miss, flagged, max distortion ratio
    kappa: float
    K: float
    tol: float
    excluded: int

    header = ["element", "R", "max_inv_norm", "distortion_margin", "markov_miss", "flagged", "max_distortion_ratio"]

    def csv_rows(self):
        return [list(r) for r in self.rows]

    def _good(self):
        return [r for r in self.rows if not r[5]]

    @property
    def expansion_ok(self) -> bool:
        return all(r[2] <= self.kappa for r in self._good())

    @property
    def distortion_ok(self) -> bool:
        return all(r[3] >= 0 for r in self._good())

    @property
    def markov_ok(self) -> bool:
        return all(r[4] <= self.tol for r in self._good())

    @property
    def passed(self) -> bool:
        return self.expansion_ok and self.distortion_ok and self.markov_ok

    @property
    def max_distortion(self) -> float:
        return max((r[6] for r in self._good()), default=0.0)

    @property
    def max_inv_norm(self) -> float:
        return max((r[2] for r in self._good()), default=0.0)


def induced_kappa(P: TowerPartition, ledger: Optional[ConstantsLedger] = None) -> float:
    """Expansion bound to check: the ledger's kappa at the R0 actually used,
    or strict contraction of DF^{-1} when that bound is not below 1."""
    if ledger is None:
        return 1.0
    k = ledger.K0 * P.sigma ** ((P.R0 - P.disk.N0) / 2.0)
    return k if k < 1.0 else 1.0


def _markov_targets(P: TowerPartition, n_ring: int, n_inner: int, rng):
    m = P.map
    r0 = P.disk.delta0
    tol = 2.0 * P.h
    p = np.asarray(P.disk.p)[None, :]
    if m.dim == 1:
        ring = np.array([[-1.0], [1.0]]) * (r0 - tol)
        inner = (2.0 * rng.random((n_inner, 1)) - 1.0) * (r0 - tol)
    else:
        ang = np.linspace(0.0, 2.0 * math.pi, n_ring, endpoint=False)
        ring = np.stack([np.cos(ang), np.sin(ang)], axis=1) * (r0 - tol)
        rad = (r0 - tol) * np.sqrt(rng.random(n_inner))
        phi = 2.0 * math.pi * rng.random(n_inner)
        inner = np.stack([rad * np.cos(phi), rad * np.sin(phi)], axis=1)
    T = np.concatenate([ring, inner]) + p
    return m.space.wrap(T) if m.space.periodic else T


def validate_induced_map(
    P: TowerPartition,
    samples_per_element: int,
    seed: int,
    kappa: Optional[float] = None,
    K: Optional[float] = None,
    R_offset: int = 0,
    n_ring: int = 16,
) -> InducedMapReport:
    """Sampled checks of uniform expansion, bounded distortion and the Markov property.

    Sample points of an element are pullbacks of points of Delta_0 along the
    branch of the element's center cell.  Markov: the center's image lies in
    Delta_0, every pulled-back target lands in a cell of the element and maps
    back onto its target, all within 2h.  ``R_offset`` shifts every return
    time (fault injection).
    """
    if not P.elements:
        raise ValueError("partition has no elements")
    m = P.map
    rng = make_rng(seed, 31)
    kappa = 1.0 if kappa is None else kappa
    K = math.inf if K is None else K
    p = np.asarray(P.disk.p)[None, :]
    tol = 2.0 * P.h
    half_diag = P.h * math.sqrt(m.dim) / 2.0
    E = len(P.elements)
    steps = np.array([el.R + R_offset for el in P.elements])
    centers = np.array([el.center for el in P.elements])
    Ts = [_markov_targets(P, n_ring, samples_per_element, rng) for _ in range(E)]
    per = len(Ts[0])
    T = np.concatenate(Ts)
    owner = np.repeat(np.arange(E), per)
    valid = steps >= 1
    rows = [None] * E
    for e in np.flatnonzero(~valid):
        rows[e] = (P.elements[e].id, int(steps[e]), math.inf, -math.inf, math.inf, False, math.inf)
    vi = np.flatnonzero(valid)
    nv = len(vi)
    sel = valid[owner]
    remap = np.full(E, -1)
    remap[vi] = np.arange(nv)
    with np.errstate(all="ignore"):
        D0, M, ld, zR, resid = pullback(m, rep_states(P, centers[vi]), remap[owner[sel]], steps[vi], T[sel])
        _, li = log_det_and_inv_norm(M)
    Tv = T[sel].reshape(nv, per, m.dim)
    ld = ld.reshape(nv, per)
    li = li.reshape(nv, per)
    bad = ~(np.isfinite(ld).all(1) & np.isfinite(li).all(1) & np.isfinite(D0.reshape(nv, -1)).all(1))
    max_inv = np.exp(li).max(axis=1)
    # distortion over random pairs inside each element
    i, j = rng.integers(0, per, size=(2, nv, 4 * per))
    rows_idx = np.arange(nv)[:, None]
    gap = m.space.distance(Tv[rows_idx, i].reshape(-1, m.dim), Tv[rows_idx, j].reshape(-1, m.dim)).reshape(nv, -1)
    dl = np.abs(ld[rows_idx, i] - ld[rows_idx, j])
    with np.errstate(all="ignore"):
        ratio = np.where(gap > 0, dl / gap, 0.0)
        marg = np.where(gap > 0, K * gap - dl, math.inf)
    dist_margin = marg.min(axis=1)
    dist_margin = np.where(np.isfinite(dist_margin), dist_margin, 0.0)
    max_ratio = ratio.max(axis=1)
    # Markov: the center's image lies in Delta_0 and each pulled-back target
    # sits in a cell of its own element
    miss_in = np.maximum(m.space.distance(zR.reshape(nv, per, m.dim)[:, 0], p) - P.disk.delta0, 0.0)
    X = P.reps[np.repeat(centers[vi], per)] + D0
    X = m.space.wrap(X) if m.space.periodic else X
    own = np.repeat(vi, per)
    miss_cell = np.full(len(X), math.inf)
    base = box_cell_coords(P, X)
    for off in itertools.product((-1, 0, 1), repeat=m.dim):
        u = base + np.asarray(off)
        ok = np.all((u >= 0) & (u < P.shape[0]), axis=1)
        c = np.zeros(len(X), dtype=np.int64)
        c[ok] = np.ravel_multi_index(tuple(u[ok].T), P.shape)
        hit = ok & (P.elem[c] == own)
        dc = m.space.distance(X[hit], P.centers[c[hit]]) if hit.any() else np.zeros(0)
        miss_cell[hit] = np.minimum(miss_cell[hit], np.maximum(dc - half_diag, 0.0))
    # rare misses of the 3^d block: exact nearest cell of the element
    for e in np.unique(own[~np.isfinite(miss_cell)]):
        k = np.flatnonzero((own == e) & ~np.isfinite(miss_cell))
        cells = P.elements[e].cells
        if m.space.periodic:
            dd = np.sqrt(np.sum(m.space.displacement(X[k][:, None, :], P.centers[cells][None, :, :]) ** 2, axis=-1))
        else:
            dd = np.sqrt(np.sum((X[k][:, None, :] - P.centers[cells][None, :, :]) ** 2, axis=-1))
        miss_cell[k] = np.maximum(dd.min(axis=1) - half_diag, 0.0)
    markov_miss = np.maximum(np.maximum(miss_in, resid.reshape(nv, per).max(axis=1)),
                             miss_cell.reshape(nv, per).max(axis=1))
    excluded = int(bad.sum())
    for loc, e in enumerate(vi):
        eid = P.elements[e].id
        if bad[loc]:
            rows[e] = (eid, int(steps[e]), math.nan, math.nan, math.nan, True, math.nan)
        else:
            rows[e] = (eid, int(steps[e]), float(max_inv[loc]), float(dist_margin[loc]),
                       float(markov_miss[loc]), False, float(max_ratio[loc]))
    return InducedMapReport(rows, kappa, K, tol, excluded)


# ---------------------------------------------------------------------------
# return-time statistics
# ---------------------------------------------------------------------------


@dataclass
class ReturnTimeStats:
    table: list  # rows: n, m(R>n), m(A_n), m(B_n), m(Delta_n), m(R=n)
    a0: float
    b0: float
    c0: float
    c1: float
    a1: float
    c2: float
    window: int
    tol: float
    checks: dict  # name -> (passed, worst margin)
    exp_rate: float
    exp_r2: float
    gamma_hat: float
    gamma_r2: float
    notice: str = ""

    header = ["n", "m_R_gt_n", "m_A", "m_B", "m_Delta", "m_R_eq_n"]

    def csv_rows(self):
        return [list(r) for r in self.table]

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())


def return_time_stats(P: TowerPartition, window: Optional[int] = None, min_cells: Optional[int] = None) -> ReturnTimeStats:
    """Per-level measures, empirical metric constants and the tail fit.

    Ratios are taken over steps n > R0 whose denominators contain at least
    ``min_cells`` cells (default: 1/64 of the cells of Delta_0, at least 8);
    if no step qualifies, every nonempty denominator is used.  The derived
    inequalities are then checked at every recorded step within
    (2h/delta0) m(Delta_0).
    """
    H = P.history
    v = P.cell_volume
    n_max = P.n_max
    ns = np.arange(n_max + 1)
    start = P.R0 + 1
    tol = (2.0 * P.h / P.disk.delta0) * P.delta0_measure
    table = [
        [int(n), H["Delta"][n] * v, H["A"][n] * v, H["B"][n] * v, H["Delta"][n] * v, H["R"][n] * v]
        for n in ns
    ]
    rng_n = np.arange(start, n_max + 1)
    A_prev = H["A"][rng_n - 1]
    B_prev = H["B"][rng_n - 1]
    if min_cells is None:
        min_cells = max(8, int(P.in_delta0.sum()) // 64)
    selB = B_prev >= min_cells
    if not selB.any():
        selB = B_prev > 0
    selA = A_prev >= min_cells
    if not selA.any():
        selA = A_prev > 0
    a0 = float((H["BA"][rng_n][selB] / B_prev[selB]).min()) if selB.any() else 1.0
    b0 = float((H["AB"][rng_n][selA] / A_prev[selA]).max()) if selA.any() else 0.0
    c0 = float((H["AR"][rng_n][selA] / A_prev[selA]).max()) if selA.any() else 0.0
    if window is None:
        window = max(1, (n_max - P.R0) // 4)
    c1_vals = []
    for n in range(start, n_max - window + 1):
        if H["AH"][n] >= min_cells:
            c1_vals.append(H["R"][n:n + window + 1].sum() / H["AH"][n])
    c1 = float(min(c1_vals)) if c1_vals else float("nan")
    eta = 1.0 - b0 - c0
    a1 = ((1.0 + a0) * b0 + c0) / (a0 * eta) if eta > 0 and a0 > 0 else math.inf
    c2 = (1.0 + 1.0 / a1) / eta if eta > 0 and a1 > 0 else math.inf

    checks = {}
    checks["b0+c0<1"] = (b0 + c0 < 1.0, 1.0 - b0 - c0)
    checks["a0>0"] = (a0 > 0, a0)
    checks["c1>0"] = (bool(c1 > 0), c1)
    mA = H["A"] * v
    mB = H["B"] * v
    mD = H["Delta"] * v
    marg = [a1 * mA[n] + tol - mB[n] for n in range(1, n_max + 1)]
    checks["m(B_n)<=a1 m(A_n)"] = (bool(min(marg) >= 0), float(min(marg)))
    marg = [c2 * mD[n + 1] + tol - mD[n] for n in range(1, n_max)]
    checks["m(Delta_n)<=c2 m(Delta_n+1)"] = (bool(min(marg) >= 0), float(min(marg)))
    # (m2)-(m4) at every recorded n with the measured constants
    marg = [H["BA"][n] * v - a0 * H["B"][n - 1] * v + tol for n in rng_n]
    checks["m2"] = (bool(min(marg) >= 0), float(min(marg)))
    marg = [min(b0 * H["A"][n - 1] * v - H["AB"][n] * v, c0 * H["A"][n - 1] * v - H["AR"][n] * v) + tol for n in rng_n]
    checks["m3"] = (bool(min(marg) >= 0), float(min(marg)))
    if c1_vals:
        marg = [H["R"][n:n + window + 1].sum() * v - c1 * H["AH"][n] * v + tol
                for n in range(start, n_max - window + 1)]
        checks["m4"] = (bool(min(marg) >= 0), float(min(marg)))

    # tail fits on uncensored levels above resolution
    tail = mD[start:] / P.delta0_measure
    nn = ns[start:]
    use = H["Delta"][start:] >= 1
    notice = ""
    exp_rate = exp_r2 = gamma = g_r2 = float("nan")
    if use.sum() >= 3:
        y = np.log(tail[use])
        x = nn[use].astype(float)
        sl, ic = np.polyfit(x, y, 1)
        exp_rate = float(-sl)
        exp_r2 = _r2(y, ic + sl * x)
        lx = np.log(x)
        sl2, ic2 = np.polyfit(lx, y, 1)
        gamma = float(-sl2)
        g_r2 = _r2(y, ic2 + sl2 * lx)
        if exp_rate > 0 and exp_r2 >= g_r2:
            notice = "exponential tail fits better than a power law"
    else:
        notice = "fewer than 3 levels above resolution: fit skipped"
    return ReturnTimeStats(table, a0, b0, c0, c1, a1, c2, window, tol, checks,
                           exp_rate, exp_r2, gamma, g_r2, notice)


def _r2(y, pred) -> float:
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


# ---------------------------------------------------------------------------
# dependence of R on the map
# ---------------------------------------------------------------------------


@dataclass
class RComparison:
    l1: float
    excluded_mass: float
    sym_diff: dict  # level j -> m({R_a=j} symmetric-difference {R_a0=j})
    unreliable: bool


def compare_return_times(P: TowerPartition, P0: TowerPartition, levels: Optional[int] = None) -> RComparison:
    if not P.comparable(P0):
        raise ValueError("partitions built on different disks or grids are not comparable")
    v = P.cell_volume
    both = P.in_delta0 & (P.R > 0) & (P0.R > 0)
    l1 = float(np.abs(P.R[both] - P0.R[both]).sum() * v)
    excluded = float((P.in_delta0 & ~both).sum() * v)
    top = levels if levels is not None else int(max(P.R.max(), P0.R.max()))
    sym = {}
    for j in range(P.R0 + 1, top + 1):
        sym[j] = float(((P.R == j) != (P0.R == j)).sum() * v)
    unreliable = max(P.censored_fraction, P0.censored_fraction) > 0.2
    return RComparison(l1, excluded, sym, unreliable)


@dataclass
class RStabilityTable:
    a0: float
    rows: list  # (a, l1, sum of symmetric differences up to `levels`, excluded mass, unreliable)
    levels: int

    header = ["a", "l1_R", "sym_diff_sum", "excluded_mass", "unreliable"]

    def csv_rows(self):
        return [list(r) for r in self.rows]


def stability_of_R(
    build: Callable[[float], TowerPartition],
    a0: float,
    a_list: Sequence[float],
    levels: Optional[int] = None,
) -> RStabilityTable:
    """||R_a - R_a0||_1 and per-level symmetric differences along a parameter sweep.

    ``build(a)`` must return partitions on one shared disk and grid.
    """
    P0 = build(a0)
    if levels is None:
        levels = P0.R0 + max(1, (P0.n_max - P0.R0) // 4)
    rows = []
    for a in a_list:
        P = P0 if a == a0 else build(a)
        cmp = compare_return_times(P, P0, levels)
        rows.append((float(a), cmp.l1, float(sum(cmp.sym_diff.values())), cmp.excluded_mass, cmp.unreliable))
    return RStabilityTable(a0, rows, levels)
