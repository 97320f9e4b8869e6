"""Counter-based random streams keyed by (seed, stream)."""

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator; distinct streams of one seed never overlap."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(stream) << 64)))


def uniform_points(space, n: int, rng: np.random.Generator) -> np.ndarray:
    return space.lo + (space.hi - space.lo) * rng.random((n, space.dim))


def uniform_in_ball(space, center, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from B(center, radius); rejection keeps interval samples inside."""
    center = np.asarray(center, dtype=float).reshape(-1)
    d = space.dim
    if radius >= space.diameter:
        return uniform_points(space, n, rng)
    out = []
    got = 0
    while got < n:
        m = 2 * (n - got) + 16
        U = rng.random((m, d)) * 2.0 - 1.0
        U = U[np.sum(U * U, axis=1) < 1.0]
        X = center[None, :] + radius * U
        if space.periodic:
            X = space.wrap(X)
        else:
            X = X[space.contains(X)]
        out.append(X)
        got += len(X)
    return np.concatenate(out)[:n]
