"""Pliss selection: indices at which every backward window has average >= c1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class PlissProblem:
    a: Sequence[float]
    c1: float
    c2: float
    A: float

    def __post_init__(self):
        if len(self.a) < 1:
            raise ValueError("sequence must have length N >= 1")


@dataclass(frozen=True)
class PlissResult:
    indices: list
    theta: float
    guarantee_applies: bool

    @property
    def count(self) -> int:
        return len(self.indices)


def pliss_theta(c1: float, c2: float, A: float) -> float:
    if A == c1:
        return float("nan")
    return (c2 - c1) / (A - c1)


def hypotheses_hold(p: PlissProblem) -> bool:
    a = np.asarray(p.a, dtype=float)
    return bool(
        0 < p.c1 < p.c2 < p.A
        and np.all(a <= p.A)
        and a.sum() >= p.c2 * len(a)
    )


def _result(p: PlissProblem, idx) -> PlissResult:
    return PlissResult([int(i) for i in idx], pliss_theta(p.c1, p.c2, p.A), hypotheses_hold(p))


def pliss_times(p: PlissProblem) -> PlissResult:
    """O(N) scan: i is selected iff S_i - c1 i is at least every earlier value."""
    a = np.asarray(p.a, dtype=float)
    N = len(a)
    # q = S_i - c1 i, best = running max over 0 <= n < i (with S_0 = 0)
    q = 0.0
    best = 0.0
    idx = []
    for i in range(1, N + 1):
        q += a[i - 1] - p.c1
        if q >= best:
            idx.append(i)
            best = q
    return _result(p, idx)


def pliss_bruteforce(p: PlissProblem) -> PlissResult:
    """Direct check of sum_{j=n+1}^{i} a_j >= c1 (i - n) for all 0 <= n < i."""
    a = np.asarray(p.a, dtype=float)
    N = len(a)
    idx = []
    for i in range(1, N + 1):
        ok = True
        s = 0.0
        for n in range(i - 1, -1, -1):
            s += a[n] - p.c1
            if s < 0:
                ok = False
                break
        if ok:
            idx.append(i)
    return _result(p, idx)


def is_pliss_index(a: Sequence[float], c1: float, i: int) -> bool:
    a = np.asarray(a, dtype=float)
    return all(a[n:i].sum() >= c1 * (i - n) for n in range(i))
