"""Derived constants of the tower construction, computed in dependency order.

Every entry records the formula it came from and the names it was computed
from.  Entries may only depend on base inputs, measured inputs, or entries
defined earlier, so a perturbation of a late input can never move an early
entry.  Strict inequalities are met by taking half of the bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional


@dataclass(frozen=True)
class BaseConstants:
    B: float = 2.0
    beta: float = 1.0
    b: float = 0.25
    lam: float = 0.5
    D: float = math.sqrt(2.0) / 2.0
    gamma: float = 2.0
    K1: float = 2.0
    rho: float = 2.0
    delta_hyp: float = 0.1
    p_count: int = 1
    sigma0: float = 2.0
    sigma1: float = 4.0
    delta_V: float = 0.05

    def __post_init__(self):
        if self.B <= 1:
            raise ValueError("B must exceed 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.b <= 0 or 2.0 * self.b >= min(1.0, 1.0 / self.beta):
            raise ValueError("need 0 < 2b < min(1, 1/beta)")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.D < 0:
            raise ValueError("diameter must be non-negative")
        if self.gamma <= 1:
            raise ValueError("target tail exponent gamma must exceed 1")
        if self.rho <= self.beta:
            raise ValueError("rho must exceed beta")
        if self.K1 <= self.lam / 2.0:
            raise ValueError("K1 must exceed lambda/2 for the Pliss selection")
        if self.delta_hyp <= 0:
            raise ValueError("delta_hyp must be positive")
        if self.p_count < 1 or self.sigma0 <= 1 or self.sigma1 <= 1 or self.delta_V < 0:
            raise ValueError("example constants need p >= 1, sigma0 > 1, sigma1 > 1, delta_V >= 0")


@dataclass(frozen=True)
class MeasuredInputs:
    """Quantities produced by tower runs (or declared by hand)."""

    N0: int = 5
    D0: float = 0.0
    K0: float = 1.0
    delta0: float = 0.01
    a0: float = 0.5
    b0: float = 0.1
    c0: float = 0.1
    c1: float = 0.1
    N_eps: Optional[int] = None  # None: geometric estimate from delta1, sigma, eps

    def __post_init__(self):
        if self.N0 < 0:
            raise ValueError("N0 must be >= 0")
        if not 0 < self.delta0 < 0.25:
            raise ValueError("delta0 must lie in (0, 1/4)")
        if not 0 < self.a0 < 1:
            raise ValueError("a0 must lie in (0, 1)")
        if self.K0 <= 0 or self.D0 < 0 or self.b0 < 0 or self.c0 < 0 or self.c1 < 0:
            raise ValueError("measured constants must be non-negative (K0 positive)")


# ---------------------------------------------------------------------------
# individual formulas
# ---------------------------------------------------------------------------


def derive_frequency(base: BaseConstants):
    """(sigma, theta, eps1, eps2, theta1, theta2) for hyperbolic-time frequency."""
    lam = base.lam
    sigma = math.exp(-lam / 4.0)
    eps1 = lam / (2.0 * base.rho)
    c1, c2, A = lam / 4.0, lam / 2.0, base.K1
    theta1 = (c2 - c1) / (A - c1)
    eps2 = theta1 * base.b * lam / 8.0
    theta2 = 1.0 - 4.0 * eps2 / (base.b * lam)
    theta = theta1 + theta2 - 1.0
    return sigma, theta, eps1, eps2, theta1, theta2


def derive_delta1(B: float, beta: float, sigma: float, delta_hyp: float) -> float:
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    if B <= 0 or beta <= 0 or delta_hyp <= 0:
        raise ValueError("B, beta, delta must be positive")
    return 0.5 * min(delta_hyp / 4.0, delta_hyp**beta * abs(math.log(sigma)) / (4.0 * B))


def derive_distortion(B: float, beta: float, b: float, sigma: float, D: float):
    """(C0, C1) from the geometric series with ratio sigma^(1/2 - b beta)."""
    q = sigma ** (0.5 - b * beta)
    if q >= 1:
        raise ValueError("ratio sigma^(1/2 - b beta) >= 1: need b beta < 1/2 and sigma < 1")
    C0 = 2.0**beta * B * q / (1.0 - q)
    return C0, math.exp(C0 * D)


def derive_alpha(theta: float, gamma: float) -> float:
    return 0.5 * (theta / 12.0) ** (gamma + 1.0)


def derive_a1(a0: float, b0: float, c0: float) -> float:
    eta = 1.0 - b0 - c0
    if eta <= 0:
        raise ValueError("b0 + c0 >= 1")
    return ((1.0 + a0) * b0 + c0) / (a0 * eta)


def derive_b1(c1: float, a1: float) -> float:
    return c1 / (1.0 + a1)


def derive_c2(a1: float, b0: float, c0: float) -> float:
    eta = 1.0 - b0 - c0
    if eta <= 0:
        raise ValueError("b0 + c0 >= 1")
    if a1 <= 0:
        return math.inf
    return (1.0 + 1.0 / a1) / eta


def derive_eps_collar(K0: float, sigma: float, N0: int, delta0: float) -> float:
    return 0.5 * (sigma ** (N0 / 2.0) * delta0 * (sigma ** (-0.5) - 1.0)) / K0


def n_eps_geometric(delta1: float, sigma: float, eps: float) -> int:
    """Smallest n with delta1 sigma^(n/2) <= eps/4: pre-balls of that depth fit in the collar."""
    if delta1 <= eps / 4.0:
        return 0
    return int(math.ceil(2.0 * math.log(eps / (4.0 * delta1)) / math.log(sigma)))


def derive_R0(N: int, theta: float, K0: float, sigma: float, N0: int):
    """(R0, kappa): R0 = ceil(max{2(N+1), 12/theta}) + 1, raised until kappa < 1."""
    R0 = int(math.ceil(max(2.0 * (N + 1), 12.0 / theta))) + 1
    kappa = K0 * sigma ** ((R0 - N0) / 2.0)
    while kappa >= 1.0:
        R0 += 1
        kappa = K0 * sigma ** ((R0 - N0) / 2.0)
    return R0, kappa


def derive_partition_constants(
    K0: float, D0: float, C0: float, sigma: float, N0: int, delta0: float,
    a0: float, b0: float, c0: float, c1: float, theta: float, gamma: float, N: int,
):
    """(eps_collar, kappa, K, a1, b1, c2, alpha, R0)."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    eps = derive_eps_collar(K0, sigma, N0, delta0)
    R0, kappa = derive_R0(N, theta, K0, sigma, N0)
    K = D0 + C0 * K0
    a1 = derive_a1(a0, b0, c0)
    b1 = derive_b1(c1, a1)
    c2 = derive_c2(a1, b0, c0)
    alpha = derive_alpha(theta, gamma)
    return eps, kappa, K, a1, b1, c2, alpha, R0


# ---------------------------------------------------------------------------
# the ledger
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Entry:
    value: float
    provenance: str
    deps: tuple = ()


@dataclass
class ConstantsLedger:
    base: BaseConstants
    measured: MeasuredInputs
    entries: dict = field(default_factory=dict)
    admissible: bool = True
    reasons: list = field(default_factory=list)

    def __getitem__(self, name):
        return self.entries[name].value

    def __getattr__(self, name):
        entries = self.__dict__.get("entries", {})
        if name in entries:
            return entries[name].value
        raise AttributeError(name)

    @property
    def order(self) -> list:
        return list(self.entries)

    header = ["name", "value", "provenance"]

    def csv_rows(self):
        return [[k, e.value, e.provenance] for k, e in self.entries.items()]


_BASE_NAMES = {f.name for f in fields(BaseConstants)}
_MEASURED_NAMES = {f.name for f in fields(MeasuredInputs)}


def build_ledger(base: BaseConstants, measured: MeasuredInputs = MeasuredInputs()) -> ConstantsLedger:
    led = ConstantsLedger(base, measured)

    def put(name, value, provenance, deps):
        for d in deps:
            if d not in led.entries and d not in _BASE_NAMES and d not in _MEASURED_NAMES:
                raise RuntimeError(f"{name} depends on {d}, which is not defined yet")
        led.entries[name] = Entry(value, provenance, tuple(deps))

    def get(name):
        if name in led.entries:
            return led.entries[name].value
        if name in _BASE_NAMES:
            return getattr(base, name)
        return getattr(measured, name)

    sigma, theta, eps1, eps2, theta1, theta2 = derive_frequency(base)
    put("sigma", sigma, "exp(-lambda/4)", ["lam"])
    put("eps1", eps1, "lambda/(2 rho)", ["lam", "rho"])
    put("theta1", theta1, "Pliss theta with c1=lambda/4, c2=lambda/2, A=K1", ["lam", "K1"])
    put("eps2", eps2, "theta1 b lambda/8", ["theta1", "b", "lam"])
    put("theta2", theta2, "1 - 4 eps2/(b lambda)", ["eps2", "b", "lam"])
    put("theta", theta, "theta1 + theta2 - 1", ["theta1", "theta2"])
    put("eps_rec", min(eps1, eps2), "min(eps1, eps2)", ["eps1", "eps2"])
    put("delta1", derive_delta1(base.B, base.beta, get("sigma"), base.delta_hyp),
        "1/2 min{delta/4, delta^beta |log sigma|/(4B)}", ["B", "beta", "sigma", "delta_hyp"])
    put("alpha", derive_alpha(get("theta"), base.gamma), "1/2 (theta/12)^(gamma+1)", ["theta", "gamma"])
    put("N0", measured.N0, "measured: preimage density depth", ["N0"])
    put("D0", measured.D0, "measured: distortion of the N0 branches", ["D0"])
    put("K0", measured.K0, "measured: derivative bound of the N0 branches", ["K0"])
    C0, C1 = derive_distortion(base.B, base.beta, base.b, get("sigma"), base.D)
    put("C0", C0, "2^beta B q/(1-q), q = sigma^(1/2 - b beta)", ["B", "beta", "b", "sigma"])
    put("C1", C1, "exp(C0 D)", ["C0", "D"])
    put("delta0", measured.delta0, "declared base radius", ["delta0"])
    put("a0", measured.a0, "measured", ["a0"])
    put("b0", measured.b0, "measured", ["b0"])
    put("c0", measured.c0, "measured", ["c0"])
    eta = 1.0 - get("b0") - get("c0")
    put("eta", eta, "1 - b0 - c0", ["b0", "c0"])
    if eta <= 0:
        led.admissible = False
        led.reasons.append("b0 + c0 >= 1")
        a1 = c2 = math.inf
    else:
        a1 = derive_a1(get("a0"), get("b0"), get("c0"))
        c2 = derive_c2(a1, get("b0"), get("c0"))
    put("a1", a1, "((1+a0) b0 + c0)/(a0 eta)", ["a0", "b0", "c0", "eta"])
    put("c1", measured.c1, "measured", ["c1"])
    put("b1", derive_b1(get("c1"), a1), "c1/(1+a1)", ["c1", "a1"])
    put("c2", c2, "(1 + 1/a1)/eta", ["a1", "eta"])
    put("eps_collar", derive_eps_collar(get("K0"), get("sigma"), get("N0"), get("delta0")),
        "1/2 K0^-1 sigma^(N0/2) delta0 (sigma^-1/2 - 1)", ["K0", "sigma", "N0", "delta0"])
    if measured.N_eps is None:
        n_eps = n_eps_geometric(get("delta1"), get("sigma"), get("eps_collar"))
        put("N_eps", n_eps, "geometric: delta1 sigma^(n/2) <= eps/4", ["delta1", "sigma", "eps_collar"])
    else:
        put("N_eps", measured.N_eps, "measured", ["N_eps", "eps_collar"])
    put("N", get("N_eps") + get("N0"), "N_eps + N0", ["N_eps", "N0"])
    if get("theta") <= 0:
        led.admissible = False
        led.reasons.append("theta <= 0")
        put("R0", math.inf, "undefined (theta <= 0)", ["theta"])
        put("kappa", math.nan, "undefined", ["R0"])
    else:
        R0, kappa = derive_R0(get("N"), get("theta"), get("K0"), get("sigma"), get("N0"))
        put("R0", R0, "ceil(max{2(N+1), 12/theta}) + 1, raised until kappa < 1",
            ["N", "theta", "K0", "sigma", "N0"])
        put("kappa", kappa, "K0 sigma^((R0-N0)/2)", ["K0", "sigma", "R0", "N0"])
    put("K", get("D0") + get("C0") * get("K0"), "D0 + C0 K0", ["D0", "C0", "K0"])
    return led


def with_measured(led: ConstantsLedger, **changes) -> ConstantsLedger:
    return build_ledger(led.base, replace(led.measured, **changes))


@dataclass
class UniformityReport:
    shared_base: bool
    pair_f: tuple
    pair_f0: tuple
    differing: list

    @property
    def u2_equal(self) -> bool:
        return self.pair_f == self.pair_f0


def check_uniformity(led_f: ConstantsLedger, led_f0: ConstantsLedger) -> UniformityReport:
    """Whether both ledgers come from one base, plus the (kappa, K) pairs.

    The empirical return-time checks live in the tower module.
    """
    if not (led_f.admissible and led_f0.admissible):
        raise ValueError("both ledgers must be admissible")
    differing = [k for k in led_f.entries if led_f.entries[k].value != led_f0.entries.get(k, Entry(None, "")).value]
    return UniformityReport(
        shared_base=led_f.base == led_f0.base,
        pair_f=(led_f.kappa, led_f.K),
        pair_f0=(led_f0.kappa, led_f0.K),
        differing=differing,
    )
