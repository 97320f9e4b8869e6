import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nuelab.constants import (
    BaseConstants,
    MeasuredInputs,
    build_ledger,
    check_uniformity,
    derive_a1,
    derive_alpha,
    derive_b1,
    derive_c2,
    derive_delta1,
    derive_distortion,
    derive_frequency,
    derive_partition_constants,
    derive_R0,
    with_measured,
)

REL = 1e-12

# reference values below were evaluated with mpmath at 30 digits
LEDGER_DEFAULT = {
    "sigma": 0.882496902584595402864892143229,
    "eps1": 0.125,
    "theta1": 0.0666666666666666666666666666667,
    "eps2": 0.00104166666666666666666666666667,
    "theta2": 0.966666666666666666666666666667,
    "theta": 0.0333333333333333333333333333333,
    "delta1": 0.00078125,
    "C0": 126.010416497128507982117708525,
    "C1": 4.97580154142323840377052990814e38,
    "alpha": 1.07167352537722908093278463649e-8,
    "a1": 0.625,
    "b1": 0.0615384615384615384615384615385,
    "c2": 3.25,
    "eps_collar": 0.000235925770623815385428054232434,
    "K": 126.010416497128507982117708525,
}


def test_sigma_for_four_log_two():
    sigma, *_ = derive_frequency(BaseConstants(lam=4 * math.log(2), K1=4.0))
    assert sigma == pytest.approx(0.5, rel=REL)


def test_theta1_example():
    _, theta, _, _, theta1, theta2 = derive_frequency(BaseConstants(lam=1.0, K1=1.0))
    assert theta1 == pytest.approx(1 / 3, rel=REL)
    assert theta2 == pytest.approx(1 - theta1 / 2, rel=REL)
    assert theta == pytest.approx(theta1 / 2, rel=REL)


@given(st.floats(0.01, 5), st.floats(0.05, 0.24))
def test_theta_is_half_theta1(lam, b):
    base = BaseConstants(lam=lam, b=b, K1=lam)
    _, theta, _, _, theta1, _ = derive_frequency(base)
    assert theta == pytest.approx(theta1 / 2, rel=1e-9)
    assert theta > 0


def test_delta1_example():
    assert derive_delta1(2, 1, 0.5, 0.1) == pytest.approx(0.00433216987849965818385770075911, rel=REL)


def test_delta1_monotone():
    vals = [derive_delta1(2, 1, 0.5, d) for d in (0.2, 0.1, 0.05, 0.01)]
    assert vals == sorted(vals, reverse=True)
    vals = [derive_delta1(B, 1, 0.5, 0.1) for B in (2, 10, 1e3, 1e6)]
    assert vals == sorted(vals, reverse=True) and vals[-1] < 1e-7


def test_distortion_example():
    C0, C1 = derive_distortion(2, 1, 0.25, 0.25, 0.0)
    assert C0 == pytest.approx(9.65685424949238019520675489684, rel=REL)
    assert C1 == 1.0
    _, C1 = derive_distortion(2, 1, 0.25, 0.25, math.sqrt(2) / 2)
    assert C1 == pytest.approx(923.736746576967530165614492507, rel=1e-11)
    assert derive_distortion(2, 1, 0.25, 1e-24, 1.0)[0] < 1e-5
    with pytest.raises(ValueError):
        derive_distortion(2, 1, 0.5, 0.5, 1.0)


def test_partition_formula_examples():
    assert derive_a1(0.5, 0.1, 0.1) == pytest.approx(0.625, rel=REL)
    assert derive_b1(1.0, 0.0) == 1.0
    assert derive_alpha(12.0, 3.7) == 0.5
    assert derive_c2(0.625, 0.1, 0.1) == pytest.approx(3.25, rel=REL)
    with pytest.raises(ValueError):
        derive_a1(0.5, 0.6, 0.5)


def test_R0_raised_until_contracting():
    assert derive_R0(10, 0.5, 1.0, 0.5, 2) == (25, 0.5**11.5)
    R0, kappa = derive_R0(10, 0.5, 1e6, 0.5, 2)
    assert R0 == 42 and kappa < 1 <= 1e6 * 0.5 ** ((R0 - 3) / 2)


def test_partition_constants_tuple():
    eps, kappa, K, a1, b1, c2, alpha, R0 = derive_partition_constants(
        2.0, 0.5, 3.0, 0.5, 2, 0.01, 0.5, 0.1, 0.1, 0.2, 0.5, 2.0, 10
    )
    assert K == 6.5
    assert eps == pytest.approx(0.5 * 0.5 * 0.01 * (2**0.5 - 1) / 2.0, rel=REL)
    assert (a1, b1, c2) == pytest.approx((0.625, 0.2 / 1.625, 3.25), rel=REL)
    assert alpha == pytest.approx(0.5 * (0.5 / 12) ** 3, rel=REL)
    assert R0 > max(2 * 11, 12 / 0.5) and kappa < 1


def test_default_ledger_against_reference():
    led = build_ledger(BaseConstants())
    assert led.admissible
    for name, ref in LEDGER_DEFAULT.items():
        assert led[name] == pytest.approx(ref, rel=REL), name
    assert led.eta == pytest.approx(0.8, rel=REL)
    assert led.eps_rec == led.eps2
    # geometric N_eps from an independent loop
    n = 0
    while led.delta1 * led.sigma ** (n / 2) > led.eps_collar / 4:
        n += 1
    assert led.N_eps == n == 42
    assert led.N == 47
    assert led.R0 > max(2 * (led.N + 1), 12 / led.theta)
    assert led.kappa == pytest.approx(led.K0 * led.sigma ** ((led.R0 - led.N0) / 2), rel=REL)


def test_ledger_rows_recompute():
    led = build_ledger(BaseConstants(), MeasuredInputs(N0=3, D0=0.2, K0=5.0, a0=0.3, b0=0.05, c0=0.2, c1=0.4))
    assert led.C1 == pytest.approx(math.exp(led.C0 * led.base.D), rel=REL)
    assert led.K == pytest.approx(0.2 + led.C0 * 5.0, rel=REL)
    assert led.a1 == pytest.approx(derive_a1(0.3, 0.05, 0.2), rel=REL)
    assert led.b1 == pytest.approx(0.4 / (1 + led.a1), rel=REL)
    assert led.kappa < 1
    assert led.alpha < (led.theta / 12) ** (led.base.gamma + 1)
    bound = led.sigma ** (3 / 2) * led.delta0 * (led.sigma**-0.5 - 1) / 5.0
    assert led.eps_collar < bound


def test_ledger_dependencies_precede():
    led = build_ledger(BaseConstants())
    seen = set()
    inputs = {"lam", "rho", "K1", "b", "B", "beta", "delta_hyp", "gamma", "D"}
    for name in led.order:
        for d in led.entries[name].deps:
            assert d in seen or d in inputs or d == name or hasattr(led.measured, d), (name, d)
        seen.add(name)


# perturbing an input leaves every entry computed before its first use unchanged
@pytest.mark.parametrize(
    "field,value",
    [("c1", 0.7), ("c0", 0.3), ("K0", 3.0), ("delta0", 0.002), ("a0", 0.9)],
)
def test_perturbation_respects_dag(field, value):
    led = build_ledger(BaseConstants())
    pert = with_measured(led, **{field: value})
    changed = [k for k in led.order if led.entries[k].value != pert.entries[k].value]
    assert changed
    first = min(led.order.index(k) for k in changed)
    # nothing before the first changed row moved, and the first change uses the field
    for k in led.order[:first]:
        assert led[k] == pert[k]
    assert field in _closure(led, led.order[first])


def _closure(led, name):
    out, todo = set(), [name]
    while todo:
        n = todo.pop()
        for d in led.entries[n].deps if n in led.entries else ():
            if d not in out:
                out.add(d)
                if d != n:
                    todo.append(d)
    return out


def test_base_perturbation_only_moves_dependents():
    led = build_ledger(BaseConstants())
    pert = build_ledger(BaseConstants(gamma=3.0))
    changed = {k for k in led.order if led[k] != pert[k]}
    assert changed == {"alpha"}


def test_inadmissible_ledgers():
    led = build_ledger(BaseConstants(), MeasuredInputs(b0=0.6, c0=0.5))
    assert not led.admissible and "b0 + c0 >= 1" in led.reasons
    with pytest.raises(ValueError):
        BaseConstants(b=0.5)
    with pytest.raises(ValueError):
        BaseConstants(K1=0.1)


def test_monotone_formulas():
    C0s = [derive_distortion(B, 1, 0.25, 0.5, 1.0)[0] for B in (1.5, 2, 4, 8)]
    assert C0s == sorted(C0s)
    led = build_ledger(BaseConstants())
    kap = [led.K0 * led.sigma ** ((R - led.N0) / 2) for R in range(led.R0, led.R0 + 5)]
    assert kap == sorted(kap, reverse=True)


def test_uniformity_reports():
    base = BaseConstants()
    a = check_uniformity(build_ledger(base), build_ledger(base))
    assert a.shared_base and a.u2_equal and not a.differing
    b = check_uniformity(build_ledger(base), build_ledger(replace(base, D=0.5)))
    assert not b.shared_base and b.u2_equal
    c = check_uniformity(build_ledger(base), build_ledger(replace(base, lam=1.0, K1=2.0)))
    assert not c.shared_base
    assert {"sigma", "theta", "R0"} <= set(c.differing)


def test_ledger_csv_rows():
    rows = build_ledger(BaseConstants()).csv_rows()
    assert rows[0][0] == "sigma"
    assert all(len(r) == 3 for r in rows)
