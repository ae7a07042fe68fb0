import math

import numpy as np
import pytest

from lifmf import grid, steady
from lifmf.errors import OutOfRange, ZeroCoupling
from lifmf.model import validate

from oracles import dirac_comb_limit, steady_rk4

P = validate(0.2, 0.1, 1.0)
P3 = validate(0.05, 0.3, 50, allow_integer_ratio=True)

# forward RK4 method-of-steps oracle (tests/oracles.py), K = 1024 and 512 agree to 1e-12
F1_ORACLE = 7.626570904284249e-4
F2_ORACLE = 0.01617516966851678


def test_F_against_frozen_oracle():
    assert steady.F(1.0, P) == pytest.approx(F1_ORACLE, rel=2e-5)
    assert steady.F(2.0, P) == pytest.approx(F2_ORACLE, rel=2e-5)


@pytest.mark.parametrize("hv,sigma", [((0.2, 0.1), 1.0), ((0.2, 0.1), 2.0), ((0.2, 0.1), 3.0),
                                      ((0.05, 0.3), 10.0), ((0.05, 0.3), 20.0)])
def test_density_against_rk4_oracle(hv, sigma):
    p = validate(*hv, 1.0, allow_integer_ratio=True)
    v, pl, _, F, D, _ = steady_rk4(sigma, *hv)
    d = steady.invariant_density(sigma, p)
    m = (v > 0.005) & (v < 0.999)
    q = d.pdf(v[m] * (1 - 1e-13))
    assert np.max(np.abs(q - pl[m])) <= 1e-5 * np.max(pl[m])
    assert steady.F(sigma, p) == pytest.approx(F, rel=2e-5)
    assert d.D == pytest.approx(D, rel=2e-5)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 50.0])
@pytest.mark.parametrize("par", [P, P3])
def test_structural_invariants(sigma, par):
    d = steady.invariant_density(sigma, par)
    assert d.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert d.D == pytest.approx(sigma * d.tail_mass(), rel=1e-8)
    assert d.head_exponent == sigma - 1
    for v, p in d.samples:
        assert np.all(p[v < 1] > 0)
    # jump at v_r
    left = d.pdf(par.v_r * (1 - 1e-12))[0]
    right = d.pdf(par.v_r)[0]
    assert par.v_r * (left - right) == pytest.approx(d.D, rel=1e-6, abs=1e-10 * left)
    # cdf and to_grid agree with the masses
    assert d.cdf([1.0])[0] == pytest.approx(1.0, abs=1e-12)
    assert d.mass_between(1 - par.h, 1.0) == pytest.approx(d.tail_mass(), rel=1e-9, abs=1e-15)


def test_sigma_one_head_is_flat():
    d = steady.invariant_density(1.0, P)
    v = np.linspace(0.001, 0.099, 20)
    assert np.allclose(d.pdf(v), d.pdf(v)[0], rtol=1e-14)


def test_bound_at_h():
    d = steady.invariant_density(2.0, P)
    assert d.pdf(0.2)[0] <= 2.0 / 0.2


def test_breakpoints():
    d = steady.invariant_density(1.0, P)
    expected = sorted({0.0, 1.0} | {0.2 * k for k in range(1, 5)} | {0.1 + 0.2 * k for k in range(5)})
    assert np.allclose(d.breakpoints, expected)


def test_grid_tail_matches_F():
    spec = grid.make_spec(400, 0.2, 0.1)
    g = steady.invariant_density(1.0, P).to_grid(spec)
    assert grid.tail_mass(g) == pytest.approx(steady.F(1.0, P), abs=2 * spec.dv)
    assert grid.mass(g) == pytest.approx(1.0, abs=1e-12)


def test_F_limits():
    assert steady.F(1e-3, P) <= 1e-3 / 0.8
    assert steady.F(1e4, P) == pytest.approx(0.2, abs=0.02)
    p = validate(0.3, 0.25, 1.0)
    assert steady.F(1e4, p) == pytest.approx(dirac_comb_limit(0.3, 0.25), abs=0.02)
    assert dirac_comb_limit(0.3, 0.25) == pytest.approx(1 / 3)


def test_F_continuity_across_scan():
    for s in np.geomspace(0.01, 100, 25):
        assert abs(steady.F(s * (1 + 1e-6), P) - steady.F(s, P)) <= 1e-3


def test_node_refinement_stable():
    assert steady.F(1.0, P, nodes_per_period=128) == pytest.approx(steady.F(1.0, P, nodes_per_period=2048), rel=1e-4)


def test_G():
    p = validate(0.2, 0.1, 1.0, 2.0)
    assert steady.G(1.0, p) == 0.0
    assert steady.G(2.0, p) == pytest.approx(0.25)
    assert steady.G(1e12, p) == pytest.approx(0.5)
    with pytest.raises(ZeroCoupling):
        steady.G(2.0, P)


def test_bad_sigma():
    with pytest.raises(OutOfRange):
        steady.invariant_density(0.0, P)
    with pytest.raises(OutOfRange):
        steady.invariant_density(math.inf, P)


def test_find_uncoupled():
    scan = steady.find_steady_states(P)
    assert scan.claim == "uncoupled" and len(scan.roots) == 1
    assert scan.roots[0].sigma_bar == 1.0


@pytest.mark.parametrize("s0,J,count,claim", [(1.0, 0.5, 1, "at_least_one"), (0.02, 7.0, 2, "at_least_two")])
def test_find_roots(s0, J, count, claim):
    p = validate(0.2, 0.1, s0, J)
    scan = steady.find_steady_states(p)
    assert scan.multiplicity >= count and scan.claim == claim
    for root in scan.roots:
        assert root.sigma_bar > s0
        assert root.residual(p) <= 1e-8
        assert root.r_bar == pytest.approx(root.sigma_bar * root.tail_mass)
    rows = list(scan.csv_rows())
    assert len(rows) == scan.sigmas.size and len(rows[0]) == 4


def test_find_no_root_is_reported():
    p = validate(0.2, 0.1, 1.0, 0.5)
    scan = steady.find_steady_states(p, sigma_range=(10.0, 20.0), n_scan=10)
    assert scan.roots == [] and "no sign change" in scan.note


def test_equality_boundary_no_claim():
    assert steady._theory_claim(validate(0.2, 0.1, 0.01, 5.0)) == "no_claim"


def test_threads_do_not_change_results():
    p = validate(0.2, 0.1, 1.0, 0.5)
    a = steady.find_steady_states(p, n_scan=40)
    b = steady.find_steady_states(p, n_scan=40, threads=4)
    assert np.array_equal(a.F_values, b.F_values)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 50.0])
def test_power_bound_holds_when_reset_above_h(sigma):
    d = steady.invariant_density(sigma, P3)
    v = np.linspace(1e-4, 1.0, 5001)
    bound = np.minimum(sigma * v ** (sigma - 1) / P3.h ** sigma, sigma / v)
    assert np.all(d.pdf(v) <= bound + 1e-8)


def test_power_bound_fails_below_reset_when_reset_below_h():
    # with v_r < h the head on (0, v_r) carries the reset mass; Monte Carlo agrees with the solver
    from lifmf import pdmp
    p = validate(0.2, 0.1, 50.0)
    d = steady.invariant_density(50.0, p)
    bound_mass = (p.v_r / p.h) ** 50  # integral of sigma v^(sigma-1) / h^sigma over (0, v_r)
    x = pdmp.simulate_ensemble(p, 0.5, 20.0, 100_000, seed=1)
    mc = np.mean(x < p.v_r)
    assert d.mass_between(0.0, p.v_r) == pytest.approx(mc, abs=4 * math.sqrt(mc * (1 - mc) / x.size))
    assert d.mass_between(0.0, p.v_r) > 1e14 * bound_mass
