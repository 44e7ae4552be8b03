import math

import numpy as np
import pytest

from longjump.kernel import KernelSpec, build_kernel
from longjump.measures import Profile, RateFunction, ThermoFunctions
from longjump.pde import (StiffnessError, bernoulli_entropy, contraction_check, fisher_functional,
                          fisher_information, fisher_maximizer, flux_for_rate, linear_solve,
                          nonlinear_solve, poisson_entropy, solution_diagnostics,
                          variational_fisher_check, zero_range_entropy)

STEP = Profile.parse("step breaks=0,0.25,0.5 values=0.5,1.5,0.5")
IND_RATE = RateFunction.indicator()
IND = ThermoFunctions(IND_RATE)


@pytest.fixture(scope="module")
def k128():
    return build_kernel(KernelSpec(1, 1.5), 128)


# -- linear solver ----------------------------------------------------------------

@pytest.mark.parametrize("m", [1, 5])
def test_linear_cosine_mode_exact(k128, m):
    x = np.arange(128) / 128
    u0 = 1.0 + 0.3 * np.cos(2 * np.pi * m * x)
    out = linear_solve(u0, 0.01, k128)
    want = 1.0 + 0.3 * math.exp(0.01 * k128.theta() * k128.symbol[m]) * np.cos(2 * np.pi * m * x)
    assert np.max(np.abs(out.u - want)) < 1e-13


def test_linear_constant_and_invariants(k128):
    assert np.allclose(linear_solve(np.full(128, 0.7), 0.3, k128).u, 0.7, atol=1e-14)
    u0 = STEP.cell_averages(128)
    out = linear_solve(u0, 0.05, k128)
    assert abs(out.mass - u0.sum()) / u0.sum() < 1e-10
    assert out.u.max() <= u0.max() + 1e-10 and out.u.min() >= u0.min() - 1e-10


def test_linear_fine_grid_reference():
    prof = Profile.parse("step breaks=0,0.25,0.5 values=0.2,0.8,0.2")
    N = 1024
    coarse = linear_solve(prof.cell_averages(N), 0.05, build_kernel(KernelSpec(1, 1.5), N)).u
    fine = linear_solve(prof.cell_averages(4 * N), 0.05, build_kernel(KernelSpec(1, 1.5), 4 * N)).u
    assert np.max(np.abs(coarse - fine[::4])) < 1e-3


# -- nonlinear solver -------------------------------------------------------------

def test_identity_flux_matches_linear(k128):
    u0 = STEP.cell_averages(128)
    st, _ = nonlinear_solve(u0, 0.02, k128)
    assert np.max(np.abs(st.u - linear_solve(u0, 0.02, k128).u)) < 1e-8


def test_constant_datum_stays_constant(k128):
    phi, kappa = flux_for_rate(IND_RATE, 2.0)
    st, _ = nonlinear_solve(np.full(128, 1.3), 0.05, k128, phi, kappa)
    assert np.allclose(st.u, 1.3, atol=1e-12)


def test_flux_table_accuracy():
    phi, kappa = flux_for_rate(IND_RATE, 3.0)
    r = np.linspace(0, 3.0, 301)
    assert np.max(np.abs(phi(r) - r / (1 + r))) < 1e-8
    assert kappa == 1.0
    assert flux_for_rate(RateFunction.linear(), 3.0) == (None, 1.0)


def test_nonlinear_trace_properties(k128):
    u0 = STEP.cell_averages(128)
    phi, kappa = flux_for_rate(IND_RATE, float(u0.max()))
    ent = zero_range_entropy(IND, float(u0.mean()), phi)
    st, tr = nonlinear_solve(u0, 0.05, k128, phi, kappa, record_times=np.linspace(0, 0.05, 11),
                             entropy_fn=ent)
    mass = tr.column("mass")
    assert np.max(np.abs(mass - u0.sum())) / u0.sum() < 1e-10
    assert np.all(tr.column("max") <= u0.max() + 1e-10)
    assert np.all(tr.column("min") >= u0.min() - 1e-10)
    assert np.all(np.diff(tr.column("entropy")) <= 1e-9)
    E = tr.energy_integral()
    assert np.all(np.isfinite(E)) and np.all(np.diff(E) >= 0)
    assert sorted(tr.snapshots) == pytest.approx(list(np.linspace(0, 0.05, 11)))
    assert tr.column("t")[-1] == 0.05


def test_self_convergence_rate():
    # refining N (and with it the step bound) halves the sup-norm gap
    errs = []
    sols = []
    for N in (128, 256, 512):
        k = build_kernel(KernelSpec(1, 0.5), N)
        phi, kappa = flux_for_rate(IND_RATE, 1.5)
        sols.append(nonlinear_solve(STEP.cell_averages(N), 0.2, k, phi, kappa)[0].u)
    errs = [np.max(np.abs(a - b[::2])) for a, b in zip(sols, sols[1:])]
    assert math.log2(errs[0] / errs[1]) >= 1.0


def test_stiffness_error(k128):
    with pytest.raises(StiffnessError):
        nonlinear_solve(STEP.cell_averages(128), 1.0, k128, phi=lambda v: 1e30 * v, kappa=1.0)


def test_nonlinear_rejects_bad_input(k128):
    with pytest.raises(ValueError):
        nonlinear_solve(-np.ones(128), 0.1, k128)
    with pytest.raises(ValueError):
        nonlinear_solve(np.ones(128), 0.1, k128, record_times=[0.2])


# -- diagnostics ------------------------------------------------------------------

def test_constant_state_diagnostics(k128):
    st = linear_solve(np.full(128, 0.4), 0.1, k128)
    d = solution_diagnostics(st, bernoulli_entropy(0.4))
    assert abs(d["entropy"]) < 1e-14 and abs(d["energy"]) < 1e-12 and d["fisher"] == 0


def test_entropy_densities():
    assert poisson_entropy(1.0)(2.0) == pytest.approx(2 * math.log(2) - 1)
    assert bernoulli_entropy(0.5)(0.5) == 0
    h = zero_range_entropy(IND, 1.0)
    assert h(np.array([2.0]))[0] == pytest.approx(IND.entropy(2.0, 1.0), rel=1e-8)


def test_fisher_information_zero_denominators():
    k = build_kernel(KernelSpec(1, 1.5), 16)
    f = np.zeros(16)
    f[3] = 1.0
    val = fisher_information(k, f, 1.0)
    # only pairs touching site 3 contribute, each (1 - 0)^2 / (1 + 0)
    want = 2 * k.rates.sum() / 16
    assert val == pytest.approx(want, rel=1e-12)


# -- variational characterisation ---------------------------------------------------

def test_fisher_functional_closed_form_identity():
    k = build_kernel(KernelSpec(1, 1.5), 32)
    f = np.random.default_rng(0).uniform(0.2, 2.0, 32)
    th = k.theta()
    Fs = fisher_maximizer(f)
    # direct double-sum oracle for the Fisher sum
    W = np.array([[k.rates[(y - x) % 32] for y in range(32)] for x in range(32)]) * th / 32
    direct = sum(W[x, y] * (f[y] - f[x]) ** 2 / (f[x] + f[y]) for x in range(32) for y in range(32))
    assert fisher_information(k, f, th) == pytest.approx(direct, rel=1e-12)
    assert fisher_functional(k, f, Fs, th) == pytest.approx(0.25 * direct, rel=1e-10)


def test_fisher_maximizer_beats_perturbations():
    k = build_kernel(KernelSpec(1, 1.5), 32)
    f = np.random.default_rng(1).uniform(0.2, 2.0, 32)
    res = variational_fisher_check(f, k, trials=100, eps=1e-2, rng=np.random.default_rng(2))
    assert res["best_trial_value"] <= res["maximizer_value"] + 1e-12
    assert abs(res["maximizer_value"] - res["closed_form_value"]) < 1e-10 * max(1.0, res["fisher"])


def test_fisher_constant_field():
    k = build_kernel(KernelSpec(1, 1.5), 16)
    res = variational_fisher_check(np.full(16, 0.8), k, trials=20, rng=np.random.default_rng(3))
    assert res["maximizer_value"] == 0 and res["fisher"] == 0
    assert res["best_trial_value"] <= 0
    with pytest.raises(ValueError):
        variational_fisher_check(np.zeros(16), k)


def test_fisher_first_variation_is_generator():
    # d/de J(F* + e H) at e = 0 vanishes along antisymmetric H
    k = build_kernel(KernelSpec(1, 1.5), 16)
    f = np.random.default_rng(4).uniform(0.5, 1.5, 16)
    Fs = fisher_maximizer(f)
    A = np.random.default_rng(5).normal(size=(16, 16))
    H = A - A.T
    e = 1e-5
    d = (fisher_functional(k, f, Fs + e * H, 1.0) - fisher_functional(k, f, Fs - e * H, 1.0)) / (2 * e)
    assert abs(d) < 1e-8


# -- contraction ------------------------------------------------------------------

def test_contraction_identical_data(k128):
    u0 = STEP.cell_averages(128)
    phi, kappa = flux_for_rate(IND_RATE, 2.0)
    rep = contraction_check(u0, u0.copy(), 0.02, k128, phi, kappa)
    assert rep["identical"] and rep["l1_final"] == 0


def test_contraction_ordered_and_nonexpansive(k128):
    rng = np.random.default_rng(6)
    a = 0.3 + rng.uniform(0, 1, 128)
    b = a + rng.uniform(0, 0.5, 128)
    phi, kappa = flux_for_rate(IND_RATE, float(b.max()))
    rep = contraction_check(a, b, 0.02, k128, phi, kappa)
    assert rep["ordered_final"] and rep["nonexpansive"] and rep["l2_nonincreasing"]
    c = 0.3 + rng.uniform(0, 1.5, 128)
    rep = contraction_check(a, c, 0.02, k128, phi, kappa)
    assert rep["ordered_final"] is None and rep["nonexpansive"]
