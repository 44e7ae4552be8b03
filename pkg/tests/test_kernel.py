import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longjump.kernel import (KernelSpec, apply_Ln, apply_Ln_direct, apply_Ln_two_point, apply_Qn,
                             build_kernel, continuum_c, continuum_symbol_integral, energy,
                             fold_rates, levy_symbol, sample_jump, time_scale)


@pytest.fixture(scope="module")
def k64():
    return build_kernel(KernelSpec(1, 1.5), 64)


# -- construction -------------------------------------------------------------

def test_p_star_converges_to_basel_value():
    k = build_kernel(KernelSpec(1, 1.0), 4096, 64)
    assert abs(k.p_star - math.pi ** 2 / 3) < 1e-3


def test_rate_ratio_homogeneity():
    r = fold_rates(KernelSpec(1, 1.0), 4096, 64)
    assert r[2] / r[1] == pytest.approx(0.25, rel=1e-5)
    r = fold_rates(KernelSpec(1, 1.5), 4096, 64)
    assert r[2] / r[1] == pytest.approx(2 ** -2.5, rel=1e-5)


def test_folding_adds_mass():
    s = KernelSpec(1, 1.5)
    assert build_kernel(s, 64, 64).p_star > build_kernel(s, 64, 0).p_star


@pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(alpha=-1.0), dict(alpha=2.5),
                                dict(dim=2, angular=(1.0, 2.0, 3.0, 4.0)),
                                dict(dim=2, angular=(1.0, -1.0)), dict(dim=1, angular=(1.0, 1.0))])
def test_spec_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        KernelSpec(**kw)


@pytest.mark.parametrize("N", [2, 3, 7])
def test_build_rejects_bad_sizes(N):
    with pytest.raises(ValueError):
        build_kernel(KernelSpec(), N)


def test_kernel_invariants(k64):
    assert k64.rates[0] == 0
    assert np.array_equal(k64.rates[1:], k64.rates[1:][::-1])
    assert k64.jump_rates.sum() == pytest.approx(k64.p_star, rel=1e-14)
    assert k64.cdf[-1] == 1.0 and np.all(np.diff(k64.cdf) >= 0)
    # ties at N/2 split into +-N/2
    half = np.flatnonzero(np.abs(k64.displacements[:, 0]) == 32)
    assert len(half) == 2 and k64.jump_rates[half[0]] == k64.jump_rates[half[1]]


def test_build_is_deterministic():
    a, b = build_kernel(KernelSpec(1, 1.2), 32), build_kernel(KernelSpec(1, 1.2), 32)
    assert np.array_equal(a.rates, b.rates) and np.array_equal(a.cdf, b.cdf)


def test_two_dimensional_kernel_symmetry():
    k = build_kernel(KernelSpec(2, 1.0, angular=(1.0, 2.0, 1.0, 2.0)), 8, 4)
    r = k.rates
    assert np.allclose(r, r[np.ix_(-np.arange(8) % 8, -np.arange(8) % 8)], rtol=0, atol=0)
    assert np.all(k.symbol <= 1e-12)


def test_time_scale_modes():
    assert time_scale(100, 1.5) == pytest.approx(1000.0)
    assert time_scale(100, 2, "log_corrected") == pytest.approx(1e4 / math.log(100))
    with pytest.raises(ValueError):
        time_scale(100, 1.5, "log_corrected")


# -- sampling -----------------------------------------------------------------

def test_sample_jump_frequencies(k64):
    n = 1_000_000
    z = sample_jump(k64, np.random.default_rng(0), n)
    assert np.all(z != 0)
    res = np.mod(z, 64)
    counts = np.bincount(res, minlength=64)
    p = k64.rates / k64.p_star
    se = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts[1:] - n * p[1:]) <= 5 * se[1:])
    # z and -z
    cz = {v: c for v, c in zip(*np.unique(z, return_counts=True))}
    for v in range(1, 31):
        a, b = cz.get(v, 0), cz.get(-v, 0)
        assert abs(a - b) <= 5 * math.sqrt(a + b + 1)


def test_sample_jump_deterministic(k64):
    a = sample_jump(k64, np.random.default_rng(5), 100)
    b = sample_jump(k64, np.random.default_rng(5), 100)
    assert np.array_equal(a, b)


# -- operators ----------------------------------------------------------------

def test_Ln_kills_constants(k64):
    assert np.max(np.abs(apply_Ln(k64, np.full(64, 3.0), 7.0))) < 1e-12


@pytest.mark.parametrize("m", [1, 3, 17, 32])
def test_cosines_are_eigenfunctions(k64, m):
    x = np.arange(64)
    G = np.cos(2 * np.pi * m * x / 64)
    out = apply_Ln(k64, G, 2.0)
    assert np.allclose(out, 2.0 * levy_symbol(k64, m) * G, atol=1e-12)


def test_fft_operator_matches_direct_sum(k64):
    G = np.random.default_rng(1).normal(size=64)
    assert np.allclose(apply_Ln(k64, G, 3.0), apply_Ln_direct(k64, G, 3.0), atol=1e-11)


def test_Ln_rejects_grid_mismatch(k64):
    with pytest.raises(ValueError):
        apply_Ln(k64, np.zeros(32), 1.0)


def test_Ln_matches_continuum_operator_alpha1():
    # periodic continuum operator: Fourier mode m is multiplied by -c (2 pi |m|)^alpha
    N, alpha = 1024, 1.0
    k = build_kernel(KernelSpec(1, alpha), N)
    fine = 1 << 16
    y = np.arange(fine) / fine
    bump = np.exp(-0.5 * (((y - 0.5 + 0.5) % 1.0 - 0.5) / 0.1) ** 2)
    coef = np.fft.fft(bump) / fine
    m = np.fft.fftfreq(fine, 1.0 / fine)
    want_full = np.real(np.fft.ifft(coef * -continuum_c(alpha) * np.abs(2 * np.pi * m) ** alpha) * fine)
    want = want_full[:: fine // N]
    got = apply_Ln(k, bump[:: fine // N], k.theta()) / k.theta() * N ** alpha
    assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 10.0 / N


def test_levy_symbol_properties():
    k = build_kernel(KernelSpec(1, 1.0), 256)
    assert levy_symbol(k, 0) == 0.0
    s = np.array([levy_symbol(k, m) for m in range(256)])
    assert np.all(s[1:] < 0)
    assert np.allclose(s[1:], s[1:][::-1], rtol=1e-12)
    with pytest.raises(ValueError):
        levy_symbol(k, 256)


def test_levy_symbol_at_half_mode_converges():
    k = build_kernel(KernelSpec(1, 1.0), 4096, 64)
    assert abs(levy_symbol(k, 2048) + math.pi ** 2 / 2) < 1e-2


# -- continuum constant -------------------------------------------------------

def test_continuum_c_alpha1_is_pi():
    assert continuum_c(1.0) == pytest.approx(math.pi, rel=1e-8)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 1.9])
def test_continuum_c_homogeneity(alpha):
    c = continuum_c(alpha)
    assert continuum_symbol_integral(alpha, 1.0, 2.0) == pytest.approx(-c * 2 ** alpha, rel=1e-6)
    assert continuum_c(alpha, 2.0) == pytest.approx(2 * c, rel=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 2.0, 2.5])
def test_continuum_c_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        continuum_c(alpha)


# -- energy and carre du champ ------------------------------------------------

def test_energy_summation_by_parts():
    N = 128
    k = build_kernel(KernelSpec(1, 1.5), N)
    rng = np.random.default_rng(2)
    x = np.arange(N) / N
    u = sum(rng.normal() * np.cos(2 * np.pi * m * x + rng.uniform(0, 6)) for m in range(1, 5))
    G = sum(rng.normal() * np.cos(2 * np.pi * m * x + rng.uniform(0, 6)) for m in range(1, 5))
    th = k.theta()
    lhs = energy(k, u, G)
    rhs = -np.sum(u * apply_Ln(k, G, th)) / N
    assert lhs == pytest.approx(rhs, rel=1e-10)
    # direct double sum
    P = k.rates[np.mod(np.arange(N)[None, :] - np.arange(N)[:, None], N)]
    direct = 0.5 * th / N * np.sum(P * np.subtract.outer(u, u) * np.subtract.outer(G, G))
    assert lhs == pytest.approx(direct, rel=1e-10)


def test_energy_constant_and_parallelogram(k64):
    rng = np.random.default_rng(3)
    u, v = rng.normal(size=64), rng.normal(size=64)
    assert abs(energy(k64, np.ones(64), np.ones(64))) < 1e-12
    assert energy(k64, u, u) >= 0
    assert energy(k64, u + v, u + v) <= 2 * energy(k64, u, u) + 2 * energy(k64, v, v) + 1e-9
    assert energy(k64, u, v) == pytest.approx(energy(k64, v, u), rel=1e-12)


def test_Qn_one_point_matches_double_sum(k64):
    x = np.arange(64)
    G = np.cos(2 * np.pi * 3 * x / 64)
    th = 5.0
    got = apply_Qn(k64, G, theta=th)
    D = np.subtract.outer(G, G)  # G(x) - G(y)
    P = k64.rates[np.mod(x[None, :] - x[:, None], 64)]
    want = th * np.sum(P * D ** 2, axis=1)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-10)
    assert np.max(np.abs(apply_Qn(k64, np.zeros(64), theta=th))) == 0


def test_two_point_reduction_and_antisymmetry():
    k = build_kernel(KernelSpec(1, 1.5), 16)
    F = np.random.default_rng(4).normal(size=16)
    G = F[None, :] - F[:, None]
    assert np.allclose(apply_Ln_two_point(k, G, theta=2.0), apply_Ln(k, F, 2.0), atol=1e-12)
    assert np.allclose(apply_Qn(k, G, theta=2.0), apply_Qn(k, F, theta=2.0), atol=1e-10)
    with pytest.raises(ValueError):
        apply_Ln_two_point(k, np.ones((16, 16)), theta=1.0)


@settings(max_examples=25, deadline=None)
@given(alpha=st.floats(0.3, 2.0), N=st.sampled_from([4, 6, 8, 16, 30]))
def test_symbol_nonpositive_and_even(alpha, N):
    k = build_kernel(KernelSpec(1, alpha), N, 8)
    assert np.all(k.symbol <= 1e-12)
    assert np.allclose(k.symbol[1:], k.symbol[1:][::-1], rtol=1e-12, atol=1e-14)
    assert np.isclose(-k.symbol.sum(), N * k.p_star, rtol=1e-12)
