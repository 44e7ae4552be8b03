import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longjump._backend import COMPILED_AVAILABLE
from longjump.coupling import (CoupledConfiguration, CouplingInvariantError, FourColorSim,
                               ThreeColorSim, TwoClassSim, build_sandwich_initial,
                               build_split_initial)
from longjump.dynamics import ZeroRangeSim, empirical_field
from longjump.kernel import KernelSpec, build_kernel
from longjump.measures import Profile, RateFunction, ThermoFunctions, sample_profile_measure

IND_RATE = RateFunction.indicator()
LIN_RATE = RateFunction.linear()
IND = ThermoFunctions(IND_RATE)
LIN = ThermoFunctions(LIN_RATE)
STEP = Profile.parse("step breaks=0,0.25,0.5 values=0.5,1.5,0.5")


@pytest.fixture(scope="module")
def k64():
    return build_kernel(KernelSpec(1, 1.5), 64)


def _zr(N, rho, seed, tf=IND):
    return sample_profile_measure(Profile.constant(rho), N, np.random.default_rng(seed), tf=tf)


# -- configuration --------------------------------------------------------------

def test_coupled_configuration_rejects_red_white_overlap():
    z = np.zeros(4, dtype=int)
    with pytest.raises(ValueError):
        CoupledConfiguration(z, z, np.array([1, 0, 0, 0]), np.array([1, 0, 0, 0]), 4)
    with pytest.raises(ValueError):
        CoupledConfiguration(z - 1, z, z, z, 4)


def test_non_monotone_rate_refused(k64):
    bad = RateFunction(np.array([0.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        TwoClassSim(k64, bad, np.zeros(64, dtype=int), np.zeros(64, dtype=int), np.random.default_rng(0))


# -- two-class ------------------------------------------------------------------

def test_two_class_empty_second_layer_stays_empty(k64):
    sim = TwoClassSim(k64, IND_RATE, _zr(64, 1.0, 0), np.zeros(64, dtype=int), np.random.default_rng(0))
    sim.run_events(200_000)
    assert not np.any(sim.delta)
    assert sim.stats["second"] == 0


def test_two_class_ordering_million_events(k64):
    rng = np.random.default_rng(1)
    first = _zr(64, 0.5, 1)
    delta = _zr(64, 0.7, 2).occupancy
    sim = TwoClassSim(k64, IND_RATE, first, delta, rng, check=True)
    n0 = first.total_particles, int(delta.sum())
    sim.run_events(1_000_000)
    assert np.all(sim.delta >= 0)
    assert np.all(sim.first.occupancy <= sim.second.occupancy)
    assert (sim.first.total_particles, int(sim.delta.sum())) == n0
    assert sim.violations.sum() == 0


def test_two_class_upper_marginal_stationary():
    # xi2 = xi1 + delta started from nu_rho2 keeps its second moment
    k = build_kernel(KernelSpec(1, 1.5), 128)
    rho1, rho2 = 0.4, 1.0
    moments = []
    for r in range(30):
        u = np.random.default_rng(100 + r).random(128)
        x1, x2 = (sample_profile_measure(Profile.constant(rho), 128, None, tf=IND, uniforms=u)
                  for rho in (rho1, rho2))
        sim = TwoClassSim(k, IND_RATE, x1, x2.occupancy - x1.occupancy, np.random.default_rng(r))
        sim.run_until(0.05)
        moments.append(np.mean(sim.second.occupancy ** 2))
    p = IND.pmf(rho2)
    want = float(np.dot(np.arange(p.size) ** 2, p))
    se = np.std(moments, ddof=1) / math.sqrt(len(moments))
    assert abs(np.mean(moments) - want) < 3 * se


# -- three-color ----------------------------------------------------------------

def test_three_color_equal_profiles_keep_green_red_empty(k64):
    c = build_sandwich_initial(Profile.constant(1.0), 0.5, 1.0, 1.0, IND, 64, np.random.default_rng(3))
    assert not c.G.any() and not c.R.any()
    sim = ThreeColorSim(k64, IND_RATE, c, np.random.default_rng(4))
    sim.run_events(100_000)
    assert not sim.state.G.any() and not sim.state.R.any()


def test_three_color_sandwich_million_events(k64):
    c = build_sandwich_initial(STEP, 0.25, 0.25, 2.0, IND, 64, np.random.default_rng(5), center=0.375)
    sim = ThreeColorSim(k64, IND_RATE, c, np.random.default_rng(6), check=True)
    for _ in range(10):
        sim.run_events(100_000)
        assert sim.ordered()
        s = sim.state
        lo = empirical_field(s.marginal("B"), 2)
        mid = empirical_field(s.marginal("BG"), 2)
        hi = empirical_field(s.marginal("BGR"), 2)
        assert np.all(lo <= mid) and np.all(mid <= hi)
    assert sim.violations.sum() == 0
    assert sim.stats["annihilate_R"] == 0 and sim.stats["W"] == 0


def test_three_color_rejects_white():
    k = build_kernel(KernelSpec(1, 1.5), 8)
    z = np.zeros(8, dtype=int)
    c = CoupledConfiguration(z, z, z, z + 1, 8)
    with pytest.raises(ValueError):
        ThreeColorSim(k, IND_RATE, c, np.random.default_rng(0))


def test_sandwich_builder_layers():
    c = build_sandwich_initial(STEP, 10.0, 0.5, 1.5, IND, 64, np.random.default_rng(7))
    # box covers the torus: outer profiles equal u0, so the middle layers vanish
    assert not c.G.any() and not c.R.any()
    with pytest.raises(ValueError):
        build_sandwich_initial(STEP, 0.1, 0.8, 1.5, IND, 64, np.random.default_rng(7))


def test_sandwich_marginal_goodness_of_fit():
    N = 100_000
    c = build_sandwich_initial(Profile.constant(1.0), 0.0, 0.3, 2.0, IND, N, np.random.default_rng(8))
    for layer, rho in (("B", 0.3), ("BG", 1.0), ("BGR", 2.0)):
        x = c.marginal(layer).occupancy
        p = IND.pmf(rho)
        mean = float(np.dot(np.arange(p.size), p))
        var = float(np.dot(np.arange(p.size) ** 2, p)) - mean ** 2
        assert abs(x.mean() - mean) < 5 * math.sqrt(var / x.size)


# -- four-color -----------------------------------------------------------------

def test_split_initial_colors():
    c = build_split_initial(STEP, 1.0, IND, 64, np.random.default_rng(9))
    a = STEP.cell_averages(64)
    assert not c.R[a <= 1.0].any()
    assert not c.W[a > 1.0].any()
    assert not c.G.any()


def test_four_color_conservation_per_event(k64):
    c = build_split_initial(STEP, 1.0, IND, 64, np.random.default_rng(10))
    sim = FourColorSim(k64, IND_RATE, c, np.random.default_rng(11), check=True)
    tot_r = int((c.B + c.G + c.R).sum())
    tot_w = int((c.B + c.G + c.W).sum())
    for _ in range(1000):
        sim.step()
        s = sim.state
        assert int((s.B + s.G + s.R).sum()) == tot_r
        assert int((s.B + s.G + s.W).sum()) == tot_w
        assert not np.any((s.R > 0) & (s.W > 0))
    sim.run_events(500_000)
    assert sim.violations.sum() == 0
    assert sim.stats["annihilate_R"] + sim.stats["annihilate_W"] > 0


def test_four_color_annihilation_creates_green():
    k = build_kernel(KernelSpec(1, 1.5), 4)
    z = np.zeros(4, dtype=int)
    R = np.array([1, 0, 0, 0])
    W = np.array([0, 0, 1, 0])
    sim = FourColorSim(k, LIN_RATE, CoupledConfiguration(z, z, R, W, 4), np.random.default_rng(12))
    while sim.stats["annihilate_R"] + sim.stats["annihilate_W"] == 0:
        sim.step()
    s = sim.state
    assert s.G.sum() == 1 and s.R.sum() == 0 and s.W.sum() == 0


def test_four_color_detects_injected_violation():
    k = build_kernel(KernelSpec(1, 1.5), 4)
    z = np.zeros(4, dtype=int)
    c = CoupledConfiguration(z + 2, z, np.array([3, 0, 0, 0]), z, 4)
    sim = FourColorSim(k, LIN_RATE, c, np.random.default_rng(13), check=True)
    sim.state.W[0] = 3  # red and white now share site 0
    with pytest.raises(CouplingInvariantError) as exc:
        sim.run_events(10_000)
    dump = exc.value.dump
    assert set(dump) >= {"B", "G", "R", "W", "last", "violations"}
    assert dump["violations"].sum() > 0


def test_four_color_without_red_white_matches_two_class():
    k = build_kernel(KernelSpec(1, 1.5), 32)
    first = _zr(32, 0.6, 14)
    delta = _zr(32, 0.4, 15).occupancy
    z = np.zeros(32, dtype=int)
    four = FourColorSim(k, IND_RATE, CoupledConfiguration(first.occupancy, delta, z, z, 32),
                        np.random.default_rng(16))
    two = TwoClassSim(k, IND_RATE, first, delta, np.random.default_rng(16))
    four.run_events(50_000)
    two.run_events(50_000)
    # same uniforms and same rate split: the runs coincide event by event
    assert np.array_equal(four.state.B, two.first.occupancy)
    assert np.array_equal(four.state.G, two.delta)
    assert four.stats["B"] == two.stats["first"] and four.stats["G"] == two.stats["second"]


@pytest.mark.skipif(not COMPILED_AVAILABLE, reason="compiled kernels not built")
@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2 ** 31), M=st.floats(0.6, 1.4))
def test_four_color_backends_identical(seed, M):
    k = build_kernel(KernelSpec(1, 1.5), 16)
    c = build_split_initial(STEP, M, IND, 16, np.random.default_rng(seed))
    sims = [FourColorSim(k, IND_RATE, c, np.random.default_rng(seed), backend=b)
            for b in ("python", "compiled")]
    for s in sims:
        s.run_events(2_000)
    for layer in "BGRW":
        assert np.array_equal(getattr(sims[0].state, layer), getattr(sims[1].state, layer))
    assert sims[0].time == sims[1].time


def test_four_color_marginal_matches_single_process():
    # B+G+R evolves as a zero-range process from the u0 product measure
    k = build_kernel(KernelSpec(1, 1.5), 64)
    prof = STEP
    site = 24  # inside the high-density window
    four, single = [], []
    for r in range(40):
        c = build_split_initial(prof, 1.0, IND, 64, np.random.default_rng(200 + r))
        sim = FourColorSim(k, IND_RATE, c, np.random.default_rng(300 + r))
        sim.run_until(0.02)
        four.append(sim.state.marginal("BGR").occupancy[site - 4: site + 5].mean())
        c0 = sample_profile_measure(prof, 64, np.random.default_rng(400 + r), tf=IND)
        zr = ZeroRangeSim(k, IND_RATE, c0, np.random.default_rng(500 + r))
        zr.run_until(0.02)
        single.append(zr.config.occupancy[site - 4: site + 5].mean())
    d = np.mean(four) - np.mean(single)
    se = math.sqrt(np.var(four, ddof=1) / 40 + np.var(single, ddof=1) / 40)
    assert abs(d) < 3 * se
