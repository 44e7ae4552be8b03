import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from longjump._backend import COMPILED_AVAILABLE
from longjump.dynamics import (EventBudgetError, ExclusionSim, ZeroRangeSim, apply_moves,
                               empirical_field, entropy_decay_trace, exact_generator,
                               martingale_probe, move_map, move_path, v_field, v_stat)
from longjump.kernel import KernelSpec, build_kernel, fold_rates
from longjump.measures import Profile, RateFunction, ThermoFunctions, sample_profile_measure
from longjump.state import Configuration

SPEC = KernelSpec(1, 1.5)
LIN_RATE = RateFunction.linear()
IND_RATE = RateFunction.indicator()
LIN = ThermoFunctions(LIN_RATE)
IND = ThermoFunctions(IND_RATE)

needs_compiled = pytest.mark.skipif(not COMPILED_AVAILABLE, reason="compiled kernels not built")


@pytest.fixture(scope="module")
def k32():
    return build_kernel(SPEC, 32)


def _ex(N, rho, seed):
    return sample_profile_measure(Profile.constant(rho), N, np.random.default_rng(seed))


def _zr(N, rho, seed, tf=LIN):
    return sample_profile_measure(Profile.constant(rho), N, np.random.default_rng(seed), tf=tf)


# -- configurations -----------------------------------------------------------

def test_configuration_validation():
    with pytest.raises(ValueError):
        Configuration("exclusion", np.array([0, 2, 0, 0]), 4)
    with pytest.raises(ValueError):
        Configuration("zero_range", np.array([0, -1, 0, 0]), 4)
    with pytest.raises(ValueError):
        Configuration("zero_range", np.zeros(5), 4)
    with pytest.raises(ValueError):
        Configuration("voter", np.zeros(4), 4)
    c = Configuration("zero_range", np.array([1, 2, 0, 3]), 4)
    assert c.total_particles == 6


# -- exclusion ------------------------------------------------------------------

def test_single_particle_is_free_walk(k32):
    occ = np.zeros(32, dtype=np.int8)
    occ[0] = 1
    sim = ExclusionSim(k32, Configuration("exclusion", occ, 32), np.random.default_rng(0))
    counts = np.zeros(32, dtype=np.int64)
    for _ in range(100_000):
        ev = sim.step()
        counts[(ev.target - ev.source) % 32] += 1
    assert counts[0] == 0 and sim.stats["moves"] == 100_000
    p = k32.rates / k32.p_star
    assert stats.chisquare(counts[1:], counts.sum() * p[1:]).pvalue > 1e-3


def test_full_exclusion_is_frozen(k32):
    full = Configuration("exclusion", np.ones(32, dtype=np.int8), 32)
    sim = ExclusionSim(k32, full, np.random.default_rng(1))
    sim.run_events(10_000)
    assert np.all(sim.config.occupancy == 1)
    assert sim.stats["moves"] == 0 and sim.stats["attempts"] == 10_000
    assert sim.time > 0


def test_exclusion_conservation_and_determinism(k32):
    c0 = _ex(32, 0.4, 2)
    a = ExclusionSim(k32, c0, np.random.default_rng(3))
    b = ExclusionSim(k32, c0, np.random.default_rng(3))
    a.run_events(1_000_000)
    b.run_events(1_000_000)
    assert a.config.total_particles == c0.total_particles
    assert np.array_equal(a.config.occupancy, b.config.occupancy)
    assert a.time == b.time


def test_run_until_current_time_is_noop(k32):
    sim = ExclusionSim(k32, _ex(32, 0.5, 4), np.random.default_rng(4))
    sim.run_until(0.0)
    assert sim.clock.event_count == 0
    with pytest.raises(ValueError):
        sim.run_until(-1.0)


def test_event_budget_overflow(k32):
    sim = ExclusionSim(k32, _ex(32, 0.5, 5), np.random.default_rng(5))
    with pytest.raises(EventBudgetError):
        sim.run_until(10.0, max_events=100)


def test_empty_system_advances_clock(k32):
    sim = ExclusionSim(k32, Configuration("exclusion", np.zeros(32, dtype=np.int8), 32),
                       np.random.default_rng(0))
    sim.run_until(0.3)
    assert sim.time == 0.3


# -- zero range -----------------------------------------------------------------

def test_zero_range_linear_total_rate(k32):
    sim = ZeroRangeSim(k32, LIN_RATE, _zr(32, 2.0, 6), np.random.default_rng(6))
    P = sim.config.total_particles
    for _ in range(20):
        sim.run_events(5_000)
        assert sim.total_rate() == pytest.approx(P * k32.p_star * sim.theta, rel=1e-12)


def test_zero_range_conservation_and_determinism(k32):
    c0 = _zr(32, 1.0, 7, IND)
    runs = []
    for _ in range(2):
        sim = ZeroRangeSim(k32, IND_RATE, c0, np.random.default_rng(8))
        sim.run_events(1_000_000)
        runs.append(sim)
    assert runs[0].config.total_particles == c0.total_particles
    assert np.array_equal(runs[0].config.occupancy, runs[1].config.occupancy)


def test_zero_range_tree_matches_rates(k32):
    sim = ZeroRangeSim(k32, IND_RATE, _zr(32, 1.5, 9, IND), np.random.default_rng(9))
    sim.run_events(100_000)
    g = IND_RATE(sim.config.occupancy)
    assert sim.total_rate() == pytest.approx(g.sum() * sim.rate, rel=1e-9)


# -- backends -----------------------------------------------------------------

@needs_compiled
@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2 ** 31), rho=st.floats(0.1, 0.9))
def test_exclusion_backends_identical(seed, rho):
    k = build_kernel(SPEC, 16)
    c0 = _ex(16, rho, seed)
    sims = [ExclusionSim(k, c0, np.random.default_rng(seed), backend=b) for b in ("python", "compiled")]
    for s in sims:
        s.run_events(3_000)
    assert np.array_equal(sims[0].config.occupancy, sims[1].config.occupancy)
    assert sims[0].time == sims[1].time


@needs_compiled
@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2 ** 31), rate=st.sampled_from(["linear", "indicator", "capped2"]))
def test_zero_range_backends_identical(seed, rate):
    k = build_kernel(SPEC, 16)
    g = RateFunction.from_name(rate)
    c0 = _zr(16, 1.0, seed, ThermoFunctions(g))
    sims = [ZeroRangeSim(k, g, c0, np.random.default_rng(seed), backend=b) for b in ("python", "compiled")]
    for s in sims:
        s.run_until(0.01, max_events=10 ** 7)
    assert np.array_equal(sims[0].config.occupancy, sims[1].config.occupancy)
    assert sims[0].time == sims[1].time


# -- observables ----------------------------------------------------------------

def test_empirical_field_constant_and_mass():
    c = Configuration("zero_range", np.full(64, 3), 64)
    for l in (0, 1, 5, 31):
        assert np.all(empirical_field(c, l) == 3)
    c = _zr(64, 1.0, 10)
    assert empirical_field(c, 4).sum() == pytest.approx(c.total_particles)
    with pytest.raises(ValueError):
        empirical_field(c, 32)


def test_empirical_field_clt():
    N, l, rho = 1024, 16, 1.0
    c = _zr(N, rho, 11)
    f = empirical_field(c, l)
    se = math.sqrt(rho / (2 * l + 1))
    assert np.mean(np.abs(f - rho) <= 5 * se) >= 0.99


def test_v_stat_linear_is_zero_and_constant_block():
    c = _zr(64, 1.5, 12)
    assert np.max(v_field(c, 3, LIN)) < 1e-9
    cst = Configuration("zero_range", np.full(64, 2), 64)
    assert v_stat(cst, 5, 3, IND) == pytest.approx(abs(1.0 - IND.fugacity_of_density(2.0)))


def test_v_stat_decreases_with_block():
    rng = np.random.default_rng(13)
    N = 512
    means = {l: [] for l in (2, 8, 32)}
    for _ in range(60):
        c = sample_profile_measure(Profile.constant(1.0), N, rng, tf=IND)
        for l in means:
            means[l].append(np.mean(v_field(c, l, IND)))
    m = {l: (np.mean(v), np.std(v, ddof=1) / math.sqrt(len(v))) for l, v in means.items()}
    assert m[2][0] > m[8][0] > m[32][0]
    assert m[2][0] - 1.96 * m[2][1] > m[32][0] + 1.96 * m[32][1]


def test_martingale_probe_empty_and_schedule(k32):
    sim = ExclusionSim(k32, Configuration("exclusion", np.zeros(32, dtype=np.int8), 32),
                       np.random.default_rng(0))
    G = np.sin(2 * np.pi * np.arange(32) / 32)
    out = martingale_probe(sim, G, [0.01, 0.02])
    for key in ("pi", "M", "qv"):
        assert np.all(out[key] == 0)
    sim2 = ExclusionSim(k32, _ex(32, 0.5, 1), np.random.default_rng(1))
    with pytest.raises(ValueError):
        martingale_probe(sim2, G, [0.02, 0.01])


def test_martingale_mean_zero_zero_range():
    k = build_kernel(SPEC, 64)
    G = np.sin(2 * np.pi * np.arange(64) / 64)
    Ms = []
    for r in range(100):
        c0 = _zr(64, 1.0, 100 + r)
        sim = ZeroRangeSim(k, IND_RATE, c0, np.random.default_rng(r))
        Ms.append(martingale_probe(sim, G, [0.02])["M"][0])
    Ms = np.array(Ms)
    assert abs(Ms.mean()) <= 3 * Ms.std(ddof=1) / math.sqrt(Ms.size)


# -- move paths -----------------------------------------------------------------

def test_move_path_examples():
    assert move_path(0, 6) == ([3, 3], 6)
    assert move_path(0, 12) == ([5, 5, 1, 1], 12)
    jumps, z = move_path(12, 0)
    assert sum(jumps) == -12 and z == 0
    with pytest.raises(ValueError):
        move_path(0, 7)
    jumps, z = move_path(0, 7, adjust=True)
    assert z == 6 and sum(jumps) == 6


@settings(max_examples=40, deadline=None)
@given(y=st.integers(0, 59), m0=st.integers(1, 9), sign=st.sampled_from([-1, 1]),
       seed=st.integers(0, 10 ** 6))
def test_move_path_composition_identity(y, m0, sign, seed):
    N = 120
    z = y + sign * 6 * m0
    occ = np.random.default_rng(seed).integers(0, 3, N)
    occ[y] = max(occ[y], 1)
    jumps, zz = move_path(y, z)
    assert sum(jumps) == z - y and zz == z
    lengths = {abs(s) for s in jumps}
    j = (m0 + 1) // 2
    assert lengths <= {2 * m0 + j, m0 - j}
    assert np.array_equal(apply_moves(occ, y, jumps, N), move_map(occ, y, z % N))


# -- exact generators -----------------------------------------------------------

def _check_rate_matrix(Q):
    D = Q.toarray()
    off = D - np.diag(np.diag(D))
    assert np.all(off >= 0)
    assert np.max(np.abs(D.sum(axis=1))) < 1e-12


def test_exclusion_generator_stationarity():
    gen = exact_generator("exclusion", 4, fold_rates(SPEC, 4))
    assert gen.n_states == 16
    _check_rate_matrix(gen.Q)
    for rho in (0.2, 0.5, 0.8):
        mu = gen.product_measure(rho)
        assert np.max(np.abs(mu @ gen.dense())) < 1e-12


def test_exclusion_constructions_agree():
    a = exact_generator("exclusion", 6, fold_rates(SPEC, 6)).dense()
    b = exact_generator("exclusion", 6, fold_rates(SPEC, 6), construction="pairs").dense()
    assert np.allclose(a, b, atol=1e-14)


def test_single_particle_sector_is_walk():
    N = 6
    r = fold_rates(SPEC, N)
    gen = exact_generator("exclusion", N, r)
    s = np.zeros(N, dtype=int)
    s[0] = 1
    i = gen.index(s)
    for y in range(1, N):
        t = np.zeros(N, dtype=int)
        t[y] = 1
        assert gen.dense()[i, gen.index(t)] == pytest.approx(r[y], rel=1e-14)


def test_zero_range_detailed_balance():
    gen = exact_generator("zero_range", 3, fold_rates(SPEC, 3), LIN_RATE, cap=4)
    _check_rate_matrix(gen.Q)
    mu = gen.product_measure(0.4, LIN)
    F = mu[:, None] * gen.dense()
    off = ~np.eye(gen.n_states, dtype=bool)
    assert np.max(np.abs(F - F.T)[off]) < 1e-12


def test_generator_size_limit():
    with pytest.raises(ValueError):
        exact_generator("exclusion", 20, fold_rates(SPEC, 20))
    with pytest.raises(ValueError):
        exact_generator("zero_range", 3, fold_rates(SPEC, 3))


def test_residue_vector_validation():
    with pytest.raises(ValueError):
        exact_generator("exclusion", 4, np.array([0.0, 1.0, 0.5, 2.0]))


# -- entropy decay --------------------------------------------------------------

def test_entropy_decay_stationary_start():
    gen = exact_generator("zero_range", 3, fold_rates(SPEC, 3), LIN_RATE, cap=3)
    ref = gen.product_measure(1.0, LIN)
    tr = entropy_decay_trace(gen, ref, ref, np.linspace(0, 1, 5))
    assert np.max(np.abs(tr["H"])) < 1e-12 and np.max(np.abs(tr["D"])) < 1e-12


def test_entropy_decay_monotone_and_dirichlet_bound():
    gen = exact_generator("zero_range", 3, fold_rates(SPEC, 3), LIN_RATE, cap=3)
    ref = gen.product_measure(1.0, LIN)
    w = 1 + 0.5 * np.cos(np.arange(gen.n_states))
    d0 = ref * w / np.sum(ref * w)
    tr = entropy_decay_trace(gen, d0, ref, np.linspace(0, 2, 50))
    assert np.all(np.diff(tr["H"]) <= 1e-10)
    assert tr["dHdt"][0] <= -2 * tr["D"][0] + 1e-8
    assert tr["dHdt0_fd"] == pytest.approx(tr["dHdt"][0], rel=1e-3)
    with pytest.raises(ValueError):
        entropy_decay_trace(gen, d0, np.zeros_like(ref), [0.0])
