"""Event-driven simulation of exclusion and zero-range processes with long jumps.

Simulations run directly in macroscopic time: every microscopic rate is
multiplied by the time scale ``theta`` (``n**alpha``, or ``n**2/log n`` at
``alpha = 2``). A single global exponential clock drives each process; the
event loops live in the compiled extension (or the pure-Python fallback) and
consume uniforms from a buffer owned by the simulation object, so a run is a
deterministic function of its seed regardless of backend.

The module also contains exact finite-state tools (generator matrices and
entropy/Dirichlet-form evolution) used as oracles.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse

from ._backend import get_backend
from .io import write_csv
from .kernel import KernelSpec, LatticeKernel, apply_Ln, apply_Qn, fold_rates, pair_weights
from .measures import RateFunction, ThermoFunctions
from .state import Configuration

__all__ = [
    "Configuration",
    "SimClock",
    "ExclusionSim",
    "ZeroRangeSim",
    "EventBudgetError",
    "empirical_field",
    "v_stat",
    "v_field",
    "martingale_probe",
    "move_map",
    "move_path",
    "apply_moves",
    "FiniteGenerator",
    "exact_generator",
    "entropy_decay_trace",
    "write_snapshots",
]

DEFAULT_EVENT_BUDGET = 10**11


class EventBudgetError(RuntimeError):
    """``run_until`` needed more events than the configured budget."""


class UniformStream:
    """Block-refilled buffer of uniforms shared by Python and the event loops."""

    def __init__(self, rng: np.random.Generator, block: int = 1 << 15):
        self.rng = rng
        self.block = block
        self.buf = np.empty(0)
        self.pos = 0

    def ensure(self, k: int) -> None:
        if self.buf.size - self.pos < k:
            self.buf = np.concatenate([self.buf[self.pos:], self.rng.random(self.block)])
            self.pos = 0

    def take(self) -> float:
        self.ensure(1)
        v = float(self.buf[self.pos])
        self.pos += 1
        return v


@dataclass
class SimClock:
    """Macroscopic clock; ``micro_time = macro_time * theta``."""

    theta: float
    n: float
    macro_time: float = 0.0
    event_count: int = 0

    @property
    def micro_time(self) -> float:
        return self.macro_time * self.theta


class EventRecord(NamedTuple):
    macro_time: float
    source: int
    target: int
    kind: int


class _EventSim:
    """Shared clock, uniform-buffer and budget logic for the event loops."""

    need = 3

    def _init_common(self, kernel: LatticeKernel, rng, n, time_scale, backend, block):
        self.kernel = kernel
        n = kernel.N if n is None else n
        self.n = n
        self.time_scale = time_scale
        theta = kernel.theta(n, time_scale)
        self.clock = SimClock(theta, n)
        self.theta = theta
        self.rate = theta * kernel.p_star
        self.backend = backend
        self._k = get_backend(backend)
        self._stream = UniformStream(rng, block)
        self._clk = np.zeros(2)
        self._stats = np.zeros(8, dtype=np.int64)
        self._last = np.zeros(3, dtype=np.int64)
        self._disp = np.ascontiguousarray(kernel.displacements, dtype=np.int64)
        self._cdf = np.ascontiguousarray(kernel.cdf, dtype=np.float64)
        self.event_budget = DEFAULT_EVENT_BUDGET

    # subclasses implement these
    def _total_rate(self) -> float:
        raise NotImplementedError

    def _call(self, t_end: float, max_events: int):
        raise NotImplementedError

    def _after_call(self) -> None:
        pass

    def _on_violation(self) -> None:
        raise RuntimeError("event loop reported an invariant violation")

    def _schedule_next(self) -> None:
        """Draw the pending event time from the current total rate."""
        total = self._total_rate()
        u = self._stream.take()
        self._clk[1] = self._clk[0] + (-math.log1p(-u) / total if total > 0 else math.inf)

    @property
    def time(self) -> float:
        return float(self._clk[0])

    def _run(self, t_end: float, max_events: int, budget_is_error: bool) -> int:
        done = 0
        while True:
            nev, upos, status = self._call(t_end, max_events - done)
            self._stream.pos = upos
            done += nev
            if status == 0:
                break
            if status == 3:
                self._sync(done)
                self._on_violation()
            if status == 1:
                if budget_is_error:
                    self._sync(done)
                    raise EventBudgetError(
                        f"more than {max_events} events before macro time {t_end}")
                break
            self._stream.ensure(self.need)
        self._sync(done)
        return done

    def _sync(self, done: int) -> None:
        self.clock.macro_time = float(self._clk[0])
        self.clock.event_count += done
        self._after_call()

    def run_until(self, T: float, max_events: int | None = None) -> Configuration:
        """Advance to macro time ``T``; the state is the one in force at ``T``."""
        if T < self.time:
            raise ValueError(f"target time {T} is before the current time {self.time}")
        self._run(float(T), self.event_budget if max_events is None else max_events, True)
        return self.config

    def run_events(self, k: int) -> int:
        """Perform at most ``k`` events (stops early only if the rate vanishes)."""
        return self._run(math.inf, int(k), False)

    def step(self) -> EventRecord | None:
        """One event; ``None`` when no event can ever occur (zero total rate)."""
        if self._run(math.inf, 1, False) == 0:
            return None
        return EventRecord(self.time, int(self._last[0]), int(self._last[1]), int(self._last[2]))


def _as_lin(lin, S: int) -> np.ndarray:
    if lin is None:
        return np.zeros((0, S))
    lin = np.asarray(lin, dtype=float)
    lin = lin.reshape(-1, S) if lin.size else np.zeros((0, S))
    return np.ascontiguousarray(lin)


class ExclusionSim(_EventSim):
    """Exclusion process with long jumps.

    A uniformly chosen particle attempts a jump at total rate
    ``(#particles) * theta * p_star``; the jump is suppressed if the target
    is occupied (time still advances).

    Parameters
    ----------
    kernel : LatticeKernel
    config : Configuration
        Initial exclusion configuration (copied).
    rng : numpy.random.Generator
    n : float, optional
        Scaling parameter; defaults to the lattice side ``N``.
    time_scale : {"power", "log_corrected"}
    backend : {None, "python", "compiled"}
    """

    def __init__(self, kernel: LatticeKernel, config: Configuration, rng: np.random.Generator,
                 n: float | None = None, time_scale: str = "power", backend: str | None = None,
                 block: int = 1 << 15):
        if config.model != "exclusion":
            raise ValueError("ExclusionSim needs an exclusion configuration")
        if config.N != kernel.N or config.dim != kernel.dim:
            raise ValueError("configuration and kernel live on different tori")
        self._init_common(kernel, rng, n, time_scale, backend, block)
        self.config = config.copy()
        self._pos = self.config.positions()
        self.set_observables(None, None)
        self._schedule_next()

    def _total_rate(self) -> float:
        return self._pos.size * self.rate

    def set_observables(self, lin=None, quad=None) -> None:
        """Accumulate ``int sum_x eta(x) lin[k, x] dt`` and, if given,
        ``int sum_{a,b} quad[a, b] eta(a)(1 - eta(b)) dt`` from now on."""
        S = self.config.n_sites
        self._lin = _as_lin(lin, S)
        self._lin_acc = np.zeros(self._lin.shape[0])
        self._lin_cur = np.zeros(self._lin.shape[0])
        self._quad = np.zeros((0, 0)) if quad is None else np.ascontiguousarray(quad, dtype=float)
        if self._quad.size and self._quad.shape != (S, S):
            raise ValueError("quadratic observable must be an (S, S) matrix")
        self._quad_st = np.zeros(2)
        self._refresh_observables()

    def _refresh_observables(self) -> None:
        eta = self.config.occupancy.astype(float)
        self._lin_cur[:] = self._lin @ eta
        if self._quad.size:
            self._quad_st[0] = float(eta @ self._quad @ (1.0 - eta))

    def _after_call(self) -> None:
        self._refresh_observables()

    @property
    def observed_integrals(self) -> np.ndarray:
        return self._lin_acc.copy()

    @property
    def observed_quadratic_integral(self) -> float:
        return float(self._quad_st[1])

    @property
    def stats(self) -> dict:
        return {"attempts": int(self._stats[0]), "moves": int(self._stats[1])}

    def _call(self, t_end, max_events):
        k = self.kernel
        if self._pos.size == 0:
            # nothing can move; the clock simply advances
            self._clk[0] = max(self._clk[0], t_end) if math.isfinite(t_end) else self._clk[0]
            return 0, self._stream.pos, 0
        return self._k.exclusion_run(
            self.config.occupancy, self._pos, self._cdf, self._disp, k.N, k.dim, self.rate,
            self._clk, t_end, self._stream.buf, self._stream.pos, max_events, self._stats,
            self._last, self._lin, self._lin_cur, self._lin_acc, self._quad, self._quad_st)


def _tree_size(S: int) -> int:
    L = 1
    while L < S:
        L <<= 1
    return L


class ZeroRangeSim(_EventSim):
    """Zero-range process with long jumps.

    Site ``x`` emits a particle at rate ``theta * p_star * g(xi(x))``; sources
    are drawn from a sum tree over ``g(xi(x))``.

    Parameters
    ----------
    kernel : LatticeKernel
    rate : RateFunction
    config : Configuration
        Initial zero-range configuration (copied).
    rng : numpy.random.Generator
    tag_site : int, optional
        Flat index of a site holding a tagged particle. When a particle leaves
        the tagged site it is the tagged one with probability ``1/xi(x)``.
    """

    def __init__(self, kernel: LatticeKernel, rate: RateFunction, config: Configuration,
                 rng: np.random.Generator, n: float | None = None, time_scale: str = "power",
                 backend: str | None = None, tag_site: int | None = None, block: int = 1 << 15):
        if config.model != "zero_range":
            raise ValueError("ZeroRangeSim needs a zero-range configuration")
        if config.N != kernel.N or config.dim != kernel.dim:
            raise ValueError("configuration and kernel live on different tori")
        self._init_common(kernel, rng, n, time_scale, backend, block)
        self.rate_fn = rate
        self._gtab, self._gslope = rate.kernel_arrays()
        self.config = config.copy()
        S = self.config.n_sites
        self._L = _tree_size(S)
        self._tree = np.zeros(2 * self._L)
        d = kernel.dim
        self._tag = np.zeros(2 + d, dtype=np.int64)
        self._tag_f = np.zeros(2)
        self._jcount = np.zeros(kernel.displacements.shape[0], dtype=np.int64)
        if tag_site is not None:
            if self.config.occupancy[tag_site] < 1:
                raise ValueError("the tagged site must be occupied")
            self._tag[0] = 1
            self._tag[1] = tag_site
            self._tag[2:] = np.unravel_index(tag_site, kernel.shape)
            self.need = 4
        self.rebuild_tree()
        self.set_observables(None)
        self._schedule_next()

    def rebuild_tree(self) -> None:
        """Recompute all site weights ``g(xi(x))`` and internal sums."""
        L = self._L
        S = self.config.n_sites
        self._tree[:] = 0.0
        self._tree[L:L + S] = self.rate_fn(self.config.occupancy)
        for i in range(L - 1, 0, -1):
            self._tree[i] = self._tree[2 * i] + self._tree[2 * i + 1]
        if self._tag[0]:
            s = int(self._tag[1])
            self._tag_f[1] = self.rate_fn(int(self.config.occupancy[s])) / self.config.occupancy[s]

    def total_rate(self) -> float:
        """Current total event rate ``theta * p_star * sum_x g(xi(x))``."""
        return self._total_rate()

    def _total_rate(self) -> float:
        return float(self._tree[1]) * self.rate

    def set_observables(self, lin=None) -> None:
        """Accumulate ``int sum_x g(xi(x)) lin[k, x] dt`` from now on."""
        self._lin = _as_lin(lin, self.config.n_sites)
        self._lin_acc = np.zeros(self._lin.shape[0])
        self._lin_cur = np.zeros(self._lin.shape[0])
        self._refresh_observables()

    def _refresh_observables(self) -> None:
        self._lin_cur[:] = self._lin @ self.rate_fn(self.config.occupancy)

    def _after_call(self) -> None:
        self._refresh_observables()

    @property
    def observed_integrals(self) -> np.ndarray:
        return self._lin_acc.copy()

    @property
    def stats(self) -> dict:
        return {"events": int(self._stats[0]), "tag_moves": int(self._stats[1])}

    # tagged-particle accessors
    @property
    def tag_position(self) -> np.ndarray:
        """Unwrapped tag position (integer vector)."""
        return self._tag[2:].copy()

    @property
    def tag_site(self) -> int:
        return int(self._tag[1])

    @property
    def tag_b_integral(self) -> float:
        """``int_0^t b(xi_s(X_s)) ds`` with ``b(k) = g(k)/k``."""
        return float(self._tag_f[0])

    @property
    def jump_counts(self) -> np.ndarray:
        """Tag jumps per displacement-table entry."""
        return self._jcount.copy()

    def _call(self, t_end, max_events):
        k = self.kernel
        if self._tree[1] <= 0.0:
            if math.isfinite(t_end):
                self._tag_f[0] += self._tag_f[1] * (t_end - self._clk[0])
                self._clk[0] = max(self._clk[0], t_end)
            return 0, self._stream.pos, 0
        return self._k.zr_run(
            self.config.occupancy, self._tree, self._L, self._gtab, self._gslope, self._cdf,
            self._disp, k.N, k.dim, self.rate, self._clk, t_end, self._stream.buf,
            self._stream.pos, max_events, self._stats, self._last, self._lin, self._lin_cur,
            self._lin_acc, self._tag, self._tag_f, self._jcount)


# -- observables ---------------------------------------------------------------

def _block_sum(a: np.ndarray, l: int) -> np.ndarray:
    out = a.astype(np.int64) if a.dtype.kind in "iub" else a.astype(float)
    for ax in range(a.ndim):
        acc = np.zeros_like(out)
        for s in range(-l, l + 1):
            acc += np.roll(out, s, axis=ax)
        out = acc
    return out


def empirical_field(config: Configuration, l: int, n: float | None = None) -> np.ndarray:
    """Block average ``(2l+1)^{-d} sum_{|y|<=l} xi(x+y)`` on the torus.

    Returned with grid shape ``(N,) * d``; ``n`` is accepted for symmetry with
    the other observables (the field is already a density).
    """
    if l < 0 or 2 * l >= config.N:
        raise ValueError(f"block half-width must satisfy 0 <= l < N/2, got {l}")
    return _block_sum(config.grid(), l) / float((2 * l + 1) ** config.dim)


def v_field(config: Configuration, l: int, tf: ThermoFunctions) -> np.ndarray:
    """``V_x^l = |block average of g(xi) - phi(block average of xi)|`` at every ``x``."""
    if l < 0 or 2 * l >= config.N:
        raise ValueError(f"block half-width must satisfy 0 <= l < N/2, got {l}")
    vol = float((2 * l + 1) ** config.dim)
    gbar = _block_sum(tf.rate(config.grid()), l) / vol
    dens = _block_sum(config.grid(), l) / vol
    vals, inv = np.unique(dens, return_inverse=True)
    phi = np.array([tf.fugacity_of_density(float(v)) for v in vals])[inv].reshape(dens.shape)
    return np.abs(gbar - phi)


def v_stat(config: Configuration, x: int, l: int, tf: ThermoFunctions) -> float:
    """``V_x^l`` at the flat site index ``x``."""
    if l < 0 or 2 * l >= config.N:
        raise ValueError(f"block half-width must satisfy 0 <= l < N/2, got {l}")
    coords = np.unravel_index(x, config.shape)
    idx = np.ix_(*[np.arange(c - l, c + l + 1) % config.N for c in coords])
    block = config.grid()[idx]
    return abs(float(np.mean(tf.rate(block))) - tf.fugacity_of_density(float(block.mean())))


def martingale_probe(sim: ExclusionSim | ZeroRangeSim, G, times) -> dict:
    """Dynkin martingale of the empirical measure tested against ``G``.

    Returns arrays over ``times``: ``pi = n^{-d} sum_x xi(x) G(x)``,
    ``M = pi_t - pi_0 - int_0^t L pi_s ds`` and the predictable quadratic
    variation ``qv``; the integrals are exact because rates are piecewise
    constant between events.
    """
    k = sim.kernel
    G = np.asarray(G, dtype=float)
    if G.shape != k.shape:
        raise ValueError("test field must live on the kernel grid")
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or (times.size and times[0] < sim.time):
        raise ValueError("observation times must be increasing and not in the past")
    nd = float(sim.n) ** k.dim
    Gf = G.reshape(-1)
    LG = apply_Ln(k, G, sim.theta).reshape(-1) / nd
    if isinstance(sim, ExclusionSim):
        W = pair_weights(k, sim.n, sim.theta) / nd
        diff = Gf[None, :] - Gf[:, None]
        sim.set_observables(LG, W * diff * diff)
    else:
        B = apply_Qn(k, G, sim.n, sim.theta).reshape(-1) / nd ** 2
        sim.set_observables(np.stack([LG, B]))
    pi0 = float(sim.config.occupancy @ Gf) / nd
    pis, Ms, qvs = [], [], []
    for t in times:
        sim.run_until(t)
        pi = float(sim.config.occupancy @ Gf) / nd
        acc = sim.observed_integrals
        qv = sim.observed_quadratic_integral if isinstance(sim, ExclusionSim) else float(acc[1])
        pis.append(pi)
        Ms.append(pi - pi0 - float(acc[0]))
        qvs.append(qv)
    return {"times": times, "pi": np.array(pis), "M": np.array(Ms), "qv": np.array(qvs)}


# -- moving-particle paths -----------------------------------------------------

def move_map(occ: np.ndarray, x: int, y: int, model: str = "zero_range") -> np.ndarray:
    """``xi^{x,y}`` (one particle from ``x`` to ``y``) or the exclusion swap ``eta^{xy}``."""
    out = np.array(occ, copy=True)
    if model == "exclusion":
        out[x], out[y] = occ[y], occ[x]
        return out
    if out[x] < 1:
        raise ValueError(f"site {x} is empty")
    out[x] -= 1
    out[y] += 1
    return out


def move_path(y: int, z: int, j: int | None = None, adjust: bool = False) -> tuple[list[int], int]:
    """Two-length jump path carrying a particle from ``y`` to ``z``.

    With ``|z - y| = 6 m0`` the path uses two jumps of length ``k = 2 m0 + j``
    and two of length ``m0 - j`` (zero-length jumps dropped), default
    ``j = ceil(m0 / 2)``.

    Parameters
    ----------
    adjust : bool
        If ``|z - y|`` is not a multiple of 6, replace ``z`` by the closest
        ``z'`` (within distance 5) for which it is.

    Returns
    -------
    jumps : list of int
        Signed displacements in application order.
    z : int
        The endpoint actually reached.
    """
    if y == z:
        raise ValueError("y and z must differ")
    dist = z - y
    if dist % 6:
        if not adjust:
            raise ValueError(f"|z - y| = {abs(dist)} is not divisible by 6")
        sgn = 1 if dist > 0 else -1
        dist = sgn * 6 * max(1, round(abs(dist) / 6))
        z = y + dist
    sgn = 1 if dist > 0 else -1
    m0 = abs(dist) // 6
    j = (m0 + 1) // 2 if j is None else j
    if not 0 <= j <= m0:
        raise ValueError("j must lie in [0, m0]")
    k = 2 * m0 + j
    jumps = [sgn * s for s in (k, k, m0 - j, m0 - j) if s != 0]
    return jumps, z


def apply_moves(occ: np.ndarray, y: int, jumps, N: int) -> np.ndarray:
    """Carry one particle from ``y`` along ``jumps`` on the 1-d torus of side ``N``."""
    cur = y
    out = np.array(occ, copy=True)
    for s in jumps:
        nxt = (cur + s) % N
        out = move_map(out, cur, nxt)
        cur = nxt
    return out


# -- exact finite-state tools --------------------------------------------------

MAX_STATES = 200_000


@dataclass
class FiniteGenerator:
    """Rate matrix of a small system with its deterministic state list."""

    model: str
    N: int
    states: np.ndarray  # (n_states, N)
    Q: scipy.sparse.csr_matrix
    cap: int | None = None

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def index(self, state) -> int:
        return self._lookup[tuple(int(v) for v in state)]

    def __post_init__(self):
        self._lookup = {tuple(int(v) for v in s): i for i, s in enumerate(self.states)}

    def dense(self) -> np.ndarray:
        return self.Q.toarray()

    def product_measure(self, rho: float, tf: ThermoFunctions | None = None) -> np.ndarray:
        """Product Bernoulli(rho) (exclusion) or truncated product ``q_rho`` (zero-range)."""
        if self.model == "exclusion":
            w = np.prod(np.where(self.states == 1, rho, 1.0 - rho), axis=1)
        else:
            if tf is None:
                raise ValueError("zero-range product measures need ThermoFunctions")
            phi = tf.fugacity_of_density(rho)
            lg = tf._log_gfact(int(self.states.max()))
            logw = (self.states * (math.log(phi) if phi > 0 else -np.inf) - lg[self.states]).sum(axis=1)
            w = np.exp(logw - logw.max())
        return w / w.sum()


def _residue_rates(kernel, N: int) -> np.ndarray:
    if isinstance(kernel, LatticeKernel):
        if kernel.N != N or kernel.dim != 1:
            raise ValueError("kernel must be one-dimensional on the same torus")
        return np.asarray(kernel.rates, dtype=float)
    if isinstance(kernel, KernelSpec):
        return fold_rates(kernel, N)
    r = np.asarray(kernel, dtype=float)
    if r.shape != (N,) or r[0] != 0 or np.any(r < 0) or not np.array_equal(r[1:], r[1:][::-1]):
        raise ValueError("residue rate vector must have length N, r[0] = 0 and r[z] = r[-z]")
    return r


def exact_generator(model: str, N: int, kernel, rate: RateFunction | None = None,
                    cap: int | None = None, construction: str = "particle",
                    theta: float = 1.0) -> FiniteGenerator:
    """Full rate matrix of the process on a ring of ``N`` sites.

    Parameters
    ----------
    model : {"exclusion", "zero_range"}
    kernel : LatticeKernel, KernelSpec or ndarray
        Jump rates by torus residue (``KernelSpec`` is folded with the default
        cutoff; this also covers rings too small for ``build_kernel``).
    rate : RateFunction
        Zero-range only.
    cap : int
        Zero-range occupancy cap; transitions exceeding it are deleted.
    construction : {"particle", "pairs"}
        Exclusion only: "particle" follows the simulator (each particle
        proposes each displacement, occupied targets rejected); "pairs" sums
        ``p(y-x) eta(x)(1-eta(y))`` over ordered pairs.
    """
    p = _residue_rates(kernel, N) * theta
    if model == "exclusion":
        n_states = 2 ** N
        if n_states > MAX_STATES:
            raise ValueError(f"{n_states} states exceed the limit {MAX_STATES}")
        states = np.array(list(itertools.product((0, 1), repeat=N)), dtype=np.int64)
    elif model == "zero_range":
        if rate is None or cap is None:
            raise ValueError("zero-range generators need a rate function and a cap")
        n_states = (cap + 1) ** N
        if n_states > MAX_STATES:
            raise ValueError(f"{n_states} states exceed the limit {MAX_STATES}")
        states = np.array(list(itertools.product(range(cap + 1), repeat=N)), dtype=np.int64)
    else:
        raise ValueError(f"unknown model {model!r}")
    gen = FiniteGenerator(model, N, states, scipy.sparse.csr_matrix((n_states, n_states)), cap)
    rows, cols, vals = [], [], []
    if model == "exclusion" and construction == "particle":
        disp = [(z if 2 * z < N else z - N) for z in range(1, N)]
        for i, s in enumerate(states):
            for x in np.flatnonzero(s):
                for z in disp:
                    zs = [z, -z] if 2 * abs(z) == N else [z]
                    for zz in zs:
                        y = (x + zz) % N
                        if s[y] == 0:
                            rows.append(i)
                            cols.append(gen.index(move_map(s, x, y, "exclusion")))
                            vals.append(p[z % N] / len(zs))
    elif model == "exclusion" and construction == "pairs":
        for i, s in enumerate(states):
            for x in range(N):
                for y in range(N):
                    if x != y and s[x] == 1 and s[y] == 0:
                        rows.append(i)
                        cols.append(gen.index(move_map(s, x, y, "exclusion")))
                        vals.append(p[(y - x) % N])
    elif model == "exclusion":
        raise ValueError(f"unknown construction {construction!r}")
    else:
        for i, s in enumerate(states):
            for x in np.flatnonzero(s):
                gx = rate(int(s[x]))
                for y in range(N):
                    if y != x and s[y] < cap:
                        rows.append(i)
                        cols.append(gen.index(move_map(s, x, y)))
                        vals.append(gx * p[(y - x) % N])
    Q = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n_states, n_states)).tocsr()
    Q.sum_duplicates()
    Q = Q - scipy.sparse.diags(np.asarray(Q.sum(axis=1)).ravel())
    gen.Q = Q.tocsr()
    return gen


def _dirichlet(Q: scipy.sparse.csr_matrix, ref: np.ndarray, f: np.ndarray) -> float:
    """``-sum_s ref(s) sqrt(f)(s) (Q sqrt f)(s)``."""
    r = np.sqrt(f)
    return float(-np.dot(ref * r, Q @ r))


def entropy_decay_trace(Q, dist0, ref, times) -> dict:
    """Exact relative-entropy and Dirichlet-form trace of ``dist_t = dist0 e^{tQ}``.

    Returns ``H(t) = sum f log f dref`` with ``f = dist_t/ref``, the Dirichlet
    form ``D(sqrt f_t)``, the exact derivative ``dH/dt = sum (dist_t Q) log f_t``
    and a forward finite-difference estimate of the derivative at ``t = 0``.
    """
    Q = scipy.sparse.csr_matrix(Q.Q if isinstance(Q, FiniteGenerator) else Q)
    dist0 = np.asarray(dist0, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if np.any(ref <= 0):
        raise ValueError("reference measure must charge every state")
    if abs(dist0.sum() - 1) > 1e-12 or np.any(dist0 < 0):
        raise ValueError("initial distribution must be a probability vector")
    times = np.asarray(times, dtype=float)
    Qd = Q.toarray()

    def evolve(t):
        mu = dist0 @ scipy.linalg.expm(t * Qd)
        return np.clip(mu, 0.0, None)

    def H(mu):
        pos = mu > 0
        return float(np.sum(mu[pos] * np.log(mu[pos] / ref[pos])))

    def dH(mu):
        pos = mu > 0
        flux = mu @ Qd
        return float(np.sum(flux[pos] * np.log(mu[pos] / ref[pos])))

    Hs, Ds, dHs = [], [], []
    for t in times:
        mu = evolve(t)
        Hs.append(H(mu))
        Ds.append(_dirichlet(Q, ref, mu / ref))
        dHs.append(dH(mu))
    h = 1e-5
    fd0 = (H(evolve(h)) - H(dist0)) / h
    return {"times": times, "H": np.array(Hs), "D": np.array(Ds), "dHdt": np.array(dHs),
            "dHdt0_fd": fd0}


def write_snapshots(path, records, meta=None) -> None:
    """Snapshots ``[(macro_time, Configuration), ...]`` as (macro_time, site, occupancy) rows."""
    rows = ((t, s, int(v)) for t, c in records for s, v in enumerate(c.occupancy))
    write_csv(path, ["macro_time", "site", "occupancy"], rows, meta)
