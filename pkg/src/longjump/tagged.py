"""Tagged particle in the zero-range process and its environment process.

Two equivalent constructions are provided:

* the joint process ``(xi, X)``: when a particle leaves the tag's site
  ``x`` it is the tagged one with probability ``1/xi(x)``
  (:class:`~longjump.dynamics.ZeroRangeSim` with ``tag_site``);
* the environment process ``zeta`` seen from the tag, where
  ``zeta(0) = xi(X) - 1``. Off the origin sites emit at rate ``g``; the origin
  emits environment particles at rate ``gbar(zeta(0))`` with
  ``gbar(k) = k g(k+1)/(k+1)`` and the whole picture translates at rate
  ``g(zeta(0)+1)/(zeta(0)+1)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .dynamics import ZeroRangeSim, _EventSim, _tree_size
from .io import write_csv
from .kernel import LatticeKernel, continuum_c
from .measures import RateFunction, ThermoFunctions
from .state import Configuration

__all__ = [
    "record_trajectory",
    "TaggedZeroRangeSim",
    "EnvironmentSim",
    "palm_sample",
    "gbar",
    "translation_rate",
    "exp_martingale",
    "empirical_cf",
    "CFEstimate",
    "exact_cf_linear",
    "limit_cf",
    "write_trajectory",
    "write_cf",
]


def gbar(rate: RateFunction, k):
    """Origin emission rate of the environment, ``k g(k+1) / (k+1)``."""
    k = np.asarray(k)
    return k * rate(k + 1) / (k + 1)


def translation_rate(rate: RateFunction, zeta0):
    """Tag translation rate ``b = g(zeta0 + 1)/(zeta0 + 1)`` (equals ``g(1)`` when alone)."""
    zeta0 = np.asarray(zeta0)
    return rate(zeta0 + 1) / (zeta0 + 1)


def palm_sample(tf: ThermoFunctions, rho: float, N: int, rng: np.random.Generator,
                dim: int = 1, tag_site: int = 0) -> Configuration:
    """Product ``q_rho`` configuration with a size-biased tagged site.

    The tag's site has law ``k q_rho(k)/rho`` (so it holds at least the tag);
    the environment ``zeta = xi - 1_{tag}`` is then Palm-distributed.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    S = N ** dim
    occ = tf.sample(rho, S, rng)
    q = tf.pmf(rho)
    sb = np.arange(q.size) * q
    c = np.cumsum(sb / sb.sum())
    occ[tag_site] = min(int(np.searchsorted(c, rng.random(), side="right")), q.size - 1)
    return Configuration("zero_range", occ, N, dim)


class TaggedZeroRangeSim(ZeroRangeSim):
    """Joint ``(xi, X)`` dynamics; ``X`` is tracked unwrapped on the integer lattice."""

    def __init__(self, kernel, rate, config, rng, tag_site: int = 0, **kw):
        super().__init__(kernel, rate, config, rng, tag_site=tag_site, **kw)
        self._X0 = self.tag_position

    @property
    def displacement(self) -> np.ndarray:
        return self.tag_position - self._X0

    @property
    def zeta0(self) -> int:
        return int(self.config.occupancy[self.tag_site]) - 1

    def environment(self) -> Configuration:
        return _environment(self.config, self.tag_site)


def _environment(config: Configuration, tag_site: int) -> Configuration:
    grid = config.grid().copy()
    coords = np.unravel_index(tag_site, config.shape)
    grid[coords] -= 1
    shifted = np.roll(grid, tuple(-c for c in coords), axis=tuple(range(config.dim)))
    return Configuration("zero_range", shifted, config.N, config.dim)


class EnvironmentSim(_EventSim):
    """Environment process ``zeta`` with translation events.

    The state is stored in absolute coordinates (occupancies including the
    tag, plus the tag site) so translations cost O(log N); use
    :meth:`environment` for the recentred ``zeta``.
    """

    def __init__(self, kernel: LatticeKernel, rate: RateFunction, config: Configuration,
                 rng: np.random.Generator, tag_site: int = 0, n=None, time_scale: str = "power",
                 backend: str | None = None, block: int = 1 << 15):
        if config.model != "zero_range":
            raise ValueError("the environment process needs a zero-range configuration")
        if config.occupancy[tag_site] < 1:
            raise ValueError("the tagged site must be occupied")
        self._init_common(kernel, rng, n, time_scale, backend, block)
        self.rate_fn = rate
        self._gtab, self._gslope = rate.kernel_arrays()
        self.config = config.copy()
        S = self.config.n_sites
        self._L = _tree_size(S + 1)
        self._tree = np.zeros(2 * self._L)
        d = kernel.dim
        self._tag = np.zeros(2 + d, dtype=np.int64)
        self._tag[0] = 1
        self._tag[1] = tag_site
        self._tag[2:] = np.unravel_index(tag_site, kernel.shape)
        self._X0 = self._tag[2:].copy()
        self._tag_f = np.zeros(2)
        self._jcount = np.zeros(kernel.displacements.shape[0], dtype=np.int64)
        self.rebuild_tree()
        self._schedule_next()

    def rebuild_tree(self) -> None:
        occ = self.config.occupancy
        S = occ.size
        X = int(self._tag[1])
        w = self.rate_fn(occ)
        w[X] = float(gbar(self.rate_fn, int(occ[X]) - 1))
        b = float(translation_rate(self.rate_fn, int(occ[X]) - 1))
        L = self._L
        self._tree[:] = 0.0
        self._tree[L:L + S] = w
        self._tree[L + S] = b
        for i in range(L - 1, 0, -1):
            self._tree[i] = self._tree[2 * i] + self._tree[2 * i + 1]
        self._tag_f[1] = b

    def _total_rate(self) -> float:
        return float(self._tree[1]) * self.rate

    @property
    def tag_site(self) -> int:
        return int(self._tag[1])

    @property
    def tag_position(self) -> np.ndarray:
        return self._tag[2:].copy()

    @property
    def displacement(self) -> np.ndarray:
        return self._tag[2:] - self._X0

    @property
    def zeta0(self) -> int:
        return int(self.config.occupancy[self.tag_site]) - 1

    @property
    def tag_b_integral(self) -> float:
        return float(self._tag_f[0])

    @property
    def jump_counts(self) -> np.ndarray:
        return self._jcount.copy()

    @property
    def stats(self) -> dict:
        return {"events": int(self._stats[0]), "translations": int(self._stats[1])}

    def environment(self) -> Configuration:
        return _environment(self.config, self.tag_site)

    def _call(self, t_end, max_events):
        k = self.kernel
        return self._k.env_run(
            self.config.occupancy, self._tree, self._L, self._gtab, self._gslope, self._cdf,
            self._disp, k.N, k.dim, self.rate, self._clk, t_end, self._stream.buf,
            self._stream.pos, max_events, self._stats, self._last, self._tag, self._tag_f,
            self._jcount)


def record_trajectory(sim, times) -> dict:
    """Run a tagged simulation through ``times``; returns X (first coordinate,
    unwrapped displacement), zeta(0) and the running ``int b ds``."""
    X, Z, B = [], [], []
    for t in times:
        sim.run_until(t)
        X.append(int(sim.displacement[0]))
        Z.append(sim.zeta0)
        B.append(sim.tag_b_integral)
    return {"times": np.asarray(times, float), "X": np.array(X), "zeta0": np.array(Z),
            "int_b": np.array(B)}


def _compensator_exponent(kernel: LatticeKernel, theta, n: float) -> np.ndarray:
    """``sum_z p_N(z) (cos(theta z / n) - 1)`` over the displacement table."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    z = kernel.displacements[:, 0].astype(float)
    return np.array([float(np.dot(kernel.jump_rates, np.cos(t * z / n) - 1.0)) for t in th])


def exp_martingale(X, int_b, theta: float, kernel: LatticeKernel, n: float,
                   time_factor: float) -> np.ndarray:
    """``exp(i theta X/n - time_factor * sum_z p(z)(e^{i theta z/n} - 1) * int_b)``.

    ``X`` is the unwrapped displacement and ``int_b`` the exact integral of
    the translation rate; ``time_factor`` is the time scale (``n**alpha``).
    The symmetric kernel makes the jump sum real.
    """
    if kernel.dim != 1:
        raise ValueError("exp_martingale is implemented for d = 1")
    X = np.asarray(X, dtype=float)
    int_b = np.asarray(int_b, dtype=float)
    if X.shape != int_b.shape:
        raise ValueError("X and int_b must have matching shapes")
    lam = _compensator_exponent(kernel, theta, n)[0]
    return np.exp(1j * theta * X / n - time_factor * lam * int_b)


class CFEstimate(NamedTuple):
    theta: np.ndarray
    value: np.ndarray  # complex
    se_re: np.ndarray
    se_im: np.ndarray


def _jackknife_se(x: np.ndarray) -> float:
    R = x.size
    loo = (x.sum() - x) / (R - 1)
    return float(math.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))


def empirical_cf(samples, theta_grid, min_samples: int = 2) -> CFEstimate:
    """Empirical characteristic function with jackknife standard errors."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("no samples")
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples")
    th = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    vals, sre, sim = [], [], []
    for t in th:
        e = np.exp(1j * t * x)
        vals.append(e.mean())
        sre.append(_jackknife_se(e.real))
        sim.append(_jackknife_se(e.imag))
    return CFEstimate(th, np.array(vals), np.array(sre), np.array(sim))


def exact_cf_linear(kernel: LatticeKernel, theta_grid, T: float, n: float,
                    time_factor: float, g1: float = 1.0) -> np.ndarray:
    """CF of ``X_T/n`` when the tag is a free walk (``g(n) = g1 * n``)."""
    lam = _compensator_exponent(kernel, theta_grid, n)
    return np.exp(T * time_factor * g1 * lam)


def limit_cf(theta_grid, T: float, alpha: float, c_scale: float = 1.0) -> np.ndarray:
    """``exp(-c T |theta|^alpha)`` with ``c`` from the continuum kernel."""
    c = continuum_c(alpha, c_scale)
    th = np.asarray(theta_grid, dtype=float)
    return np.exp(-c * T * np.abs(th) ** alpha)


def write_trajectory(path, traj: dict, meta=None) -> None:
    rows = zip(traj["times"], traj["X"], traj["zeta0"])
    write_csv(path, ["macro_time", "X", "zeta0"], rows, meta)


def write_cf(path, est: CFEstimate, meta=None) -> None:
    rows = zip(est.theta, est.value.real, est.value.imag, est.se_re, est.se_im)
    write_csv(path, ["theta", "re", "im", "se_re", "se_im"], rows, meta)
