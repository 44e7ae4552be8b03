"""Ordered couplings of zero-range processes with nondecreasing rates.

* Two-class: first-class particles ``xi1`` form a zero-range process; the
  second-class layer ``delta`` jumps from ``x`` at rate
  ``g(xi1(x) + delta(x)) - g(xi1(x))``, so ``xi1 + delta`` is again a
  zero-range process and ``xi1 <= xi1 + delta`` forever.
* Four-color: blue (first class), green (second class), and red/white third
  class particles. A red particle landing on a site holding white particles
  annihilates with one of them into a green particle, and symmetrically.
  ``B + G + R`` and ``B + G + W`` are zero-range processes.
* Three-color: the four-color dynamics without white particles, giving the
  sandwich ``B <= B + G <= B + G + R``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import _EventSim, _tree_size
from .io import write_csv
from .kernel import LatticeKernel
from .measures import Profile, RateFunction, ThermoFunctions, coupled_quantiles
from .state import Configuration

__all__ = [
    "CoupledConfiguration",
    "CouplingInvariantError",
    "TwoClassSim",
    "FourColorSim",
    "ThreeColorSim",
    "build_sandwich_initial",
    "build_split_initial",
]

FOUR_COLOR_EVENTS = ("B", "G", "R", "W", "annihilate_R", "annihilate_W")


class CouplingInvariantError(RuntimeError):
    """A coupled event broke an ordering or conservation invariant.

    ``dump`` holds the configuration and the offending event.
    """

    def __init__(self, msg, dump):
        super().__init__(msg)
        self.dump = dump


@dataclass
class CoupledConfiguration:
    """Per-site counts of blue, green, red and white particles (flat arrays)."""

    B: np.ndarray
    G: np.ndarray
    R: np.ndarray
    W: np.ndarray
    N: int
    dim: int = 1

    def __post_init__(self):
        S = self.N ** self.dim
        for name in "BGRW":
            a = np.ascontiguousarray(np.asarray(getattr(self, name)).reshape(-1), dtype=np.int64)
            if a.size != S:
                raise ValueError(f"layer {name} has {a.size} sites, expected {S}")
            if np.any(a < 0):
                raise ValueError(f"layer {name} has negative counts")
            setattr(self, name, a)
        if np.any((self.R > 0) & (self.W > 0)):
            raise ValueError("red and white particles may not share a site")

    def copy(self) -> "CoupledConfiguration":
        return CoupledConfiguration(self.B.copy(), self.G.copy(), self.R.copy(), self.W.copy(),
                                    self.N, self.dim)

    def marginal(self, which: str) -> Configuration:
        """``"B"``, ``"BG"``, ``"BGR"`` or ``"BGW"`` as a zero-range configuration."""
        layers = {"B": self.B, "G": self.G, "R": self.R, "W": self.W}
        if not which or any(c not in layers for c in which):
            raise ValueError(f"unknown marginal {which!r}")
        occ = sum(layers[c] for c in which)
        return Configuration("zero_range", occ, self.N, self.dim)

    def write_csv(self, path, meta=None) -> None:
        rows = zip(range(self.B.size), self.B, self.G, self.R, self.W)
        write_csv(path, ["site", "B", "G", "R", "W"], rows, meta)


def _require_monotone(rate: RateFunction) -> None:
    if not rate.monotone:
        raise ValueError("couplings require a nondecreasing rate g")


class _CoupledSim(_EventSim):
    need = 4

    def _setup(self, kernel, rate, rng, n, time_scale, backend, block, check):
        _require_monotone(rate)
        self._init_common(kernel, rng, n, time_scale, backend, block)
        self.rate_fn = rate
        self._gtab, self._gslope = rate.kernel_arrays()
        self.check = bool(check)
        self._viol = np.zeros(3, dtype=np.int64)
        self._L = _tree_size(kernel.n_sites)
        self._tree = np.zeros(2 * self._L)

    def _fill_tree(self, weights) -> None:
        L = self._L
        self._tree[:] = 0.0
        self._tree[L:L + weights.size] = weights
        for i in range(L - 1, 0, -1):
            self._tree[i] = self._tree[2 * i] + self._tree[2 * i + 1]

    def _total_rate(self) -> float:
        return float(self._tree[1]) * self.rate

    @property
    def violations(self) -> np.ndarray:
        return self._viol.copy()

    def _empty(self, t_end):
        if np.isfinite(t_end):
            self._clk[0] = max(self._clk[0], t_end)
        return 0, self._stream.pos, 0


class TwoClassSim(_CoupledSim):
    """First/second-class coupling of two zero-range processes.

    Parameters
    ----------
    first, delta : Configuration or array_like
        First-class occupancies and second-class surplus (both nonnegative).
    check : bool
        Verify nonnegativity of both layers after every event.
    """

    def __init__(self, kernel: LatticeKernel, rate: RateFunction, first, delta,
                 rng: np.random.Generator, n=None, time_scale: str = "power",
                 backend: str | None = None, check: bool = True, block: int = 1 << 15):
        self._setup(kernel, rate, rng, n, time_scale, backend, block, check)
        S = kernel.n_sites
        self._xi1 = _layer(first, S)
        self._dl = _layer(delta, S)
        self._fill_tree(rate(self._xi1 + self._dl))
        self._schedule_next()

    @property
    def first(self) -> Configuration:
        return Configuration("zero_range", self._xi1.copy(), self.kernel.N, self.kernel.dim)

    @property
    def second(self) -> Configuration:
        return Configuration("zero_range", self._xi1 + self._dl, self.kernel.N, self.kernel.dim)

    @property
    def delta(self) -> np.ndarray:
        return self._dl.copy()

    @property
    def config(self) -> Configuration:
        return self.second

    @property
    def stats(self) -> dict:
        return {"first": int(self._stats[0]), "second": int(self._stats[1])}

    def _on_violation(self) -> None:
        raise CouplingInvariantError(
            "second-class layer became negative",
            {"xi1": self._xi1.copy(), "delta": self._dl.copy(), "last": self._last.copy()})

    def _call(self, t_end, max_events):
        if self._tree[1] <= 0.0:
            return self._empty(t_end)
        k = self.kernel
        return self._k.two_class_run(
            self._xi1, self._dl, self._tree, self._L, self._gtab, self._gslope, self._cdf,
            self._disp, k.N, k.dim, self.rate, self._clk, t_end, self._stream.buf,
            self._stream.pos, max_events, self._stats, self._last, self.check, self._viol)


def _layer(x, S: int) -> np.ndarray:
    a = x.occupancy if isinstance(x, Configuration) else np.asarray(x)
    a = np.ascontiguousarray(a.reshape(-1), dtype=np.int64).copy()
    if a.size != S:
        raise ValueError(f"layer has {a.size} sites, expected {S}")
    if np.any(a < 0):
        raise ValueError("layer has negative counts")
    return a


class FourColorSim(_CoupledSim):
    """Blue/green/red/white coupling.

    Site ``x`` emits at total rate
    ``g(B+G) + [g(B+G+R) - g(B+G)] + [g(B+G+W) - g(B+G)]`` split into blue
    ``g(B)``, green ``g(B+G) - g(B)``, red and white surpluses. With
    ``check`` every event is audited for nonnegativity, red/white exclusion
    and local conservation of ``B+G+R`` and ``B+G+W``; a failure raises
    :class:`CouplingInvariantError`.
    """

    def __init__(self, kernel: LatticeKernel, rate: RateFunction, coupled: CoupledConfiguration,
                 rng: np.random.Generator, n=None, time_scale: str = "power",
                 backend: str | None = None, check: bool = True, block: int = 1 << 15):
        self._setup(kernel, rate, rng, n, time_scale, backend, block, check)
        if coupled.N != kernel.N or coupled.dim != kernel.dim:
            raise ValueError("configuration and kernel live on different tori")
        self.state = coupled.copy()
        s = self.state
        bg = s.B + s.G
        gbg = rate(bg)
        self._fill_tree(gbg + (rate(bg + s.R) - gbg) + (rate(bg + s.W) - gbg))
        self._schedule_next()

    @property
    def config(self) -> Configuration:
        return self.state.marginal("BGR")

    @property
    def stats(self) -> dict:
        return {name: int(self._stats[i]) for i, name in enumerate(FOUR_COLOR_EVENTS)}

    def _on_violation(self) -> None:
        s = self.state
        raise CouplingInvariantError(
            f"coupling invariant violated (counts {self._viol.tolist()})",
            {"B": s.B.copy(), "G": s.G.copy(), "R": s.R.copy(), "W": s.W.copy(),
             "last": self._last.copy(), "violations": self._viol.copy()})

    def _call(self, t_end, max_events):
        if self._tree[1] <= 0.0:
            return self._empty(t_end)
        k = self.kernel
        s = self.state
        return self._k.four_color_run(
            s.B, s.G, s.R, s.W, self._tree, self._L, self._gtab, self._gslope, self._cdf,
            self._disp, k.N, k.dim, self.rate, self._clk, t_end, self._stream.buf,
            self._stream.pos, max_events, self._stats, self._last, self.check, self._viol)


class ThreeColorSim(FourColorSim):
    """Four-color dynamics restricted to configurations without white particles."""

    def __init__(self, kernel, rate, coupled: CoupledConfiguration, rng, **kw):
        if np.any(coupled.W):
            raise ValueError("three-color coupling requires an empty white layer")
        super().__init__(kernel, rate, coupled, rng, **kw)

    def ordered(self) -> bool:
        """``B <= B+G <= B+G+R`` at every site."""
        s = self.state
        return bool(np.all(s.B >= 0) and np.all(s.G >= 0) and np.all(s.R >= 0))


def _cell_averages(u0: Profile, N: int, dim: int) -> np.ndarray:
    return u0.cell_averages(N, dim).reshape(-1)


def _torus_dist(N: int, dim: int, center: float) -> np.ndarray:
    x = np.arange(N) / N
    d1 = np.abs((x - center + 0.5) % 1.0 - 0.5)
    if dim == 1:
        return d1
    grids = np.meshgrid(*([d1] * dim), indexing="ij")
    return np.max(np.stack(grids), axis=0).reshape(-1)


def _coupled_layers(tf: ThermoFunctions, rho_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Site-wise quantile coupling; ``rho_rows`` has shape (k, S)."""
    out = np.empty(rho_rows.shape, dtype=np.int64)
    cols, inv = np.unique(rho_rows.T, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    for i, rhos in enumerate(cols):
        sel = inv == i
        out[:, sel] = coupled_quantiles(tf, rhos, u[sel])
    return out


def build_sandwich_initial(u0: Profile, M: float, rho0: float, rho1: float,
                           tf: ThermoFunctions, N: int, rng: np.random.Generator,
                           dim: int = 1, center: float = 0.0) -> CoupledConfiguration:
    """Three-layer initial state ``B <= B+G <= B+G+R``.

    The outer profiles agree with ``u0`` on the box of half-width ``M``
    around ``center`` (torus distance, sup norm) and equal ``rho0`` (lower)
    or ``rho1`` (upper) outside. Each site uses one shared uniform for the
    three quantiles, so the layers have exact product marginals.
    """
    _require_monotone(tf.rate)
    if rho0 > rho1:
        raise ValueError("rho0 must not exceed rho1")
    a = _cell_averages(u0, N, dim)
    if a.min() < rho0 - 1e-12 or a.max() > rho1 + 1e-12:
        raise ValueError("profile must satisfy rho0 <= u0 <= rho1")
    inside = _torus_dist(N, dim, center) <= M
    lo = np.where(inside, a, rho0)
    hi = np.where(inside, a, rho1)
    x = _coupled_layers(tf, np.stack([lo, a, hi]), rng.random(a.size))
    zero = np.zeros_like(x[0])
    return CoupledConfiguration(x[0], x[1] - x[0], x[2] - x[1], zero, N, dim)


def build_split_initial(u0: Profile, M: float, tf: ThermoFunctions, N: int,
                        rng: np.random.Generator, dim: int = 1) -> CoupledConfiguration:
    """Four-color initial state for a profile truncated at level ``M``.

    ``B ~ q_{min(u0, M)}`` and ``B + (R or W) ~ q_{max(u0, M)}`` under the
    quantile coupling; the surplus is red where ``u0 > M`` and white where
    ``u0 <= M`` (comparisons use the same cell averages as the marginals).
    Thus ``B+R ~ q_{u0}``, ``B+W ~ q_M`` and ``G = 0``.
    """
    _require_monotone(tf.rate)
    a = _cell_averages(u0, N, dim)
    lo = np.minimum(a, M)
    hi = np.maximum(a, M)
    x = _coupled_layers(tf, np.stack([lo, hi]), rng.random(a.size))
    surplus = x[1] - x[0]
    red = np.where(a > M, surplus, 0)
    white = np.where(a > M, 0, surplus)
    return CoupledConfiguration(x[0], np.zeros_like(x[0]), red, white, N, dim)
