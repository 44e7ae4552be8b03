"""Invariant measures of the zero-range process and product-measure sampling.

The zero-range invariant measures are the product measures with one-site
marginal ``q(k) = phi**k / (g(k)! Z(phi))`` where ``g(k)! = g(1)...g(k)``;
they are parametrized either by the fugacity ``phi`` or by the density
``rho = E[k]``. Exclusion uses Bernoulli product measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

from .io import write_csv
from .state import Configuration

SERIES_RTOL = 1e-16
SERIES_CAP = 100_000
TAIL_MAX = 1e-12


class SupercriticalError(ValueError):
    """A fugacity or density lies at or beyond the critical value."""


class TruncationError(RuntimeError):
    """A series did not converge within the hard term cap."""


@dataclass(frozen=True)
class RateFunction:
    """Zero-range interaction rate ``g`` tabulated on ``0..cap``.

    Beyond the table ``g`` is extended linearly,
    ``g(n) = table[cap] + tail_slope * (n - cap)``; ``tail_slope = 0`` is a
    constant extension.

    Parameters
    ----------
    table : array_like
        ``g(0), ..., g(cap)`` with ``g(0) = 0`` and ``g(n) > 0`` for ``n > 0``.
    tail_slope : float
        Slope of the linear extension; must be nonnegative.
    """

    table: np.ndarray
    tail_slope: float = 0.0
    name: str = "custom"
    kappa: float = field(init=False)
    monotone: bool = field(init=False)

    def __post_init__(self):
        tab = np.array(self.table, dtype=float).reshape(-1)
        if tab.size < 2:
            raise ValueError("rate table needs at least g(0) and g(1)")
        if tab[0] != 0.0:
            raise ValueError("g(0) must be 0")
        if np.any(tab[1:] <= 0.0) or not np.all(np.isfinite(tab)):
            raise ValueError("g(n) must be finite and positive for n > 0")
        if self.tail_slope < 0.0:
            raise ValueError("tail_slope must be nonnegative")
        tab.setflags(write=False)
        object.__setattr__(self, "table", tab)
        object.__setattr__(self, "tail_slope", float(self.tail_slope))
        diffs = np.diff(tab)
        object.__setattr__(self, "kappa", float(max(np.abs(diffs).max(), self.tail_slope)))
        object.__setattr__(self, "monotone", bool(np.all(diffs >= 0.0)))

    @classmethod
    def linear(cls) -> "RateFunction":
        """``g(n) = n`` (independent walkers; Poisson invariant measures)."""
        return cls(np.array([0.0, 1.0]), 1.0, name="linear")

    @classmethod
    def indicator(cls) -> "RateFunction":
        """``g(n) = 1{n >= 1}`` (geometric invariant measures)."""
        return cls(np.array([0.0, 1.0]), 0.0, name="indicator")

    @classmethod
    def capped(cls, m: int) -> "RateFunction":
        """``g(n) = min(n, m)``."""
        if m < 1:
            raise ValueError("cap m must be >= 1")
        return cls(np.arange(m + 1, dtype=float), 0.0, name=f"capped{m}")

    @classmethod
    def from_name(cls, name: str) -> "RateFunction":
        """Parse ``linear``, ``indicator`` or ``cappedM`` (e.g. ``capped5``)."""
        if name == "linear":
            return cls.linear()
        if name == "indicator":
            return cls.indicator()
        if name.startswith("capped") and name[6:].isdigit():
            return cls.capped(int(name[6:]))
        raise ValueError(f"unknown rate function {name!r}")

    @property
    def cap(self) -> int:
        return self.table.size - 1

    @property
    def bounded(self) -> bool:
        return self.tail_slope == 0.0

    @property
    def phi_c(self) -> float:
        """Radius of convergence of the partition function."""
        return math.inf if self.tail_slope > 0 else float(self.table[-1])

    def __call__(self, n):
        n = np.asarray(n)
        if np.any(n < 0):
            raise ValueError("occupancies must be nonnegative")
        M = self.cap
        out = np.where(n <= M, self.table[np.minimum(n, M)],
                       self.table[M] + self.tail_slope * (n - M))
        return out.astype(float) if out.ndim else float(out)

    def kernel_arrays(self) -> tuple[np.ndarray, float]:
        """Contiguous ``(table, tail_slope)`` pair as consumed by the event loops."""
        return np.ascontiguousarray(self.table, dtype=np.float64), self.tail_slope


class RateClass(NamedTuple):
    kind: str  # "FEM" or "B"
    phi_c: float


def classify_rate(rate: RateFunction) -> RateClass:
    """Classify a nondecreasing rate as unbounded (FEM) or bounded (B).

    Raises
    ------
    ValueError
        If the rate is not nondecreasing.
    """
    if not rate.monotone:
        raise ValueError("classification is only defined for nondecreasing rates")
    if rate.tail_slope > 0:
        return RateClass("FEM", math.inf)
    return RateClass("B", rate.phi_c)


class ThermoFunctions:
    """Partition function, density/fugacity maps and one-site laws for ``rate``.

    Parameters
    ----------
    rate : RateFunction
    margin : float
        Fugacities must satisfy ``phi < phi_c * (1 - margin)``.
    """

    def __init__(self, rate: RateFunction, margin: float = 1e-3):
        self.rate = rate
        self.margin = margin
        self.phi_c = rate.phi_c
        self.phi_max = self.phi_c * (1.0 - margin)
        self._loggf = np.zeros(1)
        self._pmf_cache: dict[float, np.ndarray] = {}
        self._phi_cache: dict[float, float] = {}
        self._rho_max: float | None = None

    # -- series -----------------------------------------------------------
    def _log_gfact(self, K: int) -> np.ndarray:
        if self._loggf.size <= K:
            k = np.arange(self._loggf.size, 2 * K + 2)
            inc = np.log(self.rate(k))
            self._loggf = np.concatenate([self._loggf, self._loggf[-1] + np.cumsum(inc)])
        return self._loggf[: K + 1]

    def _check_phi(self, phi: float) -> None:
        if phi < 0 or not math.isfinite(phi):
            raise ValueError(f"fugacity must be finite and nonnegative, got {phi}")
        if phi >= self.phi_max:
            raise SupercriticalError(
                f"fugacity {phi} is not below phi_c*(1-margin) = {self.phi_max}")

    def log_terms(self, phi: float) -> np.ndarray:
        """``log(phi**k / g(k)!)`` for ``k = 0..K``, truncated at relative 1e-16."""
        self._check_phi(phi)
        if phi == 0.0:
            return np.zeros(1)
        lp = math.log(phi)
        K = 64
        while True:
            lt = np.arange(K + 1) * lp - self._log_gfact(K)
            imax = int(np.argmax(lt))
            lsum = logsumexp(lt)
            k = np.arange(imax, K + 1)
            rel = lt[imax:] - lsum
            # successive-term ratios are nonincreasing past the mode for
            # nondecreasing g, so a geometric bound controls the tail
            ratio = phi / self.rate(k + 1)
            with np.errstate(divide="ignore"):
                tail = rel + np.log(ratio) - np.log1p(-np.minimum(ratio, 1.0))
            ok = np.flatnonzero((rel < math.log(SERIES_RTOL)) & (ratio < 1.0)
                                & (tail < math.log(SERIES_RTOL)))
            if ok.size:
                return lt[: imax + int(ok[0]) + 1]
            if K >= SERIES_CAP:
                raise TruncationError(f"series for phi={phi} did not converge in {SERIES_CAP} terms")
            K = min(2 * K, SERIES_CAP)

    def log_Z(self, phi: float) -> float:
        return float(logsumexp(self.log_terms(phi)))

    def log_Z_many(self, phis) -> np.ndarray:
        """Vectorised :meth:`log_Z`; the truncation of the largest fugacity serves all."""
        phis = np.asarray(phis, dtype=float)
        if phis.size == 0:
            return np.zeros(phis.shape)
        K = self.log_terms(float(phis.max())).size - 1
        if phis.min() < 0:
            self._check_phi(float(phis.min()))
        k = np.arange(K + 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.where(k == 0, 0.0, k * np.log(phis)[..., None]) - self._log_gfact(K)
        return logsumexp(lt, axis=-1)

    def partition_Z(self, phi: float) -> float:
        """``Z(phi) = sum_k phi**k / g(k)!``."""
        return math.exp(self.log_Z(phi))

    def pmf_phi(self, phi: float) -> np.ndarray:
        lt = self.log_terms(phi)
        p = np.exp(lt - logsumexp(lt))
        return p / p.sum()

    def density_of_fugacity(self, phi: float) -> float:
        """``rho(phi)``, the mean occupancy under fugacity ``phi``."""
        p = self.pmf_phi(phi)
        return float(np.dot(np.arange(p.size), p))

    def _mean_var(self, phi: float) -> tuple[float, float]:
        p = self.pmf_phi(phi)
        k = np.arange(p.size)
        m = float(np.dot(k, p))
        return m, float(np.dot((k - m) ** 2, p))

    @property
    def rho_max(self) -> float:
        """Largest admissible density, ``rho(phi_c * (1 - margin))``."""
        if self._rho_max is None:
            if math.isinf(self.phi_max):
                self._rho_max = math.inf
            else:
                self._rho_max = self.density_of_fugacity(float(np.nextafter(self.phi_max, 0.0)))
        return self._rho_max

    def fugacity_of_density(self, rho: float) -> float:
        """Invert ``rho(phi)`` by safeguarded Newton iteration.

        Raises
        ------
        SupercriticalError
            If ``rho`` is not below ``rho_max``.
        """
        rho = float(rho)
        if rho < 0 or not math.isfinite(rho):
            raise ValueError(f"density must be finite and nonnegative, got {rho}")
        if rho == 0.0:
            return 0.0
        cached = self._phi_cache.get(rho)
        if cached is not None:
            return cached
        lo = 0.0
        if math.isinf(self.phi_max):
            hi = 1.0
            while self.density_of_fugacity(hi) < rho:
                lo, hi = hi, 2.0 * hi
        else:
            hi = float(np.nextafter(self.phi_max, 0.0))
            if self.rho_max <= rho:
                raise SupercriticalError(f"density {rho} is not below rho_max = {self.rho_max}")
        phi = 0.5 * (lo + hi)
        best = (math.inf, phi)
        for _ in range(300):
            m, v = self._mean_var(phi)
            f = m - rho
            if abs(f) < best[0]:
                best = (abs(f), phi)
            if abs(f) <= 1e-13 * max(1.0, rho):
                break
            if f > 0:
                hi = phi
            else:
                lo = phi
            step = phi - f * phi / v if v > 0 else -1.0
            phi = step if lo < step < hi else 0.5 * (lo + hi)
            if hi - lo <= 4 * np.spacing(hi):
                break
        if best[0] > 1e-10 * max(1.0, rho):
            raise RuntimeError(f"fugacity inversion failed for rho={rho}: residual {best[0]}")
        self._phi_cache[rho] = best[1]
        return best[1]

    def fugacity_identity_residual(self, rho: float) -> float:
        """``E_rho[g(k)] - phi(rho)``; zero up to rounding."""
        p = self.pmf(rho)
        return float(np.dot(self.rate(np.arange(p.size)), p)) - self.fugacity_of_density(rho)

    def pmf(self, rho: float) -> np.ndarray:
        """One-site law ``q_rho(k)``, ``k = 0..K`` (truncation mass below 1e-12)."""
        rho = float(rho)
        p = self._pmf_cache.get(rho)
        if p is None:
            p = self.pmf_phi(self.fugacity_of_density(rho))
            p.setflags(write=False)
            self._pmf_cache[rho] = p
        return p

    def cdf(self, rho: float) -> np.ndarray:
        return np.cumsum(self.pmf(rho))

    def quantile(self, rho: float, u) -> np.ndarray:
        """Inverse CDF of ``q_rho`` evaluated at uniforms ``u``."""
        c = self.cdf(rho)
        return np.minimum(np.searchsorted(c, u, side="right"), c.size - 1)

    def sample(self, rho: float, size, rng: np.random.Generator) -> np.ndarray:
        return self.quantile(rho, rng.random(size))

    def site_mgf(self, rho: float, theta: float) -> float:
        """``M_rho(theta) = Z(phi e^theta) / Z(phi)`` with ``phi = phi(rho)``."""
        phi = self.fugacity_of_density(rho)
        if phi == 0.0:
            return 1.0
        psi = phi * math.exp(theta)
        if psi >= self.phi_max:
            raise SupercriticalError(f"M_rho(theta) diverges: phi*e^theta = {psi} >= {self.phi_max}")
        return math.exp(self.log_Z(psi) - self.log_Z(phi))

    def entropy_fn(self, a: float, rho_ref: float) -> float:
        """``H(a) = int_rho^a log(phi(x)/phi(rho)) dx`` by adaptive quadrature."""
        lref = math.log(self.fugacity_of_density(rho_ref))

        def integrand(x):
            phi = self.fugacity_of_density(x)
            return (math.log(phi) if phi > 0 else -math.inf) - lref

        if a == rho_ref:
            return 0.0
        val, _ = integrate.quad(integrand, rho_ref, a, epsabs=1e-13, epsrel=1e-11, limit=200)
        return float(val)

    def entropy(self, a, rho_ref: float):
        """Closed form of ``entropy_fn``: ``a log(phi_a/phi_rho) - log(Z(phi_a)/Z(phi_rho))``."""
        a_arr = np.atleast_1d(np.asarray(a, dtype=float))
        phir = self.fugacity_of_density(rho_ref)
        lzr = self.log_Z(phir)
        out = np.empty_like(a_arr)
        for i, ai in enumerate(a_arr):
            phia = self.fugacity_of_density(ai)
            lin = ai * math.log(phia / phir) if ai > 0 else 0.0
            out[i] = lin - (self.log_Z(phia) - lzr)
        return out if np.ndim(a) else float(out[0])

    def legendre_entropy(self, a: float, rho_ref: float) -> float:
        """``sup_theta {a theta - log M_rho(theta)}`` by grid search and refinement."""
        phir = self.fugacity_of_density(rho_ref)
        lzr = self.log_Z(phir)
        hi = 8.0 if math.isinf(self.phi_max) else math.log(self.phi_max / phir) - 1e-9
        lo = -40.0

        def obj(th):
            return -(a * th - (self.log_Z(phir * math.exp(th)) - lzr))

        grid = np.linspace(lo, hi, 161)
        vals = [obj(t) for t in grid]
        i = int(np.argmin(vals))
        a_lo, a_hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = optimize.minimize_scalar(obj, bounds=(a_lo, a_hi), method="bounded",
                                       options={"xatol": 1e-12})
        return float(-min(res.fun, vals[i]))

    def phi_spline(self, rho_max: float, tol: float = 1e-8) -> Callable:
        """Cubic-spline table of ``phi(rho)`` on ``[0, rho_max]``, refined to ``tol``."""
        if rho_max <= 0:
            raise ValueError("rho_max must be positive")
        phi_top = self.fugacity_of_density(rho_max)
        m = 32
        while True:
            # nodes are placed in fugacity space, where rho(phi) is a forward series
            phis = np.linspace(0.0, phi_top, m + 1)
            rhos = np.array([self.density_of_fugacity(f) for f in phis])
            rhos[-1] = rho_max
            spl = CubicSpline(rhos, phis)
            mid_phi = 0.5 * (phis[1:] + phis[:-1])
            mid_rho = np.array([self.density_of_fugacity(f) for f in mid_phi])
            err = float(np.max(np.abs(spl(mid_rho) - mid_phi)))
            if err < tol or m >= 1 << 14:
                return spl
            m *= 2

    def write_pmf_csv(self, rho: float, path, meta=None) -> None:
        p = self.pmf(rho)
        write_csv(path, ["k", "q_rho(k)"], ((k, float(v)) for k, v in enumerate(p)), meta)

    def write_thermo_csv(self, phis, path, meta=None) -> None:
        rows = ((float(f), self.partition_Z(f), self.density_of_fugacity(f)) for f in phis)
        write_csv(path, ["phi", "Z", "rho"], rows, meta)


# -- profiles ---------------------------------------------------------------

def _smooth_bump(r):
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class Profile:
    """Macroscopic initial density on the unit torus.

    Step profiles are integrated exactly over lattice cells; analytic
    profiles use the cell midpoint. One-dimensional profiles used on a
    two-dimensional lattice depend on the first coordinate only.
    """

    kind: str
    params: tuple = ()
    func: Callable | None = field(default=None, compare=False)

    @classmethod
    def constant(cls, value: float) -> "Profile":
        return cls("constant", (("value", float(value)),))

    @classmethod
    def step(cls, breaks, values) -> "Profile":
        b = tuple(float(x) for x in breaks)
        v = tuple(float(x) for x in values)
        if len(b) != len(v) or not b or b[0] != 0.0:
            raise ValueError("step profile needs breaks starting at 0 and one value per break")
        if any(x >= y for x, y in zip(b, b[1:])) or b[-1] >= 1.0:
            raise ValueError("step breaks must be increasing in [0, 1)")
        return cls("step", (("breaks", b), ("values", v)))

    @classmethod
    def cosine(cls, mean: float, amp: float, mode: int = 1) -> "Profile":
        return cls("cosine", (("mean", float(mean)), ("amp", float(amp)), ("mode", int(mode))))

    @classmethod
    def bump(cls, base: float, height: float, center: float = 0.5, width: float = 0.25) -> "Profile":
        return cls("bump", (("base", float(base)), ("height", float(height)),
                            ("center", float(center)), ("width", float(width))))

    @classmethod
    def from_callable(cls, f: Callable) -> "Profile":
        return cls("callable", (), f)

    @classmethod
    def parse(cls, text: str) -> "Profile":
        """Parse e.g. ``"step breaks=0,0.5 values=0.8,0.2"`` or ``"cosine mean=0.5 amp=0.2"``."""
        parts = text.split()
        if not parts:
            raise ValueError("empty profile")
        kind, kw = parts[0], {}
        for tok in parts[1:]:
            if "=" not in tok:
                raise ValueError(f"profile token {tok!r} is not key=value")
            key, val = tok.split("=", 1)
            kw[key] = val
        builders = {
            "constant": lambda: cls.constant(float(kw.pop("value"))),
            "step": lambda: cls.step([float(x) for x in kw.pop("breaks").split(",")],
                                     [float(x) for x in kw.pop("values").split(",")]),
            "cosine": lambda: cls.cosine(float(kw.pop("mean")), float(kw.pop("amp")),
                                         int(kw.pop("mode", 1))),
            "bump": lambda: cls.bump(float(kw.pop("base")), float(kw.pop("height")),
                                     float(kw.pop("center", 0.5)), float(kw.pop("width", 0.25))),
        }
        if kind in builders:
            try:
                prof = builders[kind]()
            except KeyError as exc:
                raise ValueError(f"profile {kind!r} is missing parameter {exc.args[0]!r}") from None
            if kw:
                raise ValueError(f"unknown profile parameters {sorted(kw)}")
            return prof
        raise ValueError(f"unknown profile kind {kind!r}")

    def _p(self, key):
        return dict(self.params)[key]

    def __call__(self, x):
        """Evaluate at points ``x`` of the unit torus (1-d coordinates)."""
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        if self.kind == "constant":
            return np.full_like(x, self._p("value"))
        if self.kind == "step":
            b = np.asarray(self._p("breaks"))
            v = np.asarray(self._p("values"))
            return v[np.searchsorted(b, x, side="right") - 1]
        if self.kind == "cosine":
            return self._p("mean") + self._p("amp") * np.cos(2 * np.pi * self._p("mode") * x)
        if self.kind == "bump":
            d = (x - self._p("center") + 0.5) % 1.0 - 0.5
            return self._p("base") + self._p("height") * _smooth_bump(d / self._p("width"))
        return np.asarray(self.func(x), dtype=float)

    def _antiderivative(self, x):
        # int_0^x of a periodic step function, valid for any real x
        b = np.asarray(self._p("breaks") + (1.0,))
        v = np.asarray(self._p("values"))
        cum = np.concatenate([[0.0], np.cumsum(v * np.diff(b))])
        fl = np.floor(x)
        return fl * cum[-1] + np.interp(x - fl, b, cum)

    def cell_averages(self, N: int, dim: int = 1) -> np.ndarray:
        """Mean of the profile over each lattice cell ``[(z-1/2)/N, (z+1/2)/N)``.

        Returns an array of shape ``(N,) * dim``.
        """
        z = np.arange(N)
        if self.kind == "step":
            hi = self._antiderivative((z + 0.5) / N)
            lo = self._antiderivative((z - 0.5) / N)
            line = (hi - lo) * N
        else:
            line = self(z / N)
        line = np.asarray(line, dtype=float)
        if dim == 1:
            return line
        return np.broadcast_to(line.reshape((N,) + (1,) * (dim - 1)), (N,) * dim).copy()

    def mean(self) -> float:
        """Integral over the unit torus (exact for steps, fine midpoint otherwise)."""
        if self.kind == "step":
            return float(self._antiderivative(1.0))
        return float(self.cell_averages(1 << 14).mean())


def sample_profile_measure(profile: Profile, N: int, rng: np.random.Generator | None,
                           tf: ThermoFunctions | None = None, dim: int = 1,
                           uniforms: np.ndarray | None = None) -> Configuration:
    """Draw a configuration from the product measure with cell-averaged means.

    Parameters
    ----------
    profile : Profile
    N : int
        Lattice side.
    rng : Generator or None
        Source of randomness; may be None when ``uniforms`` is given.
    tf : ThermoFunctions, optional
        Zero-range marginals ``q_rho``; Bernoulli (exclusion) when omitted.
    uniforms : ndarray, optional
        One uniform per site (flat order). Sampling is by inverse CDF, so
        sharing uniforms between calls realizes the quantile coupling.
    """
    means = profile.cell_averages(N, dim).reshape(-1)
    u = rng.random(means.size) if uniforms is None else np.asarray(uniforms, dtype=float)
    if u.shape != means.shape:
        raise ValueError("need exactly one uniform per site")
    if tf is None:
        if means.min() < 0 or means.max() > 1:
            raise ValueError("exclusion profile must take values in [0, 1]")
        return Configuration("exclusion", (u < means).astype(np.int8), N, dim)
    if means.min() < 0:
        raise ValueError("zero-range profile must be nonnegative")
    if means.max() >= tf.rho_max:
        raise SupercriticalError(f"profile exceeds the admissible density {tf.rho_max}")
    occ = np.empty(means.size, dtype=np.int64)
    vals, inv = np.unique(means, return_inverse=True)
    for i, r in enumerate(vals):
        sel = inv == i
        occ[sel] = tf.quantile(float(r), u[sel])
    return Configuration("zero_range", occ, N, dim)


def coupled_quantiles(tf: ThermoFunctions, rhos, u) -> np.ndarray:
    """``F_{rho_i}^{-1}(u)`` for nondecreasing ``rhos`` and shared uniforms ``u``.

    The laws ``q_rho`` increase stochastically with ``rho``, so the outputs
    are ordered; rounding-level crossings of the tabulated CDFs are clamped.
    """
    rhos = [float(r) for r in rhos]
    if any(a > b for a, b in zip(rhos, rhos[1:])):
        raise ValueError("densities must be nondecreasing")
    out = []
    prev = None
    for r in rhos:
        c = tf.cdf(r)
        if prev is not None:
            m = min(c.size, prev.size)
            c = c.copy()
            c[:m] = np.minimum(c[:m], prev[:m])
        out.append(np.minimum(np.searchsorted(c, u, side="right"), c.size - 1))
        prev = c
    return np.stack(out)


def monotone_coupled_sample(tf: ThermoFunctions, rhos, rng: np.random.Generator,
                            size=None) -> np.ndarray:
    """Quantile coupling of ``q_rho`` for nondecreasing ``rhos``.

    One shared uniform ``U`` per draw gives ``x_i = F_{rho_i}^{-1}(U)``, so
    ``x_1 <= x_2 <= ...`` pointwise and each marginal is exact. Returns an
    array of shape ``(len(rhos),) + shape(size)``.
    """
    return coupled_quantiles(tf, rhos, rng.random(size))


def monotone_pair_sample(tf: ThermoFunctions, rho1: float, rho2: float,
                         rng: np.random.Generator, size=None):
    """Coupled draws ``(x1, x2)`` with ``x1 ~ q_rho1``, ``x2 ~ q_rho2``, ``x1 <= x2``."""
    if rho1 > rho2:
        raise ValueError("rho1 must not exceed rho2")
    x = monotone_coupled_sample(tf, (rho1, rho2), rng, size)
    return x[0], x[1]


def _bernoulli_kl(u, r):
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(u > 0, u * np.log(u / r), 0.0)
        b = np.where(u < 1, (1 - u) * np.log((1 - u) / (1 - r)), 0.0)
    return a + b


def product_relative_entropy(profile: Profile, rho_ref: float, N: int,
                             tf: ThermoFunctions | None = None, dim: int = 1) -> float:
    """Relative entropy of the profile product measure w.r.t. the flat one.

    Sum over sites of ``sum_k q_u(k) log(q_u(k)/q_rho(k))``; returns ``inf``
    when absolute continuity fails.
    """
    means = profile.cell_averages(N, dim).reshape(-1)
    if tf is None:
        if not 0.0 <= rho_ref <= 1.0:
            raise ValueError("Bernoulli reference density must lie in [0, 1]")
        if (rho_ref == 0.0 and means.max() > 0) or (rho_ref == 1.0 and means.min() < 1):
            return math.inf
        return float(_bernoulli_kl(means, rho_ref).sum())
    phir = tf.fugacity_of_density(rho_ref)
    total = 0.0
    vals, counts = np.unique(means, return_counts=True)
    for u, c in zip(vals, counts):
        qu = tf.pmf(float(u))
        if phir == 0.0:
            if u > 0:
                return math.inf
            continue
        k = np.arange(qu.size)
        log_ref = k * math.log(phir) - tf._log_gfact(qu.size - 1) - tf.log_Z(phir)
        pos = qu > 0
        total += c * float(np.sum(qu[pos] * (np.log(qu[pos]) - log_ref[pos])))
    return total
