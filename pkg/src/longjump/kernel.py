"""Symmetric homogeneous long-jump kernels on periodic lattices.

A kernel ``h(z) = w(z/|z|) |z|^{-(d+alpha)}`` is folded onto the torus of side
``N``, giving the jump-rate table ``p_N``.  Everything downstream (the
particle simulators, the PDE solver, the energy and Fisher functionals) uses
this one table, so the discrete operator seen by the Monte-Carlo and the one
integrated by the solver are literally the same object.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .io import write_csv

__all__ = [
    "KernelSpec",
    "LatticeKernel",
    "build_kernel",
    "fold_rates",
    "time_scale",
    "sample_jump",
    "apply_Ln",
    "apply_Ln_direct",
    "levy_symbol",
    "continuum_c",
    "continuum_symbol_integral",
    "energy",
    "apply_Qn",
    "apply_Ln_two_point",
    "pair_weights",
]


@dataclass(frozen=True)
class KernelSpec:
    """Homogeneous jump profile of degree ``-(dim + alpha)``.

    Parameters
    ----------
    dim : int
        Lattice dimension.
    alpha : float
        Stability index in (0, 2]; ``alpha == 2`` is the log-corrected case.
    c_scale : float
        Overall constant; for ``dim == 1`` the profile is ``c_scale / |z|^(1+alpha)``.
    angular : tuple of float, optional
        ``dim == 2`` only: weights at equally spaced angles on [0, 2 pi),
        linearly interpolated.  Must be even, ``w(angle + pi) == w(angle)``.
    """

    dim: int = 1
    alpha: float = 1.5
    c_scale: float = 1.0
    angular: tuple[float, ...] | None = None

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        if not (0.0 < self.alpha <= 2.0):
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha!r}")
        if not self.c_scale > 0:
            raise ValueError(f"c_scale must be positive, got {self.c_scale!r}")
        if self.angular is not None:
            w = np.asarray(self.angular, dtype=float)
            if self.dim != 2:
                raise ValueError("angular weight tables are supported for dim == 2 only")
            if w.ndim != 1 or len(w) < 2 or len(w) % 2:
                raise ValueError("angular table needs an even number (>= 2) of entries")
            if np.any(w <= 0):
                raise ValueError("angular weights must be strictly positive")
            half = len(w) // 2
            if not np.allclose(w[:half], w[half:], rtol=1e-12, atol=0):
                raise ValueError("angular weights must be even: w(v) == w(-v)")
            object.__setattr__(self, "angular", tuple(float(x) for x in w))

    def rate(self, z) -> np.ndarray:
        """Evaluate ``h`` at integer (or real) displacements.

        For ``dim == 1`` ``z`` holds scalar displacements of any shape; otherwise
        its trailing axis has length ``dim``.
        ``h(0)`` is defined as 0.
        """
        z = np.asarray(z, dtype=float)
        if self.dim == 1:
            r = np.abs(z)
            ang = None
        else:
            r = np.sqrt(np.sum(z * z, axis=-1))
            ang = np.arctan2(z[..., 1], z[..., 0]) if self.angular is not None else None
        with np.errstate(divide="ignore"):
            out = self.c_scale * np.where(r > 0, r, 1.0) ** (-(self.dim + self.alpha))
        if ang is not None:
            out = out * _angular_weight(self.angular, ang)
        return np.where(r > 0, out, 0.0)


def _angular_weight(table, angle):
    w = np.asarray(table)
    m = len(w)
    s = np.mod(angle, 2 * np.pi) / (2 * np.pi) * m
    i0 = np.floor(s).astype(int) % m
    frac = s - np.floor(s)
    return (1 - frac) * w[i0] + frac * w[(i0 + 1) % m]


def time_scale(n: float, alpha: float, mode: str = "power") -> float:
    """Macroscopic time acceleration: ``n**alpha`` or ``n**2 / log n``."""
    if mode == "power":
        return float(n) ** alpha
    if mode == "log_corrected":
        if alpha != 2:
            raise ValueError("log_corrected time scale requires alpha == 2")
        return float(n) ** 2 / math.log(n)
    raise ValueError(f"unknown time-scale mode {mode!r}")


def fold_rates(spec: KernelSpec, N: int, K: int = 64) -> np.ndarray:
    """Periodize ``h`` onto the torus ``(Z/NZ)^d``.

    Returns an array of shape ``(N,) * d`` with ``p_N(r) = sum_k h(r + kN)``
    over ``|k|_inf <= K``.  The residue class of 0 is set to zero: jumps by a
    multiple of ``N`` return to the starting site and are null moves.
    """
    d = spec.dim
    if N < 2:
        raise ValueError("N must be at least 2")
    if K < 0:
        raise ValueError("fold cutoff must be nonnegative")
    base = np.arange(N) - (N // 2)  # representative of each residue (any choice works)
    grids = np.meshgrid(*([base] * d), indexing="ij")
    reps = np.stack(grids, axis=-1).reshape(-1, d).astype(float)
    shifts = np.array(list(itertools.product(range(-K, K + 1), repeat=d)), dtype=float) * N
    total = np.zeros(len(reps))
    # chunk over shifts to bound memory for d >= 2
    chunk = max(1, 2_000_000 // max(1, len(reps)))
    for start in range(0, len(shifts), chunk):
        pts = reps[:, None, :] + shifts[None, start:start + chunk, :]
        total += spec.rate(pts if d > 1 else pts[..., 0]).sum(axis=1)
    out = np.zeros((N,) * d)
    idx = tuple(np.mod(reps.astype(np.int64), N).T)
    out[idx] = total
    out[(0,) * d] = 0.0
    # p(r) and p(-r) are summed in different orders; make the symmetry exact
    neg = tuple(np.mod(-np.arange(N), N) for _ in range(d))
    return 0.5 * (out + out[np.ix_(*neg)])


@dataclass(frozen=True, eq=False)
class LatticeKernel:
    """Folded jump-rate table with its sampler and spectral symbol.

    Attributes
    ----------
    rates : ndarray, shape (N,)*d
        ``p_N`` indexed by torus residue; ``rates[0] == 0``.
    displacements : ndarray, shape (K, d)
        Minimal-image jump vectors.  A residue with a coordinate equal to
        ``N/2`` has two images; its rate is split evenly between them so the
        table is exactly symmetric under ``z -> -z``.
    jump_rates : ndarray, shape (K,)
        Rates attached to ``displacements`` (sum to ``p_star``).
    cdf : ndarray, shape (K,)
        Cumulative jump law, last entry exactly 1.
    symbol : ndarray, shape (N,)*d
        ``psi_N(m) = sum_z p_N(z) (cos(2 pi m.z/N) - 1)``.
    """

    spec: KernelSpec
    N: int
    fold_cutoff: int
    rates: np.ndarray = field(repr=False)
    p_star: float
    displacements: np.ndarray = field(repr=False)
    jump_rates: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)
    symbol: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def alpha(self) -> float:
        return self.spec.alpha

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.spec.dim

    @property
    def n_sites(self) -> int:
        return self.N ** self.spec.dim

    def theta(self, n: float | None = None, mode: str = "power") -> float:
        """Time scale for rescaling parameter ``n`` (defaults to ``N``)."""
        return time_scale(self.N if n is None else n, self.alpha, mode)

    def neighbor_index(self, sites: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Flat torus index of ``site + displacements[j]``."""
        sites = np.asarray(sites, dtype=np.int64)
        coords = np.array(np.unravel_index(sites, self.shape))
        disp = self.displacements[np.asarray(j)].T.reshape((self.dim,) + np.shape(j))
        return np.ravel_multi_index(tuple(np.mod(coords + disp, self.N)), self.shape)

    def to_config(self) -> dict:
        """Keys used by the experiment configuration files."""
        cfg = {"dim": self.dim, "alpha": self.alpha, "N": self.N, "fold_cutoff": self.fold_cutoff}
        if self.spec.angular is None:
            cfg["c_scale"] = self.spec.c_scale
        else:
            cfg["angular"] = list(self.spec.angular)
            cfg["c_scale"] = self.spec.c_scale
        return cfg

    def write_csv(self, path, meta=None) -> None:
        """Export the displacement table (columns ``z``, ``p_N(z)``)."""
        cols = ["z"] if self.dim == 1 else [f"z{i}" for i in range(self.dim)]
        rows = ([int(c) for c in z] + [float(r)] for z, r in zip(self.displacements, self.jump_rates))
        write_csv(path, cols + ["p_N(z)"], rows, meta)


def _minimal_images(N: int, d: int):
    """Yield (residue, image) pairs with ties at N/2 split into both signs."""
    for res in itertools.product(range(N), repeat=d):
        if not any(res):
            continue
        options = []
        for c in res:
            if 2 * c < N:
                options.append((c,))
            elif 2 * c > N:
                options.append((c - N,))
            else:
                options.append((-c, c))
        images = list(itertools.product(*options))
        for img in images:
            yield res, img, len(images)


def build_kernel(spec: KernelSpec, N: int, K: int = 64) -> LatticeKernel:
    """Fold ``spec`` onto the torus of side ``N`` and precompute its sampler."""
    if not isinstance(spec, KernelSpec):
        raise TypeError("spec must be a KernelSpec")
    if int(N) != N or N < 4 or N % 2:
        raise ValueError(f"N must be an even integer >= 4, got {N!r}")
    if int(K) != K or K < 0:
        raise ValueError(f"fold cutoff must be a nonnegative integer, got {K!r}")
    N, K = int(N), int(K)
    d = spec.dim
    rates = fold_rates(spec, N, K)
    p_star = float(rates.sum())

    disp, jr = [], []
    for res, img, mult in _minimal_images(N, d):
        disp.append(img)
        jr.append(rates[res] / mult)
    disp = np.asarray(disp, dtype=np.int64).reshape(-1, d)
    jr = np.asarray(jr, dtype=float)
    cdf = np.cumsum(jr) / jr.sum()
    cdf[-1] = 1.0

    symbol = np.real(np.fft.fftn(rates)) - p_star
    symbol.flat[0] = 0.0
    for arr in (rates, disp, jr, cdf, symbol):
        arr.setflags(write=False)
    return LatticeKernel(spec, N, K, rates, p_star, disp, jr, cdf, symbol)


def sample_jump(k: LatticeKernel, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw displacement vector(s) with law ``p_N / p_star``."""
    u = rng.random(size)
    j = np.searchsorted(k.cdf, u, side="right")
    z = k.displacements[j]
    return z[..., 0] if k.dim == 1 else z


def _check_grid(k: LatticeKernel, G: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape != k.shape:
        raise ValueError(f"field shape {G.shape} does not match kernel grid {k.shape}")
    return G


def apply_Ln(k: LatticeKernel, G, theta: float) -> np.ndarray:
    """``x -> theta * sum_z p_N(z) (G(x+z) - G(x))`` via the exact symbol."""
    G = _check_grid(k, G)
    return np.real(np.fft.ifftn(np.fft.fftn(G) * (theta * k.symbol)))


def apply_Ln_direct(k: LatticeKernel, G, theta: float) -> np.ndarray:
    """Same operator by explicit circular summation (O(N^{2d}))."""
    G = _check_grid(k, G)
    out = np.zeros_like(G)
    for res in zip(*np.nonzero(k.rates)):
        out += k.rates[res] * (np.roll(G, tuple(-r for r in res), axis=tuple(range(k.dim))) - G)
    return theta * out


def levy_symbol(k: LatticeKernel, m) -> float:
    """Exact symbol ``psi_N(m)`` of the folded kernel (``<= 0``)."""
    m = (m,) if np.ndim(m) == 0 else tuple(m)
    if len(m) != k.dim or any(int(c) != c or c < 0 or c >= k.N for c in m):
        raise ValueError(f"mode {m!r} out of range for N={k.N}")
    return float(k.symbol[tuple(int(c) for c in m)])


def continuum_symbol_integral(alpha: float, c_scale: float, theta: float) -> float:
    """``int_R c_scale |x|^{-1-alpha} (cos(theta x) - 1) dx`` by quadrature."""
    if not (0 < alpha < 2):
        raise ValueError("alpha must lie in (0, 2)")
    th = abs(theta)
    if th == 0:
        return 0.0

    def near(x):
        # (cos(th x) - 1) / x^2 without cancellation; the x^{1-alpha} factor is the weight
        s = math.sin(0.5 * th * x)
        return -2.0 * s * s / (x * x) if x > 0 else -0.5 * th * th

    # [0, 1] carries an integrable algebraic singularity handled by the weight;
    # the tail uses the Fourier-weighted rule for the oscillatory part.
    a, _ = integrate.quad(near, 0.0, 1.0, weight="alg", wvar=(1.0 - alpha, 0.0))
    osc, _ = integrate.quad(lambda x: x ** (-1.0 - alpha), 1.0, np.inf, weight="cos", wvar=th)
    tail = osc - 1.0 / alpha
    return 2.0 * c_scale * (a + tail)


def continuum_c(alpha: float, c_scale: float = 1.0) -> float:
    """Constant ``c`` with ``int h(x)(cos(x) - 1) dx = -c``."""
    if not (0 < alpha < 2):
        raise ValueError("alpha must lie in (0, 2)")
    return -continuum_symbol_integral(alpha, c_scale, 1.0)


def pair_weights(k: LatticeKernel, n: float | None = None, theta: float | None = None) -> np.ndarray:
    """Dense ``W[x, y] = n^{-d} theta p_N(y - x)`` on the flattened grid."""
    n = k.N if n is None else n
    theta = k.theta(n) if theta is None else theta
    S = k.n_sites
    coords = np.array(np.unravel_index(np.arange(S), k.shape)).T
    diff = np.mod(coords[None, :, :] - coords[:, None, :], k.N)
    P = k.rates[tuple(np.moveaxis(diff, -1, 0))]
    return P * theta / float(n) ** k.dim


def _circ_corr(a, b):
    """``c(z) = sum_x a(x) b(x + z)`` on the torus."""
    return np.real(np.fft.ifftn(np.conj(np.fft.fftn(a)) * np.fft.fftn(b)))


def energy(k: LatticeKernel, u, v, n: float | None = None, theta: float | None = None) -> float:
    """Discrete energy ``(1/2) n^{-d} theta sum_{x,y} p_N(y-x) du dv``."""
    u = _check_grid(k, u)
    v = _check_grid(k, v)
    n = k.N if n is None else n
    theta = k.theta(n) if theta is None else theta
    # sum_x (u(x+z)-u(x))(v(x+z)-v(x)) = 2<u,v> - c_uv(z) - c_vu(z)
    s = 2.0 * np.sum(u * v) - _circ_corr(u, v) - _circ_corr(v, u)
    return 0.5 * theta / float(n) ** k.dim * float(np.sum(k.rates * s))


def apply_Qn(k: LatticeKernel, G, n: float | None = None, theta: float | None = None) -> np.ndarray:
    """Carre du champ of a grid function or an antisymmetric two-point field.

    One-point ``G`` (grid shape): ``x -> theta sum_z p_N(z) (G(x+z) - G(x))^2``.
    Two-point ``G`` (``(S, S)`` over flattened sites, ``G[x, y] = -G[y, x]``):
    ``x -> theta sum_y p_N(y-x) G(x, y)^2``.
    """
    n = k.N if n is None else n
    theta = k.theta(n) if theta is None else theta
    G = np.asarray(G, dtype=float)
    if G.shape == k.shape:
        pf = np.fft.fftn(k.rates)
        conv = lambda f: np.real(np.fft.ifftn(np.conj(pf) * np.fft.fftn(f)))  # noqa: E731
        return theta * (conv(G * G) - 2.0 * G * conv(G) + k.p_star * G * G)
    G = _check_two_point(k, G)
    W = pair_weights(k, n, theta) * float(n) ** k.dim
    return np.sum(W * G * G, axis=1).reshape(k.shape)


def _check_two_point(k: LatticeKernel, G) -> np.ndarray:
    S = k.n_sites
    if G.shape != (S, S):
        raise ValueError(f"two-point field must have shape {(S, S)}, got {G.shape}")
    scale = max(1.0, float(np.max(np.abs(G))))
    if np.max(np.abs(G + G.T)) > 1e-12 * scale:
        raise ValueError("two-point field is not antisymmetric")
    return G


def apply_Ln_two_point(k: LatticeKernel, G, n: float | None = None, theta: float | None = None) -> np.ndarray:
    """Generator on antisymmetric two-point fields.

    ``x -> (theta/2) sum_z p_N(z) {G(x, x+z) + G(x, x-z)}``; ``G(x, y)`` is the
    flux from ``x`` to ``y``, so ``G(x, y) = F(y) - F(x)`` gives back
    ``apply_Ln(F)``.
    """
    n = k.N if n is None else n
    theta = k.theta(n) if theta is None else theta
    G = _check_two_point(k, np.asarray(G, dtype=float))
    W = pair_weights(k, n, theta) * float(n) ** k.dim
    # the two halves of the z-sum coincide because p_N is even
    return np.sum(W * G, axis=1).reshape(k.shape)
