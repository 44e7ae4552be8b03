"""Periodic solvers for ``du/dt = L u`` and ``du/dt = L phi(u)`` and their functionals.

The operator is the exact discrete generator ``theta * L_N`` of the lattice
kernel (the same symbol table the simulators use), so simulator and solver
share one operator. Grid point ``z`` sits at ``z/N`` on the unit torus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .io import write_csv
from .kernel import LatticeKernel, apply_Ln, energy
from .measures import RateFunction, ThermoFunctions

__all__ = [
    "PDEState",
    "Trace",
    "StiffnessError",
    "linear_solve",
    "nonlinear_solve",
    "flux_for_rate",
    "bernoulli_entropy",
    "poisson_entropy",
    "zero_range_entropy",
    "fisher_information",
    "solution_diagnostics",
    "fisher_functional",
    "fisher_maximizer",
    "variational_fisher_check",
    "contraction_check",
    "write_snapshot",
]

MAX_PRINCIPLE_TOL = 1e-9
CLIP_RTOL = 1e-12
DT_FLOOR = 1e-12


class StiffnessError(RuntimeError):
    """Adaptive step halving fell below the step-size floor."""


@dataclass
class PDEState:
    """Grid field ``u`` at macro time ``t`` with the operator it was evolved by.

    ``phi`` is ``None`` for the identity flux.
    """

    u: np.ndarray
    t: float
    kernel: LatticeKernel
    theta: float
    phi: Callable | None = None
    steps: int = 0
    halvings: int = 0

    @property
    def mass(self) -> float:
        return float(np.sum(self.u))

    def flux(self) -> np.ndarray:
        return self.u.copy() if self.phi is None else np.asarray(self.phi(self.u), dtype=float)


@dataclass
class Trace:
    """Diagnostics recorded along a solve; one row per recorded time."""

    columns: tuple = ("t", "mass", "max", "min", "entropy", "energy", "fisher")
    rows: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)  # recorded time -> field

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def energy_integral(self) -> np.ndarray:
        """Cumulative trapezoid ``int_0^t E(phi(u_s), phi(u_s)) ds`` at the recorded times."""
        t, e = self.column("t"), self.column("energy")
        out = np.zeros_like(t)
        out[1:] = np.cumsum(0.5 * (e[1:] + e[:-1]) * np.diff(t))
        return out

    def write_csv(self, path, meta=None) -> None:
        write_csv(path, list(self.columns), self.rows, meta)


def _grid(kernel: LatticeKernel, u0) -> np.ndarray:
    u = np.array(u0, dtype=float)
    if u.shape != kernel.shape:
        raise ValueError(f"field has shape {u.shape}, kernel grid is {kernel.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("field must be finite")
    return u


def linear_solve(u0, T: float, kernel: LatticeKernel, theta: float | None = None) -> PDEState:
    """Exact spectral propagation: mode ``m`` is multiplied by ``exp(T theta psi(m))``."""
    if T < 0:
        raise ValueError("T must be nonnegative")
    u = _grid(kernel, u0)
    theta = kernel.theta() if theta is None else theta
    fac = np.exp(T * theta * kernel.symbol)
    fac.flat[0] = 1.0  # the mean is conserved exactly
    uT = np.real(np.fft.ifftn(np.fft.fftn(u) * fac))
    return PDEState(uT, float(T), kernel, theta)


def flux_for_rate(rate: RateFunction, rho_max: float, tol: float = 1e-8) -> tuple[Callable | None, float]:
    """``(phi, kappa)`` for the hydrodynamic flux of ``rate`` on ``[0, rho_max]``.

    ``phi`` is ``None`` (identity) for ``g(n) = n``; otherwise a cubic spline
    of the fugacity table refined to ``tol``.
    """
    if rate.name == "linear":
        return None, 1.0
    tf = ThermoFunctions(rate)
    return tf.phi_spline(rho_max, tol), rate.kappa


def bernoulli_entropy(rho_ref: float) -> Callable:
    """Per-site relative entropy density of Bernoulli(a) w.r.t. Bernoulli(rho_ref)."""
    if not 0 < rho_ref < 1:
        raise ValueError("rho_ref must lie in (0, 1)")

    def h(a):
        a = np.asarray(a, dtype=float)
        return xlogy(a, a / rho_ref) + xlogy(1 - a, (1 - a) / (1 - rho_ref))
    return h


def poisson_entropy(rho_ref: float) -> Callable:
    """``a log(a/rho) - a + rho``, the entropy density for ``g(n) = n``."""
    if rho_ref <= 0:
        raise ValueError("rho_ref must be positive")

    def h(a):
        a = np.asarray(a, dtype=float)
        return xlogy(a, a / rho_ref) - a + rho_ref
    return h


def zero_range_entropy(tf: ThermoFunctions, rho_ref: float, phi: Callable | None = None) -> Callable:
    """``a log(phi(a)/phi(rho)) - log(Z(phi(a))/Z(phi(rho)))``.

    ``phi`` defaults to exact inversion; pass the solver's flux so the
    entropy is the Lyapunov functional of the discretised equation.
    """
    phi_r = tf.fugacity_of_density(rho_ref)
    lz_r = tf.log_Z(phi_r)

    def h(a):
        a = np.asarray(a, dtype=float)
        if phi is None:
            pa = np.array([tf.fugacity_of_density(float(x)) for x in a.reshape(-1)]).reshape(a.shape)
        else:
            pa = np.maximum(np.asarray(phi(a), dtype=float), 0.0)
        return xlogy(a, pa / phi_r) - (tf.log_Z_many(pa) - lz_r)
    return h


def fisher_information(kernel: LatticeKernel, f, theta: float | None = None) -> float:
    """``sum_{x,y} W(x,y) (f(y)-f(x))^2 / (f(x)+f(y))`` with ``W = N^{-d} theta p_N(y-x)``.

    Pairs with ``f(x) + f(y) = 0`` contribute nothing.
    """
    f = _grid(kernel, f)
    theta = kernel.theta() if theta is None else theta
    axes = tuple(range(kernel.dim))
    total = 0.0
    for res in zip(*np.nonzero(kernel.rates)):
        g = np.roll(f, tuple(-r for r in res), axis=axes)
        s = f + g
        d2 = (g - f) ** 2
        safe = np.where(s > 0, s, 1.0)
        total += kernel.rates[res] * float(np.sum(np.where(s > 0, d2 / safe, 0.0)))
    return float(theta * total / kernel.N ** kernel.dim)


def solution_diagnostics(state: PDEState, entropy_fn: Callable | None = None) -> dict:
    """Mass, extrema, ``int H(u)``, ``E(phi(u), phi(u))`` and Fisher information of ``phi(u)``."""
    k, u = state.kernel, state.u
    f = state.flux()
    cell = 1.0 / k.N ** k.dim
    ent = float(np.sum(entropy_fn(u)) * cell) if entropy_fn is not None else math.nan
    return {
        "t": state.t,
        "mass": state.mass,
        "max": float(u.max()),
        "min": float(u.min()),
        "entropy": ent,
        "energy": energy(k, f, f, k.N, state.theta),
        "fisher": float(fisher_information(k, f, state.theta)),
    }


def _rk4(u, h, rhs):
    k1 = rhs(u)
    k2 = rhs(u + 0.5 * h * k1)
    k3 = rhs(u + 0.5 * h * k2)
    k4 = rhs(u + h * k3)
    return u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def nonlinear_solve(u0, T: float, kernel: LatticeKernel, phi: Callable | None = None,
                    kappa: float = 1.0, theta: float | None = None, safety: float = 0.25,
                    record_times=None, entropy_fn: Callable | None = None,
                    dt: float | None = None) -> tuple[PDEState, Trace]:
    """Method of lines for ``du/dt = theta L_N phi(u)`` with classic RK4.

    The nominal step is ``safety / (2 theta p_star kappa)``; a step whose
    extrema leave ``[min u, max u]`` by more than 1e-9 is retried at half
    the size. Undershoot below zero smaller than ``1e-12 max u`` is clipped.

    Parameters
    ----------
    phi : callable or None
        Nondecreasing flux, Lipschitz with constant ``kappa``; ``None`` is the identity.
    record_times : array_like, optional
        Times at which the diagnostics trace is recorded (0 and ``T`` are always included).
    entropy_fn : callable, optional
        Entropy density ``a -> H(a)`` for the trace.
    dt : float, optional
        Override of the nominal step.

    Raises
    ------
    StiffnessError
        If halving drives the step below ``1e-12 T``.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    u = _grid(kernel, u0)
    if u.min() < 0:
        raise ValueError("initial datum must be nonnegative")
    theta = kernel.theta() if theta is None else theta
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    h_nom = safety / (2.0 * theta * kernel.p_star * kappa) if dt is None else float(dt)
    flux = (lambda v: v) if phi is None else (lambda v: np.asarray(phi(v), dtype=float))
    rhs = lambda v: apply_Ln(kernel, flux(v), theta)  # noqa: E731

    times = sorted({0.0, float(T), *(float(t) for t in (record_times if record_times is not None else ()))})
    if times[0] < 0 or times[-1] > T:
        raise ValueError("record times must lie in [0, T]")
    state = PDEState(u, 0.0, kernel, theta, phi)
    trace = Trace()
    t = 0.0
    for t_rec in times:
        while t < t_rec:
            h = min(h_nom, t_rec - t)
            while True:
                new = _rk4(state.u, h, rhs)
                lo, hi = float(state.u.min()), float(state.u.max())
                scale = max(1.0, abs(hi))
                ok = new.max() <= hi + MAX_PRINCIPLE_TOL * scale and new.min() >= lo - MAX_PRINCIPLE_TOL * scale
                if ok and new.min() < 0:
                    ok = -new.min() < CLIP_RTOL * max(hi, 1e-300)
                    if ok:
                        new = np.maximum(new, 0.0)
                if ok:
                    break
                h *= 0.5
                state.halvings += 1
                if h < DT_FLOOR * max(T, 1e-300):
                    raise StiffnessError(f"step size {h:g} underflowed at t={t:g}")
            state.u = new
            state.steps += 1
            # land exactly on the record time despite rounding
            t = t_rec if t_rec - (t + h) < 1e-14 * max(T, 1.0) else t + h
            state.t = t
        d = solution_diagnostics(state, entropy_fn)
        trace.rows.append(tuple(d[c] for c in trace.columns))
        trace.snapshots[t_rec] = state.u.copy()
    return state, trace


# -- variational Fisher functional --------------------------------------------

def _pair_arrays(kernel: LatticeKernel, phi_field, theta: float | None):
    from .kernel import pair_weights
    theta = kernel.theta() if theta is None else theta
    f = np.asarray(phi_field, dtype=float).reshape(-1)
    if f.size != kernel.n_sites:
        raise ValueError("phi_field does not match the kernel grid")
    return pair_weights(kernel, kernel.N, theta), f


def fisher_maximizer(phi_field) -> np.ndarray:
    """``F*(x, y) = (phi(y) - phi(x)) / (2 (phi(y) + phi(x)))`` on the flattened grid."""
    f = np.asarray(phi_field, dtype=float).reshape(-1)
    s = f[None, :] + f[:, None]
    return 0.5 * (f[None, :] - f[:, None]) / s


def fisher_functional(kernel: LatticeKernel, phi_field, G, theta: float | None = None) -> float:
    """``J(G) = sum W (phi(y) - phi(x)) G(x,y) - sum W (phi(x) + phi(y)) G(x,y)^2``.

    ``G`` is an antisymmetric two-point field (flux from ``x`` to ``y``); the
    linear term is ``-2 N^{-d} sum phi L G`` and the quadratic one the
    ``phi``-weighted norm of ``G``.
    """
    W, f = _pair_arrays(kernel, phi_field, theta)
    G = np.asarray(G, dtype=float)
    dphi = f[None, :] - f[:, None]
    sphi = f[None, :] + f[:, None]
    return float(np.sum(W * dphi * G) - np.sum(W * sphi * G * G))


def variational_fisher_check(phi_field, kernel: LatticeKernel, trials: int = 100, eps: float = 1e-2,
                             rng: np.random.Generator | None = None,
                             theta: float | None = None) -> dict:
    """Compare ``J(F*)`` with the closed-form Fisher sum and with random perturbations.

    Returns ``closed_form_value`` (Fisher / 4), ``maximizer_value`` ``J(F*)``,
    ``best_trial_value`` over ``F* + eps H`` with ``H`` antisymmetric Gaussian,
    and ``fisher`` (the full Fisher sum).
    """
    f = np.asarray(phi_field, dtype=float)
    if np.any(f <= 0) or not np.all(np.isfinite(f)):
        raise ValueError("phi_field must be finite and positive")
    rng = np.random.default_rng() if rng is None else rng
    theta_v = kernel.theta() if theta is None else theta
    fisher = fisher_information(kernel, f.reshape(kernel.shape), theta_v)
    Fs = fisher_maximizer(f)
    j_star = fisher_functional(kernel, f, Fs, theta_v)
    best = -math.inf
    S = kernel.n_sites
    for _ in range(trials):
        A = rng.standard_normal((S, S))
        H = (A - A.T) / math.sqrt(2.0)
        best = max(best, fisher_functional(kernel, f, Fs + eps * H, theta_v))
    return {"fisher": fisher, "closed_form_value": 0.25 * fisher,
            "maximizer_value": j_star, "best_trial_value": best}


# -- contraction ------------------------------------------------------------------

def contraction_check(u0_a, u0_b, T: float, kernel: LatticeKernel, phi: Callable | None = None,
                      kappa: float = 1.0, theta: float | None = None, tol: float = 1e-6,
                      order_tol: float = 1e-9) -> dict:
    """L1 nonexpansiveness, order preservation and the quadratic-distance trend."""
    a0, b0 = _grid(kernel, u0_a), _grid(kernel, u0_b)
    sa, _ = nonlinear_solve(a0, T, kernel, phi, kappa, theta)
    sb, _ = nonlinear_solve(b0, T, kernel, phi, kappa, theta)
    cell = 1.0 / kernel.N ** kernel.dim
    l1_0 = float(np.sum(np.abs(a0 - b0)) * cell)
    l1_T = float(np.sum(np.abs(sa.u - sb.u)) * cell)
    l2_0 = float(np.sum((a0 - b0) ** 2) * cell)
    l2_T = float(np.sum((sa.u - sb.u) ** 2) * cell)
    ordered0 = bool(np.all(a0 <= b0))
    return {
        "l1_initial": l1_0,
        "l1_final": l1_T,
        "nonexpansive": l1_T <= l1_0 * (1.0 + tol) + 1e-300,
        "l2_initial": l2_0,
        "l2_final": l2_T,
        "l2_nonincreasing": l2_T <= l2_0 * (1.0 + tol) + 1e-300,
        "ordered_initial": ordered0,
        "ordered_final": bool(np.all(sa.u <= sb.u + order_tol)) if ordered0 else None,
        "identical": bool(np.array_equal(sa.u, sb.u)),
        "steps": (sa.steps, sb.steps),
    }


def write_snapshot(path, state: PDEState, meta=None) -> None:
    """``(x, u)`` rows, ``x = z/N`` (first coordinate in row-major order for d > 1)."""
    k = state.kernel
    coords = np.array(np.unravel_index(np.arange(k.n_sites), k.shape)).T / k.N
    cols = ["x"] if k.dim == 1 else [f"x{i}" for i in range(k.dim)]
    rows = (tuple(c) + (v,) for c, v in zip(coords, state.u.reshape(-1)))
    write_csv(path, cols + ["u"], rows, meta)
