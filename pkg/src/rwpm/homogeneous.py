"""Annealed / homogeneous pinning model: free energy and renewal densities.

The free energy F(beta) solves ``beta * int_0^inf e^{-b t} P(W_t=0) dt = 1``.
The Laplace transform is evaluated as ``Lap(0) - D(b)`` with
``D(b) = int (1-e^{-bt}) P dt`` so the near-critical b-dependence is not
drowned by the O(1) transform value; this is what makes exponent fits down
to beta - beta0 ~ 1e-3 beta0 possible.

Renewal densities solve the convolution Volterra equation
``u = K_beta + u * K_beta`` by trapezoidal discretization; the quadratic
cost is avoided with the classical divide-and-conquer FFT scheme, so grids
with 10^6 points (needed for the strong-renewal-theorem checks) run in
seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, signal, special

from .walk import (TransitionEngine, RecurrentKernelError, _upper_gamma,
                   _srw_p0, _srw_tail_fit)

__all__ = [
    "solve_free_energy",
    "free_energy_derivative",
    "FreeEnergyTable",
    "make_free_energy_table",
    "volterra_renewal_density",
    "RenewalDensityTable",
    "renewal_density",
    "constrained_annealed_partition",
    "critical_exponent_fit",
    "sandwich_check",
]


# ----------------------------------------------------------------------
# free energy
# ----------------------------------------------------------------------

def solve_free_energy(engine: TransitionEngine, beta: float) -> float:
    """F(beta): unique b > 0 with beta Lap(b) = 1, or 0 below beta0."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta == 0.0:
        return 0.0
    if not engine.is_transient:
        raise RecurrentKernelError(
            "recurrent: beta0 = 0; homogeneous solve supported for "
            "transient kernels only")
    beta0 = engine.beta0
    if beta <= beta0:
        return 0.0
    target = engine._lap0_value() - 1.0 / beta

    def g(logb):
        return engine.laplace_defect(math.exp(logb)) - target

    hi = math.log(beta)
    if g(hi) < 0.0:
        raise RuntimeError("bracket failure: F(beta) > beta should not occur")
    lo = math.log(max(beta - beta0, 1e-12) * beta0)
    while g(lo) > 0.0:
        lo -= 10.0
        if lo < -700:
            return 0.0
    root = optimize.brentq(g, lo, hi, xtol=1e-13, rtol=8.9e-16)
    return math.exp(root)


def _mean_recurrence_integral(engine: TransitionEngine, beta, f_val):
    """int_0^inf t K_beta(t) dt = beta int t e^{-Ft} P(W_t=0) dt."""
    k = engine.kernel
    if k.variant == "srw":
        d = k.d

        def integrand(t):
            return t * np.exp(-f_val * t) * _srw_p0(t, d)

        t_cut = 1e10 if f_val == 0.0 else min(60.0 / f_val, 1e10)
        gl_nodes, gl_wts = np.polynomial.legendre.leggauss(8)
        n_pan = max(8, int(math.log(t_cut / 1e-6) / 0.05))
        edges = np.concatenate(([0.0], np.geomspace(1e-6, t_cut, n_pan + 1)))
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        tt = (mid[:, None] + half[:, None] * gl_nodes).ravel()
        ww = (half[:, None] * np.broadcast_to(gl_wts, (mid.size, 8))).ravel()
        val = float(np.dot(ww, integrand(tt)))
        pw = d / 2.0
        c_inf, ca = _srw_tail_fit(d, t_cut)
        if f_val == 0.0:
            if pw <= 2.0:
                raise ValueError("infinite mean inter-arrival (alpha <= 1)")
            val += (c_inf * t_cut ** (2.0 - pw) / (pw - 2.0)
                    + ca * t_cut ** (1.0 - pw) / (pw - 1.0))
        else:
            # int_T^inf t^{1-p} e^{-F t} dt = F^(p-2) Gamma(2-p, F T)
            val += (c_inf * f_val ** (pw - 2.0)
                    * _upper_gamma(2.0 - pw, f_val * t_cut)
                    + ca * f_val ** (pw - 1.0)
                    * _upper_gamma(1.0 - pw, f_val * t_cut))
        return beta * val
    if f_val == 0.0 and engine.alpha <= 1.0:
        raise ValueError("infinite mean inter-arrival (alpha <= 1)")
    engine._build_nodes()
    q = engine._q
    core = np.dot(engine._w, 1.0 / (f_val + q) ** 2)
    g_fit, c_fit = engine._q_fit
    sliver, _ = integrate.quad(
        lambda u: 1.0 / (f_val + c_fit * u ** g_fit) ** 2,
        0.0, engine._xi_lo, epsabs=1e-300, epsrel=1e-10, limit=200)
    return beta * (core + sliver) / math.pi


def mean_interarrival(engine: TransitionEngine, beta: float,
                      f_val=None) -> float:
    """int t K_beta(t) dt, the tilted renewal's mean gap (beta > beta0)."""
    if f_val is None:
        f_val = solve_free_energy(engine, beta)
    return _mean_recurrence_integral(engine, beta, f_val)


def free_energy_derivative(engine: TransitionEngine, beta: float,
                           f_val=None) -> float:
    """F'(beta) = (beta int t K_beta dt)^-1 for beta > beta0.

    Implicit differentiation of beta Lap(F(beta)) = 1.  Note the renewal
    density limit is 1/int t K_beta = beta F'(beta): derivative and renewal
    intensity differ by the factor beta.
    """
    if f_val is None:
        f_val = solve_free_energy(engine, beta)
    if f_val == 0.0:
        return 0.0
    return 1.0 / (beta * _mean_recurrence_integral(engine, beta, f_val))


def renewal_intensity(engine: TransitionEngine, beta: float,
                      f_val=None) -> float:
    """1 / int t K_beta dt = beta F'(beta): stationary point density."""
    if f_val is None:
        f_val = solve_free_energy(engine, beta)
    return 1.0 / _mean_recurrence_integral(engine, beta, f_val)


# ----------------------------------------------------------------------
# Volterra solver (convolution kernel, trapezoid, divide and conquer FFT)
# ----------------------------------------------------------------------

def volterra_renewal_density(k_vals: np.ndarray, delta: float,
                             base: int = 2048) -> np.ndarray:
    """Solve u = k + int_0^t u(s) k(t-s) ds on the uniform grid.

    ``k_vals[i] = k(i delta)``; returns u on the same grid.  Trapezoid in
    the convolution, local error O(delta^2); cross-block contributions via
    FFT convolution, O(n log^2 n) total.
    """
    n = k_vals.size
    u = np.empty(n)
    u[0] = k_vals[0]
    acc = np.zeros(n)
    denom = 1.0 - 0.5 * delta * k_vals[0]
    if denom <= 0.0:
        raise ValueError("delta too large: trapezoid weight not invertible")

    def solve(lo, hi):
        if hi - lo <= base:
            for i in range(lo, hi):
                cross = acc[i] + delta * (
                    np.dot(u[lo:i], k_vals[i - lo:0:-1]) if i > lo else 0.0)
                u[i] = (k_vals[i] * (1.0 + 0.5 * delta * u[0]) + cross) / denom
            return
        mid = (lo + hi) // 2
        solve(lo, mid)
        conv = signal.fftconvolve(u[lo:mid], k_vals[:hi - lo])
        acc[mid:hi] += delta * conv[mid - lo:hi - lo]
        solve(mid, hi)

    if n > 1:
        solve(1, n)
    return u


@dataclass
class RenewalDensityTable:
    """u(t) on a uniform grid, with flat extrapolation past the grid end."""

    delta: float
    u: np.ndarray
    limit_value: float | None = None   # renewal-theorem limit, if finite
    flat_from: float | None = None

    @property
    def t_max(self):
        return self.delta * (self.u.size - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        idx = t / self.delta
        out = np.interp(idx, np.arange(self.u.size), self.u)
        beyond = t > self.t_max
        if np.any(beyond):
            if self.limit_value is None or self.flat_from is None:
                raise ValueError("t beyond solved grid and no flat regime")
            out[beyond] = self.limit_value
        return float(out[0]) if scalar else out


def renewal_density(engine: TransitionEngine, beta: float, t_max: float,
                    delta: float, f_val=None) -> RenewalDensityTable:
    """Renewal density u_beta by the trapezoid Volterra solver.

    beta = beta0 gives the plain renewal density u.  Refuses when the grid
    is too coarse to resolve K_beta near the origin.
    """
    if f_val is None:
        f_val = solve_free_energy(engine, beta)
    n = int(round(t_max / delta)) + 1
    ts = delta * np.arange(n)
    k_beta = (beta / engine.beta0) * np.exp(-f_val * ts) * engine.K(ts)
    if k_beta[1] < 0.8 * k_beta[0]:
        raise ValueError(
            f"delta={delta} too coarse: K_beta falls by "
            f"{1 - k_beta[1] / k_beta[0]:.0%} over one step; refine delta")
    u = volterra_renewal_density(k_beta, delta)
    limit = None
    flat_from = None
    if f_val > 0.0:
        limit = free_energy_derivative(engine, beta, f_val=f_val)
        tail = u[-max(2, n // 50):]
        if abs(tail.max() - tail.min()) <= 0.01 * abs(limit):
            flat_from = ts[-tail.size]
    return RenewalDensityTable(delta=delta, u=u, limit_value=limit,
                               flat_from=flat_from)


# ----------------------------------------------------------------------
# the solved table
# ----------------------------------------------------------------------

@dataclass
class FreeEnergyTable:
    """Solved homogeneous model at one (kernel, beta)."""

    engine: TransitionEngine
    beta: float
    f_value: float
    f_prime: float
    _u_beta: RenewalDensityTable | None = None
    _u_crit: RenewalDensityTable | None = None

    def k_beta(self, t, exact=False):
        """Tilted inter-arrival density K_beta(t)."""
        t = np.asarray(t, dtype=float)
        return (self.beta / self.engine.beta0) * np.exp(
            -self.f_value * t) * self.engine.K(t, exact=exact)

    def k_beta_bar(self, t):
        """Upper tail integral of K_beta: int_t^inf K_beta(s) ds."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        out = np.array([self._k_beta_tail(float(v)) for v in t])
        return float(out[0]) if scalar else out

    def _k_beta_tail(self, t):
        eng, f_val = self.engine, self.f_value
        if t >= eng.t_max:
            return self._tail_beyond_grid(t)
        gl_nodes, gl_wts = np.polynomial.legendre.leggauss(8)
        lo = max(t, 1e-9)
        # the exponential cut of e^{-Ft} needs panels narrower than 1/(F t)
        t_exp = min(eng.t_max, 80.0 / max(f_val, 1.0 / eng.t_max))
        n_pan = max(8, int(math.log(t_exp / lo) / 0.05))
        edges = np.geomspace(lo, t_exp, n_pan + 1)
        head = self.beta * lo if t == 0.0 else 0.0  # K_beta ~ beta near 0
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        tt = (mid[:, None] + half[:, None] * gl_nodes).ravel()
        ww = (half[:, None] * np.broadcast_to(gl_wts, (mid.size, 8))).ravel()
        val = float(np.dot(ww, self.k_beta(tt, exact=True)))
        return head + val + self._tail_beyond_grid(t_exp)

    def _tail_beyond_grid(self, t0):
        """int_{t0}^inf K_beta with t0 >= engine grid end (exact forms)."""
        eng, f_val, beta = self.engine, self.f_value, self.beta
        k = eng.kernel
        if k.variant == "srw":
            pw = k.d / 2.0
            c_inf = float(eng.K(t0, exact=True)) * t0 ** pw
            if f_val == 0.0:
                return (beta / eng.beta0) * c_inf * t0 ** (1 - pw) / (pw - 1)
            return (beta / eng.beta0) * c_inf * f_val ** (pw - 1.0) * \
                _upper_gamma(1.0 - pw, f_val * t0)
        eng._build_nodes()
        q = eng._q
        core = np.dot(eng._w, np.exp(-t0 * (f_val + q)) / (f_val + q))
        g_fit, c_fit = eng._q_fit
        xi_lo = eng._xi_lo
        qlo = c_fit * xi_lo ** g_fit
        sliver = xi_lo * math.exp(-t0 * (f_val + qlo)) / (f_val + qlo)
        return beta * (core + sliver) / math.pi

    def normalization_residual(self) -> float:
        """int_0^inf K_beta dt - 1, by independent time quadrature."""
        return self.k_beta_bar(0.0) - 1.0

    def f_prime_numeric(self, rel_step=1e-3) -> float:
        """Centered finite difference of the solved F around beta."""
        eng, beta = self.engine, self.beta
        h = max(rel_step * (beta - eng.beta0), 1e-7 * eng.beta0)
        f_hi = solve_free_energy(eng, beta + h)
        f_lo = solve_free_energy(eng, max(beta - h, eng.beta0))
        return (f_hi - f_lo) / (beta + h - max(beta - h, eng.beta0))

    # ---------------------------------------------- renewal densities

    def u_beta_table(self, t_max, delta) -> RenewalDensityTable:
        if (self._u_beta is None or self._u_beta.t_max < t_max * (1 - 1e-9)
                or abs(self._u_beta.delta - delta) > 1e-12 * delta):
            self._u_beta = renewal_density(self.engine, self.beta, t_max,
                                           delta, f_val=self.f_value)
        return self._u_beta

    def u_critical_table(self, t_max, delta) -> RenewalDensityTable:
        """u at beta = beta0 (the untilted renewal density)."""
        if (self._u_crit is None or self._u_crit.t_max < t_max * (1 - 1e-9)
                or abs(self._u_crit.delta - delta) > 1e-12 * delta):
            self._u_crit = renewal_density(self.engine, self.engine.beta0,
                                           t_max, delta, f_val=0.0)
        return self._u_crit

    def z_constrained(self, t_grid, t_max=None, delta=None):
        """z^c_{beta, t} = u_beta(t) e^{F t} on the requested times."""
        t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
        if t_max is None:
            t_max = float(t_grid.max())
        if delta is None:
            delta = default_volterra_delta(self.f_value)
        tab = self.u_beta_table(t_max, delta)
        return tab(t_grid) * np.exp(self.f_value * t_grid)

    def z_constrained_direct(self, t_max, delta):
        """Direct Volterra solve of the constrained expansion.

        Independent of the u_beta/e^{Ft} route: solves
        z^c = (beta/beta0)(K + z^c * K) on the uniform grid.
        """
        n = int(round(t_max / delta)) + 1
        ts = delta * np.arange(n)
        kv = (self.beta / self.engine.beta0) * self.engine.K(ts)
        z = volterra_renewal_density(kv, delta)
        return ts, z

    def z_free(self, t_max, delta):
        """Free partition function via z = 1 + int_0^T z^c dt (trapezoid)."""
        ts, zc = self.z_constrained_direct(t_max, delta)
        cum = np.concatenate(([0.0], np.cumsum(
            0.5 * delta * (zc[1:] + zc[:-1]))))
        return ts, 1.0 + cum

    def mean_contacts_constrained(self, t_big):
        """Mean renewal count in (0, T] under the tilted conditioned law.

        Equals beta * d/dbeta log z^c_{beta,T}; computed from the renewal
        decomposition sum = int u_beta(s) u_beta(T-s) ds / u_beta(T) + 1.
        """
        delta = self._u_beta.delta if self._u_beta else \
            default_volterra_delta(self.f_value)
        tab = self.u_beta_table(t_big, delta)
        n = int(round(t_big / delta))
        us = tab.u[:n + 1]
        inner = np.dot(us, us[::-1]) - 0.5 * (us[0] * us[-1] * 2.0)
        return delta * inner / us[-1] + 1.0


def default_volterra_delta(f_val: float) -> float:
    """Grid step resolving both the O(1) kernel scale and 1/F."""
    if f_val <= 0.0:
        return 0.01
    return min(0.01, 0.01 / f_val)


def make_free_energy_table(engine: TransitionEngine, beta: float
                           ) -> FreeEnergyTable:
    f_val = solve_free_energy(engine, beta)
    f_prime = free_energy_derivative(engine, beta, f_val=f_val)
    return FreeEnergyTable(engine=engine, beta=beta, f_value=f_val,
                           f_prime=f_prime)


def constrained_annealed_partition(engine: TransitionEngine, beta: float,
                                   t_big: float, delta=None):
    """z^c_{beta, T} via the tilted renewal density route."""
    table = make_free_energy_table(engine, beta)
    if delta is None:
        delta = default_volterra_delta(table.f_value)
    return float(table.z_constrained(np.array([t_big]), t_max=t_big,
                                     delta=delta)[0])


# ----------------------------------------------------------------------
# critical exponent and near-critical sandwich
# ----------------------------------------------------------------------

def critical_exponent_fit(engine: TransitionEngine, beta_grid):
    """Least-squares slope of log F against log(beta - beta0).

    Returns (nu_hat, f_values).  Requires at least 8 grid points above
    beta0 with positive solved F.
    """
    beta_grid = np.asarray(beta_grid, dtype=float)
    if beta_grid.size < 8:
        raise ValueError("need at least 8 beta values for the exponent fit")
    beta0 = engine.beta0
    if np.any(beta_grid <= beta0):
        raise ValueError("beta grid must lie strictly above beta0")
    f_vals = np.array([solve_free_energy(engine, b) for b in beta_grid])
    if np.any(f_vals <= 0.0):
        raise ValueError("F = 0 on the grid: spacing below resolution")
    slope, _ = np.polyfit(np.log(beta_grid - beta0), np.log(f_vals), 1)
    return float(slope), f_vals


def sandwich_check(engine: TransitionEngine, beta: float, t_grid,
                   delta=None):
    """Near-critical comparison of u_beta with u.

    Returns a dict with the extremes of u_beta(t) / u(t ^ 1/F) over the
    grid and the ratio u_beta(t)/u(t) on the sub-correlation-length zone
    (both sides of the comparison the near-critical lemma asserts).
    """
    table = make_free_energy_table(engine, beta)
    f_val = table.f_value
    t_grid = np.asarray(t_grid, dtype=float)
    if delta is None:
        delta = default_volterra_delta(f_val)
    t_need = float(max(t_grid.max(), 1.0 / f_val if f_val > 0 else 0.0))
    u_b = table.u_beta_table(t_need, delta)
    u_c = table.u_critical_table(t_need, delta)
    if f_val > 0.0:
        capped = np.minimum(t_grid, 1.0 / f_val)
    else:
        capped = t_grid
    ratio = u_b(t_grid) / u_c(capped)
    sub = t_grid <= (1.0 / f_val if f_val > 0 else np.inf)
    plain = u_b(t_grid[sub]) / u_c(t_grid[sub])
    return {
        "f_value": f_val,
        "ratio_min": float(ratio.min()),
        "ratio_max": float(ratio.max()),
        "sub_grid": t_grid[sub],
        "plain_ratio": plain,
        "fprime_over_u": table.f_prime / float(
            u_c(min(1.0 / f_val, u_c.t_max))) if f_val > 0 else math.nan,
    }
