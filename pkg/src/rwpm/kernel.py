"""Lattice jump kernels and their characteristic exponent.

Two kernel families are supported: the nearest-neighbour simple random walk
on Z^d, and one-dimensional heavy-tailed kernels
``J(x) = c * phi(|x|) * (1+|x|)^(-(1+gamma))`` whose walk is attracted to a
symmetric gamma-stable law.  The heavy tail means no finite table can hold
the distribution; normalization, characteristic-exponent evaluation and
sampling all split into an exact lattice part plus an analytic tail handled
by Euler-Maclaurin-corrected integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp
from scipy import integrate

__all__ = [
    "PhiSpec",
    "JumpKernel",
    "make_srw_kernel",
    "make_stable_kernel",
]

# Euler-Maclaurin midpoint coefficients c_k = (2^(1-2k)-1) B_{2k} / (2k)!,
# for sum_{n>=a} f(n) = int_{a-1/2}^inf f - sum_k c_k f^(2k-1)(a-1/2).
_EM_COEFFS = (
    -1.0 / 24.0,
    7.0 / 5760.0,
    -31.0 / 967680.0,
    127.0 / 154828800.0,
    -2555.0 / 122624409600.0,
)

# Boundary of the exact lattice sum inside char_exponent.  Independent of the
# kernel's truncation_radius (which governs sampling tables): accuracy of the
# tail integral只 needs a moderate boundary once the EM corrections are in.
_Q_SUM_RADIUS = 30000
# Switch between the integration-by-parts series and direct oscillatory
# quadrature for the tail cosine integral, in units of xi * radius.
_Q_OSC_SWITCH = 100.0
_Q_OSC_UPPER = 100.0


@dataclass(frozen=True)
class PhiSpec:
    """Slowly varying correction phi in the heavy-tailed kernel.

    ``constant`` is phi == 1; ``log_power`` is phi(r) = log(e + r)^kappa,
    shifted by e so phi is positive and smooth down to r = 0 while still
    phi(r) ~ (log r)^kappa at infinity.
    """

    family: str = "constant"
    kappa: float = 0.0

    def __post_init__(self):
        if self.family not in ("constant", "log_power"):
            raise ValueError(f"unknown phi family: {self.family!r}")
        if self.family == "constant" and self.kappa != 0.0:
            raise ValueError("constant phi takes no kappa")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "constant":
            return np.ones_like(r)
        return np.log(np.e + r) ** self.kappa

    def slow_variation_defect(self, c: float, r_grid=None) -> float:
        """max_r |phi(c r)/phi(r) - 1| over a geometric grid of large r."""
        if r_grid is None:
            r_grid = np.geomspace(1e6, 1e12, 25)
        vals = self(c * r_grid) / self(r_grid)
        return float(np.max(np.abs(vals - 1.0)))


def _profile_derivatives(gamma: float, phi: PhiSpec, order: int = 9):
    """Callables for h(r) = phi(r)(1+r)^(-(1+gamma)) and derivatives 1..order."""
    r = sp.symbols("r", positive=True)
    if phi.family == "constant":
        expr = (1 + r) ** (-(1 + gamma))
    else:
        expr = sp.log(sp.E + r) ** phi.kappa * (1 + r) ** (-(1 + gamma))
    funcs = []
    cur = expr
    for _ in range(order + 1):
        funcs.append(sp.lambdify(r, cur, modules="numpy"))
        cur = sp.diff(cur, r)
    return funcs


class JumpKernel:
    """Symmetric normalized jump distribution on Z^d.

    Immutable after construction; shareable across threads.  ``sample_jump``
    takes an externally owned RNG so sampling is thread-safe by RNG
    ownership.
    """

    def __init__(self, variant, d=None, gamma=None, phi=None,
                 truncation_radius=10 ** 6):
        self.variant = variant
        if variant == "srw":
            if d is None or int(d) < 1:
                raise ValueError("SRW kernel requires dimension d >= 1")
            self.d = int(d)
            self.gamma = None
            self.phi = None
            self.truncation_radius = None
            self.normalization = None
            self._table = None
        elif variant == "stable":
            if not (0.0 < gamma < 2.0):
                raise ValueError("stable kernel requires gamma in (0, 2)")
            self.d = 1
            self.gamma = float(gamma)
            self.phi = phi if phi is not None else PhiSpec()
            self.truncation_radius = int(truncation_radius)
            self._h_derivs = _profile_derivatives(self.gamma, self.phi)
            self._build_stable()
        else:
            raise ValueError(f"unknown kernel variant: {variant!r}")
        self._cdf_cache = None

    # ------------------------------------------------------------------
    # construction (stable case)
    # ------------------------------------------------------------------

    def _h(self, r, m=0):
        """m-th derivative of the unnormalized profile phi(r)(1+r)^-(1+gamma)."""
        out = self._h_derivs[m](np.asarray(r, dtype=float))
        return np.asarray(out, dtype=float)

    def _integral_h(self, a: float) -> float:
        """int_a^inf h(r) dr via the substitution r = a e^v (fast decay)."""
        if self.phi.family == "constant":
            return (1.0 + a) ** (-self.gamma) / self.gamma
        val, _ = integrate.quad(
            lambda v: float(self._h(a * math.exp(v))) * a * math.exp(v),
            0.0, 200.0 / self.gamma, epsabs=1e-300, epsrel=1e-13, limit=400)
        return val

    def _integral_h_vec(self, a):
        """Vectorized int_a^inf h; log-log interpolant for the phi != 1 case."""
        a = np.asarray(a, dtype=float)
        if self.phi.family == "constant":
            return (1.0 + a) ** (-self.gamma) / self.gamma
        if not hasattr(self, "_mass_interp"):
            from scipy.interpolate import CubicSpline
            grid = np.geomspace(1.0, 1e60, 800)
            vals = np.array([self._integral_h(b) for b in grid])
            self._mass_interp = CubicSpline(np.log(grid), np.log(vals))
        return np.exp(self._mass_interp(np.log(a)))

    def _tail_sum(self, radius: int) -> float:
        """sum_{x > radius} h(x), via midpoint integral + EM corrections."""
        a = radius + 0.5
        integral = self._integral_h(a)
        corr = 0.0
        for k, ck in enumerate(_EM_COEFFS, start=1):
            corr -= ck * float(self._h(a, 2 * k - 1))
        return integral + corr

    def _build_stable(self):
        r = self.truncation_radius
        xs = np.arange(0, r + 1, dtype=float)
        h = self._h(xs)
        if np.any(np.diff(h) > 0):
            raise ValueError(
                "resulting kernel is not unimodal; phi grows too fast "
                f"(kappa={self.phi.kappa})")
        tail = self._tail_sum(r)
        total = h[0] + 2.0 * h[1:].sum() + 2.0 * tail
        self.normalization = 1.0 / total
        self._table = self.normalization * h  # J(x) for 0 <= x <= radius
        self._tail_mass_beyond_radius = self.normalization * tail
        # char_exponent constants: a long exact sum for large xi, a short one
        # (with the analytic machinery taking over from r = 64.5) below the
        # oscillatory switch
        self._q_h_big = self._h(np.arange(1, _Q_SUM_RADIUS + 1, dtype=float))
        self._q_h_sml = self._h(np.arange(1, 65, dtype=float))
        a_big = _Q_SUM_RADIUS + 0.5
        self._q_hd_big = np.array([float(self._h(a_big, m))
                                   for m in range(10)])
        self._q_hd_sml = np.array([float(self._h(64.5, m))
                                   for m in range(10)])
        self._q_mass_big = self._integral_h(a_big)

    # ------------------------------------------------------------------
    # point evaluation
    # ------------------------------------------------------------------

    def __call__(self, x):
        """J(x) for a lattice point (int for d=1, tuple/array for d>1)."""
        if self.variant == "srw":
            x = np.atleast_1d(np.asarray(x, dtype=int))
            if x.size != self.d:
                raise ValueError(f"expected a Z^{self.d} point")
            return 1.0 / (2 * self.d) if np.abs(x).sum() == 1 else 0.0
        x = abs(int(x))
        return self.normalization * float(self._h(x))

    def j_values(self, xs):
        """Vectorized J(|x|) for 1-d kernels (stable only)."""
        if self.variant != "stable":
            raise ValueError("j_values is for stable kernels")
        xs = np.abs(np.asarray(xs, dtype=float))
        return self.normalization * self._h(xs)

    def tail_mass(self, radius) -> float:
        """sum_{|x| > radius} J(x) (stable only), radius >= 0 integer."""
        if self.variant != "stable":
            raise ValueError("tail_mass is for stable kernels")
        radius = int(radius)
        if radius <= self.truncation_radius:
            inside = self._table[0] + 2.0 * self._table[1:radius + 1].sum()
            return 1.0 - inside
        return 2.0 * self.normalization * self._tail_sum(radius)

    @property
    def hold_probability(self) -> float:
        """J(0): kernel mass that produces no displacement."""
        if self.variant == "srw":
            return 0.0
        return float(self._table[0])

    # ------------------------------------------------------------------
    # characteristic exponent q(xi) = sum_x J(x)(1 - cos<xi, x>)
    # ------------------------------------------------------------------

    def char_exponent(self, xi):
        """q(xi), vectorized.

        For SRW(d), xi is a point (or array of points) in [-pi, pi]^d and the
        closed form 1 - mean_j cos(xi_j) is used.  For the stable kernel, xi
        is scalar or 1-d array in [-pi, pi]; the value is an exact lattice
        sum up to a fixed radius plus the analytic tail with five
        Euler-Maclaurin boundary corrections (relative accuracy ~1e-10).
        """
        if self.variant == "srw":
            xi = np.asarray(xi, dtype=float)
            if xi.ndim == 0:
                if self.d != 1:
                    raise ValueError(f"expected a [-pi,pi]^{self.d} point")
                return 1.0 - math.cos(float(xi))
            if xi.shape[-1] != self.d and self.d == 1:
                return 1.0 - np.cos(xi)
            if xi.shape[-1] != self.d:
                raise ValueError(f"expected points in [-pi,pi]^{self.d}")
            return 1.0 - np.cos(xi).mean(axis=-1)
        scalar = np.ndim(xi) == 0
        xi = np.abs(np.atleast_1d(np.asarray(xi, dtype=float)))
        out = np.empty_like(xi)
        for lo in range(0, xi.size, 256):
            chunk = xi[lo:lo + 256]
            out[lo:lo + 256] = self._q_stable_chunk(chunk)
        return float(out[0]) if scalar else out

    def _q_stable_chunk(self, xi):
        out = np.empty_like(xi)
        big = xi * (_Q_SUM_RADIUS + 0.5) >= _Q_OSC_SWITCH
        for sel, xs_h, a, hd in (
                (big, self._q_h_big, _Q_SUM_RADIUS + 0.5, self._q_hd_big),
                (~big, self._q_h_sml, 64.5, self._q_hd_sml)):
            if not np.any(sel):
                continue
            x = xi[sel]
            nlat = xs_h.size
            lat = np.arange(1, nlat + 1, dtype=float)
            direct = 2.0 * (2.0 * np.sin(0.5 * x[:, None] * lat) ** 2
                            ).dot(xs_h)
            if a > 1000:
                tail_int = (self._q_mass_big
                            - self._byparts_cos_integral(x, a, hd=hd[:8]))
            else:
                tail_int = self._small_branch(x, a)
            # EM boundary corrections for g(r) = h(r)(1 - cos xi r)
            corr = np.zeros_like(x)
            one_minus_cos = 2.0 * np.sin(0.5 * x * a) ** 2
            for k, ck in enumerate(_EM_COEFFS, start=1):
                m = 2 * k - 1
                g_m = hd[m] * one_minus_cos
                for j in range(1, m + 1):
                    g_m = g_m - (math.comb(m, j) * hd[m - j]
                                 * x ** j * np.cos(x * a + j * np.pi / 2.0))
                corr -= ck * g_m
            out[sel] = direct + 2.0 * (tail_int + corr)
        return np.maximum(self.normalization * out, 0.0)

    def _byparts_cos_integral(self, xi, a, hd=None):
        """int_a^inf h(r) cos(xi r) dr by the integration-by-parts series.

        Valid for xi*a >> 1; eight terms leave a remainder below
        |h^(7)(a)| / xi^8.
        """
        if hd is None:
            hd = [self._h(a, m) for m in range(8)]
        out = np.zeros_like(xi)
        for m in range(8):
            out -= hd[m] * np.sin(xi * a + m * np.pi / 2.0) / xi ** (m + 1)
        return out

    def _small_branch(self, sm, a):
        """int_a^inf h(r)(1 - cos(xi r)) dr for xi with xi*a < pi.

        Evaluating mass and cosine integrals separately would cancel
        catastrophically at small xi, so the integrand is quadratured
        directly: log-spaced panels on the non-oscillatory range r <= pi/xi,
        shared half-period panels through the oscillatory mid-range, and the
        by-parts series beyond u = xi r = U0.
        """
        gl_nodes, gl_wts = np.polynomial.legendre.leggauss(12)
        vals = np.zeros_like(sm)
        # smooth zone [a, pi/xi]: one concatenated call + segment reduction
        rr_parts, ww_parts, owner = [], [], []
        for i, x in enumerate(sm):
            r_hi = np.pi / x
            n_p = max(2, int(math.ceil(2.0 * math.log10(r_hi / a))))
            edges = np.geomspace(a, r_hi, n_p + 1)
            mid = 0.5 * (edges[1:] + edges[:-1])
            half = 0.5 * (edges[1:] - edges[:-1])
            rr_parts.append((mid[:, None] + half[:, None] * gl_nodes).ravel())
            ww_parts.append((half[:, None]
                             * np.broadcast_to(gl_wts, (n_p, 12))).ravel())
            owner.append(np.full(n_p * 12, i))
        rr = np.concatenate(rr_parts)
        ww = np.concatenate(ww_parts)
        own = np.concatenate(owner)
        contrib = ww * self._h(rr) * 2.0 * np.sin(
            0.5 * np.repeat(sm, [len(p) for p in rr_parts]) * rr) ** 2
        np.add.at(vals, own, contrib)
        # oscillatory zone u = xi r in [pi, U0], same u-panels for every node
        n_per = max(2, int(_Q_OSC_UPPER / np.pi))
        edges = np.concatenate((np.arange(1, n_per) * np.pi, [_Q_OSC_UPPER]))
        edges = np.concatenate(([np.pi], edges[edges > np.pi]))
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        u_shared = (mid[:, None] + half[:, None] * gl_nodes).ravel()
        w_shared = (half[:, None]
                    * np.broadcast_to(gl_wts, (mid.size, 12))).ravel()
        wtrig = w_shared * 2.0 * np.sin(0.5 * u_shared) ** 2
        for lo in range(0, sm.size, 64):
            chunk = sm[lo:lo + 64]
            hvals = self._h(u_shared[None, :] / chunk[:, None])
            vals[lo:lo + 64] += hvals.dot(wtrig) / chunk
        # far tail r >= U0/xi: mass minus by-parts cosine integral.  The
        # series terms h^(m)(a2)/xi^(m+1) are assembled by repeated
        # multiplication with a2 (monotone in magnitude, so no intermediate
        # overflow); underflowed derivative values drop out harmlessly.
        a2 = _Q_OSC_UPPER / sm
        vals += self._integral_h_vec(a2)
        byp = np.zeros_like(sm)
        for m in range(8):
            term = self._h(a2, m)
            term = np.where(np.isfinite(term), term, 0.0)
            for _ in range(m + 1):
                term = term * a2
            term /= _Q_OSC_UPPER ** (m + 1)
            byp -= term * np.sin(sm * a2 + m * np.pi / 2.0)
        vals -= byp
        return vals

    # ------------------------------------------------------------------
    # sampling
    # ------------------------------------------------------------------

    def _stable_cdf_tables(self):
        if self._cdf_cache is None:
            # P(|X| = x) for x = 0..R, then the symmetric sign is drawn
            pm = self._table.copy()
            pm[1:] *= 2.0
            cdf = np.cumsum(pm)
            # conditional quantile table for the tail beyond the radius,
            # on a geometric grid out to vanishing mass
            r0 = float(self.truncation_radius)
            rr = np.geomspace(r0, r0 * 1e12, 400)
            tails = np.array([2.0 * self.normalization * self._tail_sum(int(v))
                              for v in rr])
            self._cdf_cache = (cdf, rr, tails)
        return self._cdf_cache

    def sample_jump(self, rng, size=None, nonzero=False):
        """Draw displacements distributed as J.

        SRW: returns unit vectors of Z^d (ints for d=1, arrays otherwise).
        Stable: returns ints; the table covers |x| <= truncation_radius and
        the analytic tail is inverted beyond it.  ``nonzero`` conditions on a
        displacement != 0 (used by the effective-jump path simulation).
        """
        n = 1 if size is None else int(size)
        if self.variant == "srw":
            k = rng.integers(0, 2 * self.d, size=n)
            if self.d == 1:
                out = np.where(k == 0, -1, 1)
            else:
                out = np.zeros((n, self.d), dtype=int)
                axis = k % self.d
                sign = np.where(k < self.d, 1, -1)
                out[np.arange(n), axis] = sign
            return out if size is not None else out[0]
        cdf, rr, tails = self._stable_cdf_tables()
        u = rng.random(n)
        total_in = cdf[-1]
        out = np.empty(n, dtype=np.int64)
        inside = u < total_in
        out[inside] = np.searchsorted(cdf, u[inside], side="right")
        n_out = int((~inside).sum())
        if n_out:
            # invert the tail: find r with tailmass(r) = 1 - u
            target = 1.0 - u[~inside]
            target = np.clip(target, tails[-1], tails[0])
            idx = np.searchsorted(-tails, -target)
            idx = np.clip(idx, 1, tails.size - 1)
            lt = (np.log(target) - np.log(tails[idx - 1])) / (
                np.log(tails[idx]) - np.log(tails[idx - 1]))
            rvals = np.exp(np.log(rr[idx - 1])
                           + lt * (np.log(rr[idx]) - np.log(rr[idx - 1])))
            out[~inside] = np.ceil(rvals).astype(np.int64)
        if nonzero:
            zero = out == 0
            while np.any(zero):
                out[zero] = self.sample_jump(rng, size=int(zero.sum()))
                zero = out == 0
        sign = rng.integers(0, 2, size=n) * 2 - 1
        out = np.where(out == 0, 0, out * sign)
        return out if size is not None else int(out[0])

    def __repr__(self):
        if self.variant == "srw":
            return f"JumpKernel(srw, d={self.d})"
        return (f"JumpKernel(stable, gamma={self.gamma}, "
                f"phi={self.phi.family}:{self.phi.kappa})")


def make_srw_kernel(d: int) -> JumpKernel:
    """Nearest-neighbour kernel J(x) = 1/(2d) on |x| = 1."""
    return JumpKernel("srw", d=d)


@lru_cache(maxsize=32)
def _stable_cached(gamma, family, kappa, truncation_radius):
    return JumpKernel("stable", gamma=gamma,
                      phi=PhiSpec(family, kappa),
                      truncation_radius=truncation_radius)


def make_stable_kernel(gamma: float, phi: PhiSpec | None = None,
                       truncation_radius: int = 10 ** 6) -> JumpKernel:
    """Heavy-tailed kernel J(x) = c phi(|x|)(1+|x|)^-(1+gamma) on Z."""
    if phi is None:
        phi = PhiSpec()
    return _stable_cached(gamma, phi.family, phi.kappa, truncation_radius)
