"""Transition probabilities and return-time kernel of the free walk.

The continuous-time walk with jump kernel J has
``P(W_t = y) = (2 pi)^-d int e^{-t q(xi)} cos(<xi, y>) dxi``.  For the SRW
this factorizes into modified Bessel functions and every quantity has a
closed form.  For the heavy-tailed kernels everything is computed from a
fixed Gauss-Legendre discretization of the Fourier integral in log(xi),
built once per engine: the return probability, its time derivative and the
Laplace transforms are then plain weighted dot products over the nodes,
while spatial transition probabilities use a Filon-type quadrature that
integrates the oscillation cos(xi y) exactly against a panel-wise quadratic
fit of e^{-t q(xi)}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, special

from .kernel import JumpKernel

__all__ = [
    "RecurrentKernelError",
    "TransitionEngine",
    "DisorderPath",
    "make_engine",
]

Y_SWITCH = 5.0  # |y| K(t) beyond which the one-big-jump asymptotic takes over


class RecurrentKernelError(ValueError):
    """Raised by operations that require transience (beta0 > 0)."""


# ----------------------------------------------------------------------
# small special-function helpers
# ----------------------------------------------------------------------

def _upper_gamma(a: float, x: float) -> float:
    """Gamma(a, x) for real a <= 1 (downward recursion from a base case)."""
    if a > 0:
        return special.gammaincc(a, x) * special.gamma(a)
    frac = a - math.floor(a)
    if frac == 0.0:
        base_a, g = 0.0, float(special.exp1(x))
    else:
        base_a, g = frac, special.gammaincc(frac, x) * special.gamma(frac)
    cur_a = base_a
    while cur_a > a + 1e-12:
        cur_a -= 1.0
        g = (g - x ** cur_a * math.exp(-x)) / cur_a
    return g


def _power_exp_tail(p: float, b: float, t0: float) -> float:
    """int_{t0}^inf (1 - e^{-b t}) t^{-p} dt for p > 1, b >= 0."""
    if b == 0.0:
        return 0.0
    head = t0 ** (1.0 - p) / (p - 1.0)
    return head - b ** (p - 1.0) * _upper_gamma(1.0 - p, b * t0)


def _power_tail(p: float, t0: float) -> float:
    """int_{t0}^inf t^{-p} dt for p > 1."""
    return t0 ** (1.0 - p) / (p - 1.0)


def _srw_p0(t, d):
    """P(W_t = 0) = ive(0, t/d)^d, asymptotic beyond scipy.ive's range."""
    t = np.asarray(t, dtype=float)
    z = t / d
    out = np.empty_like(z)
    ok = z < 1e8
    if np.any(ok):
        out[ok] = special.ive(0, z[ok]) ** d
    if np.any(~ok):
        zz = z[~ok]
        corr = 1.0 + 1.0 / (8 * zz) + 9.0 / (128 * zz ** 2) \
            + 225.0 / (3072 * zz ** 3)
        out[~ok] = (2.0 * np.pi * zz) ** (-0.5 * d) * corr ** d
    return out


def _srw_tail_fit(d, t0):
    """(c, ca) with P(W_t=0) ~ c t^{-d/2} (1 + (ca/c)/t) fitted at t0, 2t0."""
    pw = d / 2.0
    amp1 = float(_srw_p0(np.array([t0]), d)[0]) * t0 ** pw
    amp2 = float(_srw_p0(np.array([2.0 * t0]), d)[0]) * (2.0 * t0) ** pw
    return 2.0 * amp2 - amp1, 2.0 * t0 * (amp1 - amp2)


# ----------------------------------------------------------------------
# Filon quadrature: int A(xi) cos(xi y) dxi with A smooth, y possibly huge
# ----------------------------------------------------------------------

def _filon_moments(omega_h, h):
    """I_k = int_0^h tau^k e^{i omega tau} dtau for k = 0, 1, 2 (vectorized).

    omega_h = omega * h.  Uses the closed form when |omega h| is large and a
    short series when small to avoid cancellation.
    """
    oh = np.asarray(omega_h, dtype=float)
    h = np.asarray(h, dtype=float)
    i0 = np.empty(oh.shape, dtype=complex)
    i1 = np.empty(oh.shape, dtype=complex)
    i2 = np.empty(oh.shape, dtype=complex)
    big = np.abs(oh) > 0.5
    if np.any(big):
        w = oh[big] / h[big]
        e = np.exp(1j * oh[big])
        iw = 1j * w
        a0 = (e - 1.0) / iw
        a1 = (h[big] * e - a0) / iw
        a2 = (h[big] ** 2 * e - 2.0 * a1) / iw
        i0[big], i1[big], i2[big] = a0, a1, a2
    if np.any(~big):
        x = oh[~big]
        hh = h[~big]
        for k, tgt in ((0, i0), (1, i1), (2, i2)):
            acc = np.zeros(x.shape, dtype=complex)
            term = np.ones(x.shape, dtype=complex) / (k + 1.0)
            for m in range(12):
                acc += term
                term = term * (1j * x) * (k + m + 1.0) / ((m + 1.0)
                                                          * (k + m + 2.0))
            tgt[~big] = acc * hh ** (k + 1)
    return i0, i1, i2


def filon_cos_integral(a_left, a_mid, a_right, left, width, ys):
    """sum over panels of int A(xi) cos(xi y) dxi, for each y in ys.

    A is given by its values at panel left/mid/right points and replaced by
    the quadratic interpolant on each panel; the oscillation is integrated
    exactly, so arbitrarily large y costs nothing extra.
    """
    h = width
    c2 = 2.0 * (a_left - 2.0 * a_mid + a_right) / h ** 2
    c1 = (-3.0 * a_left + 4.0 * a_mid - a_right) / h
    c0 = a_left
    out = np.empty(len(ys))
    for j, y in enumerate(ys):
        if y == 0:
            out[j] = np.sum(c0 * h + c1 * h ** 2 / 2.0 + c2 * h ** 3 / 3.0)
            continue
        i0, i1, i2 = _filon_moments(y * h, h)
        phase = np.exp(1j * y * left)
        out[j] = np.real(np.sum(phase * (c0 * i0 + c1 * i1 + c2 * i2)))
    return out


# ----------------------------------------------------------------------
# disorder path
# ----------------------------------------------------------------------

@dataclass
class DisorderPath:
    """One quenched trajectory Y on [0, T]: jump times and positions.

    ``positions[k]`` is the location after the k-th jump; row 0 is the
    origin.  Positions are ints for d = 1 and int arrays for d > 1.
    """

    rho: float
    horizon: float
    times: np.ndarray          # shape (n,), strictly increasing in (0, T]
    positions: np.ndarray      # shape (n+1,) or (n+1, d), row 0 = origin
    seed_note: str = ""

    def position_at(self, t):
        """Y_t (vectorized over t)."""
        idx = np.searchsorted(self.times, np.asarray(t), side="right")
        return self.positions[idx]

    def displacement(self, s, t):
        """Y_t - Y_s."""
        return self.position_at(t) - self.position_at(s)

    def to_lines(self):
        d = 1 if self.positions.ndim == 1 else self.positions.shape[1]
        lines = [f"# rho={self.rho!r} T={self.horizon!r} d={d} "
                 f"seed={self.seed_note}"]
        for k, t in enumerate(self.times):
            pos = self.positions[k + 1]
            coords = ([str(int(pos))] if self.positions.ndim == 1
                      else [str(int(c)) for c in pos])
            lines.append(f"{t!r} " + " ".join(coords))
        return lines

    @classmethod
    def from_lines(cls, lines):
        header = lines[0]
        if not header.startswith("#"):
            raise ValueError("disorder path input lacks the header line")
        fields = dict(tok.split("=", 1) for tok in header[1:].split())
        rho = float(fields["rho"])
        horizon = float(fields["T"])
        d = int(fields.get("d", 1))
        times, steps = [], []
        for ln in lines[1:]:
            if not ln.strip():
                continue
            parts = ln.split()
            times.append(float(parts[0]))
            coord = [int(v) for v in parts[1:]]
            steps.append(coord[0] if d == 1 else coord)
        times = np.asarray(times, dtype=float)
        if d == 1:
            positions = np.concatenate(([0], np.asarray(steps, dtype=np.int64)))
        else:
            positions = np.vstack((np.zeros((1, d), dtype=np.int64),
                                   np.asarray(steps, dtype=np.int64)))
        return cls(rho=rho, horizon=horizon, times=times, positions=positions,
                   seed_note=fields.get("seed", ""))


# ----------------------------------------------------------------------
# the engine
# ----------------------------------------------------------------------

class TransitionEngine:
    """Cached evaluator of P(W_t = y), K(t), K'(t) and beta0 for a kernel.

    Immutable once built; all heavy tables are constructed lazily on first
    use and shared by every consumer afterwards.
    """

    def __init__(self, kernel: JumpKernel, t_min=1e-3, t_max=1e7,
                 per_decade=64):
        self.kernel = kernel
        self.t_min = float(t_min)
        self.t_max = float(t_max)
        self.per_decade = int(per_decade)
        if kernel.variant == "srw":
            self.alpha = kernel.d / 2.0 - 1.0
            self.is_transient = kernel.d >= 3
        else:
            self.alpha = (1.0 - kernel.gamma) / kernel.gamma
            self.is_transient = kernel.gamma < 1.0
        self._lap0 = None
        self._nodes_built = False
        self._k_interp = None
        self._g_profile = None
        self._cgamma_quad = None

    # -------------------------------------------------- master nodes

    def _xi_star(self, t):
        """Rough solution of t * q(xi) = 1 (heavy-tailed kernels)."""
        k = self.kernel
        c_q = float(k.char_exponent(1e-8)) / (k.phi(1e8) * 1e-8 ** k.gamma)
        xi = (1.0 / (c_q * t)) ** (1.0 / k.gamma)
        for _ in range(3):
            xi = (1.0 / (c_q * k.phi(1.0 / xi) * t)) ** (1.0 / k.gamma)
        return xi

    def _build_nodes(self):
        if self._nodes_built:
            return
        k = self.kernel
        if k.variant == "srw":
            self._nodes_built = True
            return
        s_hi = math.log(math.pi)
        s_base = math.log(self._xi_star(self.t_max))
        s_mid = s_base - 25.0
        if self.is_transient:
            s_lo = s_mid - (30.0 + 12.0 / max(1.0 - k.gamma, 0.02))
        else:
            s_lo = s_mid - 30.0
        gl_nodes, gl_wts = np.polynomial.legendre.leggauss(12)
        segs = []
        for lo, hi, wdt in ((s_lo, s_mid, 0.5), (s_mid, s_hi, 0.125)):
            n_p = max(2, int(math.ceil((hi - lo) / wdt)))
            edges = np.linspace(lo, hi, n_p + 1)
            mid = 0.5 * (edges[1:] + edges[:-1])
            half = 0.5 * (edges[1:] - edges[:-1])
            ss = (mid[:, None] + half[:, None] * gl_nodes).ravel()
            ww = (half[:, None] * np.broadcast_to(gl_wts, (n_p, 12))).ravel()
            segs.append((ss, ww))
        s = np.concatenate([a for a, _ in segs])
        w_s = np.concatenate([b for _, b in segs])
        self._xi = np.exp(s)
        self._w = w_s * self._xi          # weights for int ... dxi
        self._q = k.char_exponent(self._xi)
        self._xi_lo = math.exp(s_lo)
        # local power fit of q near the bottom of the grid, for slivers
        i0, i1 = 120, 12
        g_fit = (math.log(self._q[i0]) - math.log(self._q[i1])) / (
            math.log(self._xi[i0]) - math.log(self._xi[i1]))
        c_fit = self._q[i1] / self._xi[i1] ** g_fit
        self._q_fit = (g_fit, c_fit)
        # dense interpolant for off-node q (Filon panels), log-log cubic
        mask = (self._xi > 1e-60) & (self._q > 0) & np.isfinite(self._q)
        self._q_spline = interpolate.CubicSpline(
            np.log(self._xi[mask]), np.log(self._q[mask]))
        self._q_spline_lo = float(self._xi[mask][0])
        self._nodes_built = True

    def _q_any(self, xi):
        """q(xi) from the node spline (relative accuracy ~1e-9)."""
        xi = np.asarray(xi, dtype=float)
        out = np.empty_like(xi)
        lo = xi < self._q_spline_lo
        if np.any(lo):
            g_fit, c_fit = self._q_fit
            out[lo] = c_fit * xi[lo] ** g_fit
        if np.any(~lo):
            out[~lo] = np.exp(self._q_spline(np.log(xi[~lo])))
        return out

    # -------------------------------------------------- return probability

    def return_prob(self, t):
        """P(W_t = 0), vectorized over t >= 0."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        k = self.kernel
        if k.variant == "srw":
            out = special.ive(0, t / k.d) ** k.d
        else:
            self._build_nodes()
            ex = np.exp(-np.outer(t, self._q))
            out = (ex.dot(self._w)
                   + self._xi_lo * np.exp(-t * self._q_fit[1]
                                          * self._xi_lo ** self._q_fit[0])
                   ) / math.pi
        out = np.where(t == 0.0, 1.0, out)
        return float(out[0]) if scalar else out

    def _lap0_value(self):
        """int_0^inf P(W_t = 0) dt (requires transience)."""
        if not self.is_transient:
            raise RecurrentKernelError(
                "recurrent: beta0 = 0 (d <= 2 or gamma in [1,2))")
        if self._lap0 is not None:
            return self._lap0
        k = self.kernel
        if k.variant == "srw":
            d = k.d

            def p0(t):
                return _srw_p0(np.asarray(t, dtype=float), d)

            head, _ = integrate.quad(p0, 0.0, 100.0, limit=400,
                                     epsabs=1e-13, epsrel=1e-12)
            mid, _ = integrate.quad(p0, 100.0, 1e8, limit=800,
                                    epsabs=1e-14, epsrel=1e-12)
            t0 = 1e8
            pw = d / 2.0
            c_inf, ca = _srw_tail_fit(d, t0)
            tail = (c_inf * _power_tail(pw, t0)
                    + ca * _power_tail(pw + 1.0, t0))
            self._lap0 = head + mid + tail
        else:
            self._build_nodes()
            g_fit, c_fit = self._q_fit
            sliver = self._xi_lo ** (1.0 - g_fit) / (c_fit * (1.0 - g_fit))
            self._lap0 = (np.dot(self._w, 1.0 / self._q) + sliver) / math.pi
        return self._lap0

    @property
    def beta0(self):
        """beta0 = (int_0^inf P(W_t=0) dt)^-1; raises if recurrent."""
        return 1.0 / self._lap0_value()

    def beta0_or_zero(self):
        try:
            return self.beta0
        except RecurrentKernelError:
            return 0.0

    def laplace_return(self, b):
        """int_0^inf e^{-b t} P(W_t = 0) dt, accurate for tiny b.

        Computed as Lap(0) - D(b) with D(b) = int (1 - e^{-bt}) P dt, so the
        b-dependence survives at full relative precision near criticality.
        """
        return self._lap0_value() - self.laplace_defect(b)

    def laplace_defect(self, b):
        """D(b) = int_0^inf (1 - e^{-b t}) P(W_t = 0) dt >= 0."""
        if b == 0.0:
            return 0.0
        k = self.kernel
        if k.variant == "srw":
            d = k.d

            def integrand(t):
                return -_srw_p0(t, d) * np.expm1(-b * t)

            t_cut = min(60.0 / b, 1e10)
            gl_nodes, gl_wts = np.polynomial.legendre.leggauss(8)
            n_pan = max(8, int(math.log(t_cut / 1e-6) / 0.05))
            edges = np.concatenate((
                [0.0], np.geomspace(1e-6, t_cut, n_pan + 1)))
            mid = 0.5 * (edges[1:] + edges[:-1])
            half = 0.5 * (edges[1:] - edges[:-1])
            tt = (mid[:, None] + half[:, None] * gl_nodes).ravel()
            ww = (half[:, None] * np.broadcast_to(
                gl_wts, (mid.size, 8))).ravel()
            val = float(np.dot(ww, integrand(tt)))
            # analytic remainder on [t_cut, inf): two-term fitted power tail
            pw = d / 2.0
            c_inf, ca = _srw_tail_fit(d, t_cut)
            val += (c_inf * _power_exp_tail(pw, b, t_cut)
                    + ca * _power_exp_tail(pw + 1.0, b, t_cut))
            return val
        self._build_nodes()
        core = np.dot(self._w, b / (self._q * (self._q + b)))
        g_fit, c_fit = self._q_fit
        sliver, _ = integrate.quad(
            lambda u: b / (c_fit * u ** g_fit * (c_fit * u ** g_fit + b)),
            0.0, self._xi_lo, epsabs=1e-300, epsrel=1e-10, limit=200)
        return (core + sliver) / math.pi

    # -------------------------------------------------- K and K'

    def K(self, t, exact=False):
        """K(t) = beta0 * P(W_t = 0); log-log interpolated on the grid."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        b0 = self.beta0
        k = self.kernel
        if k.variant == "srw" or exact:
            out = b0 * self.return_prob(t)
        else:
            self._ensure_k_interp()
            logt = np.log(np.clip(t, self.t_min, None))
            out = np.exp(np.interp(logt, self._k_logt, self._k_logk))
            small = (t < self.t_min) & (t > 0.0)
            if np.any(small):
                out[small] = b0 * self.return_prob(t[small])
            big = t > self.t_max
            if np.any(big):
                out[big] = np.exp(
                    self._k_logk[-1] + self._k_tail_slope
                    * (np.log(t[big]) - self._k_logt[-1]))
            out = np.where(t == 0.0, b0, out)
        return float(out[0]) if scalar else out

    def _ensure_k_interp(self):
        if self._k_interp is not None:
            return
        n = int(self.per_decade * math.log10(self.t_max / self.t_min)) + 1
        grid = np.geomspace(self.t_min, self.t_max, n)
        kv = self.beta0 * self.return_prob(grid)
        self._k_logt = np.log(grid)
        self._k_logk = np.log(kv)
        last = self._k_logt > self._k_logt[-1] - math.log(10.0)
        slope, _ = np.polyfit(self._k_logt[last], self._k_logk[last], 1)
        self._k_tail_slope = float(slope)
        self._k_grid = grid
        self._k_vals = kv
        self._k_interp = True

    @property
    def k_grid(self):
        self._ensure_k_interp()
        return self._k_grid

    @property
    def k_values(self):
        self._ensure_k_interp()
        return self._k_vals

    def K_prime(self, t):
        """dK/dt; exact Bessel identity (SRW) or node dot (stable)."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        k = self.kernel
        if k.variant == "srw":
            z = t / k.d
            ratio = special.ive(1, z) / special.ive(0, z)
            out = self.K(t) * (ratio - 1.0)
        else:
            self._build_nodes()
            ex = np.exp(-np.outer(t, self._q))
            out = -self.beta0 * ex.dot(self._w * self._q) / math.pi
        return float(out[0]) if scalar else out

    def k_prime_ratio(self, t):
        """t K'(t) / K(t) -> -(1 + alpha) as t -> infinity."""
        return t * self.K_prime(t) / self.K(np.asarray(t, dtype=float),
                                            exact=True)

    def L(self, t):
        """Slowly varying part L(t) = K(t) t^(1+alpha)."""
        t = np.asarray(t, dtype=float)
        return self.K(t) * t ** (1.0 + self.alpha)

    def c_gamma_quadrature(self):
        """Independent oracle for c_gamma = int |s|^-(1+gamma) (1-cos s) ds."""
        if self._cgamma_quad is None:
            g = self.kernel.gamma
            head, _ = integrate.quad(
                lambda s: (1.0 - math.cos(s)) * s ** (-1.0 - g), 0.0, 50.0,
                limit=400)
            mass = 50.0 ** (-g) / g
            osc, _ = integrate.quad(
                lambda s: s ** (-1.0 - g), 50.0, np.inf, weight="cos",
                wvar=1.0, limit=400)
            self._cgamma_quad = 2.0 * (head + mass - osc)
        return self._cgamma_quad

    # -------------------------------------------------- transitions

    def transition_prob(self, t, y):
        """P(W_t = y) for a single lattice point y."""
        k = self.kernel
        if k.variant == "srw":
            y = np.atleast_1d(np.asarray(y, dtype=int))
            if y.size != k.d:
                raise ValueError(f"expected a Z^{k.d} point")
            if t == 0.0:
                return 1.0 if not np.any(y) else 0.0
            return float(np.prod(special.ive(np.abs(y), t / k.d)))
        y = int(np.asarray(y).item()) if not np.isscalar(y) else int(y)
        return float(self.transition_prob_batch(t, np.array([y]))[0])

    def transition_prob_batch(self, t, ys):
        """P(W_t = y) for an array of 1-d lattice points (stable kernels).

        Filon quadrature for |y| K(t) <= Y_SWITCH, the one-big-jump
        asymptotic c(t) * t * J(y) beyond, with c(t) fitted at the switch
        radius so the two branches join continuously.
        """
        k = self.kernel
        if k.variant == "srw":
            raise ValueError("batch transitions are for 1-d stable kernels")
        ys = np.abs(np.asarray(ys, dtype=np.int64))
        if t == 0.0:
            return (ys == 0).astype(float)
        kt = float(self.K(float(t))) / self.beta0  # P(W_t = 0) scale
        kt_beta = float(self.K(float(t)))
        out = np.empty(ys.shape, dtype=float)
        y_sw = Y_SWITCH / kt_beta
        inner = ys <= y_sw
        in_ys = np.unique(ys[inner]) if np.any(inner) else np.array([], int)
        big_needed = np.any(~inner)
        fit_ys = list(in_ys)
        y_edge = int(math.floor(y_sw))
        if big_needed and y_edge not in fit_ys:
            fit_ys.append(y_edge)
        if fit_ys:
            vals = self._filon_transition(float(t), np.asarray(fit_ys))
            lookup = dict(zip(fit_ys, vals))
            if np.any(inner):
                out[inner] = [lookup[v] for v in ys[inner]]
        if big_needed:
            c_fit = lookup[y_edge] / (t * k.j_values(np.array([y_edge]))[0])
            out[~inner] = c_fit * t * k.j_values(ys[~inner])
        # quadrature cancellation guard
        neg = out < 0.0
        if np.any(neg):
            out[neg] = 0.0
        return out

    def _filon_transition(self, t, ys):
        self._build_nodes()
        g_fit, c_fit = self._q_fit
        y_max = max(int(ys.max()), 1)
        xi_a = min((1e-9 / (t * c_fit)) ** (1.0 / g_fit)
                   if t > 0 else 1.0, 0.3 / y_max, 1e-4)
        xi_a = max(xi_a, 1e-60)
        n_oct = int(math.ceil(math.log2(math.pi / xi_a)))
        per_oct = 16
        edges = np.geomspace(xi_a, math.pi, n_oct * per_oct + 1)
        left = edges[:-1]
        width = edges[1:] - edges[:-1]
        midp = left + 0.5 * width
        qa = self._q_any(np.concatenate((left, midp, [math.pi])))
        a_left = np.exp(-t * qa[:left.size])
        a_mid = np.exp(-t * qa[left.size:2 * left.size])
        a_right = np.empty_like(a_left)
        a_right[:-1] = a_left[1:]
        a_right[-1] = math.exp(-t * qa[-1])
        vals = filon_cos_integral(a_left, a_mid, a_right, left, width, ys)
        # [0, xi_a] sliver: integrand is flat there by construction
        a0 = math.exp(-t * float(self._q_any(np.array([xi_a * 0.5]))[0]))
        for j, y in enumerate(ys):
            if y == 0:
                vals[j] += a0 * xi_a
            else:
                vals[j] += a0 * math.sin(xi_a * y) / y
        return vals / math.pi

    # -------------------------------------------------- local limit profile

    def llt_scale(self, t):
        """Spatial scale multiplying y inside the limit profile."""
        if self.kernel.variant == "srw":
            return 2.0 * math.pi * float(self.return_prob(t)) ** (
                1.0 / self.kernel.d)
        return float(self.K(float(t)))

    def llt_profile(self, x):
        """Limit profile g with g(0) = 1.

        SRW: the Gaussian exp(-|x|^2 / 4 pi) (the scale fed to it makes the
        per-coordinate variance match the walk).  Stable: the symmetric
        gamma-stable density normalized to g(0) = 1, from its Fourier
        representation with the rate fixed by beta0.
        """
        x = np.asarray(x, dtype=float)
        if self.kernel.variant == "srw":
            sq = x ** 2 if x.ndim <= 1 else (x ** 2).sum(axis=-1)
            return np.exp(-sq / (4.0 * math.pi))
        if self._g_profile is None:
            g = self.kernel.gamma
            ell = (self.beta0 * special.gamma(1.0 + 1.0 / g) / math.pi) ** g
            u_max = (80.0 / ell) ** (1.0 / g)
            xs = np.linspace(0.0, 1.5 * Y_SWITCH + 2.0, 1200)
            edges = np.geomspace(1e-7 * u_max, u_max, 2000)
            edges = np.concatenate(([0.0], edges))
            lf = edges[:-1]
            wd = edges[1:] - edges[:-1]
            md = lf + 0.5 * wd
            al = np.exp(-ell * lf ** g)
            am = np.exp(-ell * md ** g)
            ar = np.exp(-ell * edges[1:] ** g)
            vals = filon_cos_integral(al, am, ar, lf, wd, xs)
            prof = vals * self.beta0 / math.pi
            prof /= prof[0]
            self._g_profile = interpolate.PchipInterpolator(
                xs, prof, extrapolate=False)
        out = self._g_profile(np.abs(x))
        return np.where(np.isnan(out), 0.0, out)

    def llt_residual(self, t, y_grid):
        """max over y_grid of |beta0 P(W_t=y)/K(t) - g(y * scale)|."""
        k = self.kernel
        scale = self.llt_scale(t)
        if k.variant == "srw":
            ys = [np.atleast_1d(np.asarray(y, dtype=int)) for y in y_grid]
            probs = np.array([self.transition_prob(t, y) for y in ys])
            xs = np.array([np.linalg.norm(y * scale) for y in ys])
        else:
            ys = np.asarray(y_grid, dtype=np.int64)
            probs = self.transition_prob_batch(t, ys)
            xs = np.abs(ys) * scale
        ratio = probs / float(self.return_prob(t))
        return float(np.max(np.abs(ratio - self.llt_profile(xs))))

    # -------------------------------------------------- path simulation

    def simulate_path(self, rho, horizon, rng, seed_note="") -> DisorderPath:
        """Quenched trajectory Y with jump rate rho on [0, horizon].

        Only effective (nonzero) jumps are generated, at Poisson rate
        rho * (1 - J(0)).  A unit-rate skeleton is thinned by rho, so two
        calls with identically seeded generators and different rho produce
        coupled paths (common random numbers).
        """
        if not (0.0 <= rho < 1.0):
            raise ValueError("rho must be in [0, 1)")
        k = self.kernel
        rate = 1.0 - k.hold_probability
        times = []
        t = 0.0
        while True:
            t += rng.exponential(1.0 / rate) if rate > 0 else math.inf
            if t > horizon:
                break
            times.append(t)
        n = len(times)
        jumps = k.sample_jump(rng, size=max(n, 1), nonzero=True)[:n]
        keep = rng.random(n) < rho
        times = np.asarray(times, dtype=float)[keep]
        if k.variant == "srw" and k.d > 1:
            jumps = np.asarray(jumps)[keep]
            positions = np.vstack((np.zeros((1, k.d), dtype=np.int64),
                                   np.cumsum(jumps, axis=0)))
        else:
            jumps = np.asarray(jumps, dtype=np.int64)[keep]
            positions = np.concatenate(([0], np.cumsum(jumps)))
        return DisorderPath(rho=rho, horizon=horizon, times=times,
                            positions=positions, seed_note=seed_note)

    def sample_position(self, s, rng, size=None):
        """Draw from the law of W_s directly (Poisson jump count)."""
        k = self.kernel
        rate = 1.0 - k.hold_probability
        n = 1 if size is None else int(size)
        counts = rng.poisson(rate * s, size=n)
        total = int(counts.sum())
        jumps = k.sample_jump(rng, size=max(total, 1), nonzero=True)[:total]
        if k.variant == "srw" and k.d > 1:
            out = np.zeros((n, k.d), dtype=np.int64)
            pos = 0
            for i, c in enumerate(counts):
                if c:
                    out[i] = np.asarray(jumps[pos:pos + c]).sum(axis=0)
                pos += c
        else:
            out = np.zeros(n, dtype=np.int64)
            pos = 0
            for i, c in enumerate(counts):
                if c:
                    out[i] = jumps[pos:pos + c].sum()
                pos += c
        return out if size is not None else out[0]


_ENGINES: dict = {}


def make_engine(kernel: JumpKernel, t_min=1e-3, t_max=1e7,
                per_decade=64) -> TransitionEngine:
    """Shared engine per (kernel, grid) so heavy tables build once."""
    key = (repr(kernel), t_min, t_max, per_decade)
    if key not in _ENGINES:
        _ENGINES[key] = TransitionEngine(kernel, t_min=t_min, t_max=t_max,
                                         per_decade=per_decade)
    return _ENGINES[key]
