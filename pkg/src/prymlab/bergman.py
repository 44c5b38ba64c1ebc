"""Bergman kernel of the curve, theta functions, and the projective
connections built from them.

The kernel on a hyperelliptic curve has a closed algebraic part; a small
holomorphic correction, fixed by vanishing a-periods, is solved for once
per surface.  Squaring the normalized kernel gives the w-free two-point
function whose diagonal expansion produces the projective connection and
the potential of the second-order system transported in the monodromy
module.
"""

import logging

import numpy as np

from .errors import (DiagonalTooClose, ExtrapolationUnstable, IllConditioned,
                     NearThetaNull, NotPositiveDefinite, WirtingerSingular)
from .quadrature import integrate_polyline_multi
from . import periods

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# theta functions with characteristics (genus 2)


def _trunc_radius(y_mat, im_z):
    lam = np.linalg.eigvalsh(y_mat)[0]
    if lam <= 0.0:
        raise NotPositiveDefinite(
            "imaginary part has lowest eigenvalue %.3g" % lam)
    r = int(np.ceil(np.sqrt(np.log(1e16) / (np.pi * lam)))) + 2
    shift = np.linalg.solve(y_mat, im_z)
    return r, shift


def theta(z, omega, char=(0, 0, 0, 0), order=0):
    """Theta value with half-integer characteristic (a1, a2, d1, d2), the
    entries counting halves.  order 1 adds the z-gradient, order 2 the
    z-Hessian; the absolute truncation error is held near 1e-16."""
    z = np.asarray(z, dtype=complex).reshape(2)
    omega = np.asarray(omega, dtype=complex).reshape(2, 2)
    alpha = np.array(char[:2], dtype=float) / 2.0
    delta = np.array(char[2:], dtype=float) / 2.0
    r, shift = _trunc_radius(omega.imag, z.imag)
    c0 = -alpha[0] - shift[0]
    c1 = -alpha[1] - shift[1]
    n0 = np.arange(np.floor(c0 - r), np.ceil(c0 + r) + 1)
    n1 = np.arange(np.floor(c1 - r), np.ceil(c1 + r) + 1)
    g0, g1 = np.meshgrid(n0, n1, indexing="ij")
    m = np.stack([g0.ravel() + alpha[0], g1.ravel() + alpha[1]], axis=1)
    quad = np.einsum("ni,ij,nj->n", m, omega, m)
    lin = m @ (z + delta)
    ex = np.exp(1j * np.pi * quad + 2j * np.pi * lin)
    val = ex.sum()
    if order == 0:
        return val
    grad = 2j * np.pi * (m * ex[:, None]).sum(axis=0)
    if order == 1:
        return val, grad
    hess = (2j * np.pi) ** 2 * np.einsum("n,ni,nj->ij", ex, m, m)
    return val, grad, hess


def even_characteristics():
    """The ten even half-integer characteristics in genus 2."""
    out = []
    for a1 in (0, 1):
        for a2 in (0, 1):
            for d1 in (0, 1):
                for d2 in (0, 1):
                    if (a1 * d1 + a2 * d2) % 2 == 0:
                        out.append((a1, a2, d1, d2))
    return out


def wirtinger_log_derivs(omega):
    """log of the product of the ten even theta constants and its
    matrix derivative in the period matrix (entries treated as
    independent), through the heat equation."""
    log_total = 0.0 + 0.0j
    dlog = np.zeros((2, 2), dtype=complex)
    for char in even_characteristics():
        val, _, hess = theta((0.0, 0.0), omega, char, order=2)
        if abs(val) < 1e-8:
            raise NearThetaNull(
                "even theta constant %s is %.3g" % (char, abs(val)))
        log_total += np.log(val)
        dlog += hess / (4j * np.pi * val)
    return log_total, dlog


def heat_defect(omega, char=(0, 0, 0, 0), h=1e-5):
    """Residual of the heat relation between the period derivative and
    the z-Hessian, for validation."""
    _, _, hess = theta((0.0, 0.0), omega, char, order=2)
    out = 0.0
    for j in range(2):
        for k in range(j, 2):
            e = np.zeros((2, 2), dtype=complex)
            e[j, k] = e[k, j] = 1.0
            d = (theta((0, 0), omega + h * e, char)
                 - theta((0, 0), omega - h * e, char)) / (2 * h)
            pred = (2.0 - (1.0 if j == k else 0.0)) / (4j * np.pi) * hess[j, k]
            out = max(out, abs(d - pred))
    return out


# ---------------------------------------------------------------------------
# the kernel


class BergmanKernel:
    """Second kernel of the curve: algebraic part plus the holomorphic
    correction with vanishing a-periods in the given marking."""

    def __init__(self, surface, marking, engine=None, rel_tol=1e-10):
        self.surface = surface
        self.marking = marking
        self.engine = engine or periods.PeriodEngine(surface, rel_tol)
        self.rel_tol = rel_tol
        self.period_data = periods.period_matrix(marking, self.engine)
        self._solve_correction()

    # -- algebraic part ---------------------------------------------------

    def _F(self, x1, x2):
        pc = self.surface.p_coeffs
        acc = 0.0
        for k in range(4):
            term = 2.0 * pc[2 * k]
            if 2 * k + 1 < len(pc):
                term = term + pc[2 * k + 1] * (x1 + x2)
            acc = acc + (x1 * x2) ** k * term
        return acc

    def k_alg(self, x1, y1, x2, y2):
        d = x1 - x2
        return (self._F(x1, x2) + 2.0 * y1 * y2) / (4.0 * d * d * y1 * y2)

    # -- correction -------------------------------------------------------

    def _a_periods_of_kernel(self, x1, y1):
        def form(x2, y2, w2):
            return self.k_alg(x1, y1, x2, y2)

        out = []
        for combo in self.marking.base_a:
            acc = 0.0
            for c, loop in combo.terms:
                val, _, _ = integrate_polyline_multi(
                    loop.surface, [form], loop.vertices, loop.y0, loop.w0,
                    rel_tol=self.rel_tol, closed=True)
                acc = acc + c.to_float() * complex(val[0])
            out.append(acc)
        return np.array(out)

    def _correction_for(self, samples):
        V = np.zeros((2, 2), dtype=complex)
        g = np.zeros((2, 2), dtype=complex)
        for srow, (xs, ys) in enumerate(samples):
            for j in range(2):
                V[srow, j] = self.period_data.diff_at(j, xs, ys)
            g[srow] = self._a_periods_of_kernel(xs, ys)
        cond = np.linalg.cond(V)
        if not np.isfinite(cond) or cond > 1e8:
            raise IllConditioned(
                "kernel correction samples are degenerate (cond %.3g)" % cond)
        return np.linalg.solve(V, -g)

    def _sample_points(self, offset):
        s = self.surface
        x0 = s.basepoint + offset * s.sep_all
        pts = []
        for x in (x0, x0 + (0.37 + 0.61j) * s.sep_all):
            s.check_clear(x)
            y = np.sqrt(complex(s.p(x)))
            pts.append((x, y))
        return pts

    def _solve_correction(self):
        c1 = self._correction_for(self._sample_points(0.0))
        c2 = self._correction_for(self._sample_points(0.23j + 0.11))
        scale = max(np.abs(c1).max(), 1.0)
        self.correction_witness = np.abs(c1 - c2).max() / scale
        if self.correction_witness > 1e-8:
            raise IllConditioned(
                "kernel correction is sample-dependent (%.3g)"
                % self.correction_witness)
        asym = np.abs(c1 - c1.T).max() / scale
        if asym > 1e-7:
            logger.warning("kernel correction asymmetry %.3g", asym)
        self.correction = 0.5 * (c1 + c1.T)

    # -- evaluation -------------------------------------------------------

    def coeff(self, x1, y1, x2, y2):
        """Kernel coefficient against dx1 dx2, with the correction.
        Either argument may be an array."""
        gap = np.min(np.abs(np.asarray(x1) - np.asarray(x2)))
        if gap < 1e-6 * self.surface.sep_all:
            raise DiagonalTooClose("kernel arguments %.3g apart" % gap)
        pd = self.period_data
        holo = 0.0
        for j in range(2):
            vj1 = pd.diff_at(j, x1, y1)
            for k in range(2):
                holo = holo + self.correction[j, k] * vj1 \
                    * pd.diff_at(k, x2, y2)
        return self.k_alg(x1, y1, x2, y2) + holo

    def b_normalized(self, x1, y1, w1, x2, y2, w2):
        """Kernel against the square root of the quadratic differential."""
        return self.coeff(x1, y1, x2, y2) * y1 * y2 / (w1 * w2)

    def h(self, x1, y1, x2, y2):
        """Squared normalized kernel; w drops out.  Vectorizes in either
        argument like coeff does."""
        c = self.coeff(x1, y1, x2, y2)
        return c * c * y1 * y1 * y2 * y2 \
            / (self.surface.N(x1) * self.surface.N(x2))

    def f(self, j, x, w):
        """Normalized holomorphic differential against the square root."""
        c = self.period_data.coeffs[j]
        return (c[0] + c[1] * x) / w

    # -- diagonal ---------------------------------------------------------

    def s_bergman(self, x, y=None, eps=None, direction=1.0):
        """Projective connection from the kernel diagonal, by symmetric
        point splitting with one Richardson pass."""
        s = self.surface
        s.check_clear(x)
        if y is None:
            y = np.sqrt(complex(s.p(x)))
        if eps is None:
            eps = 1e-3 * s.sep_all
        d = direction / abs(direction)

        def split(e):
            xp, xm = x + e * d, x - e * d
            yp = _nearby_sheet(s, xp, y)
            ym = _nearby_sheet(s, xm, y)
            # subtract the pole with the rounded difference, not the
            # nominal one, so the singular parts cancel exactly
            return self.coeff(xp, yp, xm, ym) - 1.0 / (xp - xm) ** 2

        d1 = split(eps)
        d2 = split(0.5 * eps)
        out = (4.0 * d2 - d1) / 3.0
        drift = abs(out - d2) / (1.0 + abs(out))
        if drift > 1e-5:
            raise ExtrapolationUnstable(
                "kernel diagonal extrapolation moved by %.3g" % drift)
        return 6.0 * out

    def s_bergman_analytic(self, x):
        """Diagonal expansion in closed form; used where many evaluations
        are needed.  Agrees with the split-point route to quadrature
        accuracy."""
        s = self.surface
        pc = s.p_coeffs
        pv = complex(s.p(x))
        dpv = complex(s.dp(x))
        f22 = 0.0
        for k in range(4):
            if k >= 1:
                f22 = f22 + 2.0 * k * (k - 1) * pc[2 * k] * x ** (2 * k - 2)
            if 2 * k + 1 < len(pc):
                f22 = f22 + 2.0 * k * k * pc[2 * k + 1] * x ** (2 * k - 1)
        ddp = sum(j * (j - 1) * pc[j] * x ** (j - 2) for j in range(2, 7))
        core = f22 / (8.0 * pv) - ddp / (8.0 * pv) \
            + dpv * dpv / (16.0 * pv * pv)
        holo = 0.0
        pd = self.period_data
        for j in range(2):
            pj = pd.coeffs[j][0] + pd.coeffs[j][1] * x
            for k in range(2):
                pk = pd.coeffs[k][0] + pd.coeffs[k][1] * x
                holo = holo + self.correction[j, k] * pj * pk
        return 6.0 * (core + holo / pv)

    def q_hat(self, x, mode="analytic"):
        """Ratio comparing the kernel connection with the one of the
        square-root differential, against the quadratic differential."""
        loc = self.surface.eval_local(x)
        if mode == "analytic":
            sb = self.s_bergman_analytic(x)
        else:
            sb = self.s_bergman(x)
        return (sb - loc["Sv_rep"]) / (2.0 * loc["Q_rep"])

    def u_coeff(self, x, mode="analytic"):
        """Potential of the self-adjoint second-order operator whose
        monodromy the transport module computes."""
        return -(self.q_hat(x, mode) + 1.0)


def _nearby_sheet(surface, x, y_ref):
    y = np.sqrt(complex(surface.p(x)))
    return y if abs(y - y_ref) <= abs(y + y_ref) else -y


# ---------------------------------------------------------------------------
# two-point function utilities


def h_loop_integral(kernel, x_fix, y_fix, combo, rel_tol=1e-10):
    """Single-lift integral of h(x_fix, .) v over a cycle combination."""

    def form(t, yt, wt):
        return kernel.h(x_fix, y_fix, t, yt) * wt / yt

    acc = 0.0
    for c, loop in combo.terms:
        val, _, _ = integrate_polyline_multi(
            loop.surface, [form], loop.vertices, loop.y0, loop.w0,
            rel_tol=rel_tol, closed=True)
        acc = acc + c.to_float() * complex(val[0])
    return acc


def wirtinger_connection(kernel, x, y=None):
    """Projective connection independent of the marking: the kernel
    connection minus the theta-constant correction."""
    pd = kernel.period_data
    try:
        _, dlog = wirtinger_log_derivs(pd.omega)
    except NearThetaNull as exc:
        raise WirtingerSingular(str(exc))
    s = kernel.surface
    if y is None:
        y = np.sqrt(complex(s.p(x)))
    g = 2
    c_w = 48j * np.pi / (2 ** g + 4 ** g)
    corr = 0.0
    for j in range(2):
        vj = pd.diff_at(j, x, y)
        for k in range(2):
            corr = corr + dlog[j, k] * vj * pd.diff_at(k, x, y)
    # the sign pairs with the kernel transformation law: under a change
    # of marking the theta correction moves by exactly the opposite of
    # the kernel connection, and only this orientation cancels
    return kernel.s_bergman_analytic(x) + c_w * corr


def wirtinger_generating(omega):
    """Generating value attached to the even theta constants."""
    g = 2
    try:
        log_total, _ = wirtinger_log_derivs(omega)
    except NearThetaNull as exc:
        raise WirtingerSingular(str(exc))
    return -24j * np.pi / (2 ** g + 4 ** g) * log_total
