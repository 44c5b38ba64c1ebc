"""Periods of the curve and of its anti-invariant double-cover homology.

The curve carries two holomorphic differentials, spanned by dx/y and
x dx/y; the double cover taking the square root of the numerator carries
three anti-invariant ones.  Everything integrable here is a rational
expression in (x, y, w) on the tower, so a small registry of closed
forms covers all periods, including the quadratic products needed by the
variational formulas.

The chart at the end freezes the marking's polylines and re-anchors them
on nearby surfaces, which turns the six periods of the square root of
the quadratic differential into a locally invertible coordinate map.
"""

import logging

import numpy as np

from .errors import (AmbiguousContinuation, CollisionCourse, IllConditioned,
                     LeftChart, MarkingFailure, NoConvergence, PrecisionLoss,
                     SingularNormalization)
from .quadrature import integrate_polyline_multi
from .surface import Surface
from . import topology

logger = logging.getLogger(__name__)


# closed forms on the tower; the sheet data rides in through (y, w)
RAW_FORMS = {
    "u1": lambda x, y, w: 1.0 / y,
    "u2": lambda x, y, w: x / y,
    "n1": lambda x, y, w: w / y,
    "n2": lambda x, y, w: 1.0 / (w * y),
    "n3": lambda x, y, w: x / (w * y),
    "m2": lambda x, y, w: x * x / (w * y),
    "q0": lambda x, y, w: 1.0 / (w ** 3 * y),
    "q1": lambda x, y, w: x / (w ** 3 * y),
    "q2": lambda x, y, w: x * x / (w ** 3 * y),
}


class PeriodEngine:
    """Caches integrals of registered forms over lifted loops.

    Loops are keyed by identity; the engine pins a reference to every
    loop it has integrated so ids stay unambiguous.
    """

    def __init__(self, surface, rel_tol=1e-10):
        self.surface = surface
        self.rel_tol = rel_tol
        self._cache = {}
        self._pins = {}

    def atom_integrals(self, loop, names):
        missing = [n for n in names if (id(loop), n) not in self._cache]
        if missing:
            self._pins[id(loop)] = loop
            forms = [RAW_FORMS[n] for n in missing]
            vals, _, _ = integrate_polyline_multi(
                loop.surface, forms, loop.vertices, loop.y0, loop.w0,
                rel_tol=self.rel_tol, closed=True)
            for n, v in zip(missing, vals):
                self._cache[(id(loop), n)] = complex(v)
        return np.array([self._cache[(id(loop), n)] for n in names],
                        dtype=complex)

    def combo_integrals(self, combo, names):
        total = np.zeros(len(names), dtype=complex)
        for c, loop in combo.terms:
            total = total + c.to_float() * self.atom_integrals(loop, names)
        return total

    def combo_integral(self, combo, name):
        return complex(self.combo_integrals(combo, [name])[0])

    def weighted_integral(self, combo, weights):
        """Integral of a linear combination of registered forms."""
        names = sorted(weights)
        vals = self.combo_integrals(combo, names)
        return complex(sum(weights[n] * v for n, v in zip(names, vals)))


def invariant_product_weights(cj, ck):
    """Weights of P_j P_k dx/(y w) in the registry, P given by its two
    polynomial coefficients (constant, linear)."""
    return {
        "n2": cj[0] * ck[0],
        "n3": cj[0] * ck[1] + cj[1] * ck[0],
        "m2": cj[1] * ck[1],
    }


_PRYM_PRODUCT = {
    (0, 0): "n1", (0, 1): "n2", (1, 0): "n2", (0, 2): "n3", (2, 0): "n3",
    (1, 1): "q0", (1, 2): "q1", (2, 1): "q1", (2, 2): "q2",
}


def prym_product_weights(cj, ck):
    """Weights of s_j s_k / v for anti-invariant differentials expressed
    in the raw triple (w dx/y, dx/(wy), x dx/(wy))."""
    out = {}
    for a in range(3):
        for b in range(3):
            coeff = cj[a] * ck[b]
            if coeff == 0:
                continue
            name = _PRYM_PRODUCT[(a, b)]
            out[name] = out.get(name, 0.0) + coeff
    return out


class PeriodData:
    """Normalized period matrix with the differentials' coefficients."""

    def __init__(self, omega, coeffs, a_mat, b_mat):
        self.omega = omega
        self.coeffs = coeffs
        self.a_mat = a_mat
        self.b_mat = b_mat

    def diff_at(self, j, x, y):
        c = self.coeffs[j]
        return (c[0] + c[1] * x) / y


def _normalize(a_mat, b_mat, what):
    cond = np.linalg.cond(a_mat)
    if not np.isfinite(cond) or cond > 1e10:
        raise SingularNormalization(
            "%s a-period matrix has condition %.3g" % (what, cond))
    a_inv = np.linalg.inv(a_mat)
    return b_mat @ a_inv, a_inv.T


def period_matrix(marking, engine=None):
    """Period matrix of the curve in the marking's base cycles, with the
    row-normalized differentials as polynomial coefficient pairs."""
    engine = engine or PeriodEngine(marking.surface)
    names = ["u1", "u2"]
    a_mat = np.array([engine.combo_integrals(c, names)
                      for c in marking.base_a])
    b_mat = np.array([engine.combo_integrals(c, names)
                      for c in marking.base_b])
    omega, coeffs = _normalize(a_mat, b_mat, "curve")
    asym = np.abs(omega - omega.T).max()
    if asym > 1e-6 * max(1.0, np.abs(omega).max()):
        logger.warning("period matrix asymmetry %.3g", asym)
    return PeriodData(omega, coeffs, a_mat, b_mat)


def prym_matrix(marking, engine=None):
    """Period matrix of the anti-invariant part in the odd basis, with
    the normalized differentials as coefficient triples."""
    engine = engine or PeriodEngine(marking.surface)
    names = ["n1", "n2", "n3"]
    a_mat = np.array([engine.combo_integrals(c, names)
                      for c in marking.hminus[0:3]])
    b_mat = np.array([engine.combo_integrals(c, names)
                      for c in marking.hminus[3:6]])
    pi, coeffs = _normalize(a_mat, b_mat, "odd part")
    return PeriodData(pi, coeffs, a_mat, b_mat)


def homological_coords(marking, engine=None):
    """The six periods of the square root of the quadratic differential
    over the odd basis; these coordinatize the family near the surface."""
    engine = engine or PeriodEngine(marking.surface)
    return np.array([engine.combo_integral(c, "n1") for c in marking.hminus])


def riemann_bilinear_defect(marking, engine=None):
    """Largest violation of the bilinear identity sum(A B' - B A') over
    the two holomorphic differentials, relative to the period sizes."""
    engine = engine or PeriodEngine(marking.surface)
    names = ["u1", "u2"]
    a_mat = np.array([engine.combo_integrals(c, names)
                      for c in marking.base_a])
    b_mat = np.array([engine.combo_integrals(c, names)
                      for c in marking.base_b])
    defect = a_mat.T @ b_mat - b_mat.T @ a_mat
    scale = max(np.abs(a_mat).max() * np.abs(b_mat).max(), 1e-300)
    return np.abs(defect).max() / scale


# ---------------------------------------------------------------------------
# the frozen-marking chart


PINNED_ROOTS = (0.0, 1.0, -1.0)


def _split_pinned(p_roots):
    roots = [complex(r) for r in p_roots]
    free = list(roots)
    for target in PINNED_ROOTS:
        hit = None
        for r in free:
            if abs(r - target) < 1e-9:
                hit = r
                break
        if hit is None:
            raise LeftChart("no branch point pinned at %s" % target)
        free.remove(hit)
    free.sort(key=lambda z: (z.real, z.imag))
    return free


class ModuliChart:
    """Coordinates on the family around a base surface: the three free
    branch points (three are pinned at 0, 1 and -1) and the numerator
    coefficients.  The base marking's polylines are frozen and carried to
    nearby surfaces by re-matching starting sheets."""

    def __init__(self, surface, marking=None, rel_tol=1e-10, fd_step=1e-5):
        free = _split_pinned(surface.p_roots)
        self.base_surface = surface
        self.marking = marking if marking is not None \
            else topology.standard_marking(surface)
        self.rel_tol = rel_tol
        self.fd_step = fd_step
        self.theta0 = np.array(free + list(surface.n_coeffs), dtype=complex)
        self._P_cache = {}
        self._mark_cache = {}

    def surface_at(self, theta):
        theta = np.asarray(theta, dtype=complex)
        p_roots = list(PINNED_ROOTS) + list(theta[:3])
        return Surface(p_roots, list(theta[3:]),
                       basepoint=self.base_surface.basepoint)

    def marking_at(self, theta):
        key = tuple(np.asarray(theta, dtype=complex).tolist())
        if key not in self._mark_cache:
            s = self.surface_at(theta)
            self._mark_cache[key] = topology.reanchor(self.marking, s)
            if len(self._mark_cache) > 400:
                self._mark_cache.clear()
        return self._mark_cache[key]

    def coords(self, theta, rel_tol=None):
        key = (tuple(np.asarray(theta, dtype=complex).tolist()),
               rel_tol or self.rel_tol)
        if key not in self._P_cache:
            mk = self.marking_at(theta)
            engine = PeriodEngine(mk.surface, rel_tol=rel_tol or self.rel_tol)
            self._P_cache[key] = homological_coords(mk, engine)
            if len(self._P_cache) > 400:
                self._P_cache.clear()
        return self._P_cache[key]

    def omega_at(self, theta, rel_tol=None):
        mk = self.marking_at(theta)
        engine = PeriodEngine(mk.surface, rel_tol=rel_tol or self.rel_tol)
        return period_matrix(mk, engine)

    def prym_at(self, theta, rel_tol=None):
        mk = self.marking_at(theta)
        engine = PeriodEngine(mk.surface, rel_tol=rel_tol or self.rel_tol)
        return prym_matrix(mk, engine)

    def steps(self, theta):
        h = self.fd_step * (1.0 + np.abs(theta))
        return np.minimum(h, 0.01 * self.base_surface.sep_all)

    def jacobian(self, theta=None, rel_tol=None):
        """Central differences with one Richardson pass.  The coordinate
        map is holomorphic, so real increments give the full derivative."""
        theta = self.theta0 if theta is None else np.asarray(theta, complex)
        # finite differencing needs quadrature noise well under the
        # increment, so tighten the tolerance one notch
        tol = 0.1 * (rel_tol or self.rel_tol)
        hs = self.steps(theta)
        cols = []
        for i in range(6):
            e = np.zeros(6, dtype=complex)
            e[i] = 1.0
            h = hs[i]
            d1 = (self.coords(theta + h * e, tol)
                  - self.coords(theta - h * e, tol)) / (2.0 * h)
            d2 = (self.coords(theta + 0.5 * h * e, tol)
                  - self.coords(theta - 0.5 * h * e, tol)) / h
            cols.append((4.0 * d2 - d1) / 3.0)
        J = np.array(cols).T
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > 1e8:
            raise IllConditioned("coordinate jacobian condition %.3g" % cond)
        return J


def newton_invert(chart, target, theta0=None, max_iter=50, jac=None):
    """Find chart coordinates whose periods match the target, by damped
    Newton iteration with a frozen jacobian (recomputed on stagnation)."""
    target = np.asarray(target, dtype=complex)
    theta = np.array(chart.theta0 if theta0 is None else theta0,
                     dtype=complex)
    scale = 1.0 + np.linalg.norm(target)
    tol = 1e-10 * scale
    if jac is None:
        J = chart.jacobian(theta)
        j_at = theta.copy()
    else:
        J = jac
        j_at = None
    r = chart.coords(theta) - target
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol:
            return theta
        step = np.linalg.solve(J, r)
        lam = 1.0
        improved = False
        for _ in range(8):
            cand = theta - lam * step
            try:
                rc = chart.coords(cand) - target
            except (CollisionCourse, AmbiguousContinuation, PrecisionLoss,
                    MarkingFailure) as exc:
                logger.debug("newton step rejected: %r", exc)
                lam *= 0.5
                continue
            if np.linalg.norm(rc) < np.linalg.norm(r):
                theta, r = cand, rc
                improved = True
                break
            lam *= 0.5
        if not improved:
            if j_at is not None and np.array_equal(j_at, theta):
                raise NoConvergence(
                    "newton stalled at residual %.3g" % np.linalg.norm(r))
            J = chart.jacobian(theta)
            j_at = theta.copy()
    if np.linalg.norm(r) <= tol:
        return theta
    raise NoConvergence(
        "newton did not reach tolerance %.3g; residual %.3g after %d steps"
        % (tol, np.linalg.norm(r), max_iter))
