"""Monodromy of the self-adjoint second-order equation on the curve.

The equation is transported as a trace-free first-order 2x2 system whose
off-diagonal entries are the square root of the quadratic differential
and its multiple by the potential.  The potential is a function of x
alone, so only the square-root sheet rides along; determinants are
preserved exactly by the structure and their drift measures integrator
quality.
"""

import cmath
import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import AmbiguousContinuation, PathThroughZero, StepFailure

logger = logging.getLogger(__name__)

SIGMA3 = np.diag([1.0, -1.0])


def thread_count():
    """Worker count for independent transports, from PRYMLAB_THREADS."""
    try:
        return max(1, int(os.environ.get("PRYMLAB_THREADS", "1")))
    except ValueError:
        return 1


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784,
                   11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


def _nearest(value, anchor):
    return value if abs(value - anchor) <= abs(value + anchor) else -value


def _system_matrix(surface, u_func, x, y_anchor, w_anchor):
    y = _nearest(complex(np.sqrt(complex(surface.p(x)))), y_anchor)
    w = _nearest(complex(np.sqrt(complex(surface.N(x)))), w_anchor)
    v_rep = w / y
    u = u_func(x)
    return np.array([[0.0, v_rep], [u * v_rep, 0.0]], dtype=complex), y, w


def transport_segment(surface, u_func, za, zb, y0, w0, psi, tol=1e-11):
    """Carry the fundamental solution along one straight segment, keeping
    both square roots on their sheets by stepwise matching.  Steps are
    capped by half the distance to the nearest singular point, which
    keeps the matching unambiguous."""
    vel = zb - za
    L = abs(vel)
    if L == 0.0:
        return psi, y0, w0
    t = 0.0
    y_cur, w_cur = y0, w0
    h = min(1.0, 0.3 * surface.sep_all / L)
    rejects = 0
    while t < 1.0:
        dist = surface.nearest_singular(za + t * vel)[1]
        if dist < 0.02 * surface.sep_all:
            raise PathThroughZero(
                "transport path passes %.3g from a singular point" % dist)
        h = min(h, 1.0 - t, 0.5 * dist / L)
        if h < 1e-12:
            raise StepFailure("step size underflow at t=%.6f" % t)
        ks = []
        for i in range(7):
            xi = za + (t + _DP_C[i] * h) * vel
            acc = psi
            if i:
                acc = psi + h * sum(a * k for a, k in zip(_DP_A[i], ks))
            A, _, _ = _system_matrix(surface, u_func, xi, y_cur, w_cur)
            ks.append(vel * (A @ acc))
        p5 = psi + h * sum(b * k for b, k in zip(_DP_B5, ks))
        p4 = psi + h * sum(b * k for b, k in zip(_DP_B4, ks))
        err = np.abs(p5 - p4).max() / max(1.0, np.abs(p5).max())
        if err <= tol:
            t = t + h
            psi = p5
            _, y_cur, w_cur = _system_matrix(surface, u_func, za + t * vel,
                                             y_cur, w_cur)
            rejects = 0
        else:
            rejects += 1
            if rejects > 60:
                raise StepFailure("60 consecutive rejected steps")
        h = h * min(5.0, max(0.2, 0.9 * (tol / max(err, 1e-300)) ** 0.2))
    return psi, y_cur, w_cur


def transport_polyline(surface, u_func, vertices, y0, w0, tol=1e-11):
    """Fundamental matrix along a polyline, sheet-chained at vertices."""
    psi = np.eye(2, dtype=complex)
    y_cur, w_cur = complex(y0), complex(w0)
    for a, b in zip(vertices[:-1], vertices[1:]):
        psi, y_cur, w_cur = transport_segment(
            surface, u_func, a, b, y_cur, w_cur, psi, tol)
    return psi, y_cur, w_cur


class TransferMatrix:
    """Transport result with its path and an accuracy estimate (the
    unimodularity drift, which the exact equation would keep at zero)."""

    def __init__(self, matrix, path, accuracy):
        self.matrix = np.asarray(matrix, dtype=complex)
        self.path = list(path)
        self.accuracy = float(accuracy)

    def __matmul__(self, other):
        return self.matrix @ (other.matrix if isinstance(other, TransferMatrix)
                              else other)


def transport(surface, u_func, path, y0=None, w0=None, tol=1e-11):
    """Transfer matrix along a path from its first vertex; starting
    sheets default to the basepoint sheets when the path starts there."""
    if not path or len(path) == 1:
        return TransferMatrix(np.eye(2), path, 0.0)
    if y0 is None:
        y0, w0 = surface.base_y, surface.base_w
    m, _, _ = transport_polyline(surface, u_func, list(path), y0, w0, tol)
    return TransferMatrix(m, path, abs(np.linalg.det(m) - 1.0))


class Representation:
    """Monodromy matrices of the based generators.  Concatenating loops
    multiplies matrices in reversed order (the transport of gamma1 then
    gamma2 is M(gamma2) M(gamma1))."""

    def __init__(self, surface, u_func, marking, tol=1e-11):
        self.surface = surface
        self.u_func = u_func
        self.tol = tol
        items = list(marking.based_loops.items())

        def build(pair):
            name, loop = pair
            verts = loop.vertices + [loop.vertices[0]]
            m, y_end, w_end = transport_polyline(surface, u_func, verts,
                                                 loop.y0, loop.w0, tol)
            drift = max(abs(y_end - loop.y0) / max(1.0, abs(loop.y0)),
                        abs(w_end - loop.w0) / max(1.0, abs(loop.w0)))
            if drift > 1e-5:
                raise StepFailure(
                    "sheet did not close along %s (drift %.3g)"
                    % (name, drift))
            return name, m

        workers = min(thread_count(), len(items)) if items else 1
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                built = list(pool.map(build, items))
        else:
            built = [build(p) for p in items]
        self.matrices = dict(built)

    def word(self, names):
        """Matrix of a concatenation of named generators; a trailing
        apostrophe inverts a letter."""
        out = np.eye(2, dtype=complex)
        for token in names:
            if token.endswith("'"):
                m = np.linalg.inv(self.matrices[token[:-1]])
            else:
                m = self.matrices[token]
            out = m @ out
        return out

    def trace_of_word(self, names):
        return complex(np.trace(self.word(names)))

    def relation_defect(self):
        """Distance of the surface-group relator from the identity."""
        r = self.word(["alpha1", "beta1", "alpha1'", "beta1'",
                       "alpha2", "beta2", "alpha2'", "beta2'"])
        return np.abs(r - np.eye(2)).max()

    def det_drift(self):
        return max(abs(np.linalg.det(m) - 1.0)
                   for m in self.matrices.values())


def local_monodromy_zero(surface, u_func, zero_index, radius=None,
                         tol=1e-11, turns=1, direction=+1):
    """Scalar local monodromy at a zero of the numerator.

    One x-plane turn around a simple zero multiplies the frame by i and
    flips the sign of the derivative row, because the square root of the
    representative form comes back negated: the raw transport is
    (+/-) i*diag(1,-1), independently of the rest of the surface.  The
    diagonal flip is sheet bookkeeping, not geometry, so it is divided
    out per odd number of turns and the returned matrix is scalar:
    i*I per positive turn, -i*I when the orientation is reversed, the
    identity after four.
    """
    r = surface.n_roots[zero_index]
    others = [q for q in surface.singular_points
              if abs(q - r) > 1e-12]
    if radius is None:
        radius = 0.05 * surface.sep_all
    clear = min(abs(q - r) for q in others)
    radius = min(radius, 0.4 * clear)
    n = 48
    sgn = 1.0 if direction >= 0 else -1.0
    ring = [r + radius * np.exp(sgn * 2j * np.pi * k / (n * 1.0))
            for k in range(n * turns + 1)]
    y0 = complex(np.sqrt(complex(surface.p(ring[0]))))
    w0 = complex(np.sqrt(complex(surface.N(ring[0]))))
    psi, y_end, w_end = transport_polyline(surface, u_func, ring, y0, w0, tol)
    if abs(y_end - y0) > 1e-5 * max(1.0, abs(y0)):
        raise StepFailure("sheet drift %.3g around zero" % abs(y_end - y0))
    want = (-1.0) ** turns
    if abs(w_end - want * w0) > 1e-5 * max(1.0, abs(w0)):
        raise StepFailure("unexpected w holonomy around zero")
    if turns % 2:
        return SIGMA3 @ psi
    return psi


# ---------------------------------------------------------------------------
# the same monodromy out of the x-chart frame


def transport_segment_x(surface, q_func, za, zb, psi, tol=1e-11):
    """One segment of the x-chart transport phi'' + q(x) phi = 0.

    The coefficient is rational in x, so nothing rides along; the only
    points to keep away from are the branch points of the curve, where q
    has poles.  Zeros of the numerator are ordinary points here, which
    is what makes the frame comparison meaningful.
    """
    vel = zb - za
    L = abs(vel)
    if L == 0.0:
        return psi
    t = 0.0
    h = min(1.0, 0.3 * surface.sep_all / L)
    rejects = 0
    while t < 1.0:
        x_here = za + t * vel
        dist = min(abs(x_here - e) for e in surface.p_roots)
        if dist < 0.02 * surface.sep_all:
            raise PathThroughZero(
                "x-chart path passes %.3g from a branch point" % dist)
        h = min(h, 1.0 - t, 0.5 * dist / L)
        if h < 1e-12:
            raise StepFailure("step size underflow at t=%.6f" % t)
        ks = []
        for i in range(7):
            xi = za + (t + _DP_C[i] * h) * vel
            acc = psi
            if i:
                acc = psi + h * sum(a * k for a, k in zip(_DP_A[i], ks))
            A = np.array([[0.0, 1.0], [-q_func(xi), 0.0]], dtype=complex)
            ks.append(vel * (A @ acc))
        p5 = psi + h * sum(b * k for b, k in zip(_DP_B5, ks))
        p4 = psi + h * sum(b * k for b, k in zip(_DP_B4, ks))
        err = np.abs(p5 - p4).max() / max(1.0, np.abs(p5).max())
        if err <= tol:
            t = t + h
            psi = p5
            rejects = 0
        else:
            rejects += 1
            if rejects > 60:
                raise StepFailure("60 consecutive rejected steps")
        h = h * min(5.0, max(0.2, 0.9 * (tol / max(err, 1e-300)) ** 0.2))
    return psi


def transport_polyline_x(surface, q_func, vertices, tol=1e-11):
    phi = np.eye(2, dtype=complex)
    for a, b in zip(vertices[:-1], vertices[1:]):
        phi = transport_segment_x(surface, q_func, a, b, phi, tol)
    return phi


def x_chart_potential(kernel):
    """Coefficient of the x-chart equation: half the kernel's projective
    connection plus the representative quadratic differential."""
    surface = kernel.surface

    def q_func(x):
        return (0.5 * kernel.s_bergman_analytic(x)
                + surface.N(x) / surface.p(x))

    return q_func


def kappa_sign(surface, vertices, y0, w0):
    """Sign returned by the half-power of the representative form after
    continuation along a closed polyline with trivial (y, w) holonomy.

    The two frames differ by a gauge built from kappa = sqrt(w/y); its
    square returns along such a loop but kappa itself may negate, and
    that sign couples the traces.
    """
    y_cur, w_cur = complex(y0), complex(w0)
    kap = cmath.sqrt(w_cur / y_cur)
    start = kap
    closed = list(vertices)
    for a, b in zip(closed[:-1], closed[1:]):
        seg = b - a
        L = abs(seg)
        if L == 0.0:
            continue
        t = 0.0
        while t < 1.0:
            x_here = a + t * seg
            dist = surface.nearest_singular(x_here)[1]
            step = min(1.0 - t, max(0.25 * dist, 0.02 * surface.sep_all) / L)
            t = t + step
            x_new = a + t * seg
            y_new = complex(np.sqrt(complex(surface.p(x_new))))
            if abs(y_new - y_cur) > abs(y_new + y_cur):
                y_new = -y_new
            w_new = complex(np.sqrt(complex(surface.N(x_new))))
            if abs(w_new - w_cur) > abs(w_new + w_cur):
                w_new = -w_new
            k_new = cmath.sqrt(w_new / y_new)
            if abs(k_new - kap) > abs(k_new + kap):
                k_new = -k_new
            if abs(k_new - kap) > 0.6 * abs(kap):
                raise AmbiguousContinuation(
                    "half-power continuation jumped near %s" % x_new)
            y_cur, w_cur, kap = y_new, w_new, k_new
    ratio = kap / start
    if abs(ratio - 1.0) < 1e-6:
        return 1
    if abs(ratio + 1.0) < 1e-6:
        return -1
    raise AmbiguousContinuation(
        "half-power ratio %r is not a sign; holonomy nontrivial?" % ratio)


def frame_trace_defect(surface, marking, u_func, q_func, tol=1e-11,
                       rep=None):
    """Largest relative disagreement between generator traces computed in
    the two frames, with the half-power sign put back in."""
    rep = rep or Representation(surface, u_func, marking, tol)
    rows = {}
    worst = 0.0
    for name, loop in marking.based_loops.items():
        verts = loop.vertices + [loop.vertices[0]]
        phi = transport_polyline_x(surface, q_func, verts, tol)
        sign = kappa_sign(surface, verts, loop.y0, loop.w0)
        tr_psi = complex(np.trace(rep.matrices[name]))
        tr_phi = sign * complex(np.trace(phi))
        defect = abs(tr_psi - tr_phi) / max(1.0, abs(tr_psi))
        rows[name] = (tr_psi, tr_phi, sign)
        worst = max(worst, defect)
    return worst, rows
