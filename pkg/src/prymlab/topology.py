"""Cycles, markings and exact intersection numbers on the double cover.

Loops are polylines in the x-plane lifted to the tower (y, w) by a starting
sheet.  Intersection numbers are computed exactly: vertices are floats,
hence exact rationals, and segment crossings are decided by Fraction
cross-products.  Whether two lifted loops actually meet over a plane
crossing is decided by comparing the continued sheet values; the answer is
an integer, never a float estimate.  Touching or collinear polylines raise
TangencyDetected rather than guessing.

The standard marking for a quasi-real root configuration e1 < ... < e6 uses
counterclockwise tubes: a1 around [e1, e2], a2 around [e3, e4], b2 around
[e4, e5], b1 around [e2, e5], one tube around both zeros of N routed
through a corridor east of all singular points (its class is exactly
anti-invariant), and a twice-traversed bean enclosing one branch point and
one zero, projected and orthogonalized to complete a basis of the
anti-invariant homology with intersection table exactly J/2 over the field
Q(sqrt 2).  The scaling by sqrt 2 on the last pair makes the table uniform;
all coefficients stay exact.
"""

import cmath
import logging
import math
from fractions import Fraction

import numpy as np

from .errors import (
    AmbiguousContinuation,
    CollisionCourse,
    InvalidMove,
    MarkingFailure,
    NontrivialHolonomy,
    NotSymplectic,
    TangencyDetected,
)
from .quadrature import continue_along, continue_sheets
from .surface import Surface

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# exact scalars a + b sqrt(2)


class QSqrt2:
    """Element a + b*sqrt(2) with rational a, b.  Exact field arithmetic."""

    __slots__ = ("a", "b")

    def __init__(self, a=0, b=0):
        self.a = Fraction(a)
        self.b = Fraction(b)

    @staticmethod
    def of(x):
        if isinstance(x, QSqrt2):
            return x
        return QSqrt2(x, 0)

    def __add__(self, other):
        o = QSqrt2.of(other)
        return QSqrt2(self.a + o.a, self.b + o.b)

    __radd__ = __add__

    def __neg__(self):
        return QSqrt2(-self.a, -self.b)

    def __sub__(self, other):
        return self + (-QSqrt2.of(other))

    def __rsub__(self, other):
        return QSqrt2.of(other) + (-self)

    def __mul__(self, other):
        o = QSqrt2.of(other)
        return QSqrt2(self.a * o.a + 2 * self.b * o.b,
                      self.a * o.b + self.b * o.a)

    __rmul__ = __mul__

    def inverse(self):
        d = self.a * self.a - 2 * self.b * self.b
        if d == 0:
            raise ZeroDivisionError("zero element of Q(sqrt2)")
        return QSqrt2(self.a / d, -self.b / d)

    def __truediv__(self, other):
        return self * QSqrt2.of(other).inverse()

    def __eq__(self, other):
        o = QSqrt2.of(other)
        return self.a == o.a and self.b == o.b

    def __hash__(self):
        return hash((self.a, self.b))

    def is_zero(self):
        return self.a == 0 and self.b == 0

    def to_float(self):
        return float(self.a) + float(self.b) * math.sqrt(2.0)

    def __repr__(self):
        if self.b == 0:
            return "%s" % self.a
        return "(%s + %s*sqrt2)" % (self.a, self.b)


HALF = QSqrt2(Fraction(1, 2), 0)
INV_SQRT2 = QSqrt2(0, Fraction(1, 2))  # 1/sqrt2 = sqrt2/2

_ODD_NAMES = ("n1", "n2", "n3")


def _lattice_round(value, den=8, bmax=12):
    """Nearest (a + b sqrt2)/den with integer a and |b| <= bmax."""
    best = None
    for b in range(-bmax, bmax + 1):
        a = round(value * den - b * math.sqrt(2.0))
        err = abs(value - (a + b * math.sqrt(2.0)) / den)
        if best is None or err < best[1]:
            best = (QSqrt2(Fraction(a, den), Fraction(b, den)), err)
    return best


def pair_classes(x, y):
    """Intersection pairing of two classes in marking coordinates; the
    table is exactly J/2 on the anti-invariant basis."""
    tot = QSqrt2(0)
    for i in range(3):
        tot = tot + (x[i] * y[3 + i] - x[3 + i] * y[i]) * HALF
    return tot


# ---------------------------------------------------------------------------
# polyline helpers


def refine_polyline(vertices, max_step):
    out = [complex(vertices[0])]
    for v in vertices[1:]:
        v = complex(v)
        prev = out[-1]
        d = abs(v - prev)
        if d > max_step:
            n = int(math.ceil(d / max_step))
            for k in range(1, n):
                out.append(prev + (v - prev) * (k / n))
        if v != prev:
            out.append(v)
    return out


def winding_number(vertices, point):
    """Winding of a closed polyline around a point (float, rounded)."""
    pts = np.asarray(list(vertices) + [vertices[0]], dtype=complex)
    rel = pts - point
    ang = np.angle(rel[1:] / rel[:-1])
    return int(round(float(np.sum(ang)) / (2.0 * math.pi)))


def point_segment_distance(p, a, b):
    ab = b - a
    den = abs(ab) ** 2
    if den == 0.0:
        return abs(p - a)
    t = ((p - a).real * ab.real + (p - a).imag * ab.imag) / den
    t = min(1.0, max(0.0, t))
    return abs(p - (a + t * ab))


def polyline_min_distance(vertices, point, closed=True):
    pts = list(vertices)
    if closed:
        pts = pts + [pts[0]]
    return min(point_segment_distance(point, a, b)
               for a, b in zip(pts[:-1], pts[1:]))


def route(surface, a, b, clearance, ignore=(), depth=0):
    """Polyline from a to b keeping `clearance` away from singular points.
    Points listed in `ignore` (and the endpoints themselves) are skipped."""
    a, b = complex(a), complex(b)
    if depth > 12:
        raise MarkingFailure("routing recursion exceeded near %s" % a)
    worst = None
    worst_d = clearance
    for s in surface.singular_points:
        if any(abs(s - g) < 1e-9 for g in ignore):
            continue
        if abs(s - a) < 1e-9 or abs(s - b) < 1e-9:
            continue
        d = point_segment_distance(s, a, b)
        if d < worst_d:
            worst, worst_d = s, d
    if worst is None:
        return [a, b]
    ab = b - a
    den = abs(ab) ** 2
    t = ((worst - a).real * ab.real + (worst - a).imag * ab.imag) / den
    t = min(0.9, max(0.1, t))
    foot = a + t * ab
    away = foot - worst
    if abs(away) < 1e-12:
        away = 1j * ab / abs(ab)
    q = worst + away / abs(away) * (1.35 * clearance)
    left = route(surface, a, q, clearance, ignore, depth + 1)
    right = route(surface, q, b, clearance, ignore, depth + 1)
    return left + right[1:]


def _arc(center, radius, a0, a1, ccw, n_per_pi=10):
    """Arc points from angle a0 to a1 rotating ccw (True) or cw."""
    if ccw:
        while a1 < a0:
            a1 += 2.0 * math.pi
    else:
        while a1 > a0:
            a1 -= 2.0 * math.pi
    n = max(2, int(math.ceil(abs(a1 - a0) / math.pi * n_per_pi)))
    return [center + radius * cmath.exp(1j * (a0 + (a1 - a0) * k / n))
            for k in range(n + 1)]


def polyline_tube(points, r, n_per_pi=10):
    """Counterclockwise boundary of the radius-r neighborhood of an open
    polyline.  Outer corners get arcs, inner corners miter joins."""
    pts = [complex(p) for p in points]
    pts = [p for i, p in enumerate(pts) if i == 0 or abs(p - pts[i - 1]) > 1e-12]
    if len(pts) < 2:
        raise ValueError("tube needs at least two distinct points")
    tangents = []
    for a, b in zip(pts[:-1], pts[1:]):
        tangents.append((b - a) / abs(b - a))

    def wall(side):
        # side +1: left of the direction of travel; -1: right
        out = [pts[0] + side * 1j * tangents[0] * r]
        for k in range(1, len(pts) - 1):
            u0, u1 = tangents[k - 1], tangents[k]
            turn = (u0.conjugate() * u1).imag  # >0 left turn
            n0 = side * 1j * u0
            n1 = side * 1j * u1
            if abs(turn) < 1e-12:
                out.append(pts[k] + n1 * r)
                continue
            outer = (side > 0) != (turn > 0)
            if outer:
                out.extend(_arc(pts[k], r, cmath.phase(n0), cmath.phase(n1),
                                turn > 0, n_per_pi))
            else:
                # miter: intersect the two offset lines p0 + t u0 = p1 + s u1
                p0 = pts[k] + n0 * r
                p1 = pts[k] + n1 * r
                d = u0.real * u1.imag - u0.imag * u1.real
                rel = p1 - p0
                t = (rel.real * u1.imag - rel.imag * u1.real) / d
                out.append(p0 + t * u0)
        out.append(pts[-1] + side * 1j * tangents[-1] * r)
        return out

    right = wall(-1)
    left = wall(+1)
    u_end = tangents[-1]
    u_start = tangents[0]
    end_cap = _arc(pts[-1], r, cmath.phase(-1j * u_end),
                   cmath.phase(1j * u_end), True, n_per_pi)
    start_cap = _arc(pts[0], r, cmath.phase(1j * u_start),
                     cmath.phase(-1j * u_start), True, n_per_pi)
    boundary = right + end_cap[1:] + left[::-1] + start_cap[1:]
    # drop the duplicated closing vertex; closure is implicit
    if abs(boundary[0] - boundary[-1]) < 1e-12:
        boundary = boundary[:-1]
    out = [boundary[0]]
    for p in boundary[1:]:
        if abs(p - out[-1]) > 1e-12:
            out.append(p)
    return out


def rotate_start(vertices, key=lambda z: (-z.imag, z.real)):
    """Rotate a closed polyline's vertex list to start at the extremal
    vertex under `key` (default: topmost, then leftmost)."""
    i0 = min(range(len(vertices)), key=lambda i: key(vertices[i]))
    return vertices[i0:] + vertices[:i0]


# ---------------------------------------------------------------------------
# exact crossings


def _frac(z):
    return (Fraction(z.real), Fraction(z.imag))


def _cross(o, p, q):
    return ((p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]))


def _segments(vertices, closed=True):
    pts = list(vertices)
    if closed:
        pts = pts + [pts[0]]
    return [(a, b) for a, b in zip(pts[:-1], pts[1:]) if a != b]


def polyline_crossings(v1, v2, closed1=True, closed2=True):
    """Proper transversal crossings between two polylines.

    Returns a list of (i, t1, j, t2, sign): segment indices, parameters in
    (0, 1) along each segment, and the sign of det(d1, d2).  Raises
    TangencyDetected for any touching, collinear or endpoint contact."""
    seg1 = _segments(v1, closed1)
    seg2 = _segments(v2, closed2)
    s1 = np.array(seg1, dtype=complex)
    s2 = np.array(seg2, dtype=complex)
    min1 = np.minimum(s1[:, 0].real, s1[:, 1].real), np.minimum(s1[:, 0].imag, s1[:, 1].imag)
    max1 = np.maximum(s1[:, 0].real, s1[:, 1].real), np.maximum(s1[:, 0].imag, s1[:, 1].imag)
    min2 = np.minimum(s2[:, 0].real, s2[:, 1].real), np.minimum(s2[:, 0].imag, s2[:, 1].imag)
    max2 = np.maximum(s2[:, 0].real, s2[:, 1].real), np.maximum(s2[:, 0].imag, s2[:, 1].imag)
    ox = (min1[0][:, None] <= max2[0][None, :]) & (min2[0][None, :] <= max1[0][:, None])
    oy = (min1[1][:, None] <= max2[1][None, :]) & (min2[1][None, :] <= max1[1][:, None])
    cand = np.argwhere(ox & oy)
    out = []
    for i, j in cand:
        a, b = seg1[i]
        c, d = seg2[j]
        fa, fb, fc, fd = _frac(a), _frac(b), _frac(c), _frac(d)
        d1 = (fb[0] - fa[0], fb[1] - fa[1])
        d2 = (fd[0] - fc[0], fd[1] - fc[1])
        c1 = _cross(fa, fb, fc)
        c2 = _cross(fa, fb, fd)
        c3 = _cross(fc, fd, fa)
        c4 = _cross(fc, fd, fb)
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if denom == 0:
            # parallel: tangency only if collinear and overlapping
            if c1 == 0:
                lo1 = min(fa[0], fb[0]), min(fa[1], fb[1])
                hi1 = max(fa[0], fb[0]), max(fa[1], fb[1])
                lo2 = min(fc[0], fd[0]), min(fc[1], fd[1])
                hi2 = max(fc[0], fd[0]), max(fc[1], fd[1])
                if lo1[0] <= hi2[0] and lo2[0] <= hi1[0] and \
                   lo1[1] <= hi2[1] and lo2[1] <= hi1[1]:
                    raise TangencyDetected(
                        "collinear overlap between segments %d and %d" % (i, j))
            continue
        strict = ((c1 > 0) != (c2 > 0)) and c1 != 0 and c2 != 0 and \
                 ((c3 > 0) != (c4 > 0)) and c3 != 0 and c4 != 0
        if strict:
            t1 = c3 / (c3 - c4)
            t2 = c1 / (c1 - c2)
            out.append((int(i), float(t1), int(j), float(t2),
                        1 if denom > 0 else -1))
            continue
        if c1 == 0 or c2 == 0 or c3 == 0 or c4 == 0:
            # an endpoint lies on the other segment's line; touching?
            def on_seg(p, u, v):
                return (min(u[0], v[0]) <= p[0] <= max(u[0], v[0]) and
                        min(u[1], v[1]) <= p[1] <= max(u[1], v[1]))
            touch = ((c1 == 0 and on_seg(fc, fa, fb)) or
                     (c2 == 0 and on_seg(fd, fa, fb)) or
                     (c3 == 0 and on_seg(fa, fc, fd)) or
                     (c4 == 0 and on_seg(fb, fc, fd)))
            if touch:
                raise TangencyDetected(
                    "segments %d and %d touch without crossing" % (i, j))
    return out


# ---------------------------------------------------------------------------
# lifted loops and formal combinations


class LiftedLoop:
    """Closed polyline with a starting sheet; lift to the (y, w) tower."""

    def __init__(self, surface, vertices, y0, w0, name="", geom_id=None):
        self.surface = surface
        self.vertices = refine_polyline([complex(v) for v in vertices],
                                        surface.sep_all)
        if abs(self.vertices[0] - self.vertices[-1]) < 1e-12:
            self.vertices = self.vertices[:-1]
        self.y0 = complex(y0)
        self.w0 = complex(w0)
        self.name = name
        self.geom_id = geom_id if geom_id is not None else id(self)

    @property
    def sheets(self):
        if not hasattr(self, "_sheets"):
            closed = self.vertices + [self.vertices[0]]
            self._sheets = continue_along(self.surface, closed, self.y0, self.w0)
        return self._sheets

    def holonomy(self):
        """Signs (sy, sw) comparing the sheet after one traversal."""
        ye, we = self.sheets[-1]
        sy = 1 if abs(ye - self.y0) <= abs(ye + self.y0) else -1
        sw = 1 if abs(we - self.w0) <= abs(we + self.w0) else -1
        m = min(abs(ye - sy * self.y0), abs(we - sw * self.w0))
        if max(abs(ye - sy * self.y0), abs(we - sw * self.w0)) > \
                1e-6 * max(1.0, abs(self.y0), abs(self.w0)):
            raise AmbiguousContinuation("holonomy of %s drifted" % self.name)
        return sy, sw

    def is_closed_on_cover(self):
        return self.holonomy() == (1, 1)

    def mu(self):
        out = LiftedLoop(self.surface, self.vertices, self.y0, -self.w0,
                         name=self.name + "^mu", geom_id=self.geom_id)
        return out

    def reversed(self):
        verts = [self.vertices[0]] + self.vertices[1:][::-1]
        return LiftedLoop(self.surface, verts, self.y0, self.w0,
                          name=self.name + "^-1", geom_id=self.geom_id)

    def point_at(self, i, t):
        a = self.vertices[i]
        b = self.vertices[(i + 1) % len(self.vertices)]
        return a + t * (b - a)

    def sheet_at(self, i, t):
        y, w = self.sheets[i]
        a = self.vertices[i]
        p = self.point_at(i, t)
        if p == a:
            return y, w
        return continue_sheets(self.surface, a, p, y, w)

    def __repr__(self):
        return "LiftedLoop(%s, %d vertices)" % (self.name, len(self.vertices))


class CycleCombo:
    """Formal Q(sqrt2)-combination of lifted loops, a class in homology."""

    def __init__(self, terms=(), name=""):
        self.terms = [(QSqrt2.of(c), l) for c, l in terms
                      if not QSqrt2.of(c).is_zero()]
        self.name = name

    @staticmethod
    def atom(loop, coeff=1):
        return CycleCombo([(coeff, loop)], name=loop.name)

    def __add__(self, other):
        return CycleCombo(self.terms + other.terms)

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, c):
        c = QSqrt2.of(c)
        return CycleCombo([(c * a, l) for a, l in self.terms], name=self.name)

    def named(self, name):
        out = CycleCombo(self.terms, name=name)
        return out

    def simplified(self):
        acc = {}
        order = []
        for c, l in self.terms:
            k = id(l)
            if k not in acc:
                acc[k] = [QSqrt2(0), l]
                order.append(k)
            acc[k][0] = acc[k][0] + c
        return CycleCombo([(acc[k][0], acc[k][1]) for k in order
                           if not acc[k][0].is_zero()], name=self.name)

    def __repr__(self):
        return "CycleCombo(%s: %s)" % (
            self.name, " + ".join("%r*%s" % (c, l.name) for c, l in self.terms))


def _match_sheet(u1, u2, what="sheet"):
    """True if u1 and u2 are the same branch; exact separation required."""
    d_same = abs(u1 - u2)
    d_opp = abs(u1 + u2)
    lo, hi = min(d_same, d_opp), max(d_same, d_opp)
    if lo > 1e-6 * max(hi, 1e-300):
        raise AmbiguousContinuation(
            "%s values not cleanly matched (%g vs %g)" % (what, d_same, d_opp))
    return d_same < d_opp


class IntersectionCalculator:
    """Signed intersection numbers of lifted loops, with caching."""

    def __init__(self, mode="cover"):
        self.mode = mode
        self.cache = {}

    def atoms(self, l1, l2):
        if l1.geom_id == l2.geom_id:
            return 0  # same plane curve: lifts coincide or are disjoint
        key = (id(l1), id(l2))
        if key in self.cache:
            return self.cache[key]
        total = 0
        for i, t1, j, t2, sign in polyline_crossings(l1.vertices, l2.vertices):
            y1, w1 = l1.sheet_at(i, t1)
            y2, w2 = l2.sheet_at(j, t2)
            if not _match_sheet(y1, y2, "y"):
                continue
            if self.mode == "cover" and not _match_sheet(w1, w2, "w"):
                continue
            total += sign
        self.cache[key] = total
        self.cache[(id(l2), id(l1))] = -total
        return total

    def combos(self, c1, c2):
        total = QSqrt2(0)
        for a1, l1 in c1.terms:
            for a2, l2 in c2.terms:
                n = self.atoms(l1, l2)
                if n:
                    total = total + a1 * a2 * n
        return total


# ---------------------------------------------------------------------------
# holonomy helpers


def loop_holonomy(surface, vertices, basepoint_sheets=None):
    """(sy, sw) holonomy signs of a closed polyline, lifted from its first
    vertex on the principal sheets unless sheets are given."""
    if basepoint_sheets is None:
        y0, w0 = surface.principal_sheet(vertices[0])
    else:
        y0, w0 = basepoint_sheets
    loop = LiftedLoop(surface, vertices, y0, w0)
    return loop.holonomy()


def circle(center, radius, n=24, ccw=True):
    sgn = 1.0 if ccw else -1.0
    return [center + radius * cmath.exp(sgn * 2j * math.pi * k / n)
            for k in range(n)]


# ---------------------------------------------------------------------------
# the standard marking


BASE_FRACTIONS = {"a1": 0.22, "a2": 0.22, "b2": 0.30, "b1": 0.38,
                  "tilde": 0.20, "bean": 0.16}


class Marking:
    """Symplectic marking: tubes, lifted atoms, anti-invariant basis combos
    with exact intersection table J/2, and based generators of the
    fundamental group."""

    def __init__(self, surface):
        self.surface = surface
        self.calc = IntersectionCalculator("cover")
        self.base_calc = IntersectionCalculator("base")
        self.tubes = {}
        self.flips = {}
        self.records = []
        self._build()

    # construction ------------------------------------------------------

    def _clear_tube(self, boundary, enclosed):
        s = self.surface
        margin = 1.0 * s.exclusion_radius
        for sing in s.singular_points:
            target = 1 if any(abs(sing - e) < 1e-9 for e in enclosed) else 0
            if winding_number(boundary, sing) != target:
                return False
            if polyline_min_distance(boundary, sing) < margin:
                return False
        return True

    def _make_tube(self, core, enclosed, frac, name):
        s = self.surface
        r = frac * s.sep_all
        floor = 1.25 * s.exclusion_radius
        while True:
            boundary = polyline_tube(core, r)
            boundary = rotate_start(boundary)
            if self._clear_tube(boundary, enclosed):
                self.records.append("tube %s radius %.6g" % (name, r))
                return boundary
            r *= 0.8
            if r < floor:
                raise MarkingFailure(
                    "cannot fit tube %s: radius shrank to %.3g" % (name, r))

    def _anchored_loop(self, boundary, name):
        """Lift a tube starting from sheets continued out of the basepoint."""
        s = self.surface
        tail = route(s, s.basepoint, boundary[0], 1.2 * s.exclusion_radius)
        sheets = continue_along(s, tail, s.base_y, s.base_w)
        y0, w0 = sheets[-1]
        loop = LiftedLoop(s, boundary, y0, w0, name=name)
        self._tails[name] = tail
        return loop

    def _build(self):
        s = self.surface
        self._tails = {}
        e = sorted(s.p_roots, key=lambda z: (z.real, z.imag))
        self.sorted_roots = e
        cuts = [(e[0], e[1]), (e[2], e[3]), (e[4], e[5])]
        self.cuts = cuts

        cores = {
            "a1": [e[0], e[1]],
            "a2": [e[2], e[3]],
            "b2": [e[3], e[4]],
            "b1": [e[1], e[4]],
        }
        enclosed = {
            "a1": [e[0], e[1]],
            "a2": [e[2], e[3]],
            "b2": [e[3], e[4]],
            "b1": [e[1], e[2], e[3], e[4]],
        }
        for name in ("a1", "a2", "b2", "b1"):
            self.tubes[name] = self._make_tube(
                cores[name], enclosed[name], BASE_FRACTIONS[name], name)

        atoms = {}
        for name in ("a1", "a2", "b2", "b1"):
            atoms[name] = self._anchored_loop(self.tubes[name], name)
            if atoms[name].holonomy() != (1, 1):
                raise MarkingFailure("tube %s does not lift closed" % name)

        # orient the base pairs: a_i . b_i = +1 on the curve, others 0
        for i in (1, 2):
            n = self.base_calc.atoms(atoms["a%d" % i], atoms["b%d" % i])
            if n == -1:
                self.tubes["b%d" % i] = (
                    [self.tubes["b%d" % i][0]] + self.tubes["b%d" % i][1:][::-1])
                atoms["b%d" % i] = self._anchored_loop(
                    self.tubes["b%d" % i], "b%d" % i)
                self.flips["b%d" % i] = True
                n = self.base_calc.atoms(atoms["a%d" % i], atoms["b%d" % i])
            if n != 1:
                raise MarkingFailure(
                    "base intersection a%d.b%d = %d" % (i, i, n))
        for x, y in (("a1", "a2"), ("a1", "b2"), ("a2", "b1"), ("b1", "b2")):
            n = self.base_calc.atoms(atoms[x], atoms[y])
            if n != 0:
                raise MarkingFailure("base intersection %s.%s = %d" % (x, y, n))

        # corridor tube around both zeros of N
        r1, r2 = s.n_roots
        x_corr = max(p.real for p in s.singular_points) + 0.8 * s.sep_all
        clearance = BASE_FRACTIONS["tilde"] * s.sep_all + 0.15 * s.sep_all
        leg1 = route(s, r1, complex(x_corr, r1.imag), clearance, ignore=(r1, r2))
        leg2 = [complex(x_corr, r1.imag), complex(x_corr, r2.imag)]
        leg3 = route(s, complex(x_corr, r2.imag), r2, clearance, ignore=(r1, r2))
        core = leg1 + leg2[1:] + leg3[1:]
        self.tubes["tilde"] = self._make_tube(
            core, [r1, r2], BASE_FRACTIONS["tilde"], "tilde")
        atoms["tilde"] = self._anchored_loop(self.tubes["tilde"], "tilde")
        if atoms["tilde"].holonomy() != (1, 1):
            raise MarkingFailure("corridor tube does not lift closed")

        self.atoms = atoms
        self.base_a = [CycleCombo.atom(atoms["a1"]).named("a1"),
                       CycleCombo.atom(atoms["a2"]).named("a2")]
        self.base_b = [CycleCombo.atom(atoms["b1"]).named("b1"),
                       CycleCombo.atom(atoms["b2"]).named("b2")]

        def minus(name, half=HALF):
            l = atoms[name]
            return CycleCombo([(half, l), (-half, l.mu())],
                              name=name + "-")

        a1m = minus("a1")
        a2m = minus("a2")
        b1m = minus("b1")
        b2m = minus("b2")
        a3m = minus("tilde").scale(INV_SQRT2).named("a3-")

        # intersection table of what we have so far
        pre = [a1m, a2m, a3m, b1m, b2m]
        for i, ci in enumerate(pre):
            for j, cj in enumerate(pre):
                got = self.calc.combos(ci, cj)
                want = QSqrt2(0)
                if (i, j) == (0, 3) or (i, j) == (1, 4):
                    want = HALF
                if (i, j) == (3, 0) or (i, j) == (4, 1):
                    want = -HALF
                if got != want:
                    raise MarkingFailure(
                        "pre-table entry (%s,%s) = %r, want %r"
                        % (ci.name, cj.name, got, want))

        b3m = self._complete_tilde_pair(a1m, a2m, a3m, b1m, b2m)

        self.hminus = [a1m.named("a1-"), a2m.named("a2-"), a3m,
                       b1m.named("b1-"), b2m.named("b2-"), b3m.named("b3-")]
        self.K = [[self.calc.combos(x, y) for y in self.hminus]
                  for x in self.hminus]
        self._verify_table()
        self._build_based_loops()

    def _complete_tilde_pair(self, a1m, a2m, a3m, b1m, b2m):
        s = self.surface
        e = self.sorted_roots
        pairs = []
        for k, ek in enumerate(e):
            for m, rm in enumerate(s.n_roots):
                pairs.append((round(abs(ek - rm), 9), k, m))
        pairs.sort()
        last_error = None
        for _, k, m in pairs:
            ek, rm = e[k], s.n_roots[m]
            for frac in (BASE_FRACTIONS["bean"], 0.13):
                try:
                    b3m = self._try_bean(ek, rm, frac,
                                         a1m, a2m, a3m, b1m, b2m)
                except (MarkingFailure, TangencyDetected,
                        AmbiguousContinuation) as exc:
                    last_error = exc
                    continue
                if b3m is not None:
                    self.records.append(
                        "bean through root %d and zero %d radius frac %.3g"
                        % (k, m, frac))
                    return b3m
        raise MarkingFailure("no bean candidate completed the marking: %r"
                             % (last_error,))

    def _try_bean(self, ek, rm, frac, a1m, a2m, a3m, b1m, b2m):
        s = self.surface
        clearance = frac * s.sep_all + 0.1 * s.sep_all
        core = route(s, ek, rm, clearance, ignore=(ek, rm))
        boundary = self._make_tube(core, [ek, rm], frac, "bean")
        tail = route(s, s.basepoint, boundary[0], 1.2 * s.exclusion_radius)
        sheets = continue_along(s, tail, s.base_y, s.base_w)
        y0, w0 = sheets[-1]
        single = LiftedLoop(s, boundary, y0, w0, name="bean")
        if single.holonomy() != (-1, -1):
            return None
        doubled = LiftedLoop(s, boundary + boundary, y0, w0,
                             name="bean2", geom_id=("bean2", id(boundary)))
        if doubled.holonomy() != (1, 1):
            raise MarkingFailure("doubled bean fails to close")
        X = CycleCombo([(HALF, doubled), (-HALF, doubled.mu())], name="X")
        tau = self.calc.combos(a3m, X)
        if tau.is_zero():
            return None
        t1 = self.calc.combos(a1m, X)
        t2 = self.calc.combos(a2m, X)
        u1 = self.calc.combos(b1m, X)
        u2 = self.calc.combos(b2m, X)
        Y = (X - b1m.scale(2 * t1) - b2m.scale(2 * t2)
             + a1m.scale(2 * u1) + a2m.scale(2 * u2))
        b3m = Y.scale((QSqrt2.of(2) * tau).inverse()).simplified()
        # acceptance of the candidate is decided by the full table
        basis = [a1m, a2m, a3m, b1m, b2m, b3m]
        for i in range(6):
            for j in range(6):
                got = self.calc.combos(basis[i], basis[j])
                want = QSqrt2(0)
                if j == i + 3:
                    want = HALF
                if i == j + 3:
                    want = -HALF
                if got != want:
                    return None
        self.tubes["bean"] = boundary
        self.atoms["bean2"] = doubled
        self._tails["bean"] = tail
        return b3m

    def _verify_table(self):
        for i in range(6):
            for j in range(6):
                want = QSqrt2(0)
                if j == i + 3:
                    want = HALF
                if i == j + 3:
                    want = -HALF
                if self.K[i][j] != want:
                    raise MarkingFailure(
                        "intersection table entry (%d,%d) = %r"
                        % (i, j, self.K[i][j]))

    # based generators ----------------------------------------------------

    def _build_based_loops(self):
        """Based generators of the fundamental group.

        All four loops share a single connector from the basepoint to a
        neck point above the middle cut and are pairwise disjoint away
        from it.  Two are ovals around the outer cuts; two are tunnels
        that dive through one cut and resurface through the middle one.
        Reading the boundary of the complement disk off the cyclic ray
        order at the neck gives the word
        [east_oval^-1, east_tunnel^-1] [west_tunnel^-1, west_oval],
        so the names below are assigned the orientations that turn it
        into the plain commutator relation [a1,b1][a2,b2] = 1.
        """
        s = self.surface
        e = [z.real for z in self.sorted_roots]
        u = s.sep_all
        m1 = 0.5 * (e[0] + e[1])
        m2 = 0.5 * (e[2] + e[3])
        m3 = 0.5 * (e[4] + e[5])
        g1 = 0.5 * (e[1] + e[2])
        g2 = 0.5 * (e[3] + e[4])
        P = complex(m2, 0.50 * u)

        def pt(x, h):
            return complex(x, h * u)

        west_oval = [P, pt(e[0] - 0.5 * u, 0.50), pt(e[0] - 0.5 * u, -0.40),
                     pt(g1 - 0.10 * u, -0.40), pt(g1 - 0.10 * u, 0.10), P]
        west_tunnel = [P, pt(g1 - 0.05 * u, 0.28), pt(e[1] - 0.2 * u, 0.10),
                       pt(m1, 0.0), pt(m1 - 0.2 * u, -0.25),
                       pt(m2, -0.25), pt(m2 - 0.15 * u, 0.0),
                       pt(m2 - 0.12 * u, 0.20), P]
        east_oval = [P, pt(m2 + 0.3 * u, 0.15), pt(g2, 0.15),
                     pt(g2, -0.35), pt(e[5] + 0.4 * u, -0.35),
                     pt(e[5] + 0.4 * u, 0.50), pt(m2 + 0.4 * u, 0.85),
                     pt(m2 - 0.2 * u, 0.90), P]
        east_tunnel = [P, pt(e[3] + 0.3 * u, 0.20), pt(m3, 0.12),
                       pt(m3, 0.0), pt(m3, -0.50), pt(m2 + 0.1 * u, -0.50),
                       pt(m2 + 0.1 * u, 0.0), pt(m2 + 0.1 * u, 0.25), P]
        interior = {
            "alpha1": east_oval[::-1],
            "beta1": east_tunnel[::-1],
            "alpha2": west_tunnel[::-1],
            "beta2": west_oval,
        }
        tau = route(s, s.basepoint, P, 1.4 * s.exclusion_radius)
        self.neck = {"point": P, "connector": list(tau)}
        self.based_loops = {}
        for gen in ("alpha1", "beta1", "alpha2", "beta2"):
            lv = interior[gen]
            for q in lv[1:-1]:
                s.check_clear(q, factor=1.0)
            verts = tau + lv[1:-1] + tau[::-1]
            loop = LiftedLoop(s, verts, s.base_y, s.base_w, name=gen)
            sy, sw = loop.holonomy()
            if (sy, sw) != (1, 1):
                raise MarkingFailure("based loop %s has holonomy (%d,%d)"
                                     % (gen, sy, sw))
            self.based_loops[gen] = loop
        self.based_classes = {gen: self.class_in_hminus(loop)
                              for gen, loop in self.based_loops.items()}
        self._check_based_pairings()

    def _check_based_pairings(self):
        order = ("alpha1", "beta1", "alpha2", "beta2")
        want = {("alpha1", "beta1"): HALF, ("alpha2", "beta2"): HALF}
        for i, gi in enumerate(order):
            for gj in order[i + 1:]:
                got = pair_classes(self.based_classes[gi],
                                   self.based_classes[gj])
                if got != want.get((gi, gj), QSqrt2(0)):
                    raise MarkingFailure(
                        "based pairing %s.%s = %r" % (gi, gj, got))

    # queries --------------------------------------------------------------

    def hol_w(self, vertices):
        """w-holonomy sign of a closed polyline."""
        _, sw = loop_holonomy(self.surface, vertices)
        return sw

    def class_in_hminus(self, loop, rel_tol=1e-9):
        """Coefficients of the odd part of a lifted closed loop in the
        marking basis.

        The three anti-invariant periods of the loop determine the class;
        solving against the cached basis periods and rounding onto the
        (1/8)Z[sqrt 2] coefficient lattice makes the result exact.  The
        rounding margin is certified: lattice points with small
        coefficients are no closer than ~4e-3, while the solve residual
        is at quadrature level.
        """
        sy, sw = loop.holonomy()
        if sw != 1:
            raise NontrivialHolonomy(
                "loop does not lift to the cover (w-holonomy -1)")
        if sy != 1:
            raise NontrivialHolonomy(
                "polyline does not close on the curve (y-holonomy -1)")
        engine, system = self._period_system(rel_tol)
        vals = engine.atom_integrals(loop, list(_ODD_NAMES))
        res = np.linalg.solve(system, np.concatenate([vals.real, vals.imag]))
        out = []
        for val in res:
            q, err = _lattice_round(float(val))
            if err > 1e-6:
                raise AmbiguousContinuation(
                    "class coordinate %.9g sits %.2g off the lattice"
                    % (val, err))
            out.append(q)
        return out

    def _period_system(self, rel_tol):
        if getattr(self, "_psys", None) is None:
            from .periods import PeriodEngine
            engine = PeriodEngine(self.surface, rel_tol=rel_tol)
            m6 = np.array([engine.combo_integrals(c, list(_ODD_NAMES))
                           for c in self.hminus])
            self._psys = (engine, np.vstack([m6.T.real, m6.T.imag]))
        return self._psys

    def dual_basis_combo(self, i):
        """Poisson-dual cycle of basis element i: K-pairing inverse."""
        if i < 3:
            return self.hminus[3 + i].scale(-2)
        return self.hminus[i - 3].scale(2)


def standard_marking(surface):
    return Marking(surface)


# ---------------------------------------------------------------------------
# symplectic transformations of the marking


J4 = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]],
              dtype=int)


class TransformedMarking:
    """Marking whose base pairs are integer combinations of another
    marking's; produced by a symplectic change of homology basis.  Based
    fundamental-group operations are unavailable on combinations."""

    def __init__(self, marking, sigma):
        sigma = np.asarray(sigma, dtype=int)
        if sigma.shape != (4, 4):
            raise NotSymplectic("expected a 4x4 integer matrix")
        if not np.array_equal(sigma.T @ J4 @ sigma, J4):
            raise NotSymplectic("matrix does not preserve the pairing")
        self.parent = marking
        self.sigma = sigma
        self.surface = marking.surface
        D = sigma[0:2, 0:2]
        C = sigma[0:2, 2:4]
        B = sigma[2:4, 0:2]
        A = sigma[2:4, 2:4]
        old_a = [marking.hminus[0], marking.hminus[1]]
        old_b = [marking.hminus[3], marking.hminus[4]]
        new_a = []
        new_b = []
        for i in range(2):
            acc = CycleCombo([], name="a%d-'" % (i + 1))
            for j in range(2):
                acc = acc + old_a[j].scale(int(D[i, j])) \
                          + old_b[j].scale(int(C[i, j]))
            new_a.append(acc.simplified().named("a%d-'" % (i + 1)))
        for i in range(2):
            acc = CycleCombo([], name="b%d-'" % (i + 1))
            for j in range(2):
                acc = acc + old_a[j].scale(int(B[i, j])) \
                          + old_b[j].scale(int(A[i, j]))
            new_b.append(acc.simplified().named("b%d-'" % (i + 1)))
        self.hminus = [new_a[0], new_a[1], marking.hminus[2],
                       new_b[0], new_b[1], marking.hminus[5]]
        self.base_a = []
        self.base_b = []
        for i in range(2):
            acc = CycleCombo([], name="a%d'" % (i + 1))
            for j in range(2):
                acc = acc + marking.base_a[j].scale(int(D[i, j])) \
                          + marking.base_b[j].scale(int(C[i, j]))
            self.base_a.append(acc.simplified().named("a%d'" % (i + 1)))
        for i in range(2):
            acc = CycleCombo([], name="b%d'" % (i + 1))
            for j in range(2):
                acc = acc + marking.base_a[j].scale(int(B[i, j])) \
                          + marking.base_b[j].scale(int(A[i, j]))
            self.base_b.append(acc.simplified().named("b%d'" % (i + 1)))
        self.calc = marking.calc
        K = [[self.calc.combos(x, y) for y in self.hminus]
             for x in self.hminus]
        for i in range(6):
            for j in range(6):
                want = QSqrt2(0)
                if j == i + 3:
                    want = HALF
                if i == j + 3:
                    want = -HALF
                if K[i][j] != want:
                    raise NotSymplectic(
                        "transformed table entry (%d,%d) = %r" % (i, j, K[i][j]))
        self.K = K

    @property
    def based_loops(self):
        raise InvalidMove(
            "based generators are not defined for combined cycles")

    def dual_basis_combo(self, i):
        if i < 3:
            return self.hminus[3 + i].scale(-2)
        return self.hminus[i - 3].scale(2)


def apply_sp(marking, sigma):
    return TransformedMarking(marking, sigma)


# ---------------------------------------------------------------------------
# carrying a marking to a nearby surface


class SimpleMarking:
    """Marking data frozen from another surface: the same polylines with
    starting sheets re-matched on a nearby surface."""

    def __init__(self, surface, hminus, base_a, base_b, based_loops,
                 neck=None):
        self.surface = surface
        self.hminus = hminus
        self.base_a = base_a
        self.base_b = base_b
        self.based_loops = based_loops
        self.neck = neck

    def dual_basis_combo(self, i):
        if i < 3:
            return self.hminus[3 + i].scale(-2)
        return self.hminus[i - 3].scale(2)


def _nearest_branch(value, anchor, what):
    if abs(value - anchor) <= abs(value + anchor):
        out, other = value, -value
    else:
        out, other = -value, value
    if abs(out - anchor) > 0.5 * abs(other - anchor):
        raise AmbiguousContinuation(
            "%s anchor cannot be carried to the nearby surface" % what)
    return out


def _segment_clearance(vertices, point):
    a = np.asarray(vertices, dtype=complex)
    b = np.roll(a, -1)
    d = b - a
    L2 = (d * d.conjugate()).real
    L2[L2 == 0.0] = 1.0
    t = ((point - a) * d.conjugate()).real / L2
    t = np.clip(t, 0.0, 1.0)
    return np.min(np.abs(point - (a + t * d)))


def reanchor(marking, new_surface):
    """Reuse a marking's polylines on a nearby surface of the same family.
    Starting sheets are re-matched branch by branch; raises CollisionCourse
    when a singular point of the new surface has drifted into a polyline."""
    combos_a = list(marking.base_a)
    combos_b = list(marking.base_b)
    all_combos = list(marking.hminus) + combos_a + combos_b
    atoms = {}
    for combo in all_combos:
        for _, loop in combo.terms:
            atoms.setdefault(id(loop), loop)
    try:
        carried_based = dict(marking.based_loops or {})
    except InvalidMove:
        carried_based = {}
    margin = 0.5 * marking.surface.exclusion_radius
    for loop in list(atoms.values()) + list(carried_based.values()):
        for sing in new_surface.singular_points:
            if _segment_clearance(loop.vertices, sing) < margin:
                raise CollisionCourse(
                    "singular point %s sits on the carried polyline %s"
                    % (sing, loop.name))

    def clone_loop(loop):
        v0 = loop.vertices[0]
        y0 = _nearest_branch(np.sqrt(complex(new_surface.p(v0))), loop.y0,
                             "y(%s)" % loop.name)
        w0 = _nearest_branch(np.sqrt(complex(new_surface.N(v0))), loop.w0,
                             "w(%s)" % loop.name)
        out = LiftedLoop(new_surface, loop.vertices, y0, w0,
                         name=loop.name, geom_id=loop.geom_id)
        return out

    clones = {k: clone_loop(l) for k, l in atoms.items()}

    def carry(combo):
        return CycleCombo([(c, clones[id(l)]) for c, l in combo.terms],
                          name=combo.name)

    based = None
    if carried_based:
        based = {gen: clone_loop(loop)
                 for gen, loop in carried_based.items()}
    return SimpleMarking(new_surface,
                         [carry(c) for c in marking.hminus],
                         [carry(c) for c in combos_a],
                         [carry(c) for c in combos_b],
                         based,
                         neck=getattr(marking, "neck", None))


# ---------------------------------------------------------------------------
# generator adjustment through a zero


def adjust_generator(marking, gen_name, zero_index):
    """Compose a based generator with a small loop around a zero of N.
    The result has w-holonomy -1; applying the move twice restores a loop
    homologous to the original."""
    s = marking.surface
    if gen_name not in marking.based_loops:
        raise InvalidMove("unknown generator %r" % gen_name)
    if not 0 <= zero_index < len(s.n_roots):
        raise InvalidMove("no zero with index %r" % zero_index)
    r = s.n_roots[zero_index]
    loop = marking.based_loops[gen_name]
    try:
        approach = route(s, s.basepoint, r + 0.15 * s.sep_all * 1j,
                         1.2 * s.exclusion_radius, ignore=(r,))
    except MarkingFailure:
        raise InvalidMove("zero %d is not reachable from the basepoint"
                          % zero_index)
    rad = abs(approach[-1] - r)
    ang0 = cmath.phase(approach[-1] - r)
    n = 24
    ring = [r + rad * cmath.exp(1j * (ang0 + 2.0 * math.pi * k / n))
            for k in range(n)]
    detour = approach + ring[1:] + [ring[0]] + approach[::-1][1:]
    verts = loop.vertices + detour[1:]
    return LiftedLoop(s, verts, s.base_y, s.base_w,
                      name=loop.name + "*zero%d" % zero_index)


# ---------------------------------------------------------------------------
# braid path for a pair of zeros


def braid_zeros_path(surface, steps=16, direction=+1):
    """Surfaces along a half-turn rotation of the two zeros of N about
    their midpoint; after the last step the zeros have exchanged and the
    numerator returns to itself.  direction +1 rotates counterclockwise."""
    r1, r2 = surface.n_roots
    c2 = complex(surface.n_coeffs[2])
    mid = 0.5 * (r1 + r2)
    # continuous collision guard at twice the step resolution
    for jj in range(2 * steps + 1):
        phi = direction * math.pi * jj / (2 * steps)
        rot = cmath.exp(1j * phi)
        for q in (mid + (r1 - mid) * rot, mid + (r2 - mid) * rot):
            for e in surface.p_roots:
                if abs(q - e) < 1.2 * surface.exclusion_radius:
                    raise CollisionCourse(
                        "zero would pass within the exclusion disk of a "
                        "branch point near angle %.3f" % phi)
    out = []
    for j in range(steps + 1):
        phi = direction * math.pi * j / steps
        rot = cmath.exp(1j * phi)
        q1 = mid + (r1 - mid) * rot
        q2 = mid + (r2 - mid) * rot
        coeffs = [c2 * q1 * q2, -c2 * (q1 + q2), c2]
        out.append(Surface(list(surface.p_roots), coeffs,
                           basepoint=surface.basepoint_spec))
    return out
