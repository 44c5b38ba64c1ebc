"""Genus-2 curves carrying a quadratic differential, and their double cover.

A surface bundles a monic degree-6 polynomial p with distinct roots (the
hyperelliptic curve y^2 = p(x)) and a quadratic numerator N (the quadratic
differential Q = N(x) dx^2 / p(x), which has 4 simple zeros and no other
zeros or poles when N has distinct roots, N is genuinely quadratic, and no
root of N meets a root of p).  The square root of Q lives on the double
cover cut out by w^2 = N(x); there

    v = w dx / y,    v^2 = Q,

is a single-valued differential.  Over the x-plane the pair (y, w) ranges
over four sheets; the cover has genus 5 and carries the involution
mu: (x, y, w) -> (x, y, -w).

Everything downstream routes paths in the x-plane, so the surface exposes
the singular x-values (roots of p and N), the minimal separation sep_all
between them, and exclusion disks of radius 0.1 * sep_all that paths must
avoid.  Local evaluation returns the x-chart representatives of 1/y, w,
Q and the Schwarzian derivative of the flat coordinate z = int v.
"""

import cmath
import hashlib
import json
import logging

import numpy as np

from .errors import (
    DegenerateZeros,
    DuplicateRoots,
    NearSingularPoint,
    ZeroAtBranchPoint,
)

logger = logging.getLogger(__name__)

GENUS = 2
COVER_GENUS = 4 * GENUS - 3  # genus of the w-cover for 4 simple zeros


def _as_complex_array(values, n, what):
    arr = np.asarray(values, dtype=complex).reshape(-1)
    if arr.size != n:
        raise ValueError("expected %d %s, got %d" % (n, what, arr.size))
    return arr


def _pair_to_complex(pair):
    if isinstance(pair, (list, tuple)) and len(pair) == 2:
        return complex(float(pair[0]), float(pair[1]))
    raise ValueError("expected [re, im] pair, got %r" % (pair,))


def _complex_to_pair(z):
    z = complex(z)
    return [z.real, z.imag]


class Surface:
    """Validated curve data with cached derived quantities."""

    def __init__(self, p_roots, n_coeffs, basepoint="auto"):
        self.p_roots = _as_complex_array(p_roots, 6, "curve roots")
        self.n_coeffs = _as_complex_array(n_coeffs, 3, "numerator coefficients")
        self._validate()
        self.basepoint_spec = basepoint
        self.basepoint = self._resolve_basepoint(basepoint)
        y0, w0 = self.principal_sheet(self.basepoint)
        self.base_y = y0
        self.base_w = w0

    # -- validation -----------------------------------------------------

    def _validate(self):
        e = self.p_roots
        scale = 1.0 + max(abs(z) for z in e)
        for i in range(6):
            for j in range(i + 1, 6):
                if abs(e[i] - e[j]) <= 1e-8 * scale:
                    raise DuplicateRoots(
                        "curve roots %d and %d coincide within 1e-8 of scale" % (i, j)
                    )
        c0, c1, c2 = self.n_coeffs
        cscale = 1.0 + max(abs(c0), abs(c1), abs(c2))
        if abs(c2) <= 1e-12 * cscale:
            raise DegenerateZeros("leading numerator coefficient vanishes")
        if abs(c1 * c1 - 4.0 * c0 * c2) <= 1e-10 * cscale * cscale:
            raise DegenerateZeros("numerator has a double zero")
        for r in self.n_roots:
            for ei in e:
                if abs(r - ei) <= 1e-8 * (1.0 + abs(r)):
                    raise ZeroAtBranchPoint(
                        "zero at %s collides with branch point %s" % (r, ei)
                    )

    # -- basic polynomial data -------------------------------------------

    @property
    def n_roots(self):
        """The two zeros of the numerator, sorted by (Re, Im)."""
        if not hasattr(self, "_n_roots"):
            c0, c1, c2 = self.n_coeffs
            d = cmath.sqrt(c1 * c1 - 4.0 * c0 * c2)
            r1 = (-c1 + d) / (2.0 * c2)
            r2 = (-c1 - d) / (2.0 * c2)
            self._n_roots = sorted((r1, r2), key=lambda z: (z.real, z.imag))
        return self._n_roots

    @property
    def p_coeffs(self):
        """Monic coefficients of p, ascending: p[k] multiplies x^k."""
        if not hasattr(self, "_p_coeffs"):
            c = np.poly(self.p_roots)  # descending, leading 1
            self._p_coeffs = c[::-1].astype(complex)
        return self._p_coeffs

    def p(self, x):
        x = np.asarray(x, dtype=complex)
        res = np.ones_like(x)
        for e in self.p_roots:
            res = res * (x - e)
        return res

    def dp(self, x):
        x = np.asarray(x, dtype=complex)
        total = np.zeros_like(x)
        for i in range(6):
            term = np.ones_like(x)
            for j in range(6):
                if j != i:
                    term = term * (x - self.p_roots[j])
            total = total + term
        return total

    def N(self, x):
        c0, c1, c2 = self.n_coeffs
        x = np.asarray(x, dtype=complex)
        return c0 + x * (c1 + x * c2)

    def dN(self, x):
        c0, c1, c2 = self.n_coeffs
        x = np.asarray(x, dtype=complex)
        return c1 + 2.0 * c2 * x

    # -- geometry of the singular set ------------------------------------

    @property
    def singular_points(self):
        """Roots of p and N together: the x-values paths must avoid."""
        if not hasattr(self, "_singular"):
            self._singular = list(self.p_roots) + list(self.n_roots)
        return self._singular

    @property
    def sep_all(self):
        if not hasattr(self, "_sep_all"):
            pts = self.singular_points
            self._sep_all = min(
                abs(pts[i] - pts[j])
                for i in range(len(pts))
                for j in range(i + 1, len(pts))
            )
        return self._sep_all

    @property
    def exclusion_radius(self):
        return 0.1 * self.sep_all

    def nearest_singular(self, x):
        x = complex(x)
        best = min(self.singular_points, key=lambda s: abs(x - s))
        return best, abs(x - best)

    def check_clear(self, x, factor=1.0):
        """Raise NearSingularPoint if x sits inside a (scaled) exclusion disk."""
        s, d = self.nearest_singular(x)
        if d < factor * self.exclusion_radius:
            raise NearSingularPoint(
                "point %s within %.3g of singular %s" % (x, d, s)
            )
        return d

    def _resolve_basepoint(self, spec):
        if spec == "auto" or spec is None:
            c = sum(self.singular_points) / len(self.singular_points)
            x0 = c + 2.0j * self.sep_all
            # nudge upward if the centroid offset still lands near something
            while True:
                _, d = self.nearest_singular(x0)
                if d >= self.exclusion_radius * 1.5:
                    return x0
                x0 = x0 + 0.5j * self.sep_all
        x0 = complex(spec)
        self.check_clear(x0)
        return x0

    # -- sheets and local data -------------------------------------------

    def principal_sheet(self, x):
        """Principal square roots (y, w) over x."""
        return cmath.sqrt(complex(self.p(x))), cmath.sqrt(complex(self.N(x)))

    def check_point(self, x, y, w):
        """Verify (x, y, w) lies on the four-sheeted tower."""
        px = complex(self.p(x))
        nx = complex(self.N(x))
        tol_p = 1e-10 * (1.0 + abs(px))
        tol_n = 1e-10 * (1.0 + abs(nx))
        if abs(y * y - px) > tol_p:
            raise ValueError("y^2 - p(x) = %g exceeds tolerance" % abs(y * y - px))
        if abs(w * w - nx) > tol_n:
            raise ValueError("w^2 - N(x) = %g exceeds tolerance" % abs(w * w - nx))

    @property
    def cover_zeros(self):
        """The four zeros of v on the cover: (x, y, 0) over each root of N."""
        if not hasattr(self, "_cover_zeros"):
            out = []
            for r in self.n_roots:
                y = cmath.sqrt(complex(self.p(r)))
                out.append((r, y, 0.0))
                out.append((r, -y, 0.0))
            self._cover_zeros = out
        return self._cover_zeros

    def involution(self, point):
        """The cover involution (x, y, w) -> (x, y, -w)."""
        x, y, w = point
        return (x, y, -w)

    def log_deriv_sums(self, x):
        """sum 1/(x-e), sum 1/(x-e)^2 over curve roots, same over zeros."""
        x = np.asarray(x, dtype=complex)
        sp = np.zeros_like(x)
        sp2 = np.zeros_like(x)
        for e in self.p_roots:
            d = 1.0 / (x - e)
            sp = sp + d
            sp2 = sp2 + d * d
        sn = np.zeros_like(x)
        sn2 = np.zeros_like(x)
        for r in self.n_roots:
            d = 1.0 / (x - r)
            sn = sn + d
            sn2 = sn2 + d * d
        return sp, sp2, sn, sn2

    def eval_local(self, x):
        """Chart representatives at x (sheet-independent pieces).

        Returns a dict with p, dp, N, dN, Q_rep = N/p and Sv_rep, the
        Schwarzian derivative of the flat coordinate z = int w dx/y taken
        in the x-chart.  With L = d/dx log(w/y) = (sn - sp)/2 one has
        Sv_rep = L' - L^2/2 = (sp2 - sn2)/2 - (sn - sp)^2/8.
        """
        px = self.p(x)
        nx = self.N(x)
        sp, sp2, sn, sn2 = self.log_deriv_sums(x)
        mu = 0.5 * (sn - sp)
        sv = 0.5 * (sp2 - sn2) - 0.5 * mu * mu
        return {
            "p": px,
            "dp": self.dp(x),
            "N": nx,
            "dN": self.dN(x),
            "Q_rep": nx / px,
            "Sv_rep": sv,
        }

    # -- serialization ----------------------------------------------------

    def canonical_state(self):
        return {
            "p_roots": [_complex_to_pair(z) for z in self.p_roots],
            "n_coeffs": [_complex_to_pair(z) for z in self.n_coeffs],
            "basepoint": _complex_to_pair(self.basepoint),
        }

    def canonical_json(self):
        return json.dumps(self.canonical_state(), sort_keys=True,
                          separators=(",", ":"))

    def content_hash(self):
        return hashlib.sha256(self.canonical_json().encode("ascii")).hexdigest()

    def to_dict(self):
        d = {
            "p_roots": [_complex_to_pair(z) for z in self.p_roots],
            "n_coeffs": [_complex_to_pair(z) for z in self.n_coeffs],
        }
        if self.basepoint_spec == "auto" or self.basepoint_spec is None:
            d["basepoint"] = "auto"
        else:
            d["basepoint"] = _complex_to_pair(self.basepoint)
        return d

    @classmethod
    def from_dict(cls, data, strict=False):
        known = {"p_roots", "n_coeffs", "basepoint", "marking"}
        if strict:
            extra = set(data) - known
            if extra:
                raise ValueError("unknown surface fields: %s" % sorted(extra))
        if "p_roots" not in data or "n_coeffs" not in data:
            raise ValueError("surface data needs p_roots and n_coeffs")
        p_roots = [_pair_to_complex(v) for v in data["p_roots"]]
        n_coeffs = [_pair_to_complex(v) for v in data["n_coeffs"]]
        bp = data.get("basepoint", "auto")
        if bp != "auto" and bp is not None:
            bp = _pair_to_complex(bp)
        return cls(p_roots, n_coeffs, basepoint=bp)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, strict=False):
        with open(path) as fh:
            data = json.load(fh)
        return cls.from_dict(data, strict=strict)

    def __repr__(self):
        return "Surface(sep=%.4g, hash=%s)" % (self.sep_all, self.content_hash()[:12])


def example_surface():
    """The reference surface used throughout the test suite."""
    return Surface(
        p_roots=[0.0, 1.0, -1.0, 2.0, -2.0, 3.0],
        n_coeffs=[2.0, 1.0j, 1.0],
    )
