"""Adaptive contour quadrature with square-root sheet tracking.

Integrands live on the four-sheeted tower (y, w) over the x-plane, with
y^2 = p(x) and w^2 = N(x).  A panel evaluates a Gauss7/Kronrod15 pair on a
straight sub-segment; the sheet data is carried through the panel by sign
alignment of principal square roots at the 15 interior nodes plus the two
endpoints.  Alignment is trusted only while consecutive samples move less
than two thirds of the local magnitude (a 3x safety margin against hopping
to the wrong sheet between samples); otherwise the panel is bisected.  The
error model is the usual scaled Kronrod-Gauss difference.

Segments that end exactly at a zero of N get a dedicated rule: under
x = r + s^2 (x_c - r) the differential v and its reciprocal become smooth
in s, with w(s) = sigma * s * sqrt(d (N'(r) + c2 s^2 d)) evaluated on a
continuously aligned branch and the sign sigma matched at the regular end.
"""

import logging

import numpy as np

from .errors import AmbiguousContinuation, PrecisionLoss

logger = logging.getLogger(__name__)

# Kronrod 15 nodes (ascending) and weights, Gauss 7 embedded at odd indices.
_XK = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0, 0.207784955007898, 0.405845151377397,
    0.586087235467691, 0.741531185599394, 0.864864423359769,
    0.949107912342759, 0.991455371120813,
])
_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529,
])
_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870,
])
_GAUSS_IDX = np.arange(1, 15, 2)

MAX_PANELS = 2 ** 14


def align_signs(vals, anchor):
    """Flip signs of a sample sequence of square roots so it is continuous
    and starts at the branch of `anchor`.  Returns the aligned array and the
    worst drift ratio |delta| / |value| seen between consecutive samples."""
    vals = np.asarray(vals, dtype=complex)
    d = np.real(np.conj(vals[:-1]) * vals[1:])
    flips = np.where(d >= 0.0, 1.0, -1.0)
    c0 = 1.0 if abs(vals[0] - anchor) <= abs(vals[0] + anchor) else -1.0
    cum = c0 * np.concatenate(([1.0], np.cumprod(flips)))
    out = vals * cum
    num = np.abs(np.diff(out))
    den = np.abs(out[1:])
    worst = np.max(num / np.maximum(den, 1e-300)) if len(num) else 0.0
    return out, worst


def _check_anchor(value, anchor, what):
    m = min(abs(value - anchor), abs(value + anchor))
    if m > 1e-6 * max(1e-300, abs(anchor)):
        raise AmbiguousContinuation(
            "%s anchor drifted by %g; continuation lost the sheet" % (what, m)
        )


class _Panel:
    __slots__ = ("k15", "g7", "resabs", "resasc", "y1", "w1", "ok")


def _eval_panel(surface, f, za, zb, t0, t1, y0, w0):
    """One GK panel on the straight segment, parameters [t0, t1] of [0, 1]."""
    mid = 0.5 * (t0 + t1)
    half = 0.5 * (t1 - t0)
    ts = np.concatenate(([t0], mid + half * _XK, [t1]))
    xs = za + (zb - za) * ts
    ys_raw = np.sqrt(surface.p(xs).astype(complex))
    ws_raw = np.sqrt(surface.N(xs).astype(complex))
    _check_anchor(ys_raw[0], y0, "y")
    _check_anchor(ws_raw[0], w0, "w")
    ys, ydrift = align_signs(ys_raw, y0)
    ws, wdrift = align_signs(ws_raw, w0)
    pan = _Panel()
    pan.ok = (ydrift <= 2.0 / 3.0) and (wdrift <= 2.0 / 3.0)
    pan.y1 = ys[-1]
    pan.w1 = ws[-1]
    if not pan.ok:
        pan.k15 = pan.g7 = 0.0
        pan.resabs = pan.resasc = 0.0
        return pan
    fs = np.asarray(f(xs[1:-1], ys[1:-1], ws[1:-1]), dtype=complex)
    scale = (zb - za) * half
    k15 = np.sum(_WK * fs) * scale
    g7 = np.sum(_WG * fs[_GAUSS_IDX]) * scale
    pan.k15 = k15
    pan.g7 = g7
    pan.resabs = float(np.sum(_WK * np.abs(fs)) * abs(scale))
    mean = k15 / (2.0 * scale) if scale != 0 else 0.0
    pan.resasc = float(np.sum(_WK * np.abs(fs - mean)) * abs(scale))
    return pan


def _panel_error(pan):
    diff = abs(pan.k15 - pan.g7)
    if pan.resasc == 0.0:
        return diff
    return pan.resasc * min(1.0, (200.0 * diff / pan.resasc) ** 1.5)


def integrate_segment(surface, f, za, zb, y0, w0, tol_abs=None, rel_tol=1e-10,
                      budget=MAX_PANELS):
    """Integrate f(x, y, w) dx over the straight segment za -> zb, starting
    on the sheet (y0, w0).  Returns (value, y_end, w_end, resabs)."""
    root = _eval_panel(surface, f, za, zb, 0.0, 1.0, y0, w0)
    if tol_abs is None:
        tol_abs = rel_tol * max(root.resabs if root.ok else 0.0, 1e-3)
    total = 0.0 + 0.0j
    resabs = 0.0
    panels = 0
    stack = [(0.0, 1.0)]
    y_cur, w_cur = y0, w0
    t_cur = 0.0
    while stack:
        t0, t1 = stack.pop()
        assert t0 == t_cur
        panels += 1
        if panels > budget:
            raise PrecisionLoss(
                "panel budget %d exhausted on segment %s -> %s" % (budget, za, zb)
            )
        pan = _eval_panel(surface, f, za, zb, t0, t1, y_cur, w_cur)
        width = t1 - t0
        if pan.ok and (_panel_error(pan) <= tol_abs * width or width < 1e-12):
            total += pan.k15
            resabs += pan.resabs
            t_cur = t1
            y_cur, w_cur = pan.y1, pan.w1
            continue
        if width < 1e-13:
            raise AmbiguousContinuation(
                "cannot refine below width %g near x=%s; path may graze a "
                "branch point" % (width, za + (zb - za) * t0)
            )
        tm = 0.5 * (t0 + t1)
        stack.append((tm, t1))
        stack.append((t0, tm))
    return total, y_cur, w_cur, resabs


def integrate_polyline(surface, f, vertices, y0, w0, rel_tol=1e-10,
                       budget=MAX_PANELS, closed=False):
    """Integrate along consecutive straight segments with sheet chaining.
    If closed, the last vertex connects back to the first and the final
    sheet is checked against the start.  Returns (value, y_end, w_end)."""
    pts = list(vertices)
    if closed and pts[0] != pts[-1]:
        pts = pts + [pts[0]]
    value = 0.0 + 0.0j
    y_cur, w_cur = y0, w0
    for a, b in zip(pts[:-1], pts[1:]):
        if a == b:
            continue
        val, y_cur, w_cur, _ = integrate_segment(
            surface, f, a, b, y_cur, w_cur, rel_tol=rel_tol, budget=budget)
        value += val
    if closed:
        _check_anchor(y_cur, y0, "closure y")
        _check_anchor(w_cur, w0, "closure w")
    return value, y_cur, w_cur


def _eval_panel_multi(surface, forms, za, zb, t0, t1, y0, w0):
    """Panel evaluation for a list of integrands sharing the same nodes.
    Returns (k15 vec, g7 vec, resabs vec, resasc vec, y1, w1, ok)."""
    mid = 0.5 * (t0 + t1)
    half = 0.5 * (t1 - t0)
    ts = np.concatenate(([t0], mid + half * _XK, [t1]))
    xs = za + (zb - za) * ts
    ys_raw = np.sqrt(surface.p(xs).astype(complex))
    ws_raw = np.sqrt(surface.N(xs).astype(complex))
    _check_anchor(ys_raw[0], y0, "y")
    _check_anchor(ws_raw[0], w0, "w")
    ys, ydrift = align_signs(ys_raw, y0)
    ws, wdrift = align_signs(ws_raw, w0)
    if ydrift > 2.0 / 3.0 or wdrift > 2.0 / 3.0:
        return None, None, None, None, ys[-1], ws[-1], False
    xi, yi, wi = xs[1:-1], ys[1:-1], ws[1:-1]
    fs = np.vstack([np.asarray(f(xi, yi, wi), dtype=complex) for f in forms])
    scale = (zb - za) * half
    k15 = fs @ _WK * scale
    g7 = fs[:, _GAUSS_IDX] @ _WG * scale
    resabs = np.abs(fs) @ _WK * abs(scale)
    mean = k15 / (2.0 * scale) if scale != 0 else np.zeros_like(k15)
    resasc = np.abs(fs - mean[:, None]) @ _WK * abs(scale)
    return k15, g7, resabs, resasc, ys[-1], ws[-1], True


def _errors_multi(k15, g7, resasc):
    diff = np.abs(k15 - g7)
    out = diff.copy()
    nz = resasc > 0.0
    ratio = np.minimum(1.0, (200.0 * diff[nz] / resasc[nz]) ** 1.5)
    out[nz] = resasc[nz] * ratio
    return out


def integrate_segment_multi(surface, forms, za, zb, y0, w0, tol_abs=None,
                            rel_tol=1e-10, budget=MAX_PANELS):
    """Integrate a family of forms over one straight segment with shared
    adaptive refinement.  Returns (values, y_end, w_end, resabs)."""
    n = len(forms)
    res = _eval_panel_multi(surface, forms, za, zb, 0.0, 1.0, y0, w0)
    k15, g7, resabs0, resasc, y1, w1, ok = res
    if tol_abs is None:
        base = resabs0 if ok else np.zeros(n)
        tol_abs = rel_tol * np.maximum(base, 1e-3)
    if ok and np.all(_errors_multi(k15, g7, resasc) <= tol_abs):
        return k15, y1, w1, resabs0
    total = np.zeros(n, dtype=complex)
    resabs = np.zeros(n)
    panels = 1
    stack = [(0.5, 1.0), (0.0, 0.5)]
    y_cur, w_cur = y0, w0
    t_cur = 0.0
    while stack:
        t0, t1 = stack.pop()
        assert t0 == t_cur
        panels += 1
        if panels > budget:
            raise PrecisionLoss(
                "panel budget %d exhausted on segment %s -> %s" % (budget, za, zb))
        k15, g7, rabs, rasc, y1, w1, ok = _eval_panel_multi(
            surface, forms, za, zb, t0, t1, y_cur, w_cur)
        width = t1 - t0
        if ok and np.all(_errors_multi(k15, g7, rasc) <= tol_abs * width):
            total += k15
            resabs += rabs
            t_cur = t1
            y_cur, w_cur = y1, w1
            continue
        if width < 1e-13:
            raise AmbiguousContinuation(
                "cannot refine below width %g near x=%s" % (width, za))
        tm = 0.5 * (t0 + t1)
        stack.append((tm, t1))
        stack.append((t0, tm))
    return total, y_cur, w_cur, resabs


def integrate_polyline_multi(surface, forms, vertices, y0, w0, rel_tol=1e-10,
                             budget=MAX_PANELS, closed=False):
    """Multi-form polyline integral with sheet chaining."""
    pts = list(vertices)
    if closed and pts[0] != pts[-1]:
        pts = pts + [pts[0]]
    value = np.zeros(len(forms), dtype=complex)
    y_cur, w_cur = y0, w0
    for a, b in zip(pts[:-1], pts[1:]):
        if a == b:
            continue
        val, y_cur, w_cur, _ = integrate_segment_multi(
            surface, forms, a, b, y_cur, w_cur, rel_tol=rel_tol, budget=budget)
        value += val
    if closed:
        _check_anchor(y_cur, y0, "closure y")
        _check_anchor(w_cur, w0, "closure w")
    return value, y_cur, w_cur


def continue_sheets(surface, za, zb, y0, w0):
    """Carry (y, w) along the straight segment za -> zb by bisected marching.
    Returns (y, w) at zb."""
    y_cur, w_cur = complex(y0), complex(w0)
    stack = [(0.0, 1.0)]
    steps = 0
    while stack:
        t0, t1 = stack.pop()
        steps += 1
        if steps > 2 ** 16:
            raise AmbiguousContinuation("continuation budget exhausted")
        x1 = za + (zb - za) * t1
        y_raw = complex(np.sqrt(complex(surface.p(x1))))
        w_raw = complex(np.sqrt(complex(surface.N(x1))))
        ya = y_raw if abs(y_raw - y_cur) <= abs(y_raw + y_cur) else -y_raw
        wa = w_raw if abs(w_raw - w_cur) <= abs(w_raw + w_cur) else -w_raw
        ok_y = abs(ya - y_cur) <= (2.0 / 3.0) * abs(ya)
        ok_w = abs(wa - w_cur) <= (2.0 / 3.0) * abs(wa)
        if ok_y and ok_w:
            y_cur, w_cur = ya, wa
            continue
        if (t1 - t0) * abs(zb - za) < 1e-6 * surface.sep_all:
            raise AmbiguousContinuation(
                "continuation stuck near x=%s; step below resolution"
                % (za + (zb - za) * t0,)
            )
        tm = 0.5 * (t0 + t1)
        stack.append((tm, t1))
        stack.append((t0, tm))
    return y_cur, w_cur


def continue_along(surface, vertices, y0, w0):
    """Sheets at every vertex of a polyline, starting from (y0, w0)."""
    out = [(complex(y0), complex(w0))]
    y_cur, w_cur = complex(y0), complex(w0)
    for a, b in zip(vertices[:-1], vertices[1:]):
        if a != b:
            y_cur, w_cur = continue_sheets(surface, a, b, y_cur, w_cur)
        out.append((y_cur, w_cur))
    return out


def integrate_branch_segment(surface, f, r, xc, yc, wc, rel_tol=1e-10,
                             budget=MAX_PANELS):
    """Integrate f(x, y, w) dx from the zero r of N out to xc, where the
    sheet (yc, wc) at xc selects the lift.  Uses x = r + s^2 d so that forms
    with a single factor of w or 1/w become smooth in s."""
    d = xc - r
    c2 = complex(surface.n_coeffs[2])
    dn_r = complex(surface.dN(r))

    def g_raw(s):
        return np.sqrt(d * (dn_r + c2 * s * s * d))

    # branch of g: align from s = 1 inward, anchored so sigma * g(1) = wc
    g1 = complex(g_raw(np.array([1.0]))[0])
    m = min(abs(g1 - wc), abs(g1 + wc))
    if m > 1e-6 * max(abs(wc), 1e-300):
        raise AmbiguousContinuation("w anchor inconsistent at branch segment end")
    sigma = 1.0 if abs(g1 - wc) <= abs(g1 + wc) else -1.0

    def panel(s0, s1, y1_anchor, g1_anchor):
        # samples run from s1 down toward s0 so the sheet anchor chains
        # right-to-left; symmetric weights make the node order irrelevant
        # for the s-increasing integral over [s0, s1]
        mid = 0.5 * (s0 + s1)
        half = 0.5 * (s1 - s0)
        ss = np.concatenate(([s1], mid - half * _XK, [s0]))  # decreasing
        xs = r + ss * ss * d
        ys_raw = np.sqrt(surface.p(xs).astype(complex))
        ys, ydrift = align_signs(ys_raw, y1_anchor)
        gs_raw = g_raw(ss)
        gs, gdrift = align_signs(gs_raw, g1_anchor)
        ok = ydrift <= 2.0 / 3.0 and gdrift <= 2.0 / 3.0
        if not ok:
            return None
        ws = sigma * ss * gs
        fs = np.asarray(f(xs[1:-1], ys[1:-1], ws[1:-1]), dtype=complex)
        jac = 2.0 * ss[1:-1] * d  # dx/ds
        vals = fs * jac
        k15 = np.sum(_WK * vals) * half
        g7 = np.sum(_WG * vals[_GAUSS_IDX]) * half
        resabs = float(np.sum(_WK * np.abs(vals)) * abs(half))
        mean = k15 / max(2.0 * half, 1e-300)
        resasc = float(np.sum(_WK * np.abs(vals - mean)) * abs(half))
        pan = _Panel()
        pan.k15, pan.g7, pan.resabs, pan.resasc = k15, g7, resabs, resasc
        pan.y1, pan.w1 = ys[-1], gs[-1]  # values at s0 end (y, g branch)
        pan.ok = True
        return pan

    root = panel(0.0, 1.0, yc, sigma * wc)
    tol_abs = rel_tol * max(root.resabs if root is not None else 0.0, 1e-3)
    total = 0.0 + 0.0j
    panels = 0
    stack = [(0.0, 1.0)]
    s_cur = 1.0
    y_cur, g_cur = yc, sigma * wc
    while stack:
        s0, s1 = stack.pop()
        assert s1 == s_cur
        panels += 1
        if panels > budget:
            raise PrecisionLoss("panel budget exhausted on branch segment")
        pan = panel(s0, s1, y_cur, g_cur)
        width = s1 - s0
        if pan is not None and (_panel_error(pan) <= tol_abs * width
                                or width < 1e-12):
            total += pan.k15
            s_cur = s0
            y_cur, g_cur = pan.y1, pan.w1
            continue
        if width < 1e-13:
            raise AmbiguousContinuation("branch segment refinement stuck")
        sm = 0.5 * (s0 + s1)
        stack.append((s0, sm))
        stack.append((sm, s1))
    return total, y_cur
