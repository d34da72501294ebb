"""Root extraction for realizations.

Algebraic polynomials are solved by simultaneous (Aberth-type) iteration with
a companion-matrix fallback; trigonometric polynomials go through the
substitution w = e^{iz}, which turns P into a degree-2n polynomial in w whose
strip roots map back through z = -i log w; truncated series are solved inside
their validated disk after recentering.  Real-axis statistics additionally use
a certified sign-change scan: a bracket proves a root by the intermediate
value theorem, and a dip-recovery pass catches near-tangent pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ensembles as ens
from .errors import (DegenerateAllZero, NoConvergence, RegionNotCovered)
from .regions import Disk, Region, Segment, Strip, WholePlane

__all__ = [
    "RootSet", "TrigLift", "roots_poly", "roots_trig", "roots_in_disk",
    "real_roots", "count_in_region", "count_in_disk", "winding_count",
    "ScanPlan", "make_scan_plan", "scan_count", "scan_roots", "scan_grid",
]

_EPS = np.finfo(float).eps


# --------------------------------------------------------------------------
# root sets
# --------------------------------------------------------------------------

@dataclass
class RootSet:
    """Found zeros with residuals, realness flags and multiplicities."""

    roots: np.ndarray
    residuals: np.ndarray
    real_mask: np.ndarray
    multiplicities: np.ndarray
    region: Region
    solver_report: dict = field(default_factory=dict)
    fn: Optional[Callable] = None      # (z, order) -> value, for downstream polish

    def __len__(self):
        return len(self.roots)

    @property
    def total_count(self) -> int:
        return int(np.sum(self.multiplicities))

    def real_values(self) -> np.ndarray:
        return np.repeat(self.roots[self.real_mask].real,
                         self.multiplicities[self.real_mask])

    def to_csv(self) -> str:
        lines = ["re,im,residual,is_real"]
        for z, res, isr, mult in zip(self.roots, self.residuals,
                                     self.real_mask, self.multiplicities):
            for _ in range(int(mult)):
                lines.append(f"{z.real:.17g},{z.imag:.17g},{res:.17g},{int(isr)}")
        return "\n".join(lines) + "\n"


def count_in_region(rs: RootSet, region: Region) -> int:
    """Exact count of stored roots strictly inside the region.

    Points within 1e-12 of the boundary are not counted as inside.
    """
    try:
        covered = rs.region.covers(region)
    except Exception:
        covered = False
    if not covered:
        raise RegionNotCovered(
            f"{type(region).__name__} not contained in the root set's "
            f"{type(rs.region).__name__}")
    total = 0
    for z, mult in zip(rs.roots, rs.multiplicities):
        if region.signed_distance(complex(z)) > 1e-12:
            total += int(mult)
    return total


# --------------------------------------------------------------------------
# polynomial solver
# --------------------------------------------------------------------------

def _poly_and_deriv(c: np.ndarray, z: np.ndarray):
    """Horner evaluation of p and p' in one sweep (c ascending)."""
    p = np.full_like(z, c[-1])
    dp = np.zeros_like(z)
    for k in range(len(c) - 2, -1, -1):
        dp = dp * z + p
        p = p * z + c[k]
    return p, dp


def _residual_scale(c: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Backward-stable magnitude scale sum_i |c_i| |z|^i."""
    az = np.abs(z)
    s = np.full_like(az, abs(c[-1]))
    for k in range(len(c) - 2, -1, -1):
        s = s * az + abs(c[k])
    return s


def _fujiwara_radius(c: np.ndarray) -> float:
    d = len(c) - 1
    lead = abs(c[-1])
    best = -math.inf
    for k in range(1, d + 1):
        a = abs(c[d - k])
        if a > 0:
            best = max(best, (math.log(a) - math.log(lead)) / k)
    if best == -math.inf:
        return 1e-12
    return 2.0 * math.exp(best)


def _aberth(c: np.ndarray, max_iter: int = 120):
    """Simultaneous Aberth-Ehrlich iteration; returns (roots, iters, ok)."""
    d = len(c) - 1
    radius = max(0.5 * _fujiwara_radius(c), 1e-12)
    center = -c[-2] / (d * c[-1])
    if not np.isfinite(center):
        center = 0j
    angles = 2.0 * np.pi * (np.arange(d) + 0.353) / d + 0.4
    z = center + radius * np.exp(1j * angles)
    z = z.astype(complex)
    active = np.ones(d, dtype=bool)
    iters = 0
    for iters in range(1, max_iter + 1):
        p, dp = _poly_and_deriv(c, z)
        bad = dp == 0
        if np.any(bad):
            z[bad] += radius * 1e-8 * (1 + 1j)
            p, dp = _poly_and_deriv(c, z)
            dp[dp == 0] = _EPS
        w = p / dp
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, np.inf)
        s = np.sum(1.0 / diff, axis=1)
        denom = 1.0 - w * s
        denom[denom == 0] = _EPS
        corr = w / denom
        corr[~active] = 0.0
        z = z - corr
        active = np.abs(corr) > 8 * _EPS * (1.0 + np.abs(z))
        if not np.any(active):
            return z, iters, True
    return z, iters, False


def _newton_polish_poly(c: np.ndarray, z: np.ndarray, steps: int = 4) -> np.ndarray:
    for _ in range(steps):
        p, dp = _poly_and_deriv(c, z)
        dp = np.where(dp == 0, _EPS, dp)
        z = z - p / dp
    return z


def _merge_clusters(roots: np.ndarray, radius_fn) -> tuple[np.ndarray, np.ndarray]:
    """Collapse clusters of numerically identical roots; record multiplicity."""
    n = len(roots)
    if n == 0:
        return roots, np.zeros(0, dtype=int)
    order = np.lexsort((roots.imag, roots.real))
    roots = roots[order]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if roots[j].real - roots[i].real > radius_fn(roots[i]):
                break
            if abs(roots[j] - roots[i]) <= radius_fn(roots[i]):
                parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    merged, mult = [], []
    for idx in groups.values():
        merged.append(np.mean(roots[idx]))
        mult.append(len(idx))
    merged = np.array(merged, dtype=complex)
    order = np.lexsort((merged.imag, merged.real))
    return merged[order], np.array(mult, dtype=int)[order]


def _classify_real(c, roots, mults, class_tol, tol):
    """Snap near-real roots onto the axis after a real-restricted polish."""
    real_mask = np.zeros(len(roots), dtype=bool)
    out = roots.copy()
    for i, z in enumerate(roots):
        if abs(z.imag) <= class_tol * (1.0 + abs(z)):
            x = z.real
            ok = True
            for _ in range(30):
                p, dp = _poly_and_deriv(c, np.array([complex(x)]))
                fr, fpr = p[0].real, dp[0].real
                if fpr == 0:
                    ok = mults[i] > 1    # critical point: accept only multiples
                    break
                step = fr / fpr
                x -= step
                if abs(step) <= 4 * _EPS * (1.0 + abs(x)):
                    break
            scale = _residual_scale(c, np.array([complex(x)]))[0]
            resid = abs(_poly_and_deriv(c, np.array([complex(x)]))[0][0])
            if ok and resid <= max(tol * scale, tol):
                out[i] = complex(x, 0.0)
                real_mask[i] = True
    return out, real_mask


def roots_poly(coeffs: Sequence[complex], tol: float = 1e-9,
               class_tol: float = 1e-8, max_iter: int = 120) -> RootSet:
    """All roots of sum_k coeffs[k] z^k (coefficients ascending).

    Aberth iteration first; companion-matrix eigenvalues plus Newton polish
    if it stalls.  Emitted residuals |p(z)| / sum|c_k||z|^k stay below tol.
    """
    c = np.asarray(coeffs, dtype=complex)
    if c.size == 0 or not np.any(c != 0):
        raise DegenerateAllZero("all polynomial coefficients are zero")
    lead_scale = np.max(np.abs(c))
    # strip leading noise
    d = len(c) - 1
    while d > 0 and abs(c[d]) <= 1e-15 * lead_scale:
        d -= 1
    c = c[:d + 1]
    fn = _poly_fn(c)
    if d == 0:
        return RootSet(np.zeros(0, complex), np.zeros(0), np.zeros(0, bool),
                       np.zeros(0, int), WholePlane(),
                       {"degree": 0, "iterations": 0, "fallback": False}, fn)
    # exact zero roots at the origin
    k0 = int(np.argmax(c != 0))
    zero_mult = k0
    c_red = c[k0:]
    report = {"degree": d, "fallback": False, "iterations": 0}

    if len(c_red) > 1:
        roots, iters, ok = _aberth(c_red, max_iter=max_iter)
        report["iterations"] = iters
        scale = _residual_scale(c_red, roots)
        resid = np.abs(_poly_and_deriv(c_red, roots)[0])
        if not ok or np.any(resid > tol * np.maximum(scale, _EPS)):
            report["fallback"] = True
            comp = np.roots(c_red[::-1])
            comp = _newton_polish_poly(c_red, comp.astype(complex), steps=6)
            scale_c = _residual_scale(c_red, comp)
            resid_c = np.abs(_poly_and_deriv(c_red, comp)[0])
            if np.max(resid_c / np.maximum(scale_c, _EPS)) <= np.max(
                    resid / np.maximum(scale, _EPS)):
                roots, resid, scale = comp, resid_c, scale_c
            if np.any(resid > tol * np.maximum(scale, _EPS)):
                raise NoConvergence(
                    f"worst residual {np.max(resid / np.maximum(scale, _EPS)):.3e} "
                    f"exceeds tol {tol:.3e} after fallback")
    else:
        roots = np.zeros(0, dtype=complex)

    merge_radius = lambda z: 10.0 * tol * (1.0 + abs(z))
    roots, mult = _merge_clusters(roots, merge_radius)
    if zero_mult:
        roots = np.concatenate([[0j], roots])
        mult = np.concatenate([[zero_mult], mult])

    real_coeffs = np.allclose(c.imag, 0.0, atol=0.0)
    if real_coeffs:
        roots, real_mask = _classify_real(c, roots, mult, class_tol, tol)
    else:
        real_mask = (roots.imag == 0.0)

    scale = np.maximum(_residual_scale(c, roots), _EPS)
    resid = np.abs(_poly_and_deriv(c, roots)[0]) / scale
    return RootSet(roots, resid, real_mask, mult, WholePlane(), report, fn)


def _poly_fn(c: np.ndarray) -> Callable:
    cs = [c]
    for _ in range(2):
        prev = cs[-1]
        cs.append(np.arange(1, len(prev)) * prev[1:] if len(prev) > 1
                  else np.zeros(1, complex))

    def fn(z, order=0):
        cc = cs[order]
        if cc.size == 0:
            return 0j
        zz = np.asarray(z, dtype=complex)
        scalar = zz.ndim == 0
        zz = np.atleast_1d(zz)
        p = np.full_like(zz, cc[-1])
        for k in range(len(cc) - 2, -1, -1):
            p = p * zz + cc[k]
        return complex(p[0]) if scalar else p

    return fn


# --------------------------------------------------------------------------
# trigonometric polynomials via the w = e^{iz} lift
# --------------------------------------------------------------------------

@dataclass
class TrigLift:
    """Degree-2n polynomial in w = e^{iz} equal to w^n P(z)."""

    w_coeffs: np.ndarray

    @staticmethod
    def back_map(w: complex) -> complex:
        """w -> z = -i log w with Re z in [0, 2 pi)."""
        x = math.atan2(w.imag, w.real) % (2.0 * math.pi)
        return complex(x, -math.log(abs(w)))

    def forward(self, z: complex) -> complex:
        """Evaluate the lifted polynomial at w = e^{iz}."""
        w = np.exp(1j * np.asarray(z, dtype=complex))
        return np.polynomial.polynomial.polyval(w, self.w_coeffs)


def build_lift(r: ens.Realization) -> TrigLift:
    spec = r.spec
    if spec.family != "trig":
        raise ValueError("the lift applies to the trig family")
    n = spec.n
    a = np.asarray(spec.c) * r.xi[:n + 1].astype(complex)
    a = a.copy()
    a[0] += spec.deterministic_offset(0)
    b = np.asarray(spec.d) * r.xi[n + 1:].astype(complex)   # eta block, j = 1..n
    w = np.zeros(2 * n + 1, dtype=complex)
    w[n] = a[0]
    for k in range(1, n + 1):
        w[n + k] = 0.5 * (a[k] - 1j * b[k - 1])
        w[n - k] = 0.5 * (a[k] + 1j * b[k - 1])
    return TrigLift(w)


def _scaled_residual(r: ens.Realization, z: complex) -> float:
    """|F(z)| over the local scale sqrt(variance profile).

    The scale is floored by |F'(z)| times a short length so that ensembles
    whose variance profile itself vanishes at the root (single-term bases)
    still recognize machine-polished roots.
    """
    f = abs(ens.evaluate(r, z))
    fp = abs(ens.evaluate(r, z, 1))
    vp = math.sqrt(ens.variance_profile(r.spec, z))
    scale = max(vp, fp * 1e-3 * (1.0 + abs(z)), 1e-300)
    return f / scale


def roots_trig(r: ens.Realization, tol: float = 1e-9,
               strip_height: Optional[float] = None,
               class_tol: float = 1e-8) -> RootSet:
    """All zeros of a trig realization in [0, 2 pi) x [-H, H]."""
    spec = r.spec
    lift = build_lift(r)
    H = strip_height
    if H is None:
        dom = spec.scale.domain
        H = dom.height if isinstance(dom, Strip) else 10.0 / max(spec.n, 1)
    rs_w = roots_poly(lift.w_coeffs, tol=tol, class_tol=0.0)
    lo, hi = math.exp(-H), math.exp(H)
    zs, mults = [], []
    for w, mult in zip(rs_w.roots, rs_w.multiplicities):
        aw = abs(w)
        if aw < lo * (1 - 1e-12) or aw > hi * (1 + 1e-12) or aw == 0.0:
            continue
        zs.append(TrigLift.back_map(complex(w)))
        mults.append(int(mult))
    zs = np.array(zs, dtype=complex)
    mults = np.array(mults, dtype=int)

    def fn(z, order=0):
        return ens.evaluate_array(r, np.atleast_1d(np.asarray(z, complex)), order) \
            if np.ndim(z) else ens.evaluate(r, z, order)

    # classify near-real roots by a real-restricted polish on P itself
    real_mask = np.zeros(len(zs), dtype=bool)
    out = zs.copy()
    if not spec.law.is_complex:
        for i, z in enumerate(zs):
            if abs(z.imag) <= class_tol * (1.0 + abs(z)):
                x, ok = _real_newton(r, z.real)
                if ok and _scaled_residual(r, x) <= tol:
                    out[i] = complex(x % (2.0 * math.pi), 0.0)
                    real_mask[i] = True
    resid = np.array([_scaled_residual(r, z) for z in out]) if len(out) \
        else np.zeros(0)
    report = dict(rs_w.solver_report)
    report["strip_height"] = H
    return RootSet(out, resid, real_mask, mults, Strip(0.0, 2.0 * math.pi, H),
                   report, fn)


def _real_newton(r: ens.Realization, x0: float, steps: int = 40):
    x = float(x0)
    for _ in range(steps):
        f = ens.evaluate(r, x).real
        fp = ens.evaluate(r, x, 1).real
        if fp == 0.0:
            return x, False
        step = f / fp
        x -= step
        if abs(step) <= 4 * _EPS * (1.0 + abs(x)):
            return x, True
    return x, abs(step) <= 1e-10 * (1.0 + abs(x))


# --------------------------------------------------------------------------
# local solves inside a disk (recentered truncation)
# --------------------------------------------------------------------------

_SHIFT_CACHE: dict = {}


def _shift_matrix(spec: ens.EnsembleSpec, m: int, center: complex, M: int) -> np.ndarray:
    """T[k, j] = phi_j^{(k)}(center) / k!, so that b = T @ xi recenters F."""
    key = (spec, m, complex(center), M)
    if key in _SHIFT_CACHE:
        return _SHIFT_CACHE[key]
    det = ens._det_coeffs(spec, m)
    j = np.arange(m)
    logs = np.log(np.maximum(np.abs(det), 1e-320))
    lc = math.log(abs(center)) if center != 0 else -math.inf
    ph = np.angle(complex(center))
    T = np.zeros((M, m), dtype=complex)
    lgam = np.array([math.lgamma(v + 1) for v in range(m + 1)])
    for k in range(M):
        jj = j[j >= k]
        if center == 0:
            T[k, k] = det[k] if k < m else 0.0
            continue
        lmag = (lgam[jj] - lgam[k] - lgam[jj - k]) + (jj - k) * lc + logs[jj]
        T[k, jj] = np.exp(lmag) * np.exp(1j * (jj - k) * ph) * np.sign(det[jj])
    _SHIFT_CACHE[key] = T
    return T


def recenter_coefficients(r: ens.Realization, center: complex, M: int) -> np.ndarray:
    """Taylor coefficients of the plain series at ``center`` up to degree M-1."""
    T = _shift_matrix(r.spec, r.truncation_length, complex(center), M)
    return T @ r.xi.astype(complex)


def roots_in_disk(r: ens.Realization, center: complex, radius: float,
                  tol: float = 1e-9, pad: float = 1.25) -> RootSet:
    """Zeros of a power-series realization inside B(center, radius).

    The series is recentered (Taylor shift, cached matrix) and truncated at a
    degree certified by its own trailing coefficients; roots are polished on
    the full evaluator and residual-checked against the local variance scale.
    """
    spec = r.spec
    if spec.family not in ("kac", "elliptic", "weyl", "taylor"):
        raise ValueError("roots_in_disk needs a power-series family")
    m = r.truncation_length
    Rt = pad * radius
    M = min(m, 32)
    while True:
        b = recenter_coefficients(r, center, M)
        scale_terms = np.abs(b) * Rt ** np.arange(M)
        top = np.max(scale_terms)
        tail = np.sum(scale_terms[-6:])
        if M >= m or tail <= 1e-11 * max(top, 1e-300):
            break
        M = min(m, 2 * M)
    if not np.any(b != 0):
        raise DegenerateAllZero("recentered polynomial is identically zero")
    rs_local = roots_poly(b, tol=max(tol, 1e-11), class_tol=0.0)

    def fn(z, order=0):
        return ens.evaluate(r, z, order) if np.ndim(z) == 0 else \
            ens.evaluate_array(r, np.asarray(z, complex), order)

    kept, resid, mults, mask = [], [], [], []
    for h, mult in zip(rs_local.roots, rs_local.multiplicities):
        if abs(h) > radius * (1.0 + 0.05):
            continue
        z = complex(center) + complex(h)
        try:
            for _ in range(3):                   # polish on the full series
                f = ens.evaluate(r, z)
                fp = ens.evaluate(r, z, 1)
                if fp == 0:
                    break
                z = z - f / fp
            if abs(z - center) > radius + 1e-12:
                continue
            res = _scaled_residual(r, z)
        except Exception:
            continue                             # wandered outside validation
        if res > tol:
            continue
        is_real = (not spec.law.is_complex) and abs(z.imag) <= 1e-10 * (1 + abs(z))
        if is_real:
            z = complex(z.real, 0.0)
        kept.append(z)
        resid.append(res)
        mults.append(int(mult))
        mask.append(is_real)
    report = dict(rs_local.solver_report)
    report["recenter_degree"] = M
    return RootSet(np.array(kept, complex), np.array(resid),
                   np.array(mask, bool), np.array(mults, int),
                   Disk(complex(center), radius), report, fn)


# --------------------------------------------------------------------------
# winding-number counts
# --------------------------------------------------------------------------

def winding_count(values: np.ndarray) -> tuple[float, float]:
    """Winding number of a sampled closed curve and its max phase step."""
    v = np.asarray(values)
    dphi = np.angle(np.roll(v, -1) / v)
    return float(np.sum(dphi) / (2.0 * math.pi)), float(np.max(np.abs(dphi)))


def count_in_disk(r: ens.Realization, center: complex, radius: float,
                  n_points: int = 256, max_refine: int = 4) -> int:
    """Number of zeros in B(center, radius) by the argument principle.

    Counts with multiplicity; refines the contour sampling until every phase
    step is small and the winding number is an unambiguous integer.
    """
    m = n_points
    rad = float(radius)
    for _ in range(max_refine + 1):
        th = 2.0 * np.pi * np.arange(m) / m
        pts = complex(center) + rad * np.exp(1j * th)
        v = ens.evaluate_array(r, pts)
        av = np.abs(v)
        if np.min(av) < 1e-12 * max(np.median(av), 1e-300):
            rad *= 1.0 + 1e-4                      # root on the contour: nudge
            continue
        w, step = winding_count(v)
        if step <= math.pi / 2 and abs(w - round(w)) < 1e-2:
            return int(round(w))
        m *= 4
    raise NoConvergence("winding number did not stabilize")


# --------------------------------------------------------------------------
# real-root extraction from root sets
# --------------------------------------------------------------------------

def real_roots(rs: RootSet, window: tuple[float, float],
               class_tol: float = 1e-8, tol: float = 1e-9) -> np.ndarray:
    """Sorted real roots in the window, polish-confirmed and deduplicated."""
    lo, hi = window
    xs: list[float] = []
    for z, isr, mult in zip(rs.roots, rs.real_mask, rs.multiplicities):
        if isr:
            xs.extend([z.real] * int(mult))
            continue
        if abs(z.imag) <= class_tol * (1.0 + abs(z)) and rs.fn is not None:
            x = z.real
            ok = False
            for _ in range(40):
                f = complex(rs.fn(x, 0)).real
                fp = complex(rs.fn(x, 1)).real
                if fp == 0:
                    break
                step = f / fp
                x -= step
                if abs(step) <= 4 * _EPS * (1 + abs(x)):
                    ok = True
                    break
            if ok:
                f = abs(complex(rs.fn(x, 0)))
                fscale = abs(complex(rs.fn(x + 0.5, 0))) + abs(f) + 1.0
                if f <= tol * fscale:
                    xs.extend([x] * int(mult))
    xs = sorted(x for x in xs if lo <= x <= hi)
    merged: list[float] = []
    for x in xs:
        if merged and abs(x - merged[-1]) <= max(10 * tol * (1 + abs(x)), 1e-14):
            continue
        merged.append(x)
    return np.array(merged)


# --------------------------------------------------------------------------
# certified sign-change scan on the real line
# --------------------------------------------------------------------------

def scan_grid(spec: ens.EnsembleSpec, lo: float, hi: float,
              per_gap: int = 40) -> np.ndarray:
    """Scan nodes spaced well below the family's local mean root gap."""
    if not (hi > lo):
        raise ValueError("need lo < hi")
    fam = spec.family

    if fam == "trig":
        csq = np.asarray(spec.c) ** 2
        dsq = np.concatenate([[0.0], np.asarray(spec.d) ** 2])
        j2 = np.arange(spec.n + 1, dtype=float) ** 2
        dens = math.sqrt(float(np.sum(j2 * (csq + dsq)) / np.sum(csq + dsq))) / math.pi
        npts = max(129, int(per_gap * dens * (hi - lo)) + 2)
        return np.linspace(lo, hi, npts)

    if fam == "elliptic":
        sq = math.sqrt(spec.n)
        dphi = math.pi / (per_gap * sq)
        pa, pb = math.atan(lo), math.atan(hi)
        npts = max(65, int((pb - pa) / dphi) + 2)
        return np.tan(np.linspace(pa, pb, npts))

    if fam == "kac":
        return _kac_grid(spec.n, lo, hi, per_gap)

    if fam == "taylor":
        return _near_unit_grid(lo, hi, per_gap, 2.0 * math.pi / math.sqrt(spec.gamma))

    if fam == "weyl":
        # real-line zero set of the real flat series is translation invariant
        npts = max(65, int(per_gap * (hi - lo) / math.pi) + 2)
        return np.linspace(lo, hi, npts)

    npts = 2049
    return np.linspace(lo, hi, npts)


def _kac_grid(n: int, lo: float, hi: float, per_gap: int) -> np.ndarray:
    """Hyperbolic-uniform nodes inside (-1,1) and outside, linear near +-1."""
    eb = min(4.0 / n, 0.5)
    pieces = [np.array([lo]), np.array([hi])]

    def clip(a, b):
        return max(a, lo), min(b, hi)

    # inner bulk: x = tanh(u), about one root per pi units of u
    a, b = clip(-1.0 + eb, 1.0 - eb)
    if b > a:
        ua, ub = math.atanh(a), math.atanh(b)
        npts = max(17, int(per_gap * (ub - ua) / math.pi) + 2)
        pieces.append(np.tanh(np.linspace(ua, ub, npts)))
    # edge strips: density saturates near 0.3 n
    step = 1.0 / (max(per_gap, 8) * 0.3 * n)
    for sgn in (-1.0, 1.0):
        a, b = clip(sgn * 1.0 - eb, sgn * 1.0 + eb)
        if b > a:
            npts = max(9, int((b - a) / step) + 2)
            pieces.append(np.linspace(a, b, npts))
    # outer zones: x = 1/tanh(v)
    for sgn in (-1.0, 1.0):
        if sgn > 0:
            a, b = clip(1.0 + eb, hi if np.isfinite(hi) else 3200.0)
        else:
            a, b = clip(lo if np.isfinite(lo) else -3200.0, -1.0 - eb)
        if b > a and (abs(a) > 1.0 and abs(b) > 1.0):
            va, vb = math.atanh(1.0 / a), math.atanh(1.0 / b)
            va, vb = min(va, vb), max(va, vb)
            npts = max(17, int(per_gap * (vb - va) / math.pi) + 2)
            with np.errstate(divide="ignore"):
                xs = 1.0 / np.tanh(np.linspace(va, vb, npts))
            pieces.append(xs[np.isfinite(xs)])
    grid = np.unique(np.concatenate(pieces))
    grid = grid[(grid >= lo) & (grid <= hi)]
    if len(grid) < 9:
        grid = np.linspace(lo, hi, 65)
    return grid


def _near_unit_grid(lo: float, hi: float, per_gap: int, gap_u: float) -> np.ndarray:
    """Nodes log-uniform in 1 - |x| on (-1, 1): root gap is ~constant there."""
    pieces = [np.array([lo, hi])]
    for sgn in (1.0, -1.0):
        a = max(lo, 0.0) if sgn > 0 else lo
        b = hi if sgn > 0 else min(hi, 0.0)
        if b <= a:
            continue
        ua = -math.log1p(-abs(a)) if sgn * a > 0 else 0.0
        ub = -math.log1p(-abs(b)) if sgn * b > 0 else 0.0
        ua, ub = min(ua, ub), max(ua, ub)
        npts = max(33, int(per_gap * (ub - ua) / gap_u) + int(per_gap) + 2)
        us = np.linspace(ua, ub, npts)
        xs = sgn * (1.0 - np.exp(-us))
        pieces.append(xs)
    grid = np.unique(np.concatenate(pieces))
    return grid[(grid >= lo) & (grid <= hi)]


@dataclass
class ScanPlan:
    """Precomputed design for repeated real-axis scans of one spec."""

    spec: ens.EnsembleSpec
    window: tuple[float, float]
    grid: np.ndarray
    design: np.ndarray       # (npts, nterms), variance-normalized rows
    offset: np.ndarray       # deterministic shift, variance-normalized

    def values(self, xi: np.ndarray) -> np.ndarray:
        v = self.design @ (xi.real if not np.iscomplexobj(self.design) else xi)
        return v + self.offset

    def values_batch(self, xi_rows: np.ndarray) -> np.ndarray:
        v = xi_rows @ self.design.T
        return v + self.offset[None, :]


def make_scan_plan(spec: ens.EnsembleSpec, window: tuple[float, float],
                   per_gap: int = 40) -> ScanPlan:
    lo, hi = window
    grid = scan_grid(spec, lo, hi, per_gap)
    if spec.family == "elliptic":
        design = ens.basis_matrix(spec, grid.astype(complex), normalized=True).real
        norms = np.ones(len(grid))
    else:
        raw = ens.basis_matrix(spec, grid.astype(complex))
        if np.max(np.abs(raw.imag)) == 0.0:
            raw = raw.real
        norms = np.sqrt(np.sum(np.abs(raw) ** 2, axis=1))
        norms[norms == 0] = 1.0
        design = raw / norms[:, None]
    off = spec.deterministic_offset(0)
    offset = np.full(len(grid), off) / norms if off else np.zeros(len(grid))
    return ScanPlan(spec, (lo, hi), grid, design, offset)


def _bracket_stats(v: np.ndarray):
    """Sign changes between adjacent nonzero values, plus zero-node runs."""
    s = np.sign(v)
    nz = s != 0
    flips = np.nonzero((s[:-1] * s[1:] < 0) & nz[:-1] & nz[1:])[0]
    zero = ~nz
    starts = np.nonzero(zero & ~np.concatenate([[False], zero[:-1]]))[0]
    return flips, starts


def _dip_candidates(v: np.ndarray, frac: float = 0.5) -> np.ndarray:
    a = np.abs(v)
    s = np.sign(v)
    i = np.arange(1, len(v) - 1)
    same = (s[i - 1] == s[i]) & (s[i] == s[i + 1]) & (s[i] != 0)
    dip = (a[i] < a[i - 1]) & (a[i] < a[i + 1]) & \
          (a[i] < frac * np.minimum(a[i - 1], a[i + 1]))
    return i[same & dip]


def _recover_pairs(r: ens.Realization, grid, i: int, depth: int = 2) -> list[tuple[float, float]]:
    """Look for an even root pair in the bracket-free cell around node i.

    Returns sub-brackets ([a,b] with a sign change) discovered by refinement
    or by locating the interior critical point.
    """
    a, b = grid[i - 1], grid[i + 1]
    xs = np.linspace(a, b, 17)
    v = np.real(ens.evaluate_array(r, xs.astype(complex)))
    flips, _ = _bracket_stats(v)
    if len(flips):
        return [(xs[k], xs[k + 1]) for k in flips]
    if depth > 0:
        # Newton on F' to land on the interior critical point
        x = grid[i]
        for _ in range(30):
            fp = ens.evaluate(r, x, 1).real
            fpp = ens.evaluate(r, x, 2).real
            if fpp == 0:
                break
            step = fp / fpp
            x -= step
            if not (a <= x <= b):
                break
            if abs(step) <= 1e-14 * (1 + abs(x)):
                f_here = ens.evaluate(r, x).real
                if np.sign(f_here) != 0 and np.sign(f_here) != np.sign(v[0]):
                    return [(a, x), (x, b)]
                break
    return []


def scan_count(r: ens.Realization, plan: ScanPlan, recover: bool = True) -> int:
    """Certified count of real zeros in the plan window for one realization."""
    v = plan.values(r.xi)
    flips, zero_runs = _bracket_stats(v)
    count = len(flips) + len(zero_runs)
    if recover:
        for i in _dip_candidates(v):
            count += len(_recover_pairs(r, plan.grid, int(i)))
    return count


def scan_roots(r: ens.Realization, plan: ScanPlan, tol: float = 1e-9,
               recover: bool = True) -> RootSet:
    """Positions of the scanned real zeros (bisection-guarded Newton)."""
    v = plan.values(r.xi)
    flips, zero_runs = _bracket_stats(v)
    brackets = [(plan.grid[i], plan.grid[i + 1]) for i in flips]
    if recover:
        for i in _dip_candidates(v):
            brackets.extend(_recover_pairs(r, plan.grid, int(i)))
    roots = [float(plan.grid[i]) for i in zero_runs]
    for a, b in brackets:
        roots.append(_bisect_newton(r, float(a), float(b)))
    roots = np.array(sorted(roots))
    resid = np.array([_scaled_residual(r, x) for x in roots])
    keep = resid <= max(tol, 1e-7)
    roots, resid = roots[keep], resid[keep]

    def fn(z, order=0):
        return ens.evaluate(r, z, order)

    return RootSet(roots.astype(complex), resid, np.ones(len(roots), bool),
                   np.ones(len(roots), int), Segment(*plan.window),
                   {"plan_points": len(plan.grid)}, fn)


def _bisect_newton(r: ens.Realization, a: float, b: float, steps: int = 60) -> float:
    fa = ens.evaluate(r, a).real
    x = 0.5 * (a + b)
    for _ in range(steps):
        f = ens.evaluate(r, x).real
        if f == 0.0:
            return x
        if (f > 0) == (fa > 0):
            a = x
        else:
            b = x
        fp = ens.evaluate(r, x, 1).real
        xn = x - f / fp if fp != 0 else 0.5 * (a + b)
        if not (a < xn < b):
            xn = 0.5 * (a + b)
        if abs(xn - x) <= 4 * _EPS * (1.0 + abs(x)):
            return xn
        x = xn
    return x
