"""Monte Carlo estimators for local root statistics.

Estimators draw one realization per trial from a (master seed, trial index)
keyed stream, so results are independent of lane count and execution order.
Estimates accumulate exact rational sums, which makes merging associative
bit for bit; trial values are mostly windowed root counts, smoothed linear
statistics, ordered k-tuple correlation sums, and pair-repulsion indicators.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from . import ensembles as ens
from . import rootfind as rf
from .errors import ArityMismatch, NumericFailureBudget, RootlabError
from .regions import Disk, Segment
from .rngstreams import trial_stream

__all__ = [
    "Estimate", "ComparisonReport", "BumpFunction",
    "windowed_count", "linear_statistic", "correlation_sum",
    "pair_repulsion_prob", "compare",
]

_FAILURE_BUDGET = 0.01


# --------------------------------------------------------------------------
# estimates
# --------------------------------------------------------------------------

@dataclass
class Estimate:
    """Mean and standard error with exact (rational) running sums.

    Exact sums make ``merge`` associative and order-free: merging any
    grouping of sub-estimates reproduces the estimate of the concatenated
    trial set bit for bit.
    """

    sum_x: Fraction
    sum_xx: Fraction
    trials: int
    seed: int
    label: str = ""

    @staticmethod
    def from_values(values: Sequence[float], seed: int, label: str = "") -> "Estimate":
        s = Fraction(0)
        ss = Fraction(0)
        for v in values:
            fv = Fraction(float(v))
            s += fv
            ss += fv * fv
        return Estimate(s, ss, len(values), seed, label)

    @property
    def mean(self) -> float:
        if self.trials == 0:
            return math.nan
        return float(self.sum_x / self.trials)

    @property
    def m2(self) -> float:
        return float(self.sum_xx)

    @property
    def variance(self) -> float:
        if self.trials < 2:
            return 0.0
        v = (self.sum_xx - self.sum_x * self.sum_x / self.trials) / (self.trials - 1)
        return max(float(v), 0.0)

    @property
    def stderr(self) -> float:
        if self.trials < 2:
            return 0.0
        return math.sqrt(self.variance / self.trials)

    def merge(self, other: "Estimate") -> "Estimate":
        return Estimate(self.sum_x + other.sum_x, self.sum_xx + other.sum_xx,
                        self.trials + other.trials, self.seed,
                        self.label or other.label)

    def __repr__(self):
        return (f"Estimate({self.label or 'value'} = {self.mean:.6g} "
                f"+- {self.stderr:.3g}, trials={self.trials}, seed={self.seed})")


@dataclass
class ComparisonReport:
    estimate_a: Estimate
    estimate_b: Estimate
    difference: float
    pooled_stderr: float
    z_score: float


def compare(a: Estimate, b: Estimate) -> ComparisonReport:
    """Difference a - b with pooled standard error and z-score."""
    if a.trials < 2 or b.trials < 2:
        raise ValueError("compare needs at least 2 trials per estimate")
    diff = a.mean - b.mean
    pooled = math.sqrt(a.stderr ** 2 + b.stderr ** 2)
    if pooled > 0:
        z = diff / pooled
    else:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return ComparisonReport(a, b, diff, pooled, z)


# --------------------------------------------------------------------------
# bump test functions
# --------------------------------------------------------------------------

def _profile(s: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1-s^2)) inside |s| < 1, exactly 0 outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    return out


def _profile_derivative_rationals(max_order: int):
    """g^(m)(s) = g(s) * N_m(s) / (1-s^2)^{k_m}; returns [(N_m, k_m)]."""
    from numpy.polynomial import Polynomial as Poly
    den = Poly([1.0, 0.0, -1.0])          # 1 - s^2
    rats = [(Poly([1.0]), 0)]
    mul = (Poly([0.0, -2.0]), 2)          # -2s / (1-s^2)^2, from g'/g
    for _ in range(max_order):
        n, k = rats[-1]
        dn = (n.deriv() * den + 2 * k * Poly([0.0, 1.0]) * n, k + 1)
        pr = (n * mul[0], k + mul[1])
        kk = max(dn[1], pr[1])
        num = dn[0] * den ** (kk - dn[1]) + pr[0] * den ** (kk - pr[1])
        rats.append((num, kk))
    return rats


class BumpFunction:
    """Product of per-factor bumps: k real intervals and l complex disks.

    Each factor evaluates exp(1 - 1/(1-s^2)) of the normalized distance s,
    equals 1 at its center and vanishes identically outside its interval or
    disk.  Sampled sups of the derivatives up to order 2(k+l)+4 are recorded
    at construction.
    """

    def __init__(self, real_centers: Sequence[float] = (),
                 real_radii: Sequence[float] = (),
                 complex_centers: Sequence[complex] = (),
                 complex_radii: Sequence[float] = ()):
        self.real_centers = tuple(float(c) for c in real_centers)
        self.real_radii = tuple(float(r) for r in real_radii)
        self.complex_centers = tuple(complex(c) for c in complex_centers)
        self.complex_radii = tuple(float(r) for r in complex_radii)
        if len(self.real_centers) != len(self.real_radii):
            raise ValueError("real centers/radii length mismatch")
        if len(self.complex_centers) != len(self.complex_radii):
            raise ValueError("complex centers/radii length mismatch")
        if any(r <= 0 for r in self.real_radii + self.complex_radii):
            raise ValueError("radii must be positive")
        self.k = len(self.real_centers)
        self.l = len(self.complex_centers)
        if self.k + self.l == 0:
            raise ValueError("at least one factor required")
        self.gradient_sups = self._sample_gradient_sups(2 * (self.k + self.l) + 4)

    # -- constructors --------------------------------------------------
    @staticmethod
    def real_bump(center: float, radius: float) -> "BumpFunction":
        return BumpFunction([center], [radius])

    @staticmethod
    def complex_bump(center: complex, radius: float) -> "BumpFunction":
        return BumpFunction([], [], [center], [radius])

    # -- evaluation ----------------------------------------------------
    @property
    def arity(self) -> int:
        return self.k + self.l

    def factor_values(self, index: int, points: np.ndarray) -> np.ndarray:
        """Values of one factor (real factors first, then complex)."""
        if index < self.k:
            s = (np.asarray(points, dtype=float) - self.real_centers[index]) \
                / self.real_radii[index]
        else:
            j = index - self.k
            s = np.abs(np.asarray(points, dtype=complex)
                       - self.complex_centers[j]) / self.complex_radii[j]
        return _profile(s)

    def __call__(self, *args):
        if len(args) != self.arity:
            raise ArityMismatch(f"expected {self.arity} arguments, got {len(args)}")
        out = 1.0
        for i, a in enumerate(args):
            out = out * self.factor_values(i, np.asarray([a]))[0]
        return out

    def support_segments(self) -> list[Segment]:
        return [Segment(c - r, c + r)
                for c, r in zip(self.real_centers, self.real_radii)]

    def support_disks(self) -> list[Disk]:
        return [Disk(c, r)
                for c, r in zip(self.complex_centers, self.complex_radii)]

    def laplacian(self, z: complex) -> float:
        """Analytic Laplacian of a single complex-disk bump."""
        if (self.k, self.l) != (0, 1):
            raise ArityMismatch("laplacian is defined for one complex factor")
        r = self.complex_radii[0]
        s = abs(complex(z) - self.complex_centers[0]) / r
        if s >= 1.0:
            return 0.0
        den = 1.0 - s * s
        g = math.exp(1.0 - 1.0 / den)
        gp_over_s = -2.0 / den ** 2 * g
        gpp = (-2.0 / den ** 2 - 8.0 * s * s / den ** 3
               + 4.0 * s * s / den ** 4) * g
        return (gpp + gp_over_s) / r ** 2

    # -- recorded derivative sups ---------------------------------------
    def _sample_gradient_sups(self, max_order: int) -> tuple:
        rats = _profile_derivative_rationals(max_order)
        s = np.linspace(-0.999, 0.999, 4001)
        g = _profile(s)
        den = 1.0 - s * s
        prof_sups = []
        for num, kk in rats:
            prof_sups.append(float(np.max(np.abs(g * num(s) / den ** kk))))
        fac_sups = []
        for r in self.real_radii:
            fac_sups.append([prof_sups[m] / r ** m for m in range(max_order + 1)])
        for r in self.complex_radii:
            # radial 2-D factor: estimated via the 1-D profile chain
            fac_sups.append([prof_sups[m] * (2.0 ** m) / r ** m
                             for m in range(max_order + 1)])
        total = [1.0] + [0.0] * max_order
        for sups in fac_sups:
            new = [0.0] * (max_order + 1)
            for a in range(max_order + 1):
                best = 0.0
                for b in range(a + 1):
                    best = max(best, total[a - b] * sups[b])
                new[a] = best
            total = new
        return tuple(total)


# --------------------------------------------------------------------------
# trial driver
# --------------------------------------------------------------------------

def _run_lanes(trials: int, lanes: int, block_fn: Callable[[np.ndarray], None]):
    idx = np.arange(trials)
    if lanes <= 1:
        block_fn(idx)
        return
    blocks = np.array_split(idx, lanes)
    with ThreadPoolExecutor(max_workers=lanes) as pool:
        futures = [pool.submit(block_fn, b) for b in blocks if len(b)]
        for f in futures:
            f.result()


def _finish(values: np.ndarray, seed: int, label: str) -> Estimate:
    bad = np.isnan(values)
    failures = int(np.sum(bad))
    if failures > _FAILURE_BUDGET * len(values):
        raise NumericFailureBudget(
            f"{failures}/{len(values)} trials failed (> {_FAILURE_BUDGET:.0%})")
    return Estimate.from_values(values[~bad], seed, label)


def _draw_block(spec: ens.EnsembleSpec, m: int, seed: int,
                idx: np.ndarray) -> np.ndarray:
    rows = np.empty((len(idx), m),
                    dtype=complex if spec.law.is_complex else float)
    for p, i in enumerate(idx):
        rows[p] = spec.law.sample(trial_stream(seed, int(i)).generator, m)
    return rows


def _term_count(spec: ens.EnsembleSpec) -> int:
    m = spec.term_count
    if m is None:
        m = ens.truncation_length(spec, spec.scale.domain, spec.truncation_tol)
    return m


# --------------------------------------------------------------------------
# windowed real-root counts
# --------------------------------------------------------------------------

def _count_value_rows(V: np.ndarray):
    """Counts per row plus dip-candidate (row, node) pairs for recovery."""
    s = np.sign(V)
    nz = s != 0
    flips = ((s[:, :-1] * s[:, 1:]) < 0) & nz[:, :-1] & nz[:, 1:]
    counts = flips.sum(axis=1)
    zero = ~nz
    prev = np.concatenate([np.zeros((V.shape[0], 1), dtype=bool), zero[:, :-1]], axis=1)
    counts = counts + (zero & ~prev).sum(axis=1)
    a = np.abs(V)
    med = np.median(a, axis=1)
    same = (s[:, :-2] == s[:, 1:-1]) & (s[:, 1:-1] == s[:, 2:]) & (s[:, 1:-1] != 0)
    dip = ((a[:, 1:-1] < a[:, :-2]) & (a[:, 1:-1] < a[:, 2:])
           & (a[:, 1:-1] < 0.5 * np.minimum(a[:, :-2], a[:, 2:]))
           & (a[:, 1:-1] < 0.35 * med[:, None]))
    rows, cols = np.nonzero(same & dip)
    return counts.astype(float), list(zip(rows.tolist(), (cols + 1).tolist()))


def _chunk_size(npts: int) -> int:
    return max(16, min(1024, int(4e6 / max(npts, 1))))


def windowed_count(spec: ens.EnsembleSpec, window: tuple[float, float],
                   trials: int, seed: int, law: Optional[ens.CoefficientLaw] = None,
                   lanes: int = 1, per_gap: int = 40) -> Estimate:
    """Mean number of real zeros in the window.

    Certified sign-change scan per trial.  An unbounded window on the kac
    family is counted as roots in [-1, 1] plus roots of the degree-reversed
    polynomial strictly inside (-1, 1), whose zeros are the reciprocals of
    the original zeros outside.
    """
    if trials < 1:
        raise ValueError("trials >= 1 required")
    eff = spec.with_law(law) if law is not None else spec
    lo, hi = float(window[0]), float(window[1])
    label = f"count[{lo:g},{hi:g}]/{eff.describe()}/{eff.law.describe()}"
    m = _term_count(eff)
    values = np.full(trials, np.nan)

    if eff.family == "kac" and math.isinf(lo) and math.isinf(hi):
        plan = rf.make_scan_plan(eff, (-1.0, 1.0), per_gap)
        boundary = np.nonzero(np.abs(np.abs(plan.grid) - 1.0) <= 1e-12)[0]

        def block(idx):
            for start in range(0, len(idx), _chunk_size(len(plan.grid))):
                sub = idx[start:start + _chunk_size(len(plan.grid))]
                rows = _draw_block(eff, m, seed, sub).real
                vp = plan.values_batch(rows)
                vq = plan.values_batch(rows[:, ::-1])
                vq[:, boundary] = np.where(vq[:, boundary] == 0.0, 1.0,
                                           vq[:, boundary])
                cp, dips_p = _count_value_rows(vp)
                cq, dips_q = _count_value_rows(vq)
                for t, node in dips_p:
                    r = ens.Realization(eff, rows[t], m)
                    cp[t] += len(rf._recover_pairs(r, plan.grid, node))
                for t, node in dips_q:
                    r = ens.Realization(eff, rows[t][::-1], m)
                    cq[t] += len(rf._recover_pairs(r, plan.grid, node))
                values[sub] = cp + cq

        _run_lanes(trials, lanes, block)
        return _finish(values, seed, label)

    if math.isinf(lo) or math.isinf(hi):
        if eff.family == "elliptic":
            lim = math.tan(math.pi / 2 - math.pi / (per_gap * 40 * math.sqrt(eff.n)))
            lo = -lim if math.isinf(lo) else lo
            hi = lim if math.isinf(hi) else hi
        elif eff.family == "kac":
            lo = -3200.0 if math.isinf(lo) else lo
            hi = 3200.0 if math.isinf(hi) else hi
        else:
            raise ValueError(f"unbounded windows unsupported for {eff.family}")

    plan = rf.make_scan_plan(eff, (lo, hi), per_gap)

    def block(idx):
        for start in range(0, len(idx), _chunk_size(len(plan.grid))):
            sub = idx[start:start + _chunk_size(len(plan.grid))]
            rows = _draw_block(eff, m, seed, sub).real
            V = plan.values_batch(rows)
            counts, dips = _count_value_rows(V)
            for t, node in dips:
                try:
                    r = ens.Realization(eff, rows[t], m)
                    counts[t] += len(rf._recover_pairs(r, plan.grid, node))
                except RootlabError:
                    counts[t] = np.nan
            values[sub] = counts

    _run_lanes(trials, lanes, block)
    return _finish(values, seed, label)


# --------------------------------------------------------------------------
# smoothed linear statistics
# --------------------------------------------------------------------------

def linear_statistic(spec: ens.EnsembleSpec, G: BumpFunction, trials: int,
                     seed: int, law: Optional[ens.CoefficientLaw] = None,
                     lanes: int = 1) -> Estimate:
    """Mean of sum_roots G(zeta) over the roots inside supp G."""
    if G.arity != 1:
        raise ArityMismatch("linear_statistic needs a univariate test function")
    eff = spec.with_law(law) if law is not None else spec
    m = _term_count(eff)
    values = np.full(trials, np.nan)
    label = f"linear/{eff.describe()}/{eff.law.describe()}"

    if G.k == 1:
        c, rad = G.real_centers[0], G.real_radii[0]
        plan = rf.make_scan_plan(eff, (c - rad, c + rad))

        def trial(i: int) -> float:
            r = ens.draw(eff, trial_stream(seed, i))
            rs = rf.scan_roots(r, plan)
            xs = rs.real_values()
            return float(np.sum(G.factor_values(0, xs))) if len(xs) else 0.0
    else:
        c, rad = G.complex_centers[0], G.complex_radii[0]

        def trial(i: int) -> float:
            r = ens.draw(eff, trial_stream(seed, i))
            if eff.family == "trig":
                rs = rf.roots_trig(r)
            else:
                rs = rf.roots_in_disk(r, c, rad)
            vals = G.factor_values(G.k, rs.roots) * rs.multiplicities
            return float(np.sum(vals.real))

    def block(idx):
        for i in idx:
            try:
                values[i] = trial(int(i))
            except RootlabError:
                pass

    _run_lanes(trials, lanes, block)
    return _finish(values, seed, label)


# --------------------------------------------------------------------------
# ordered k-tuple correlation sums
# --------------------------------------------------------------------------

def correlation_sum(rs: rf.RootSet, G: BumpFunction, k: int, l: int = 0) -> complex:
    """Sum of G over all ordered (k+l)-tuples of roots, repetitions allowed.

    Real slots range over the real roots, complex slots over the roots in
    the open upper half plane; for product test functions the ordered-tuple
    sum factors exactly into per-factor sums.
    """
    if k < 1 and l < 1:
        raise ArityMismatch("need k + l >= 1")
    if (G.k, G.l) != (k, l):
        raise ArityMismatch(f"test function has shape ({G.k},{G.l}), "
                            f"requested ({k},{l})")
    xr = rs.real_values()
    upper = rs.roots.imag > 0.0
    zu = np.repeat(rs.roots[upper], rs.multiplicities[upper])
    out = 1.0 + 0.0j
    for i in range(k):
        out *= complex(np.sum(G.factor_values(i, xr))) if len(xr) else 0.0
    for j in range(l):
        out *= complex(np.sum(G.factor_values(k + j, zu))) if len(zu) else 0.0
    return out


# --------------------------------------------------------------------------
# pair repulsion probability
# --------------------------------------------------------------------------

def pair_repulsion_prob(spec: ens.EnsembleSpec, x: float, gamma: float,
                        trials: int, seed: int,
                        law: Optional[ens.CoefficientLaw] = None,
                        lanes: int = 1, n_points: int = 256) -> Estimate:
    """Fraction of trials with at least two zeros in B(x, gamma)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    eff = spec.with_law(law) if law is not None else spec
    if not eff.validated_region().covers(Disk(complex(x), gamma)):
        raise RootlabError("B(x, gamma) exceeds the validated region")
    m = _term_count(eff)
    th = 2.0 * np.pi * np.arange(n_points) / n_points
    contour = complex(x) + gamma * np.exp(1j * th)
    B = ens.basis_matrix(eff, contour, m=m)
    offset = eff.deterministic_offset(0)
    values = np.full(trials, np.nan)
    label = f"repulsion[x={x:g},gamma={gamma:g}]/{eff.describe()}/{eff.law.describe()}"

    def block(idx):
        for start in range(0, len(idx), _chunk_size(n_points)):
            sub = idx[start:start + _chunk_size(n_points)]
            rows = _draw_block(eff, m, seed, sub)
            V = rows @ B.T + offset
            for p, i in enumerate(sub):
                v = V[p]
                if np.min(np.abs(v)) < 1e-12 * max(float(np.median(np.abs(v))), 1e-300):
                    w = None
                else:
                    total, step = rf.winding_count(v)
                    w = int(round(total)) if (
                        step <= math.pi / 2 and abs(total - round(total)) < 1e-2) else None
                if w is None:
                    r = ens.Realization(eff, rows[p], m)
                    try:
                        w = rf.count_in_disk(r, complex(x), gamma)
                    except RootlabError:
                        continue
                values[i] = 1.0 if w >= 2 else 0.0

    _run_lanes(trials, lanes, block)
    return _finish(values, seed, label)
