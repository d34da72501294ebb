"""Random-function ensembles F(z) = sum_i xi_i phi_i(z).

Families
--------
kac(n)        phi_i(z) = z^i,                    i = 0..n
weyl          phi_j(z) = z^j / sqrt(j!)          entire, truncated by certificate
elliptic(n)   phi_i(z) = sqrt(C(n,i)) z^i
trig(c, d)    level*sqrt(sum c^2) + sum_j c_j xi_j cos(jz) + sum_j d_j eta_j sin(jz)
taylor(g, L)  phi_k(z) = c_k z^k, c_k^2 = k^{g-1} L(k) / Gamma(g), radius 1
generic       user-supplied basis callables

Coefficient draws have unit variance.  Complex draws use independent real and
imaginary parts of variance 1/2 each, so E|Z - EZ|^2 = 1.  A finite set of
indices below ``exceptional_count`` may carry non-zero means (mean_shifts),
which turns zero sets into level sets.

All spec/law/scale objects are immutable value objects; sampling takes an
explicit per-trial stream, so concurrent trials reproduce sequential results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from math import lgamma
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import DivergentRegion, OutOfValidatedRegion
from .regions import Disk, Region, Segment, Strip, WholePlane
from .rngstreams import RngStream

__all__ = [
    "CoefficientLaw", "LocalScale", "EnsembleSpec", "Realization",
    "SlowlyVarying", "draw", "evaluate", "evaluate_array", "variance_profile",
    "truncation_length", "basis_matrix", "differentiate", "reciprocal_realization",
    "LAW_KINDS",
]

LAW_KINDS = (
    "gaussian-real",
    "gaussian-complex",
    "rademacher",
    "rademacher-complex",
    "uniform-symmetric",
)

_COMPLEX_KINDS = frozenset({"gaussian-complex", "rademacher-complex"})


# --------------------------------------------------------------------------
# coefficient laws
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientLaw:
    """Distribution of the random coefficients, with moment metadata.

    ``moment_epsilon`` and ``moment_bound`` record the (2+eps)-moment bound
    assumed by the matching machinery; ``exceptional_count`` is the number of
    leading indices allowed to carry non-zero means.
    """

    kind: str = "gaussian-real"
    half_width: float = math.sqrt(3.0)          # uniform-symmetric only
    mean_shifts: tuple = ()                     # ((index, complex mean), ...)
    moment_epsilon: float = 1.0
    moment_bound: float = 3.0
    exceptional_count: int = 0

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ValueError(f"unknown law kind {self.kind!r}")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.moment_epsilon <= 0 or self.moment_bound <= 0:
            raise ValueError("moment metadata must be positive")
        if self.exceptional_count < 0:
            raise ValueError("exceptional_count must be non-negative")
        shifts = tuple(sorted((int(i), complex(m)) for i, m in self.mean_shifts))
        object.__setattr__(self, "mean_shifts", shifts)
        n0 = self.exceptional_count
        if shifts:
            if any(i < 0 for i, _ in shifts):
                raise ValueError("mean shift indices must be non-negative")
            n0 = max(n0, 1 + max(i for i, _ in shifts))
        object.__setattr__(self, "exceptional_count", n0)
        if not self.is_complex and any(m.imag != 0 for _, m in shifts):
            raise ValueError("real laws only admit real mean shifts")

    @property
    def is_complex(self) -> bool:
        return self.kind in _COMPLEX_KINDS

    @property
    def shift_map(self) -> dict:
        return dict(self.mean_shifts)

    def mean_vector(self, m: int) -> np.ndarray:
        mu = np.zeros(m, dtype=complex)
        for i, shift in self.mean_shifts:
            if i < m:
                mu[i] = shift
        return mu

    def sample(self, generator: np.random.Generator, m: int) -> np.ndarray:
        """Draw m coefficients; complex dtype iff the law is complex."""
        if self.kind == "gaussian-real":
            x = generator.standard_normal(m)
        elif self.kind == "gaussian-complex":
            x = (generator.standard_normal(m)
                 + 1j * generator.standard_normal(m)) / math.sqrt(2.0)
        elif self.kind == "rademacher":
            x = generator.integers(0, 2, size=m) * 2.0 - 1.0
        elif self.kind == "rademacher-complex":
            re = generator.integers(0, 2, size=m) * 2.0 - 1.0
            im = generator.integers(0, 2, size=m) * 2.0 - 1.0
            x = (re + 1j * im) / math.sqrt(2.0)
        elif self.kind == "uniform-symmetric":
            x = generator.uniform(-self.half_width, self.half_width, size=m)
        else:  # pragma: no cover
            raise AssertionError(self.kind)
        for i, mu in self.mean_shifts:
            if i < m:
                if not np.iscomplexobj(x):
                    x = x.astype(float)
                    x[i] += mu.real
                else:
                    x[i] += mu
        return x

    def variance(self) -> float:
        """Analytic variance E|X - EX|^2 of a single draw."""
        if self.kind == "uniform-symmetric":
            return self.half_width ** 2 / 3.0
        return 1.0

    def describe(self) -> str:
        s = self.kind
        if self.kind == "uniform-symmetric":
            s += f"({self.half_width:g})"
        if self.mean_shifts:
            s += "+shifts"
        return s


# --------------------------------------------------------------------------
# slowly varying catalogue (series with regularly varying coefficients)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SlowlyVarying:
    """Named slowly varying function: constant, or ln(e+t)^power."""

    kind: str = "constant"
    power: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "log-power"):
            raise ValueError("slowly varying catalogue: constant | log-power")

    def value(self, t: float) -> float:
        if self.kind == "constant":
            return 1.0
        return math.log(math.e + t) ** self.power

    def values(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.ones_like(t)
        return np.log(math.e + t) ** self.power

    def describe(self) -> str:
        return "1" if self.kind == "constant" else f"log^{self.power:g}"


# --------------------------------------------------------------------------
# specs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalScale:
    """Scale window: an error scale delta in (0,1) and a probe region."""

    delta: float
    domain: Region

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0,1)")
        if self.domain.is_empty():
            raise ValueError("domain must be nonempty")


@dataclass(frozen=True)
class EnsembleSpec:
    family: str
    law: CoefficientLaw
    scale: LocalScale
    n: Optional[int] = None
    c: Optional[tuple] = None               # trig cosine coefficients, j = 0..n
    d: Optional[tuple] = None               # trig sine coefficients,   j = 1..n
    level: float = 0.0                      # trig level parameter u
    gamma: Optional[float] = None
    slowly_varying: Optional[SlowlyVarying] = None
    basis: Optional[tuple] = None           # generic family callables
    truncation_tol: float = 1e-12

    # -- constructors ------------------------------------------------------
    @staticmethod
    def kac(n: int, law: CoefficientLaw = CoefficientLaw(),
            scale: Optional[LocalScale] = None) -> "EnsembleSpec":
        if n < 1:
            raise ValueError("kac needs n >= 1")
        scale = scale or LocalScale(1.0 / (n + 1), Disk(0j, 1.0 + 1.0 / n))
        return EnsembleSpec("kac", law, scale, n=n)

    @staticmethod
    def weyl(law: CoefficientLaw = CoefficientLaw("gaussian-complex"),
             scale: Optional[LocalScale] = None,
             truncation_tol: float = 1e-12) -> "EnsembleSpec":
        scale = scale or LocalScale(0.2, Disk(0j, 5.0))
        return EnsembleSpec("weyl", law, scale, truncation_tol=truncation_tol)

    @staticmethod
    def elliptic(n: int, law: CoefficientLaw = CoefficientLaw(),
                 scale: Optional[LocalScale] = None) -> "EnsembleSpec":
        if n < 1:
            raise ValueError("elliptic needs n >= 1")
        scale = scale or LocalScale(1.0 / (n + 1), Segment(0.0, 1.0))
        return EnsembleSpec("elliptic", law, scale, n=n)

    @staticmethod
    def trig(c: Sequence[float], d: Optional[Sequence[float]] = None,
             level: float = 0.0, law: CoefficientLaw = CoefficientLaw(),
             scale: Optional[LocalScale] = None) -> "EnsembleSpec":
        c = tuple(float(x) for x in c)
        n = len(c) - 1
        if d is None:
            d = c[1:]
        d = tuple(float(x) for x in d)
        if len(d) < n:
            d = d + (0.0,) * (n - len(d))
        if len(d) != n:
            raise ValueError("need len(d) == len(c) - 1 (zero padding allowed)")
        if not any(c) and not any(d):
            raise ValueError("at least one deterministic coefficient must be nonzero")
        scale = scale or LocalScale(1.0 / max(n, 2),
                                    Strip(0.0, 2.0 * math.pi, 10.0 / max(n, 1)))
        return EnsembleSpec("trig", law, scale, n=n, c=c, d=d, level=float(level))

    @staticmethod
    def taylor(gamma: float, slowly_varying: SlowlyVarying = SlowlyVarying(),
               law: CoefficientLaw = CoefficientLaw(),
               scale: Optional[LocalScale] = None,
               truncation_tol: float = 1e-12) -> "EnsembleSpec":
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        scale = scale or LocalScale(0.1, Disk(0j, 0.9))
        return EnsembleSpec("taylor", law, scale, gamma=float(gamma),
                            slowly_varying=slowly_varying, truncation_tol=truncation_tol)

    @staticmethod
    def generic(basis: Sequence[Callable], law: CoefficientLaw = CoefficientLaw(),
                scale: Optional[LocalScale] = None) -> "EnsembleSpec":
        if not basis:
            raise ValueError("generic basis must be nonempty")
        scale = scale or LocalScale(0.5, Disk(0j, 1.0))
        return EnsembleSpec("generic", law, scale, basis=tuple(basis))

    # -- structure ---------------------------------------------------------
    @property
    def is_infinite(self) -> bool:
        return self.family in ("weyl", "taylor")

    @property
    def term_count(self) -> Optional[int]:
        """Number of basis terms for finite families, else None."""
        if self.family in ("kac", "elliptic"):
            return self.n + 1
        if self.family == "trig":
            return 2 * self.n + 1
        if self.family == "generic":
            return len(self.basis)
        return None

    def validated_region(self) -> Region:
        return self.scale.domain if self.is_infinite else WholePlane()

    def with_law(self, law: CoefficientLaw) -> "EnsembleSpec":
        return replace(self, law=law)

    def describe(self) -> str:
        if self.family in ("kac", "elliptic"):
            return f"{self.family}(n={self.n})"
        if self.family == "trig":
            tag = f"trig(n={self.n}"
            if self.level:
                tag += f",u={self.level:g}"
            return tag + ")"
        if self.family == "taylor":
            return f"taylor(gamma={self.gamma:g},L={self.slowly_varying.describe()})"
        if self.family == "weyl":
            return "weyl"
        return f"generic({len(self.basis)})"

    def deterministic_offset(self, order: int = 0) -> float:
        """Deterministic part of the function (the trig level shift)."""
        if self.family == "trig" and self.level and order == 0:
            return self.level * math.sqrt(sum(x * x for x in self.c))
        return 0.0


# --------------------------------------------------------------------------
# deterministic coefficient sequences
# --------------------------------------------------------------------------

def _taylor_coeffs(spec: EnsembleSpec, m: int) -> np.ndarray:
    """c_k for k = 0..m-1; the k = 0 term reuses the k = 1 magnitude."""
    c1 = math.sqrt(spec.slowly_varying.value(1.0) / math.gamma(spec.gamma))
    if m == 1:
        return np.array([c1])
    k = np.arange(1, m, dtype=float)
    c = np.sqrt(k ** (spec.gamma - 1.0) * spec.slowly_varying.values(k)
                / math.gamma(spec.gamma))
    return np.concatenate([[c1], c])


def _weyl_det(m: int) -> np.ndarray:
    j = np.arange(m, dtype=float)
    return np.exp(-0.5 * np.array([lgamma(v + 1) for v in j]))


def _elliptic_det(n: int) -> np.ndarray:
    i = np.arange(n + 1, dtype=float)
    logb = 0.5 * (lgamma(n + 1)
                  - np.array([lgamma(v + 1) + lgamma(n - v + 1) for v in i]))
    return np.exp(logb)


def _det_coeffs(spec: EnsembleSpec, m: int) -> np.ndarray:
    """Deterministic power-basis weights for the polynomial-type families."""
    if spec.family == "kac":
        return np.ones(m)
    if spec.family == "weyl":
        return _weyl_det(m)
    if spec.family == "elliptic":
        return _elliptic_det(spec.n)
    if spec.family == "taylor":
        return _taylor_coeffs(spec, m)
    raise ValueError(f"{spec.family} has no power-basis form")


def _weyl_anchor(spec: EnsembleSpec) -> Optional[complex]:
    """Rescale anchor: the domain center, when far enough out to need it."""
    dom = spec.scale.domain
    center = getattr(dom, "center", getattr(dom, "point", 0j))
    center = complex(center)
    return center if abs(center) > 5.0 else None


# --------------------------------------------------------------------------
# realizations
# --------------------------------------------------------------------------

class Realization:
    """One drawn coefficient vector with evaluators for F, F', F''."""

    def __init__(self, spec: EnsembleSpec, xi: np.ndarray, truncation_length: int):
        self.spec = spec
        self.xi = np.asarray(xi)
        self.truncation_length = int(truncation_length)
        if self.truncation_length < 1:
            raise ValueError("truncation_length must be positive")
        self._poly_cache: Optional[np.ndarray] = None

    def poly_coeffs(self) -> np.ndarray:
        """Power-basis coefficients (kac/elliptic/weyl/taylor families)."""
        if self._poly_cache is None:
            det = _det_coeffs(self.spec, self.truncation_length)
            self._poly_cache = np.asarray(self.xi * det, dtype=complex)
        return self._poly_cache

    def __call__(self, z, order: int = 0):
        return evaluate(self, z, order)

    def describe(self) -> str:
        return self.spec.describe()


def draw(spec: EnsembleSpec, stream: RngStream) -> Realization:
    """Sample one realization; deterministic given (spec, stream)."""
    m = spec.term_count
    if m is None:
        m = truncation_length(spec, spec.scale.domain, spec.truncation_tol)
    xi = spec.law.sample(stream.generator, m)
    return Realization(spec, xi, m)


def reciprocal_realization(r: Realization) -> Realization:
    """For kac: the degree-reversed polynomial, whose roots are reciprocals."""
    if r.spec.family != "kac":
        raise ValueError("reciprocal trick applies to the kac family")
    return Realization(r.spec, r.xi[::-1].copy(), r.truncation_length)


def differentiate(spec: EnsembleSpec) -> EnsembleSpec:
    """Trig family only: the spec whose draws are distributed like P'.

    Differentiation swaps the cosine and sine blocks with coefficients scaled
    by the frequency; sign flips are absorbed because every catalogue law is
    sign-symmetric about its (zero) mean.
    """
    if spec.family != "trig":
        raise ValueError("differentiate is defined for the trig family")
    if spec.law.mean_shifts:
        raise ValueError("differentiate assumes unshifted (sign-symmetric) draws")
    n = spec.n
    new_c = (0.0,) + tuple(j * spec.d[j - 1] for j in range(1, n + 1))
    new_d = tuple(j * spec.c[j] for j in range(1, n + 1))
    return EnsembleSpec.trig(new_c, new_d, level=0.0, law=spec.law, scale=spec.scale)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def _check_region(spec: EnsembleSpec, zs: np.ndarray):
    if not spec.is_infinite:
        return
    dom = spec.scale.domain
    if isinstance(dom, Disk):
        if np.any(np.abs(zs - dom.center) > dom.radius + 1e-9):
            raise OutOfValidatedRegion("point outside the truncation-validated region")
        return
    for z in np.atleast_1d(zs):
        if dom.signed_distance(complex(z)) < -1e-9:
            raise OutOfValidatedRegion(
                f"z={complex(z):.6g} outside the truncation-validated region")


def evaluate_array(r: Realization, zs, order: int = 0) -> np.ndarray:
    """Vectorized F^(order)(zs) for an array of points."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    zs = np.asarray(zs, dtype=complex)
    spec = r.spec
    _check_region(spec, zs)

    if spec.family in ("kac", "elliptic", "taylor", "weyl"):
        base = r.poly_coeffs()
        anchor = _weyl_anchor(spec) if spec.family == "weyl" else None
        if anchor is None:
            coeffs = npoly.polyder(base, order) if order else base
            if coeffs.size == 0:
                return np.zeros_like(zs)
            return npoly.polyval(zs, coeffs)
        vals = [npoly.polyval(zs, npoly.polyder(base, k) if k else base)
                for k in range(order + 1)]
        zb = np.conj(anchor)
        chi = np.exp(-abs(anchor) ** 2 / 2.0 - (zs - anchor) * zb)
        if order == 0:
            return vals[0] * chi
        if order == 1:
            return (vals[1] - zb * vals[0]) * chi
        return (vals[2] - 2 * zb * vals[1] + zb * zb * vals[0]) * chi

    if spec.family == "trig":
        n = spec.n
        j = np.arange(n + 1, dtype=float)
        jz = np.multiply.outer(zs, j)                      # (m, n+1)
        c = np.asarray(spec.c)
        d = np.concatenate([[0.0], np.asarray(spec.d)])    # align to j = 0..n
        xi_c = r.xi[:n + 1]
        xi_s = np.concatenate([[0.0], r.xi[n + 1:]])
        if order == 0:
            val = np.cos(jz) @ (c * xi_c) + np.sin(jz) @ (d * xi_s)
            return val + spec.deterministic_offset(0)
        if order == 1:
            return -np.sin(jz) @ (j * c * xi_c) + np.cos(jz) @ (j * d * xi_s)
        return -np.cos(jz) @ (j * j * c * xi_c) - np.sin(jz) @ (j * j * d * xi_s)

    if spec.family == "generic":
        out = np.zeros_like(zs)
        for k, f in enumerate(spec.basis):
            out = out + r.xi[k] * _call_basis(f, zs, order)
        return out

    raise AssertionError(spec.family)


def _call_basis(f, zs, order):
    if order == 0:
        return np.array([f(z) for z in zs], dtype=complex)
    deriv = getattr(f, "deriv", None)
    if deriv is None:
        raise ValueError("generic basis element lacks a .deriv(z, order) method")
    return np.array([deriv(z, order) for z in zs], dtype=complex)


def evaluate(r: Realization, z, order: int = 0) -> complex:
    out = evaluate_array(r, np.array([z], dtype=complex), order)
    return complex(out[0])


# --------------------------------------------------------------------------
# basis matrices and the variance profile
# --------------------------------------------------------------------------

def basis_matrix(spec: EnsembleSpec, zs, order: int = 0, m: Optional[int] = None,
                 normalized: bool = False) -> np.ndarray:
    """Matrix B with B[p, i] = phi_i^(order)(zs[p]); F values are B @ xi.

    ``normalized=True`` divides each row by the point's standard deviation
    sqrt(sum_i |phi_i|^2).  For the elliptic family on the real line the
    normalized rows are assembled in log space, so they stay finite for any
    n even where the raw basis would overflow.
    """
    zs = np.asarray(zs, dtype=complex)
    if zs.ndim != 1:
        raise ValueError("zs must be one-dimensional")
    if m is None:
        m = spec.term_count
        if m is None:
            m = truncation_length(spec, spec.scale.domain, spec.truncation_tol)

    if (spec.family == "elliptic" and normalized and order == 0
            and np.all(zs.imag == 0)):
        return _elliptic_normalized_rows(spec, zs.real)

    B = _raw_basis_matrix(spec, zs, order, m)
    if normalized:
        B0 = B if order == 0 else _raw_basis_matrix(spec, zs, 0, m)
        norms = np.sqrt(np.sum(np.abs(B0) ** 2, axis=1))
        norms[norms == 0] = 1.0
        B = B / norms[:, None]
    return B


def _power_matrix(det: np.ndarray, zs: np.ndarray, order: int) -> np.ndarray:
    """Columns det_i * (z^i)^(order), via a running power recurrence."""
    p, m = len(zs), len(det)
    B = np.zeros((p, m), dtype=complex)
    if order == 0:
        pw = np.ones(p, dtype=complex)
        for i in range(m):
            B[:, i] = det[i] * pw
            pw = pw * zs
    else:
        fall = (lambda i: float(i)) if order == 1 else (lambda i: float(i * (i - 1)))
        pw = np.ones(p, dtype=complex)
        for i in range(order, m):
            B[:, i] = det[i] * fall(i) * pw
            pw = pw * zs
    return B


def _raw_basis_matrix(spec, zs, order, m):
    if spec.family in ("kac", "weyl", "taylor", "elliptic"):
        det = _det_coeffs(spec, m)
        anchor = _weyl_anchor(spec) if spec.family == "weyl" else None
        if anchor is None:
            return _power_matrix(det, zs, order)
        zb = np.conj(anchor)
        chi = np.exp(-abs(anchor) ** 2 / 2.0 - (zs - anchor) * zb)
        mats = [_power_matrix(det, zs, k) for k in range(order + 1)]
        if order == 0:
            out = mats[0]
        elif order == 1:
            out = mats[1] - zb * mats[0]
        else:
            out = mats[2] - 2 * zb * mats[1] + zb * zb * mats[0]
        return out * chi[:, None]

    if spec.family == "trig":
        n = spec.n
        j = np.arange(n + 1, dtype=float)
        jz = np.multiply.outer(zs, j)
        c = np.asarray(spec.c)
        d = np.asarray(spec.d)
        if order == 0:
            cosb, sinb = np.cos(jz) * c, np.sin(jz[:, 1:]) * d
        elif order == 1:
            cosb = -np.sin(jz) * (j * c)
            sinb = np.cos(jz[:, 1:]) * (j[1:] * d)
        else:
            cosb = -np.cos(jz) * (j * j * c)
            sinb = -np.sin(jz[:, 1:]) * (j[1:] * j[1:] * d)
        return np.concatenate([cosb, sinb], axis=1)

    if spec.family == "generic":
        cols = [_call_basis(f, zs, order) for f in spec.basis]
        return np.stack(cols, axis=1)

    raise AssertionError(spec.family)


def _elliptic_normalized_rows(spec, xs: np.ndarray) -> np.ndarray:
    """Rows phi_i(x) / (1+x^2)^{n/2} via logs; unit norm at any n."""
    n = spec.n
    i = np.arange(n + 1, dtype=float)
    logb = 0.5 * (lgamma(n + 1)
                  - np.array([lgamma(v + 1) + lgamma(n - v + 1) for v in i]))
    out = np.zeros((len(xs), n + 1))
    for p, x in enumerate(xs):
        if x == 0.0:
            out[p, 0] = 1.0
            continue
        logs = logb + i * math.log(abs(x)) - 0.5 * n * math.log1p(x * x)
        signs = np.ones(n + 1) if x > 0 else (-1.0) ** i
        out[p] = signs * np.exp(logs)
    return out


def variance_profile(spec: EnsembleSpec, z, truncated: bool = False) -> float:
    """sum_i |phi_i(z)|^2, optionally starting at the exceptional count."""
    z = complex(z)
    _check_region(spec, np.array([z]))
    B = basis_matrix(spec, np.array([z], dtype=complex))
    row = np.abs(B[0]) ** 2
    start = spec.law.exceptional_count if truncated else 0
    return float(np.sum(row[start:]))


# --------------------------------------------------------------------------
# truncation certificates for the infinite families
# --------------------------------------------------------------------------

def _region_max_abs(region: Region) -> float:
    if isinstance(region, Disk):
        return abs(region.center) + region.radius
    if isinstance(region, Segment):
        return max(abs(region.lo), abs(region.hi))
    try:
        pts = region.boundary_points(256)
    except Exception as exc:
        raise DivergentRegion(
            f"cannot bound |z| over {type(region).__name__}") from exc
    return float(np.max(np.abs(pts)))


def truncation_length(spec: EnsembleSpec, region: Region, tol: float) -> int:
    """Smallest term count with certified tail variance below
    tol * variance_profile everywhere on the region.

    The tail is bounded by a geometric majorant once the term ratio drops
    below one; the returned count N keeps terms 0..N-1.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")

    if spec.family == "weyl":
        lam = _region_max_abs(region) ** 2
        if lam == 0.0:
            return 1
        # smallest L > lam with t_L / (1 - lam/(L+1)) <= (tol/2) e^lam,
        # where t_L = lam^L / L! and e^lam is the full variance at max |z|
        log_target = math.log(tol / 2.0) + lam
        L = max(2, int(lam) + 1)
        while True:
            q = lam / (L + 1)
            log_tail = L * math.log(lam) - lgamma(L + 1) - math.log(1.0 - q)
            if q < 1.0 and log_tail <= log_target:
                return L
            L += 1

    if spec.family == "taylor":
        rho = _region_max_abs(region)
        if rho >= 1.0 - 1e-12:
            raise DivergentRegion("taylor regions must stay strictly inside |z| = 1")
        if rho == 0.0:
            return 1
        g, sv = spec.gamma, spec.slowly_varying
        rho2 = rho * rho
        c1sq = sv.value(1.0) / math.gamma(g)
        total = c1sq * (1.0 + rho2)          # k = 0 stand-in plus k = 1
        k = 1
        while True:
            grow = ((k + 1) / k) ** max(g - 1.0, 0.0)
            if sv.kind == "log-power" and sv.power > 0:
                grow *= (math.log(math.e + k + 1) / math.log(math.e + k)) ** sv.power
            q = rho2 * grow
            t_k = (k ** (g - 1.0) * sv.value(float(k)) / math.gamma(g)) * rho2 ** k
            if q < 1.0 and t_k * q / (1.0 - q) <= tol * total:
                return k + 1
            k += 1
            total += (k ** (g - 1.0) * sv.value(float(k)) / math.gamma(g)) * rho2 ** k
            if k > 10_000_000:
                raise DivergentRegion("truncation certificate did not converge")

    raise ValueError("truncation certificates exist for the weyl and taylor families")
