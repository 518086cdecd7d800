"""Rotationally symmetric model manifolds.

A model manifold is (0, inf) x S^{d-1} with metric dr^2 + psi(r)^2 dTheta^2.
Everything geometric (sphere areas, ball volumes, curvatures, the radial
Laplacian) is derived from the warping function psi, so a profile is just
psi with two derivatives plus the dimension.

Profiles whose natural formula is singular or non-smooth at the pole get a
quintic cap on [0, r_cap] matching psi(0)=0, psi'(0)=1, psi''(0)=0 and the
family's value and first two derivatives at r_cap.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

__all__ = [
    "ManifoldProfile",
    "CartanHadamardVerdict",
    "QuadratureError",
    "eval_profile",
    "log_psi",
    "dlog_psi",
    "surface_area",
    "log_surface_area",
    "volume",
    "sphere_measure",
    "curvatures",
    "mean_curvature",
    "is_cartan_hadamard",
    "surface_area_inverse",
]

FAMILIES = ("euclidean", "hyperbolic", "intermediate", "tabulated")


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


def sphere_measure(d):
    """Surface measure of the unit (d-1)-sphere, 2 pi^{d/2} / Gamma(d/2)."""
    return math.exp(math.log(2.0) + 0.5 * d * math.log(math.pi) - gammaln(0.5 * d))


def _cap_coefficients(r_cap, psi0, psi1, psi2):
    # p(r) = r + c3 r^3 + c4 r^4 + c5 r^5 has p(0)=0, p'(0)=1, p''(0)=0
    R = r_cap
    A = np.array([
        [R**3, R**4, R**5],
        [3 * R**2, 4 * R**3, 5 * R**4],
        [6 * R, 12 * R**2, 20 * R**3],
    ])
    b = np.array([psi0 - R, psi1 - 1.0, psi2])
    c3, c4, c5 = np.linalg.solve(A, b)
    return (0.0, 1.0, 0.0, float(c3), float(c4), float(c5))


@dataclass(frozen=True)
class ManifoldProfile:
    """Warping function of a model manifold.

    Use the class constructors (:meth:`euclidean`, :meth:`hyperbolic`,
    :meth:`intermediate`, :meth:`tabulated`) rather than calling this
    directly.
    """

    d: int
    family: str
    params: dict = field(default_factory=dict)
    r_cap: float = 0.0
    cap_coeffs: tuple = ()
    _table: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.d}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown profile family {self.family!r}")

    # -- constructors -----------------------------------------------------
    @classmethod
    def euclidean(cls, d):
        return cls(d=d, family="euclidean")

    @classmethod
    def hyperbolic(cls, d, k=1.0):
        if k <= 0:
            raise ValueError("hyperbolic curvature scale k must be positive")
        return cls(d=d, family="hyperbolic", params={"k": float(k)})

    @classmethod
    def intermediate(cls, d, a, c1=1.0, c2=None, r_cap=1.0):
        """psi(r) = c1 exp(c2 r^a) for r >= r_cap, quintic cap below.

        ``c2`` defaults to 1/(d-1), i.e. psi^{d-1} = c1^{d-1} exp(r^a).
        """
        if not 0.0 < a < 1.0:
            raise ValueError("intermediate exponent a must lie in (0, 1)")
        if c2 is None:
            c2 = 1.0 / (d - 1)
        if c1 <= 0 or c2 <= 0 or r_cap <= 0:
            raise ValueError("c1, c2 and r_cap must be positive")
        params = {"a": float(a), "c1": float(c1), "c2": float(c2)}
        p0, p1, p2 = _intermediate_tail(params, np.array(float(r_cap)))
        coeffs = _cap_coefficients(r_cap, float(p0), float(p1), float(p2))
        prof = cls(d=d, family="intermediate", params=params, r_cap=float(r_cap),
                   cap_coeffs=coeffs)
        prof._check_cap()
        return prof

    @classmethod
    def tabulated(cls, d, r, psi):
        """Profile interpolated from samples by monotone (PCHIP) cubics."""
        r = np.asarray(r, dtype=float)
        psi = np.asarray(psi, dtype=float)
        if r.ndim != 1 or r.shape != psi.shape or r.size < 4:
            raise ValueError("need matching 1-D arrays with at least 4 samples")
        if np.any(np.diff(r) <= 0):
            raise ValueError("sample radii must be strictly increasing")
        if r[0] != 0.0 or psi[0] != 0.0:
            raise ValueError("tabulated profile must start at (0, 0)")
        if np.any(psi[1:] <= 0):
            raise ValueError("psi must be positive away from the pole")
        interp = PchipInterpolator(r, psi, extrapolate=False)
        return cls(d=d, family="tabulated", params={"r_max": float(r[-1])},
                   _table=(interp, interp.derivative(1), interp.derivative(2)))

    @classmethod
    def from_csv(cls, d, path):
        """Load a tabulated profile from a two-column (r, psi) CSV file."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header
        data = np.array(rows)
        return cls.tabulated(d, data[:, 0], data[:, 1])

    def _check_cap(self, n=2001):
        rr = np.linspace(0.0, self.r_cap, n)[1:]
        p, dp, _ = _poly_eval(self.cap_coeffs, rr)
        if np.any(p <= 0) or np.any(dp <= 0):
            raise ValueError(
                "quintic cap violates psi > 0 or psi' > 0; choose another r_cap")

    def describe(self):
        out = {"family": self.family, "d": self.d}
        out.update(self.params)
        if self.family == "intermediate":
            out["r_cap"] = self.r_cap
            out["cap_coeffs"] = list(self.cap_coeffs)
        return out

    @property
    def lower_accuracy(self):
        """True when second derivatives come from an interpolant."""
        return self.family == "tabulated"


def _poly_eval(coeffs, r):
    p = np.polynomial.polynomial
    c = np.asarray(coeffs)
    return p.polyval(r, c), p.polyval(r, p.polyder(c)), p.polyval(r, p.polyder(c, 2))


def _intermediate_tail(params, r):
    a, c1, c2 = params["a"], params["c1"], params["c2"]
    with np.errstate(over="ignore"):
        psi = c1 * np.exp(c2 * r**a)
    g = a * c2 * r ** (a - 1)
    return psi, g * psi, psi * (g * g + a * (a - 1) * c2 * r ** (a - 2))


def _as_radius(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise ValueError("radius must be nonnegative")
    return r


def _table_range(M, r):
    if np.any(r > M.params["r_max"]):
        raise ValueError(f"radius beyond tabulated range r_max={M.params['r_max']}")


def eval_profile(M, r):
    """Return (psi, psi', psi'') at radius ``r`` (scalar or array).

    Hyperbolic profiles overflow to inf beyond r ~ 710/sqrt(k); use
    :func:`log_psi` and :func:`dlog_psi` at large radii.
    """
    r = _as_radius(r)
    fam = M.family
    if fam == "euclidean":
        out = (r.copy(), np.ones_like(r), np.zeros_like(r))
    elif fam == "hyperbolic":
        s = math.sqrt(M.params["k"])
        with np.errstate(over="ignore"):
            out = (np.sinh(s * r) / s, np.cosh(s * r), s * np.sinh(s * r))
    elif fam == "intermediate":
        inner = r < M.r_cap
        rc = np.where(inner, M.r_cap, r)
        t0, t1, t2 = _intermediate_tail(M.params, rc)
        p0, p1, p2 = _poly_eval(M.cap_coeffs, np.where(inner, r, 0.0))
        out = (np.where(inner, p0, t0), np.where(inner, p1, t1), np.where(inner, p2, t2))
    else:
        _table_range(M, r)
        f, df, ddf = M._table
        out = (f(r), df(r), ddf(r))
    if np.ndim(r) == 0:
        return tuple(float(v) for v in out)
    return out


def log_psi(M, r):
    """log psi(r), finite for all r > 0 (-inf at the pole)."""
    r = _as_radius(r)
    fam = M.family
    with np.errstate(divide="ignore"):
        if fam == "euclidean":
            out = np.log(r)
        elif fam == "hyperbolic":
            s = math.sqrt(M.params["k"])
            x = s * r
            out = x + np.log(-np.expm1(-2.0 * x)) - math.log(2.0 * s)
        elif fam == "intermediate":
            a, c1, c2 = M.params["a"], M.params["c1"], M.params["c2"]
            inner = r < M.r_cap
            p0 = _poly_eval(M.cap_coeffs, np.where(inner, r, 0.0))[0]
            out = np.where(inner, np.log(np.where(inner, p0, 1.0)),
                           math.log(c1) + c2 * np.where(inner, M.r_cap, r) ** a)
        else:
            _table_range(M, r)
            out = np.log(M._table[0](r))
    return out if np.ndim(out) else float(out)


def dlog_psi(M, r):
    """psi'(r)/psi(r), overflow-safe; +inf at the pole."""
    r = _as_radius(r)
    fam = M.family
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam == "euclidean":
            out = 1.0 / r
        elif fam == "hyperbolic":
            s = math.sqrt(M.params["k"])
            out = s / np.tanh(s * r)
        elif fam == "intermediate":
            a, c2 = M.params["a"], M.params["c2"]
            inner = r < M.r_cap
            p0, p1, _ = _poly_eval(M.cap_coeffs, np.where(inner, r, 0.0))
            out = np.where(inner, p1 / p0, a * c2 * np.where(inner, M.r_cap, r) ** (a - 1))
        else:
            _table_range(M, r)
            out = M._table[1](r) / M._table[0](r)
    return out if np.ndim(out) else float(out)


def _ddpsi_over_psi(M, r):
    fam = M.family
    if fam == "euclidean":
        return np.zeros_like(r)
    if fam == "hyperbolic":
        return np.full_like(r, M.params["k"])
    if fam == "intermediate":
        a, c2 = M.params["a"], M.params["c2"]
        inner = r < M.r_cap
        p0, _, p2 = _poly_eval(M.cap_coeffs, np.where(inner, r, 1.0))
        ro = np.where(inner, M.r_cap, r)
        g = a * c2 * ro ** (a - 1)
        return np.where(inner, p2 / p0, g * g + a * (a - 1) * c2 * ro ** (a - 2))
    _table_range(M, r)
    return M._table[2](r) / M._table[0](r)


def log_surface_area(M, r):
    """log S(r); finite where the profile's log is."""
    return math.log(sphere_measure(M.d)) + (M.d - 1) * np.asarray(log_psi(M, r))


def surface_area(M, r):
    """S(r) = |S^{d-1}| psi(r)^{d-1}, the area of the geodesic sphere."""
    out = np.exp(log_surface_area(M, r))
    return out if np.ndim(out) else float(out)


def _quad(f, a, b, points=None, epsrel=1e-12):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info = integrate.quad(f, a, b, points=points, epsabs=0.0,
                                        epsrel=epsrel, limit=500, full_output=True)[:3]
    if not np.isfinite(val) or err > max(1e3 * epsrel * abs(val), 1e-300):
        raise QuadratureError(
            f"quadrature on [{a}, {b}] did not converge (value {val}, error {err})")
    return val


def volume(M, r, epsrel=1e-12):
    """V(r) = int_0^r S(t) dt by adaptive quadrature."""
    r = float(_as_radius(r))
    if r == 0.0:
        return 0.0
    pts = None
    if M.family == "intermediate" and M.r_cap < r:
        pts = [M.r_cap]
    return _quad(lambda t: surface_area(M, t), 0.0, r, points=pts, epsrel=epsrel)


def mean_curvature(M, r):
    """(d-1) psi'/psi, the drift coefficient of the radial Laplacian."""
    return (M.d - 1) * np.asarray(dlog_psi(M, r))


def curvatures(M, r):
    """Return (radial, orthogonal, mean) curvature at r > 0.

    radial = -psi''/psi, orthogonal = (1 - psi'^2)/psi^2 and
    mean = (d-1) psi'/psi.
    """
    r = _as_radius(r)
    if np.any(r == 0):
        raise ValueError("curvatures are singular at the pole; use r > 0")
    radial = -_ddpsi_over_psi(M, r)
    lp = np.asarray(log_psi(M, r))
    g = np.asarray(dlog_psi(M, r))
    # factored form where psi is representable, log form beyond
    small = lp < 300.0
    rs = np.where(small, r, 1.0)
    p, dp, _ = eval_profile(M, rs) if np.ndim(r) else eval_profile(M, float(rs))
    with np.errstate(over="ignore"):
        orth = np.where(small, (1.0 - dp) * (1.0 + dp) / np.asarray(p) ** 2,
                        np.exp(-2.0 * lp) - g * g)
    mean = (M.d - 1) * g
    if np.ndim(r) == 0:
        return float(radial), float(orth), float(mean)
    return radial, orth, mean


@dataclass
class CartanHadamardVerdict:
    verdict: bool
    r_max: float
    n_samples: int
    sampling: str
    max_radial: float
    max_orthogonal: float
    r_worst: float


def is_cartan_hadamard(M, r_max, n_samples=400, tol=1e-12):
    """Check both sectional curvatures are <= 0 on sampled radii in (0, r_max].

    Half the samples are geometric on [1e-4 r_max, r_max], half uniform on
    (0, r_max].  ``tol`` absorbs round-off in exactly-flat cases.
    """
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    n_geo = n_samples // 2
    rr = np.unique(np.concatenate([
        np.geomspace(1e-4 * r_max, r_max, n_geo),
        np.linspace(r_max / (n_samples - n_geo), r_max, n_samples - n_geo),
    ]))
    rad, orth, _ = curvatures(M, rr)
    worst = np.maximum(rad, orth)
    i = int(np.argmax(worst))
    return CartanHadamardVerdict(
        verdict=bool(np.all(worst <= tol)),
        r_max=float(r_max),
        n_samples=int(rr.size),
        sampling=f"{n_geo} geometric on [1e-4*r_max, r_max] + "
                 f"{n_samples - n_geo} uniform on (0, r_max]",
        max_radial=float(np.max(rad)),
        max_orthogonal=float(np.max(orth)),
        r_worst=float(rr[i]),
    )


def surface_area_inverse(M, s, r_hi):
    """Radius r with S(r) = s, by bracketed bisection on [0, r_hi].

    Raises ValueError when s exceeds S(r_hi); S must be increasing.
    """
    if s <= 0:
        return 0.0
    log_s = math.log(s)
    f = lambda r: float(log_surface_area(M, r)) - log_s
    if f(r_hi) < 0:
        raise ValueError(f"S(r_hi={r_hi}) is below the target area; extend r_hi")
    lo = r_hi
    while lo > 1e-300 and f(lo) > 0:
        lo *= 0.5
    return optimize.brentq(f, lo, r_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                           maxiter=500)
