"""Radial functional-inequality constants on weighted model manifolds.

All the one-dimensional criteria here are built from two integrals,

    I1(x) = int_0^x rho_nu psi^{d-1} dr,     I2(x) = int_x^inf psi^{1-d} / rho_mu dr,

which are tabulated once per (profile, weights) in log form on a grid whose
pieces are narrow enough that the log-integrands vary by at most O(1) on
each.  Gauss-Legendre on such pieces is accurate to round-off, and working
with logs keeps hyperbolic-type growth (psi ~ e^{r}) from overflowing.

The constants use the one-dimensional radial convention and omit the sphere
measure |S^{d-1}|; it cancels for sigma = 1 and only rescales otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, stats
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from . import geometry as geo

__all__ = [
    "WeightPair",
    "SobolevReport",
    "GammaFit",
    "PoincareEstimate",
    "SubPoincareReport",
    "CutoffWitness",
    "RadialIntegrals",
    "sobolev_constant",
    "fit_gamma",
    "poincare_bracket",
    "poincare_eigenvalue",
    "subpoincare_criterion",
    "subpoincare_threshold",
    "cutoff_witness",
    "DomainError",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)

X_FIRST = 1e-8          # first grid point; [0, X_FIRST] is one piece
X_START = 1e3           # initial table extent
X_CAP = 1e12            # no extension beyond this radius
MAX_PIECES = 1_500_000  # table size budget
PLATEAU_TOL = 1e-10     # log-increase per decade treated as flat
GROWTH_TOL = 1e-6       # log-slope treated as genuine growth


class DomainError(ValueError):
    """A requested quantity lies outside the computed radial range."""


# ---------------------------------------------------------------------------
# weights


def _zero(r):
    return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class WeightPair:
    """Radial weights rho_nu (mass side) and rho_mu (gradient side).

    Stored as log-densities with their derivatives.  ``alpha`` and ``beta``
    are set for the exponential presets
    rho_nu = exp(-alpha r/(d-1)), rho_mu = exp(beta r/(d-1)).
    """

    log_nu: object = _zero
    log_mu: object = _zero
    dlog_nu: object = _zero
    dlog_mu: object = _zero
    alpha: float = 0.0
    beta: float = 0.0
    kind: str = "unweighted"

    @classmethod
    def unweighted(cls):
        return cls()

    @classmethod
    def exponential(cls, alpha, beta, d):
        if alpha < 0 or beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        a, b = alpha / (d - 1), beta / (d - 1)
        return cls(
            log_nu=lambda r: -a * np.asarray(r, dtype=float),
            log_mu=lambda r: b * np.asarray(r, dtype=float),
            dlog_nu=lambda r: np.full_like(np.asarray(r, dtype=float), -a),
            dlog_mu=lambda r: np.full_like(np.asarray(r, dtype=float), b),
            alpha=float(alpha), beta=float(beta),
            kind="exponential" if (alpha or beta) else "unweighted",
        )

    def rho_nu(self, r):
        return np.exp(self.log_nu(r))

    def rho_mu(self, r):
        return np.exp(self.log_mu(r))

    @property
    def is_unweighted(self):
        return self.kind == "unweighted"

    def describe(self):
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}


# ---------------------------------------------------------------------------
# log-domain integral table


class RadialIntegrals:
    """Log-tabulation of I1 and I2 for a profile and a weight pair.

    ``refine`` divides every piece width; ``var_max`` bounds the variation of
    the log-integrands across one piece.
    """

    def __init__(self, M, W=None, refine=1.0, var_max=1.0, x_top=X_START):
        self.M = M
        self.W = W if W is not None else WeightPair.unweighted()
        self.refine = float(refine)
        self.var_max = float(var_max)
        self.d = M.d
        self._build(x_top)

    # densities --------------------------------------------------------
    def ell_nu(self, r):
        return (self.d - 1) * np.asarray(geo.log_psi(self.M, r)) + self.W.log_nu(r)

    def ell_mu(self, r):
        return (self.d - 1) * np.asarray(geo.log_psi(self.M, r)) + self.W.log_mu(r)

    def dell_nu(self, r):
        return (self.d - 1) * np.asarray(geo.dlog_psi(self.M, r)) + self.W.dlog_nu(r)

    def dell_mu(self, r):
        return (self.d - 1) * np.asarray(geo.dlog_psi(self.M, r)) + self.W.dlog_mu(r)

    # grid -------------------------------------------------------------
    def _grid(self, x_top):
        n_pre = max(int(2000 * math.log10(x_top / X_FIRST)), 100)
        pre = np.geomspace(X_FIRST, x_top, n_pre)
        slope = np.maximum(np.abs(self.dell_nu(pre)), np.abs(self.dell_mu(pre)))
        density = self.refine * np.maximum(40.0 / (pre * math.log(10.0)),
                                           slope / self.var_max)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(pre))])
        n = int(math.ceil(cum[-1]))
        if n > MAX_PIECES:
            return None
        x = np.interp(np.linspace(0.0, cum[-1], n + 1), cum, pre)
        x[0], x[-1] = X_FIRST, x_top
        return np.concatenate([[0.0], x])

    def _build(self, x_top):
        x = self._grid(x_top)
        if x is None:
            raise DomainError(f"table up to {x_top:g} exceeds the piece budget")
        self.x = x
        self.x_top = float(x_top)
        a, b = x[:-1], x[1:]
        h = 0.5 * (b - a)
        nodes = (a + b)[:, None] * 0.5 + h[:, None] * _GL_X[None, :]
        logw = np.log(h)[:, None] + np.log(_GL_W)[None, :]
        with np.errstate(divide="ignore"):
            p1 = logsumexp(self.ell_nu(nodes) + logw, axis=1)
            p2 = logsumexp(-self.ell_mu(nodes[1:]) + logw[1:], axis=1)
        self.log_I1 = np.concatenate([[-np.inf], np.logaddexp.accumulate(p1)])
        self.tail_kappa = float(x_top * self.dell_mu(x_top))
        if self.tail_kappa <= 1.0 + 1e-9:
            self.tail_divergent = True
            self.log_I2 = np.full_like(x, np.inf)
            return
        self.tail_divergent = False
        lt = self._log_tail(x_top)
        rev = np.logaddexp.accumulate(np.concatenate([[lt], p2[::-1]]))
        self.log_I2 = np.concatenate([[np.inf], rev[::-1]])

    def _log_tail(self, X):
        # int_X^inf e^{-ell_mu}, with r = X + w s and w = 1/ell_mu'(X)
        w = 1.0 / float(self.dell_mu(X))
        l0 = float(self.ell_mu(X))
        f = lambda s: math.exp(-(float(self.ell_mu(X + w * s)) - l0))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(f, 0.0, np.inf, epsabs=0.0, epsrel=1e-11, limit=500)
        if not np.isfinite(val) or val <= 0 or err > 1e-6 * val:
            raise geo.QuadratureError(f"tail integral beyond {X:g} did not converge")
        return -l0 + math.log(w * val)

    def extend(self, x_top):
        if x_top > self.x_top:
            self._build(x_top)

    # evaluation at arbitrary radii -------------------------------------
    def _check_range(self, xs):
        if np.any(xs > self.x_top * (1 + 1e-12)) or np.any(xs < 0):
            raise DomainError(f"radius outside the tabulated range [0, {self.x_top:g}]")

    def log_I1_at(self, xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        self._check_range(xs)
        j = np.clip(np.searchsorted(self.x, xs, side="right") - 1, 0, len(self.x) - 2)
        a = self.x[j]
        h = 0.5 * (xs - a)
        nodes = (a + xs)[:, None] * 0.5 + h[:, None] * _GL_X[None, :]
        with np.errstate(divide="ignore"):
            part = logsumexp(self.ell_nu(nodes) + np.log(_GL_W)[None, :], axis=1) + np.log(h)
        return np.logaddexp(self.log_I1[j], part)

    def log_I2_at(self, xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        self._check_range(xs)
        if self.tail_divergent:
            return np.full_like(xs, np.inf)
        j = np.clip(np.searchsorted(self.x, xs, side="right") - 1, 0, len(self.x) - 2)
        b = self.x[j + 1]
        h = 0.5 * (b - xs)
        nodes = (b + xs)[:, None] * 0.5 + h[:, None] * _GL_X[None, :]
        with np.errstate(divide="ignore"):
            part = logsumexp(-self.ell_mu(nodes) + np.log(_GL_W)[None, :], axis=1) + np.log(h)
        return np.logaddexp(self.log_I2[j + 1], part)


# ---------------------------------------------------------------------------
# supremum of the two-factor functional


@dataclass
class _SupResult:
    finite: bool
    log_sup: float
    x_star: float
    growth: float
    x_top: float
    plateau: bool


def _log_A_grid(tab, s1, s2):
    with np.errstate(invalid="ignore"):
        return s1 * tab.log_I1[1:] + s2 * tab.log_I2[1:]


def _sup_two_factor(tab, s1, s2, x_cap=X_CAP):
    """sup_x I1^{s1} I2^{s2}, extending the table until the sup is certified."""
    while True:
        if tab.tail_divergent:
            return _SupResult(False, np.inf, np.nan, np.inf, tab.x_top, False)
        logA = _log_A_grid(tab, s1, s2)
        xg = tab.x[1:]
        i = int(np.nanargmax(logA))
        j = int(np.searchsorted(xg, tab.x_top / 10.0))
        rise = logA[-1] - logA[j]
        growth = rise / math.log(xg[-1] / xg[j])
        near_end = xg[i] >= tab.x_top / 10.0
        if not near_end:
            break
        if rise <= PLATEAU_TOL:
            # flat end: the sup is the limiting value
            return _SupResult(True, float(np.max(logA)), float(xg[i]), growth, tab.x_top, True)
        nxt = tab.x_top * 10.0
        if nxt > x_cap:
            return _SupResult(False, np.inf, np.nan, growth, tab.x_top, False)
        try:
            tab.extend(nxt)
        except DomainError:
            return _SupResult(False, np.inf, np.nan, growth, tab.x_top, False)
    lo, hi = xg[max(i - 1, 0)], xg[min(i + 1, len(xg) - 1)]
    f = lambda u: -float(s1 * tab.log_I1_at(math.exp(u))[0] + s2 * tab.log_I2_at(math.exp(u))[0])
    res = optimize.minimize_scalar(f, bounds=(math.log(lo), math.log(hi)), method="bounded",
                                   options={"xatol": 1e-10})
    best = max(-res.fun, logA[i])
    x_star = math.exp(res.x) if -res.fun >= logA[i] else xg[i]
    return _SupResult(True, float(best), float(x_star), growth, tab.x_top, False)


def _refined_sup(M, W, s1, s2, refine_factor=4.0):
    log = []
    results = []
    for refine in (1.0, refine_factor):
        tab = RadialIntegrals(M, W, refine=refine)
        res = _sup_two_factor(tab, s1, s2)
        results.append(res)
        log.append({"refine": refine, "x_top": res.x_top, "pieces": len(tab.x) - 1,
                    "finite": res.finite,
                    "value": math.exp(res.log_sup) if res.finite else None})
    return results, log


# ---------------------------------------------------------------------------
# Sobolev constant


@dataclass
class SobolevReport:
    sigma: float
    finite: bool
    C_sigma: float | None = None
    x_star: float | None = None
    growth_exponent: float | None = None
    message: str = ""
    flagged: bool = False
    stable: bool = True
    refinement_log: list = field(default_factory=list)

    @property
    def verdict(self):
        return "finite" if self.finite else "divergent"


def _stability(values, tol=1e-4):
    a, b = values
    return abs(a - b) <= tol * abs(b)


def sobolev_constant(M, W=None, sigma=None, tail_tol=1e-4):
    """Radial Sobolev constant C_sigma = sup_x I1(x)^{1/(2 sigma)} I2(x)^{1/2}.

    ``tail_tol`` is the relative agreement demanded between the base and the
    4x refined tabulation before a finite value is reported as stable.
    """
    if sigma is None or sigma < 1:
        raise ValueError("sigma must be >= 1")
    W = W if W is not None else WeightPair.unweighted()
    flagged = False
    msg = ""
    if M.d >= 3 and sigma > M.d / (M.d - 2) + 1e-12:
        flagged = True
        msg = f"sigma above d/(d-2) = {M.d / (M.d - 2):g}; computed anyway. "
    elif sigma == 1:
        flagged = True
        msg = "sigma = 1 is the Poincare endpoint. "
    results, log = _refined_sup(M, W, 1.0 / (2.0 * sigma), 0.5)
    base, fine = results
    if base.growth == np.inf or (not fine.finite and np.isinf(fine.growth)):
        return SobolevReport(sigma, False, growth_exponent=np.inf, flagged=flagged,
                             message=msg + "second factor infinite; inequality fails for all sigma",
                             refinement_log=log)
    if not fine.finite:
        return SobolevReport(sigma, False, growth_exponent=float(fine.growth), flagged=flagged,
                             message=msg + f"A(x) grows like x^{fine.growth:.4g}",
                             refinement_log=log)
    vals = [math.exp(base.log_sup), math.exp(fine.log_sup)]
    return SobolevReport(sigma, True, C_sigma=vals[1], x_star=fine.x_star,
                         growth_exponent=float(fine.growth), flagged=flagged,
                         stable=_stability(vals, tail_tol), message=msg,
                         refinement_log=log)


@dataclass
class GammaFit:
    gamma: float
    C_hat: float
    sigmas: list
    C_values: list
    residual: float
    stderr: float
    monotone: bool
    flagged: bool
    ci90: tuple = (np.nan, np.nan)

    def indistinguishable_from_zero(self, margin=0.05):
        """Equivalence test: the 90% confidence interval of gamma lies in (-margin, margin)."""
        lo, hi = self.ci90
        return bool(-margin < lo and hi < margin)


def fit_gamma(M, W=None, sigma_grid=None, tail_tol=1e-4, executor=None):
    """Fit C_sigma ~ C_hat (sigma-1)^(-gamma) along a grid of sigma values.

    Least squares of log C_sigma against -log(sigma - 1).
    """
    if sigma_grid is None or len(sigma_grid) < 6:
        raise ValueError("need at least 6 sigma values")
    sig = np.sort(np.asarray(sigma_grid, dtype=float))
    if np.any(sig <= 1):
        raise ValueError("all sigma must exceed 1")
    run = lambda s: sobolev_constant(M, W, float(s), tail_tol)
    reports = list(executor.map(run, sig)) if executor is not None else [run(s) for s in sig]
    bad = [r.sigma for r in reports if not r.finite]
    if bad:
        raise ValueError(f"Sobolev constant divergent at sigma = {bad}")
    C = np.array([r.C_sigma for r in reports])
    xs = -np.log(sig - 1.0)
    lr = stats.linregress(xs, np.log(C))
    resid = np.log(C) - (lr.intercept + lr.slope * xs)
    # C_sigma should not decrease as sigma decreases towards 1
    monotone = bool(np.all(np.diff(C) <= 1e-12 * C[1:]))
    half = stats.t.ppf(0.95, len(sig) - 2) * lr.stderr
    return GammaFit(gamma=float(lr.slope), C_hat=float(math.exp(lr.intercept)),
                    sigmas=sig.tolist(), C_values=C.tolist(),
                    residual=float(np.sqrt(np.mean(resid**2))),
                    stderr=float(lr.stderr), monotone=monotone, flagged=not monotone,
                    ci90=(float(lr.slope - half), float(lr.slope + half)))


# ---------------------------------------------------------------------------
# Poincare


@dataclass
class PoincareEstimate:
    has_gap: bool
    B: float | None
    lambda_low: float
    lambda_high: float | None
    lambda_num: float | None = None
    growth_exponent: float | None = None
    message: str = ""
    refinement_log: list = field(default_factory=list)


def poincare_eigenvalue(M, W=None, L=60.0, n=10_000, richardson=True):
    """Bottom of the radial spectrum on [0, L], Dirichlet at L.

    Cell-centred finite volumes for -(rho_mu psi^{d-1} f')' = lam rho_nu psi^{d-1} f.
    Truncation only raises the eigenvalue, so this estimates the bottom of
    the spectrum from above.
    """
    W = W if W is not None else WeightPair.unweighted()

    def solve(N):
        e = np.linspace(0.0, L, N + 1)
        c = 0.5 * (e[1:] + e[:-1])
        h = np.diff(e)
        nodes = c[:, None] + 0.5 * h[:, None] * _GL_X[None, :]
        lw = np.log(0.5 * h)[:, None] + np.log(_GL_W)[None, :]
        ell_nu = (M.d - 1) * np.asarray(geo.log_psi(M, nodes)) + W.log_nu(nodes)
        log_vol = logsumexp(ell_nu + lw, axis=1)
        face = e[1:]
        ell_mu = (M.d - 1) * np.asarray(geo.log_psi(M, face)) + W.log_mu(face)
        dist = np.append(np.diff(c), L - c[-1])
        log_T = ell_mu - np.log(dist)
        shift = log_vol.max()
        V = np.exp(log_vol - shift)
        T = np.exp(log_T - shift)
        diag = T.copy()
        diag[1:] += T[:-1]
        off = -T[:-1]
        s = 1.0 / np.sqrt(V)
        lam = eigh_tridiagonal(diag * s * s, off * s[:-1] * s[1:], select="i",
                               select_range=(0, 0), eigvals_only=True)
        return float(lam[0])

    lam_n = solve(n)
    if not richardson:
        return lam_n
    lam_2n = solve(2 * n)
    return (4.0 * lam_2n - lam_n) / 3.0


def poincare_bracket(M, W=None, eigensolve=False, L=60.0, n=10_000):
    """Muckenhoupt bracket for the spectral gap: Lambda in [1/(4B^2), 1/B^2].

    B = sup_x I1(x)^{1/2} I2(x)^{1/2}.
    """
    W = W if W is not None else WeightPair.unweighted()
    results, log = _refined_sup(M, W, 0.5, 0.5)
    fine = results[1]
    if not fine.finite:
        return PoincareEstimate(False, None, 0.0, None, growth_exponent=float(fine.growth),
                                message="no spectral gap: B diverges", refinement_log=log)
    B = math.exp(fine.log_sup)
    est = PoincareEstimate(True, B, 1.0 / (4.0 * B * B), 1.0 / (B * B),
                           growth_exponent=float(fine.growth), refinement_log=log)
    if eigensolve:
        est.lambda_num = poincare_eigenvalue(M, W, L=L, n=n)
    return est


# ---------------------------------------------------------------------------
# sub-Poincare


@dataclass
class SubPoincareReport:
    p: float
    finite: bool
    integral: float | None
    log_integral: float | None
    asymptotic_exponent: float
    admissible_interval: tuple | None = None
    D_bracket: tuple | None = None
    message: str = ""
    refinement_log: list = field(default_factory=list)

    @property
    def verdict(self):
        return "finite" if self.finite else "divergent"


def subpoincare_threshold(M, W):
    """Exact admissible-p interval for hyperbolic profiles with exponential weights.

    With psi^{d-1} ~ e^{c r}, c = (d-1) sqrt(k), and weight rates
    a = alpha/(d-1), b = beta/(d-1), the criterion integral is finite iff
    max{2(c-a)/(c+b), 1} < p < 2.  Returns None outside this setting or when
    the interval is empty.
    """
    if M.family != "hyperbolic" or W.kind not in ("exponential", "unweighted"):
        return None
    c = (M.d - 1) * math.sqrt(M.params["k"])
    a, b = W.alpha / (M.d - 1), W.beta / (M.d - 1)
    lo = max(2.0 * (c - a) / (c + b), 1.0)
    return (lo, 2.0) if lo < 2.0 else None


def _criterion_log_integrand(tab, p, xs):
    e1 = 2.0 / (2.0 - p)
    e2 = 2.0 * (p - 1.0) / (2.0 - p)
    return e1 * tab.log_I1_at(xs) + e2 * tab.log_I2_at(xs) - tab.ell_mu(xs)


def _criterion_integral(tab, p):
    # Gauss-Legendre over every table piece, in logs
    a, b = tab.x[:-1], tab.x[1:]
    h = 0.5 * (b - a)
    nodes = ((a + b)[:, None] * 0.5 + h[:, None] * _GL_X[None, :]).ravel()
    g = _criterion_log_integrand(tab, p, nodes).reshape(len(a), -1)
    logw = np.log(h)[:, None] + np.log(_GL_W)[None, :]
    return float(logsumexp(g + logw))


def _criterion_kappa(tab, p, X, h=1e-3):
    # one-sided log-log slope of the integrand at the table end
    g = _criterion_log_integrand(tab, p, np.array([X * (1 - h), X]))
    return float((g[1] - g[0]) / -math.log1p(-h)), float(g[1])


def _subpoincare_once(M, W, p, refine, x_start=100.0):
    tab = RadialIntegrals(M, W, refine=refine * max(1.0, 2.0 / (2.0 - p)), x_top=x_start)
    while True:
        if tab.tail_divergent:
            return False, None, np.inf, tab
        X = tab.x_top
        kappa, gX = _criterion_kappa(tab, p, X)
        if kappa < -1.0 - 1e-3:
            log_core = _criterion_integral(tab, p)
            log_tail = gX + math.log(X / (-kappa - 1.0))
            return True, float(np.logaddexp(log_core, log_tail)), kappa, tab
        if kappa > -1.0 + 1e-3 or X * 10 > X_CAP:
            return False, None, kappa, tab
        try:
            tab.extend(X * 10)
        except DomainError:
            return False, None, kappa, tab


def subpoincare_criterion(M, W=None, p=1.5):
    """Finiteness of the radial sub-Poincare criterion integral

        J = int_0^inf I1^{2/(2-p)} I2^{2(p-1)/(2-p)} psi^{1-d}/rho_mu dx.

    The integral over the table is exact up to quadrature; the part beyond the
    table end X uses the local power/exponential rate kappa = X g'(X) of the
    log-integrand g, tail ~ e^{g(X)} X/(|kappa|-1).  Divergence is declared
    when kappa >= -1.
    """
    if not 1.0 < p < 2.0:
        raise ValueError("p must lie in (1, 2)")
    W = W if W is not None else WeightPair.unweighted()
    log = []
    out = []
    for refine in (1.0, 4.0):
        fin, lj, kappa, tab = _subpoincare_once(M, W, p, refine)
        out.append((fin, lj, kappa, tab))
        log.append({"refine": refine, "x_top": tab.x_top, "finite": fin,
                    "value": math.exp(lj) if fin and lj < 700 else None,
                    "log_value": lj, "kappa": kappa})
    fin, lj, kappa, tab = out[1]
    interval = subpoincare_threshold(M, W)
    if tab.tail_divergent:
        return SubPoincareReport(p, False, None, None, np.inf, interval,
                                 message="inner tail integral divergent",
                                 refinement_log=log)
    if not fin:
        return SubPoincareReport(p, False, None, None, kappa, interval,
                                 message=f"integrand grows like x^{kappa:.4g} at x={tab.x_top:g}",
                                 refinement_log=log)
    r = 2.0 * p / (2.0 - p)
    A_mr = math.exp(lj / r)
    # lower end: test function 1 on [0, x0], I2(x)/I2(x0) beyond; upper end:
    # Sinnamon-Stepanov type factor q^{1/q} (p')^{1/q'} with p = 2, q = p
    low = _sup_two_factor(tab, 1.0 / p, 0.5)
    D_low = math.exp(low.log_sup) if low.finite else None
    D_high = p ** (1.0 / p) * 2.0 ** ((p - 1.0) / p) * A_mr
    return SubPoincareReport(p, True, math.exp(lj) if lj < 700 else np.inf, lj, kappa, interval,
                             D_bracket=(D_low, D_high),
                             message="D reported as a bracket, not a sharp constant",
                             refinement_log=log)


# ---------------------------------------------------------------------------
# cutoff witness (failure of sub-Poincare without weights)


@dataclass
class CutoffWitness:
    r0: float
    delta: float
    p: float
    norm_p: float
    norm_grad: float
    ratio: float
    lower_bound: float


def _S_integral(M, a, b):
    return geo._quad(lambda t: geo.surface_area(M, t), a, b, epsrel=1e-12)


def cutoff_witness(M, p, r0, r_max=None):
    """Ratio ||f||_p / ||grad f||_2 for the radial shell cut-off at r0.

    f = xi(dist(o, x)) with xi = 1 on [0, r0], linear ramp to 0 on
    [r0, r0 + delta], delta = S^{-1}(2 S(r0)) - r0.
    """
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    if not 1.0 <= p < 2.0:
        raise ValueError("p must lie in [1, 2)")
    if r_max is None:
        r_max = 10.0 * r0 + 10.0
    S0 = geo.surface_area(M, r0)
    try:
        r1 = geo.surface_area_inverse(M, 2.0 * S0, r_max)
    except ValueError:
        raise DomainError(f"S^-1(2 S(r0)) lies beyond r_max={r_max:g}; "
                          f"increase r_max") from None
    delta = r1 - r0
    vol = geo.volume(M, r0)
    ramp_p = geo._quad(lambda t: (1.0 - (t - r0) / delta) ** p * geo.surface_area(M, t),
                       r0, r1, epsrel=1e-12)
    shell = _S_integral(M, r0, r1)
    norm_p = (vol + ramp_p) ** (1.0 / p)
    norm_grad = math.sqrt(shell) / delta
    half = _S_integral(M, r0, r0 + 0.5 * delta)
    lower = 0.25 * delta * half ** (1.0 / p) / math.sqrt(shell)
    return CutoffWitness(r0=float(r0), delta=float(delta), p=float(p), norm_p=norm_p,
                         norm_grad=norm_grad, ratio=norm_p / norm_grad, lower_bound=lower)
