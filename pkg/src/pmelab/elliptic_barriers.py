"""Barrier subsolutions on intermediate model manifolds and the sublinear
elliptic problem  -div(rho_mu grad W) = rho_nu W^{1/m}  on a ball."""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from . import geometry as geo
from . import pme_solver as pme

__all__ = [
    "BarrierParams",
    "BarrierCheckReport",
    "EllipticSolution",
    "barrier_eval",
    "barrier_sup",
    "barrier_residual",
    "barrier_lattice_search",
    "default_lattice",
    "solve_sublinear",
    "minimal_solution_via_flow",
    "discrete_parabolic_residual",
    "TrivialSolutionError",
    "MonotonicityError",
]


# ---------------------------------------------------------------------------
# barrier


@dataclass(frozen=True)
class BarrierParams:
    C: float
    eta: float
    t0: float
    a: float = 0.5
    m: float = 2.0

    def __post_init__(self):
        if self.C <= 0 or self.eta <= 0:
            raise ValueError("C and eta must be positive")
        if self.t0 < 2:
            raise ValueError("t0 must be at least 2")
        if not 0 < self.a < 1:
            raise ValueError("a must lie in (0, 1)")
        if not self.m > 1:
            raise ValueError("m must exceed 1")


def _log_power(p, t):
    T = np.asarray(t, dtype=float) + p.t0
    e = (2.0 - p.a) / p.a
    lg = np.log(T)
    return T, lg**e, e * lg ** (e - 1.0) / T


def _bracket(p, r):
    """Spatial part of the bracket and its first two r-derivatives."""
    r = np.asarray(r, dtype=float)
    a = p.a
    inner = r < 1.0
    rs = np.where(inner, 1.0, r)
    phi = np.where(inner, 0.5 * (2 - a) * r**2 + 0.5 * a, rs ** (2 - a))
    dphi = np.where(inner, (2 - a) * r, (2 - a) * rs ** (1 - a))
    ddphi = np.where(inner, 2 - a, (2 - a) * (1 - a) * rs ** (-a))
    return phi, dphi, ddphi


def barrier_eval(p, r, t):
    """C (t+t0)^{-1/(m-1)} [eta L(t) - phi(r)]_+^{1/(m-1)}, L = log(t+t0)^{(2-a)/a}.

    phi(r) = r^{2-a} for r >= 1 and its C^1 quadratic continuation
    (2-a) r^2/2 + a/2 below r = 1.
    """
    T, L, _ = _log_power(p, t)
    phi, _, _ = _bracket(p, r)
    g = np.maximum(p.eta * L - phi, 0.0)
    return p.C * T ** (-1.0 / (p.m - 1)) * g ** (1.0 / (p.m - 1))


def barrier_sup(p, t):
    """Sup over r, attained at the pole."""
    T, L, _ = _log_power(p, t)
    return p.C * T ** (-1.0 / (p.m - 1)) * np.maximum(p.eta * L - 0.5 * p.a, 0.0) ** (1.0 / (p.m - 1))


def front_radius(p, t):
    _, L, _ = _log_power(p, t)
    x = p.eta * L
    if x <= 0.5 * p.a:
        return 0.0
    if x <= 1.0:
        return math.sqrt((x - 0.5 * p.a) / (0.5 * (2 - p.a)))
    return x ** (1.0 / (2 - p.a))


def _normalized_residual(p, M, r, t):
    """(d_t u - Lap(u^m)) / (C^m (t+t0)^{-m/(m-1)}) for the barrier u, on g > 0."""
    m = p.m
    P = m / (m - 1.0)
    T, L, dL = _log_power(p, t)
    phi, dphi, ddphi = _bracket(p, r)
    g = p.eta * L - phi
    with np.errstate(divide="ignore", invalid="ignore"):
        h_dphi = np.where(r > 0, geo.mean_curvature(M, np.maximum(r, 1e-300)) * dphi,
                          (M.d - 1) * (2 - p.a))
    # time derivative divided by C T^{-P}
    dt_term = (g ** (1.0 / (m - 1)) * (-1.0 / (m - 1))
               + T * g ** (1.0 / (m - 1) - 1.0) * p.eta * dL / (m - 1)) * p.C ** (1 - m)
    lap = P * ((P - 1) * g ** (P - 2) * dphi**2 - g ** (P - 1) * (ddphi + h_dphi))
    return dt_term - lap


@dataclass
class BarrierCheckReport:
    params: dict
    verdict: bool
    max_residual: float
    check_tol: float
    n_samples: int
    excluded: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    r_grid: list = field(default_factory=list)
    t_grid: list = field(default_factory=list)

    def to_json(self, path=None):
        doc = asdict(self)
        doc.pop("r_grid")
        doc.pop("t_grid")
        s = json.dumps(doc, sort_keys=True, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def barrier_residual(p, M, t_samples=None, n_r=400, check_tol=1e-8, exclude_cells=2,
                     max_violations=20):
    """Subsolution check of the barrier on an (r, t) sample grid.

    At each t the samples are n_r uniform points on [0, front]; the last
    ``exclude_cells`` points before the free boundary and the points adjacent
    to r = 1 are excluded.  Residuals are normalized by C^m (t+t0)^{-m/(m-1)}.
    """
    if M.family != "intermediate" or abs(M.params["a"] - p.a) > 1e-12:
        raise ValueError("barrier check needs an intermediate profile with the barrier's a")
    if t_samples is None:
        t_samples = np.concatenate([[0.0], np.geomspace(1.0, 1e8, 33)])
    worst = -np.inf
    excluded, viol = [], []
    n_used = 0
    if front_radius(p, 0.0) <= 0:
        viol.append({"r": 0.0, "t": 0.0, "residual": float("inf"), "reason": "empty at t=0"})
    for t in t_samples:
        rf = front_radius(p, t)
        if rf <= 0:
            continue
        r = np.linspace(0.0, rf, n_r + 1)[:-1]
        hr = rf / n_r
        keep = np.ones(n_r, dtype=bool)
        keep[-exclude_cells:] = False
        keep[np.abs(r - 1.0) <= hr] = False
        excluded.append({"t": float(t), "front": float(rf),
                         "r_excluded": r[~keep].tolist()})
        r = r[keep]
        res = _normalized_residual(p, M, r, np.full_like(r, t))
        n_used += r.size
        res = np.where(np.isfinite(res), res, np.inf)
        worst = max(worst, float(np.max(res)))
        bad = np.nonzero(res > check_tol)[0]
        for i in bad[: max(0, max_violations - len(viol))]:
            viol.append({"r": float(r[i]), "t": float(t), "residual": float(res[i])})
    ok = n_used > 0 and not viol and worst <= check_tol
    return BarrierCheckReport(params=asdict(p), verdict=bool(ok), max_residual=worst,
                              check_tol=check_tol, n_samples=n_used, excluded=excluded,
                              violations=viol, t_grid=[float(t) for t in t_samples])


def default_lattice():
    """(C, eta, t0) lattice for the admissibility search.

    C: 13 log-spaced points on [1e-3, 1]; eta: quarter decades on
    [1e-5, 10]; t0: decades 10 ... 1e8.
    """
    C = np.geomspace(1e-3, 1.0, 13)
    eta = 10.0 ** np.arange(-5.0, 1.0 + 1e-9, 0.25)
    t0 = 10.0 ** np.arange(1, 9)
    return C, eta, t0


def barrier_lattice_search(M, a=0.5, m=2.0, lattice=None, stop_at_first=False, executor=None,
                           **kw):
    """Evaluate the subsolution verdict on every lattice point; return admissible triples."""
    C, eta, t0 = lattice if lattice is not None else default_lattice()
    pts = [BarrierParams(float(c), float(e), float(s), a, m)
           for s, e, c in itertools.product(t0, eta, C)]
    check = lambda p: (p, barrier_residual(p, M, **kw))
    found = []
    if executor is not None and not stop_at_first:
        results = executor.map(check, pts)
    else:
        results = map(check, pts)
    for p, rep in results:
        if rep.verdict:
            found.append((p, rep))
            if stop_at_first:
                break
    return found


# ---------------------------------------------------------------------------
# sublinear elliptic problem


class TrivialSolutionError(RuntimeError):
    pass


class MonotonicityError(RuntimeError):
    pass


@dataclass
class EllipticSolution:
    R: float
    W: np.ndarray
    grid: object
    residual: float
    iterations: int
    residual_log: list = field(default_factory=list)

    @property
    def r(self):
        return self.grid.centers

    def field(self):
        return pme.RadialField(self.W.copy(), self.grid)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["r_center", "W"])
            wr.writerows(zip(self.grid.centers.tolist(), self.W.tolist()))


def _stiffness_banded(grid):
    T = grid.trans
    N = len(T)
    ab = np.zeros((3, N))
    ab[1] = T + np.concatenate([[0.0], T[:-1]])
    ab[0, 1:] = -T[:-1]
    ab[2, :-1] = -T[:-1]
    return ab


def _sublinear_residual(grid, W, m):
    rhs = grid.volumes * np.abs(W) ** (1.0 / m)
    return float(np.max(np.abs(pme._apply_K(grid, W) - rhs)) / np.max(np.abs(rhs)))


def solve_sublinear(spec, R=None, grid=None, N=800, tol=1e-10, maxit=500, start_scale=1.0):
    """Positive solution of -(rho_mu psi^{d-1} W')' = rho_nu psi^{d-1} W^{1/m}, W(R) = 0.

    Monotone iteration W <- K^{-1}(V W^{1/m}) from the supersolution
    s z, z the torsion function (K z = V), s = ||z||_inf^{1/(m-1)}.  Each
    iterate stays above the solution, so the sequence decreases to it.
    """
    if grid is None:
        R = spec.R if R is None else R
        grid = pme.build_grid(replace(spec, R=R), N)
    m = spec.m
    ab = _stiffness_banded(grid)
    V = grid.volumes
    z = solve_banded((1, 1), ab, V)
    W = start_scale * np.max(z) ** (1.0 / (m - 1)) * z
    log = [_sublinear_residual(grid, W, m)]
    for it in range(1, maxit + 1):
        W_new = solve_banded((1, 1), ab, V * W ** (1.0 / m))
        if np.max(W_new) <= 1e-200:
            raise TrivialSolutionError("iteration collapsed to zero; restart from a larger iterate")
        W = W_new
        log.append(_sublinear_residual(grid, W, m))
        if log[-1] < tol:
            break
    return EllipticSolution(R=grid.R, W=W, grid=grid, residual=log[-1], iterations=it,
                            residual_log=log)


def discrete_parabolic_residual(grid, u_now, u_next, dt, m):
    """Implicit Euler residual V (u_next - u_now) + dt K(u_next^m); <= 0 for subsolutions."""
    return grid.volumes * (u_next - u_now) + dt * pme._apply_K(grid, np.abs(u_next) ** (m - 1) * u_next)


def minimal_solution_via_flow(spec, t_max=1e4, grid=None, N=400, n_out=40, mono_tol=1e-6,
                              rtol=1e-5, U_bound=None):
    """Limit of U(t) = t^{1/(m-1)} u(t) for the Dirichlet flow on the ball.

    U increases to the separable profile F with K(F^m) = V F/(m-1); the
    returned W = (m-1)^{m/(m-1)} F^m solves the sublinear problem.  F is
    extrapolated linearly in 1/t from the last two outputs.
    """
    grid = grid.with_spec(spec) if grid is not None else pme.build_grid(spec, N)
    m = spec.m
    times = np.geomspace(t_max * 1e-3, t_max, n_out)
    # the support filling the ball is the intended regime here, not a truncation artifact
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tr = pme.simulate(grid, t_final=t_max,
                          output_times=times, q_list=(), rtol=rtol, snapshot_times=times)
    ts = np.array([s[0] for s in tr.snapshots])
    U = np.array([s[2] for s in tr.snapshots]) * ts[:, None] ** (1.0 / (m - 1))
    Usup = float(np.max(U))
    dips = np.min(np.diff(U, axis=0))
    if dips < -mono_tol * Usup:
        raise MonotonicityError(f"U decreased by {-dips / Usup:.3e} relative; refine dt")
    if U_bound is not None and Usup > U_bound:
        raise MonotonicityError(f"sup U = {Usup:.4g} exceeds the absolute bound {U_bound:.4g}")
    t1, t2 = ts[-2], ts[-1]
    F = (t2 * U[-1] - t1 * U[-2]) / (t2 - t1)
    F = np.maximum(F, 0.0)
    W = (m - 1.0) ** (m / (m - 1.0)) * F**m
    sol = EllipticSolution(R=grid.R, W=W, grid=grid, residual=_sublinear_residual(grid, W, m),
                           iterations=tr.n_steps)
    sol.monotonicity_margin = float(dips / Usup)
    sol.U_history = (ts, U)
    return sol
