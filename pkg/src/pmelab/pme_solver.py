"""Implicit finite-volume solver for the radial weighted porous medium equation

    rho_nu u_t = psi^{1-d} d/dr (rho_mu psi^{d-1} d/dr u^m),   0 < r < R,

with u = 0 at r = R.  Cell averages live at cell midpoints; cell volumes and
face conductances carry the full Riemannian measure (including |S^{d-1}|), so
sums over cells are true nu-integrals on the manifold.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from . import geometry as geo
from .funcineq import WeightPair

__all__ = [
    "ProblemSpec",
    "RadialGrid",
    "RadialField",
    "SolveTrajectory",
    "NewtonError",
    "build_grid",
    "initial_field",
    "step",
    "simulate",
    "norms",
    "barenblatt",
    "auto_radius",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)

DT_FLOOR = 2.0**-10      # smallest fraction of a requested step tried by step()
NEWTON_MAXIT = 60
TRUNCATION_FRACTION = 0.95
SUPPORT_TOL = 1e-12


class NewtonError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """Radial PME problem.

    ``initial`` is a dict such as {"kind": "bump", "radius": 1.0} (kinds:
    indicator, bump, barenblatt, tabulated) or a callable u0(r).  With
    ``unit_mass`` the discrete datum is rescaled to nu-mass 1.
    """

    M: geo.ManifoldProfile
    m: float = 2.0
    R: float = 10.0
    W: WeightPair = field(default_factory=WeightPair.unweighted)
    initial: object = None
    unit_mass: bool = False

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError("m must exceed 1")
        if not self.R > 0:
            raise ValueError("R must be positive")


@dataclass(frozen=True, eq=False)
class RadialGrid:
    spec: ProblemSpec
    edges: np.ndarray
    centers: np.ndarray
    volumes: np.ndarray       # nu-volume of each cell
    trans: np.ndarray         # face transmissibility at edges[1:], last one is the boundary

    @property
    def N(self):
        return len(self.centers)

    @property
    def R(self):
        return float(self.edges[-1])

    def with_spec(self, spec):
        return replace(self, spec=spec)


@dataclass(frozen=True, eq=False)
class RadialField:
    u: np.ndarray
    grid: RadialGrid
    t: float = 0.0
    outflow: float = 0.0      # cumulative nu-mass lost through r = R

    @property
    def mass(self):
        return float(self.grid.volumes @ self.u)

    @property
    def sup(self):
        return float(np.max(np.abs(self.u)))


def build_grid(spec, N, grading="uniform", ratio=None):
    """Cell-centred grid on [0, R].

    ``grading="geometric"`` clusters cells at the pole; ``ratio`` is the
    width ratio between the last and the first cell (default 10).
    """
    if N < 16:
        raise ValueError("need at least 16 cells")
    R = spec.R
    if grading == "uniform":
        edges = np.linspace(0.0, R, N + 1)
    elif grading == "geometric":
        ratio = 10.0 if ratio is None else float(ratio)
        if not (1.0 < ratio < 1e6):
            raise ValueError("geometric grading ratio must lie in (1, 1e6)")
        q = ratio ** (1.0 / (N - 1))
        w = q ** np.arange(N)
        edges = np.concatenate([[0.0], np.cumsum(w)]) * (R / w.sum())
    else:
        raise ValueError(f"unknown grading {grading!r}")
    edges[-1] = R
    centers = 0.5 * (edges[1:] + edges[:-1])
    h = np.diff(edges)
    if np.any(h <= 0):
        raise ValueError("degenerate grid")
    M, W = spec.M, spec.W
    omega = geo.sphere_measure(M.d)
    nodes = centers[:, None] + 0.5 * h[:, None] * _GL_X[None, :]
    ell = (M.d - 1) * np.asarray(geo.log_psi(M, nodes)) + W.log_nu(nodes)
    vol = omega * 0.5 * h * np.exp(logsumexp(ell, b=_GL_W[None, :], axis=1))
    face = edges[1:]
    dist = np.append(np.diff(centers), R - centers[-1])
    cond = omega * np.exp((M.d - 1) * np.asarray(geo.log_psi(M, face)) + W.log_mu(face))
    return RadialGrid(spec, edges, centers, vol, cond / dist)


# ---------------------------------------------------------------------------
# initial data


def barenblatt(r, tau, d, m, C=1.0):
    """Euclidean Barenblatt profile tau^-al (C - k r^2 tau^(-2 al/d))_+^(1/(m-1))."""
    al = d / (d * (m - 1) + 2.0)
    k = al * (m - 1) / (2.0 * m * d)
    arg = C - k * np.asarray(r, dtype=float) ** 2 * tau ** (-2.0 * al / d)
    return tau ** (-al) * np.maximum(arg, 0.0) ** (1.0 / (m - 1))


def _profile_function(spec):
    init = spec.initial
    if callable(init):
        return init
    if init is None:
        init = {"kind": "bump", "radius": 1.0}
    kind = init.get("kind")
    if kind == "indicator":
        rs = float(init.get("radius", 1.0))
        return lambda r: (r <= rs).astype(float)
    if kind == "bump":
        rs = float(init.get("radius", 1.0))
        amp = float(init.get("amplitude", 1.0))
        return lambda r: amp * np.maximum(1.0 - (r / rs) ** 2, 0.0) ** 2
    if kind == "barenblatt":
        tau = float(init.get("tau0", 1.0))
        C = float(init.get("C", 1.0))
        return lambda r: barenblatt(r, tau, spec.M.d, spec.m, C)
    if kind == "tabulated":
        rr = np.asarray(init["r"], dtype=float)
        uu = np.asarray(init["u"], dtype=float)
        return lambda r: np.interp(r, rr, uu, right=0.0)
    raise ValueError(f"unknown initial datum {kind!r}")


def initial_field(grid, t0=0.0):
    """Cell averages (w.r.t. the nu-measure) of the problem's initial datum."""
    spec = grid.spec
    f = _profile_function(spec)
    h = np.diff(grid.edges)
    nodes = grid.centers[:, None] + 0.5 * h[:, None] * _GL_X[None, :]
    M, W = spec.M, spec.W
    ell = (M.d - 1) * np.asarray(geo.log_psi(M, nodes)) + W.log_nu(nodes)
    wts = _GL_W[None, :] * np.exp(ell - ell.max(axis=1, keepdims=True))
    u = np.sum(wts * f(nodes), axis=1) / np.sum(wts, axis=1)
    if np.any(u < 0):
        raise ValueError("initial datum must be nonnegative")
    if spec.unit_mass:
        mass = grid.volumes @ u
        if mass <= 0:
            raise ValueError("initial datum has zero mass")
        u = u / mass
    return RadialField(u, grid, float(t0), 0.0)


# ---------------------------------------------------------------------------
# implicit Euler step


def _apply_K(grid, w):
    """(K w)_i: net outgoing flux of cell i for potential w (zero beyond R)."""
    T = grid.trans
    jump = np.empty_like(w)
    jump[:-1] = w[:-1] - w[1:]
    jump[-1] = w[-1]
    flux = T * jump
    out = flux.copy()
    out[1:] -= flux[:-1]
    return out


def _newton(grid, u_old, dt, m):
    V, T = grid.volumes, grid.trans
    N = len(u_old)
    scale = max(float(V @ np.abs(u_old)), 1e-300)
    u = u_old.copy()

    def resid(x):
        w = np.abs(x) ** (m - 1) * x
        return V * (x - u_old) + dt * _apply_K(grid, w)

    F = resid(u)
    Fn = np.abs(F).sum()
    ab = np.zeros((3, N))
    for it in range(NEWTON_MAXIT):
        if Fn <= 1e-14 * scale:
            return u, it
        dw = m * np.abs(u) ** (m - 1)
        # tridiagonal Jacobian of V x + dt K w(x)
        diag = V + dt * (T + np.concatenate([[0.0], T[:-1]])) * dw
        ab[1] = diag
        ab[0, 1:] = -dt * T[:-1] * dw[1:]
        ab[2, :-1] = -dt * T[:-1] * dw[:-1]
        du = solve_banded((1, 1), ab, -F)
        lam = 1.0
        while True:
            cand = u + lam * du
            Fc = resid(cand)
            Fcn = np.abs(Fc).sum()
            if Fcn < Fn or lam < 1e-4:
                break
            lam *= 0.5
        if Fcn >= Fn and Fn > 1e-12 * scale:
            break
        u, F, Fn = cand, Fc, Fcn
    if Fn <= 1e-12 * scale:
        return u, NEWTON_MAXIT
    raise NewtonError(f"Newton stalled at residual {Fn / scale:.3e} (dt={dt:.3e})")


def _step_once(fld, dt):
    grid = fld.grid
    m = grid.spec.m
    u, _ = _newton(grid, fld.u, dt, m)
    w_last = abs(u[-1]) ** (m - 1) * u[-1]
    out = dt * grid.trans[-1] * w_last
    return RadialField(u, grid, fld.t + dt, fld.outflow + out)


def step(fld, dt, _depth=0):
    """One implicit Euler step of size dt.

    On Newton failure the step is split into halves recursively, down to
    dt * 2^-10, after which NewtonError is raised.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    try:
        return _step_once(fld, dt)
    except NewtonError as exc:
        if 2.0 ** -(_depth + 1) < DT_FLOOR:
            raise NewtonError(f"{exc}; step halving exhausted at t={fld.t:.6g}") from None
        half = step(fld, 0.5 * dt, _depth + 1)
        return step(half, 0.5 * dt, _depth + 1)


# ---------------------------------------------------------------------------
# norms and trajectories


def norms(fld, q_list=()):
    """nu-norms of a field: sup, L^1 and L^{q+1} for each q."""
    V = fld.grid.volumes
    a = np.abs(fld.u)
    rec = {"sup_norm": float(a.max()), "mass": float(V @ a)}
    for q in q_list:
        if q < 0:
            raise ValueError("q must be nonnegative")
        p = q + 1.0
        s = a.max()
        rec[f"norm_q{q:g}"] = 0.0 if s == 0 else float(s * (V @ (a / s) ** p) ** (1.0 / p))
    return rec


def support_radius(fld, tol=SUPPORT_TOL):
    u = fld.u
    s = np.max(np.abs(u))
    if s == 0:
        return 0.0
    idx = np.nonzero(np.abs(u) > tol * s)[0]
    return float(fld.grid.edges[idx[-1] + 1])


@dataclass
class SolveTrajectory:
    q_list: tuple
    t: list = field(default_factory=list)
    sup_norm: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    qnorms: dict = field(default_factory=dict)
    support_radius: list = field(default_factory=list)
    boundary_flux_cum: list = field(default_factory=list)
    truncation_flag: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    initial_mass: float = 0.0
    R: float = 0.0
    n_steps: int = 0
    n_rejected: int = 0

    def record(self, fld, keep_snapshot=False):
        rec = norms(fld, self.q_list)
        self.t.append(fld.t)
        self.sup_norm.append(rec["sup_norm"])
        self.mass.append(rec["mass"])
        for q in self.q_list:
            self.qnorms.setdefault(q, []).append(rec[f"norm_q{q:g}"])
        rs = support_radius(fld)
        self.support_radius.append(rs)
        self.boundary_flux_cum.append(fld.outflow)
        self.truncation_flag.append(bool(rs >= TRUNCATION_FRACTION * self.R))
        if keep_snapshot:
            self.snapshots.append((fld.t, fld.grid.centers.copy(), fld.u.copy()))

    @property
    def truncated(self):
        return any(self.truncation_flag)

    def arrays(self):
        return {k: np.asarray(getattr(self, k)) for k in
                ("t", "sup_norm", "mass", "support_radius", "boundary_flux_cum", "truncation_flag")}

    def mass_balance_error(self):
        m = np.asarray(self.mass)
        f = np.asarray(self.boundary_flux_cum)
        return float(np.max(np.abs(m + f - self.initial_mass)) / self.initial_mass)

    def columns(self):
        return (["t", "sup_norm", "mass"] + [f"norm_q{q:g}" for q in self.q_list]
                + ["support_radius", "boundary_flux_cum", "truncation_flag"])

    def rows(self):
        for i in range(len(self.t)):
            yield ([self.t[i], self.sup_norm[i], self.mass[i]]
                   + [self.qnorms[q][i] for q in self.q_list]
                   + [self.support_radius[i], self.boundary_flux_cum[i],
                      int(self.truncation_flag[i])])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.columns())
            for row in self.rows():
                wr.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])

    def write_snapshots(self, directory):
        import os
        paths = []
        for k, (t, r, u) in enumerate(self.snapshots):
            p = os.path.join(directory, f"snapshot_{k:03d}.csv")
            with open(p, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["r_center", "u"])
                wr.writerows(zip(r.tolist(), u.tolist()))
            paths.append(p)
        return paths


def output_schedule(t_start, t_final, n=60, t_first=None):
    """Log-spaced output times in (t_start, t_final]."""
    t_first = t_first if t_first is not None else max(t_start + 1e-3 * (t_final - t_start), 1e-3)
    return np.geomspace(t_first - t_start, t_final - t_start, n) + t_start


def simulate(spec_or_grid, grid=None, t_final=1.0, output_times=None, q_list=(1, 2, 4),
             rtol=1e-5, dt0=None, field0=None, snapshot_times=(), dt_max=None,
             callback=None):
    """Adaptive implicit Euler run with step-doubling error control.

    The accepted solution is the two-half-step one; the error indicator is
    ||u_full - u_half||_inf / ||u_half||_inf.
    """
    if grid is None:
        grid = spec_or_grid
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    fld = field0 if field0 is not None else initial_field(grid)
    if fld.t >= t_final:
        raise ValueError("t_final precedes the initial time")
    times = np.asarray(output_times if output_times is not None
                       else output_schedule(fld.t, t_final), dtype=float)
    times = np.unique(times[(times > fld.t) & (times <= t_final)])
    snaps = set(float(s) for s in snapshot_times)
    traj = SolveTrajectory(q_list=tuple(q_list), initial_mass=fld.mass, R=grid.R)
    traj.record(fld, keep_snapshot=0.0 in snaps or fld.t in snaps)
    dt = dt0 if dt0 is not None else 1e-4 * max(times[0] - fld.t, 1e-8)
    for target in times:
        while fld.t < target * (1 - 1e-14):
            h = min(dt, target - fld.t)
            if dt_max is not None:
                h = min(h, dt_max)
            full = step(fld, h)
            half = step(step(fld, 0.5 * h), 0.5 * h)
            s = max(half.sup, 1e-300)
            err = float(np.max(np.abs(full.u - half.u))) / s
            fac = 0.9 * math.sqrt(rtol / err) if err > 0 else 4.0
            if err <= rtol:
                fld = half
                traj.n_steps += 1
                if h == dt or fac < 1.0:
                    dt = h * min(4.0, fac)
                if callback is not None:
                    callback(fld)
            else:
                traj.n_rejected += 1
                dt = h * max(0.2, fac)
        fld = RadialField(fld.u, grid, float(target), fld.outflow)
        traj.record(fld, keep_snapshot=any(abs(target - s) <= 1e-12 * max(1, s) for s in snaps))
    traj.final_field = fld
    if traj.truncated:
        warnings.warn("support reached 95% of R; Dirichlet truncation affects the decay",
                      RuntimeWarning, stacklevel=2)
    return traj


def auto_radius(spec, t_final, barrier_eta=None, N_pilot=200, safety=1.5, R0=None):
    """Domain radius for a run up to t_final.

    Intermediate profiles use the barrier support scale
    eta^{1/(2-a)} (log t)^{1/a}; other profiles run coarse pilots, doubling R
    until the support stays clear of the boundary.
    """
    M = spec.M
    if M.family == "intermediate" and barrier_eta is not None:
        a = M.params["a"]
        return safety * barrier_eta ** (1.0 / (2.0 - a)) * math.log(max(t_final, math.e)) ** (1.0 / a)
    R = R0 if R0 is not None else max(4.0, spec.R)
    for _ in range(12):
        pilot = replace(spec, R=R)
        g = build_grid(pilot, N_pilot)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            tr = simulate(g, t_final=t_final, output_times=output_schedule(0.0, t_final, 12),
                          q_list=(), rtol=1e-3)
        rs = max(tr.support_radius)
        if rs < 0.8 * R:
            return safety * rs
        R *= 2.0
    raise RuntimeError("could not size the domain: support keeps reaching the boundary")
