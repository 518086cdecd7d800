"""Decay-law fits and explicit smoothing envelopes for PME trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "EnvelopeParams",
    "DecayFit",
    "EnvelopeCheck",
    "FitError",
    "envelope_abs",
    "envelope_optimized",
    "fit_decay",
    "default_window",
    "check_envelope_domination",
    "regime_targets",
    "classify_regime",
]

REGIME_HYPERBOLIC = "log-power 1/(m-1)"
REGIME_INTERMEDIATE = "log-power (2-a)/(a(m-1))"
REGIME_ABSOLUTE = "absolute t^(-1/(m-1))"


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class EnvelopeParams:
    m: float
    sigma: float
    Lambda: float
    K: float = 1.0
    window: tuple = (1e2, 1e4)

    def iteration_constants(self, q):
        """lambda = 1 + (m-1)/q and theta = q(q+m)/((q+1)(q+m-1)) of the L^q iteration."""
        m = self.m
        return 1.0 + (m - 1.0) / q, q * (q + m) / ((q + 1.0) * (q + m - 1.0))


def envelope_abs(q, t, m, Lam):
    """Explicit L^{q+1} bound for unit-mass data,

        ((m+q)^2 / (4 (q+1) m (m-1) Lam))^{q/((m-1)(q+1))} t^{-q/((m-1)(q+1))}.
    """
    if Lam <= 0:
        raise ValueError("Lambda must be positive")
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    e = q / ((m - 1.0) * (q + 1.0))
    base = (m + q) ** 2 / (4.0 * (q + 1.0) * m * (m - 1.0) * Lam)
    return base**e * t ** (-e)


def envelope_optimized(t, m, sigma, Lam, K=1.0, mass=1.0):
    """Sup-norm envelope with q = log(t+2), up to the constant K.

    For mass M0 data the unit-mass envelope is used at time t M0^{m-1} and
    multiplied by M0.
    """
    if Lam <= 0:
        raise ValueError("Lambda must be positive")
    t = np.asarray(t, dtype=float) * mass ** (m - 1.0)
    q = np.log(t + 2.0)
    base = ((m + q) ** 2 / (4.0 * (q + 1.0) * m * (m - 1.0) * Lam * t)) ** (1.0 / (m - 1.0))
    ex = (sigma - 1.0) / ((m - 1.0) * ((sigma - 1.0) * (q + 1.0) + sigma * (m - 1.0)))
    return mass * K * base * t**ex


@dataclass
class DecayFit:
    A: float
    beta: float
    time_power: float
    r2: float
    window: tuple
    n_samples: int
    accepted: bool = True
    diagnostic: str = ""

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        return self.A * np.log(t + math.e) ** self.beta * t ** (-self.time_power)


def _series(traj):
    if hasattr(traj, "sup_norm"):
        t = np.asarray(traj.t, dtype=float)
        u = np.asarray(traj.sup_norm, dtype=float)
        flag = np.asarray(getattr(traj, "truncation_flag", np.zeros(len(t), bool)), dtype=bool)
    else:
        t, u = (np.asarray(x, dtype=float) for x in traj)
        flag = np.zeros(len(t), dtype=bool)
    return t, u, flag


def default_window(traj, growth=3.0):
    """[t*, t_end/2], t* the first time the support radius reaches growth x its initial value."""
    t = np.asarray(traj.t)
    rs = np.asarray(traj.support_radius)
    hit = np.nonzero(rs >= growth * rs[0])[0]
    t_star = t[hit[0]] if hit.size else t[len(t) // 2]
    return float(max(t_star, t[1])), float(t[-1] / 2.0)


def fit_decay(traj, m, window=None, min_samples=12, r2_min=0.9, flat_tol=0.1):
    """Least squares of log(||u||_inf t^{1/(m-1)}) on log log(t+e).

    ``traj`` is a SolveTrajectory or a (t, sup_norm) pair.  The fit is
    rejected when R^2 < r2_min, unless the fitted values are flat (their
    total variation below ``flat_tol`` in log), where R^2 measures noise
    rather than model failure.
    """
    t, u, flag = _series(traj)
    if window is None:
        window = default_window(traj) if hasattr(traj, "support_radius") else (t[1], t[-1])
    lo, hi = window
    sel = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    if sel.sum() < min_samples:
        raise FitError(f"window [{lo:g}, {hi:g}] holds {sel.sum()} samples; need {min_samples}")
    if np.any(flag[sel]):
        raise FitError("window overlaps Dirichlet-truncated times")
    p = 1.0 / (m - 1.0)
    x = np.log(np.log(t[sel] + math.e))
    y = np.log(u[sel]) + p * np.log(t[sel])
    lr = stats.linregress(x, y)
    fitted = lr.intercept + lr.slope * x
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    spread = float(np.ptp(fitted))
    fit = DecayFit(A=float(math.exp(lr.intercept)), beta=float(lr.slope), time_power=p, r2=r2,
                   window=(float(lo), float(hi)), n_samples=int(sel.sum()))
    if r2 < r2_min and spread > flat_tol:
        fit.accepted = False
        fit.diagnostic = f"R^2 = {r2:.3f} < {r2_min}; window likely pre-asymptotic"
    elif r2 < r2_min:
        fit.diagnostic = f"R^2 = {r2:.3f} on nearly flat data (spread {spread:.3g}); kept"
    return fit


def regime_targets(m, a=0.5):
    return {
        REGIME_HYPERBOLIC: 1.0 / (m - 1.0),
        REGIME_INTERMEDIATE: (2.0 - a) / (a * (m - 1.0)),
        REGIME_ABSOLUTE: 0.0,
    }


def classify_regime(beta, m, a=0.5):
    """Nearest target log-power; returns (regime name, distance)."""
    targets = regime_targets(m, a)
    name = min(targets, key=lambda k: abs(beta - targets[k]))
    return name, abs(beta - targets[name])


@dataclass
class EnvelopeCheck:
    verdict: bool
    worst_ratio: float
    tol: float
    per_q: dict = field(default_factory=dict)


def check_envelope_domination(traj, m, Lam, q_list=(1, 2, 4), tol=0.05, t_min=0.0):
    """||u(t)||_{q+1} <= (1+tol) envelope_abs(q, t, m, Lam) at every recorded t > t_min.

    Expects a unit-mass run.  Refuses Lam <= 0 (no spectral gap).
    """
    if not Lam > 0:
        raise ValueError("no spectral gap (Lambda_low = 0): the explicit envelope does not apply")
    t = np.asarray(traj.t, dtype=float)
    sel = t > max(t_min, 0.0)
    worst = 0.0
    per_q = {}
    for q in q_list:
        vals = np.asarray(traj.qnorms[q], dtype=float)[sel]
        env = envelope_abs(q, t[sel], m, Lam)
        r = float(np.max(vals / env))
        per_q[float(q)] = r
        worst = max(worst, r)
    return EnvelopeCheck(verdict=bool(worst <= 1.0 + tol), worst_ratio=worst, tol=tol, per_q=per_q)
