"""Closed-form maximum likelihood estimators and the separation correction.

All estimators maximize the quadratic path log-likelihood exactly and are
independent of the dominating parametrization. The three flavours:

* marginal: one parameter estimated, the other two assumed known;
* joint mutation pair (alpha, beta) with the selection coefficient known;
* full triple via a 3x3 linear solve.

When the path reaches a separating endpoint before the horizon, the joint
estimator's limit "crystallizes": the coordinate whose information exploded
converges to 1 + 2 lim log(X_t)/A_t (resp. with 1-X and B at the endpoint
1), and the remaining coordinate reduces to its marginal estimator with the
known value replaced by the crystallized one. ``corrected_estimator``
implements that limit by evaluating the ratio at the last grid point before
the recorded hit; extrapolation is deliberately avoided because it adds
estimator variance that is hard to audit, at the price of a documented
discretization bias in the ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .likelihood import (
    PathFunctionals,
    functionals_from_arrays,
    observed_information,
    path_functionals,
    score_vector,
)
from .model import EtaSpec, MutSelParams
from .sde import FunctionalArrays, SamplePath, _integrand_rows

CONDITION_LIMIT = 1e12  # beyond this the linear solve is numerically meaningless


class CrystallizeSignal(Exception):
    """A mutation-rate denominator is zero or has exploded: the coordinate is
    not estimable by the plain formula and the corrected estimator applies."""

    def __init__(self, which: str):
        super().__init__(f"information for {which} is degenerate; use the corrected estimator")
        self.which = which


class DegeneratePathError(ValueError):
    """The path carries no information about the requested coordinate."""


class SingularInformationError(RuntimeError):
    def __init__(self, condition: float):
        super().__init__(
            f"observed information is singular or ill-conditioned (condition ~ {condition:.3e})"
        )
        self.condition = condition


@dataclass(frozen=True)
class EstimateReport:
    """Estimator output with crystallization and clamping bookkeeping.

    ``used_horizon`` is the data horizon the estimate consumed: the first
    separating hit time when a coordinate crystallized, the full horizon
    otherwise. ``information`` is the observed information of the estimated
    block, evaluated at the last time every entry is finite.
    """

    estimate: np.ndarray
    crystallized: tuple[bool, ...]
    used_horizon: float
    information: np.ndarray
    clamped: tuple[bool, ...]


@dataclass(frozen=True)
class FullMleResult:
    estimate: np.ndarray
    information: np.ndarray


def mle_marginal(which: str, f: PathFunctionals, rest: tuple[float, float]) -> float:
    """Marginal estimator for one coordinate, the other two known.

    which='alpha', rest=(beta0, s0):
        1 + [2 log(X_T/X_0) + beta0 T - s0 C] / A
    which='beta', rest=(alpha0, s0):
        1 + [2 log((1-X_T)/(1-X_0)) + alpha0 T + s0 D] / B
    which='s', rest=(alpha0, beta0):
        [2 (H(X_T)-H(X_0)) - int X(1-X) eta' dt - alpha0 C + beta0 D] / E
    """
    if which == "alpha":
        beta0, s0 = rest
        if not math.isfinite(f.a) or f.a <= 0.0:
            raise CrystallizeSignal("alpha")
        return 1.0 + (2.0 * f.log_ratio_x + beta0 * f.t - s0 * f.c) / f.a
    if which == "beta":
        alpha0, s0 = rest
        if not math.isfinite(f.b) or f.b <= 0.0:
            raise CrystallizeSignal("beta")
        return 1.0 + (2.0 * f.log_ratio_1mx + alpha0 * f.t + s0 * f.d) / f.b
    if which == "s":
        alpha0, beta0 = rest
        if f.e <= 0.0:
            raise DegeneratePathError("path carries no selection information (E = 0)")
        return (2.0 * f.h_diff - f.eta_prime_term - alpha0 * f.c + beta0 * f.d) / f.e
    raise ValueError(f"unknown coordinate {which!r}")


def mle_joint_mut(f: PathFunctionals, s_known: float = 0.0) -> tuple[float, float]:
    """Joint estimator of (alpha, beta) with s known.

    alpha_hat = 2 [B lrx + T lr1mx + (B/2)(A+T) + (s/2)(D T - B C)] / (A B - T^2)
    beta_hat  = 2 [A lr1mx + T lrx + (A/2)(B+T) + (s/2)(A D - C T)] / (A B - T^2)

    Requires finite A, B (no separating hit) and A B > T^2; on a constant
    path A B = T^2 identically and the information is singular.
    """
    if not math.isfinite(f.a):
        raise CrystallizeSignal("alpha")
    if not math.isfinite(f.b):
        raise CrystallizeSignal("beta")
    det = f.a * f.b - f.t * f.t
    if det <= 0.0 or not math.isfinite(f.log_ratio_x) or not math.isfinite(f.log_ratio_1mx):
        cond = math.inf if det <= 0.0 else (f.a * f.b + f.t * f.t) / det
        raise SingularInformationError(cond)
    s = s_known
    lrx, lr1 = f.log_ratio_x, f.log_ratio_1mx
    alpha_hat = (
        2.0
        * (f.b * lrx + f.t * lr1 + 0.5 * f.b * (f.a + f.t) + 0.5 * s * (f.d * f.t - f.b * f.c))
        / det
    )
    beta_hat = (
        2.0
        * (f.a * lr1 + f.t * lrx + 0.5 * f.a * (f.b + f.t) + 0.5 * s * (f.a * f.d - f.c * f.t))
        / det
    )
    return alpha_hat, beta_hat


def mle_full(f: PathFunctionals, theta0: MutSelParams = MutSelParams(0.0, 0.0, 0.0)) -> FullMleResult:
    """Full-triple estimator theta0 + I^{-1} Y; the maximizer is theta0-free.

    Raises CrystallizeSignal if a diagonal information entry exploded and
    SingularInformationError when the condition number exceeds
    CONDITION_LIMIT (e.g. constant paths, rank-deficient observations).
    """
    if not math.isfinite(f.a):
        raise CrystallizeSignal("alpha")
    if not math.isfinite(f.b):
        raise CrystallizeSignal("beta")
    info = observed_information(f)
    cond = float(np.linalg.cond(info))
    if not math.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularInformationError(cond)
    y = score_vector(f, theta0)
    est = np.array([theta0.alpha, theta0.beta, theta0.s]) + np.linalg.solve(info, y)
    return FullMleResult(est, info)


# ---------------------------------------------------------------------------
# Separation-corrected estimator
# ---------------------------------------------------------------------------


def _cumtrapz_at(times: np.ndarray, integrand: np.ndarray, idx: int) -> float:
    if idx <= 0:
        return 0.0
    seg_t = times[: idx + 1]
    seg_f = integrand[: idx + 1]
    return float(np.trapezoid(seg_f, seg_t))


def _truncate(path: SamplePath, horizon: float) -> SamplePath:
    last = int(np.searchsorted(path.times, horizon + 1e-12, side="right")) - 1
    last = max(last, 1)
    return SamplePath(
        path.times[: last + 1],
        path.values[: last + 1],
        hit0=path.hit0 if path.hit0 is not None and path.hit0 <= path.times[last] else None,
        hit1=path.hit1 if path.hit1 is not None and path.hit1 <= path.times[last] else None,
    )


def corrected_estimator(
    path: SamplePath, eta: EtaSpec, s_known: float = 0.0, horizon: float | None = None
) -> EstimateReport:
    """Joint (alpha, beta) estimate corrected for separation in finite time.

    With no separating hit before the horizon this is exactly
    :func:`mle_joint_mut`. If the path hits 0 first, the alpha coordinate is
    set to 1 + 2 log(X_t)/A_t at the last grid point before the hit and
    flagged crystallized; the beta coordinate is the marginal estimator at
    horizon min(T, hit time of 1) with alpha0 replaced by the crystallized
    value. Hitting 1 first is mirrored. If both endpoints are hit, both
    coordinates crystallize.
    """
    if horizon is None:
        horizon = path.horizon
    work = _truncate(path, horizon) if horizon < path.horizon else path
    t_end = work.horizon
    h0 = work.hit0 if work.hit0 is not None else math.inf
    h1 = work.hit1 if work.hit1 is not None else math.inf

    if h0 == math.inf and h1 == math.inf:
        f = path_functionals(work, eta)
        ah, bh = mle_joint_mut(f, s_known)
        info = 0.25 * np.array([[f.a, -f.t], [-f.t, f.b]])
        return EstimateReport(
            estimate=np.array([ah, bh]),
            crystallized=(False, False),
            used_horizon=t_end,
            information=info,
            clamped=(False, False),
        )

    times, values = work.times, work.values
    rows = _integrand_rows(values, eta)

    def pre_hit_index(hit_t: float) -> int:
        k = int(np.searchsorted(times, hit_t, side="right")) - 1
        if k < 1:
            raise DegeneratePathError("separating hit before any information accumulated")
        return k

    if h0 <= h1:
        k = pre_hit_index(h0)
        a_k = _cumtrapz_at(times, rows[0], k)
        if a_k <= 0.0 or values[k] <= 0.0:
            raise DegeneratePathError("empty pre-hit window at the endpoint 0")
        alpha_c = 1.0 + 2.0 * math.log(values[k]) / a_k
        if h1 < math.inf:
            m = pre_hit_index(h1)
            b_m = _cumtrapz_at(times, rows[1], m)
            if b_m <= 0.0 or values[m] >= 1.0:
                raise DegeneratePathError("empty pre-hit window at the endpoint 1")
            beta_est = 1.0 + 2.0 * math.log1p(-values[m]) / b_m
            crystallized = (True, True)
        else:
            f_t = path_functionals(work, eta)
            beta_est = 1.0 + (2.0 * f_t.log_ratio_1mx + alpha_c * f_t.t + s_known * f_t.d) / f_t.b
            crystallized = (True, False)
        b_k = _cumtrapz_at(times, rows[1], k)
        info = 0.25 * np.array([[a_k, -times[k]], [-times[k], b_k]])
        return EstimateReport(
            estimate=np.array([alpha_c, beta_est]),
            crystallized=crystallized,
            used_horizon=float(min(h0, h1)),
            information=info,
            clamped=(False, False),
        )

    # hit of 1 strictly first: mirror of the branch above
    m = pre_hit_index(h1)
    b_m = _cumtrapz_at(times, rows[1], m)
    if b_m <= 0.0 or values[m] >= 1.0:
        raise DegeneratePathError("empty pre-hit window at the endpoint 1")
    beta_c = 1.0 + 2.0 * math.log1p(-values[m]) / b_m
    if h0 < math.inf:
        k = pre_hit_index(h0)
        a_k = _cumtrapz_at(times, rows[0], k)
        if a_k <= 0.0 or values[k] <= 0.0:
            raise DegeneratePathError("empty pre-hit window at the endpoint 0")
        alpha_est = 1.0 + 2.0 * math.log(values[k]) / a_k
        crystallized = (True, True)
    else:
        f_t = path_functionals(work, eta)
        alpha_est = 1.0 + (2.0 * f_t.log_ratio_x + beta_c * f_t.t - s_known * f_t.c) / f_t.a
        crystallized = (False, True)
    a_m = _cumtrapz_at(times, rows[0], m)
    info = 0.25 * np.array([[a_m, -times[m]], [-times[m], b_m]])
    return EstimateReport(
        estimate=np.array([alpha_est, beta_c]),
        crystallized=crystallized,
        used_horizon=float(min(h0, h1)),
        information=info,
        clamped=(False, False),
    )


def corrected_from_functionals(
    fa: FunctionalArrays, i: int, eta: EtaSpec, s_known: float = 0.0
) -> EstimateReport:
    """Corrected estimate for path ``i`` of a batch accumulation.

    Uses the engine's pre-hit snapshots rather than a stored path; agrees
    with :func:`corrected_estimator` up to the snapshot resolution.
    """
    h0 = fa.hit0[i]
    h1 = fa.hit1[i]
    have0 = not math.isnan(h0)
    have1 = not math.isnan(h1)
    if not have0 and not have1:
        f = functionals_from_arrays(fa, i, eta)
        ah, bh = mle_joint_mut(f, s_known)
        info = 0.25 * np.array([[f.a, -f.t], [-f.t, f.b]])
        return EstimateReport(np.array([ah, bh]), (False, False), float(fa.t), info, (False, False))

    f = functionals_from_arrays(fa, i, eta)
    if have0 and (not have1 or h0 <= h1):
        if math.isnan(fa.hit0_a[i]) or fa.hit0_a[i] <= 0.0:
            raise DegeneratePathError("empty pre-hit window at the endpoint 0")
        alpha_c = 1.0 + 2.0 * fa.hit0_log_x[i] / fa.hit0_a[i]
        if have1:
            if math.isnan(fa.hit1_b[i]) or fa.hit1_b[i] <= 0.0:
                raise DegeneratePathError("empty pre-hit window at the endpoint 1")
            beta_est = 1.0 + 2.0 * fa.hit1_log_1mx[i] / fa.hit1_b[i]
            crystallized = (True, True)
        else:
            beta_est = 1.0 + (2.0 * f.log_ratio_1mx + alpha_c * f.t + s_known * f.d) / f.b
            crystallized = (True, False)
        t_hit = float(min(h0, h1) if have1 else h0)
        info = 0.25 * np.array([[fa.hit0_a[i], -t_hit], [-t_hit, fa.hit0_b[i]]])
        return EstimateReport(np.array([alpha_c, beta_est]), crystallized, t_hit, info, (False, False))

    if math.isnan(fa.hit1_b[i]) or fa.hit1_b[i] <= 0.0:
        raise DegeneratePathError("empty pre-hit window at the endpoint 1")
    beta_c = 1.0 + 2.0 * fa.hit1_log_1mx[i] / fa.hit1_b[i]
    if have0:
        if math.isnan(fa.hit0_a[i]) or fa.hit0_a[i] <= 0.0:
            raise DegeneratePathError("empty pre-hit window at the endpoint 0")
        alpha_est = 1.0 + 2.0 * fa.hit0_log_x[i] / fa.hit0_a[i]
        crystallized = (True, True)
    else:
        alpha_est = 1.0 + (2.0 * f.log_ratio_x + beta_c * f.t - s_known * f.c) / f.a
        crystallized = (False, True)
    t_hit = float(min(h0, h1) if have0 else h1)
    info = 0.25 * np.array([[fa.hit1_a[i], -t_hit], [-t_hit, fa.hit1_b[i]]])
    return EstimateReport(np.array([alpha_est, beta_c]), crystallized, t_hit, info, (False, False))


def clamp_to_domain(report: EstimateReport) -> EstimateReport:
    """Clamp mutation-rate coordinates at 0 (the parameter space floor).

    The selection coordinate (index 2 of a full triple) is real-valued and
    never clamped.
    """
    est = report.estimate.copy()
    clamped = list(report.clamped)
    n_mut = min(2, len(est))
    for j in range(n_mut):
        if est[j] < 0.0:
            est[j] = 0.0
            clamped[j] = True
    return replace(report, estimate=est, clamped=tuple(clamped))
