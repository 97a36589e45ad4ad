"""Pathwise likelihood machinery for continuously observed paths.

The log-likelihood of parameters p against a dominating parametrization p0
is the quadratic form

    log L_T(p) = (p - p0)' Y_T - (1/2) (p - p0)' I_T (p - p0),

where I_T is the observed information assembled from the five time
integrals A..E and Y_T is the score offset. The stochastic integrals in the
textbook form of Y_T are never computed: each is eliminated in favour of
endpoint terms (log X_T - log X_0, log(1-X_T) - log(1-X_0), H(X_T) - H(X_0))
plus ordinary time integrals, which is both exact and robust on a discrete
grid.

A = integral (1-X)/X dt explodes exactly when the path reaches 0; whether
that happened is decided by the recorded hit flag (or an exact touch of the
endpoint), never by the size of a discrete trapezoidal sum, which is always
finite and would misclassify silently. Past such an explosion the likelihood
involving a differing alpha no longer exists and ``log_likelihood`` returns
the ``SEPARATED`` marker instead of a number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EtaSpec, MutSelParams
from .sde import FunctionalArrays, SamplePath, _integrand_rows

DEFAULT_CLIP = 1e-12


class _SeparatedType:
    """Marker: the requested likelihood does not exist past the separating time."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "SEPARATED"


SEPARATED = _SeparatedType()


@dataclass(frozen=True)
class PathFunctionals:
    """Time integrals and endpoint terms of one observed path.

    a..e are integrals of (1-X)/X, X/(1-X), (1-X) eta, X eta, X(1-X) eta^2;
    eta_prime_term of X(1-X) eta'(X); t is the horizon. a is math.inf
    exactly when the path touches 0 (flagged, not saturated); likewise b at
    1. log_ratio terms are extended reals (infinite for endpoint values).
    """

    a: float
    b: float
    c: float
    d: float
    e: float
    t: float
    log_ratio_x: float
    log_ratio_1mx: float
    h_diff: float
    eta_prime_term: float


def _guarded_log(v: float, clip: float) -> float:
    if v <= 0.0:
        return -math.inf
    return math.log(max(v, clip))


def path_functionals(path: SamplePath, eta: EtaSpec, clip: float = DEFAULT_CLIP) -> PathFunctionals:
    """Trapezoidal functionals of a path on its own grid.

    States within ``clip`` of an endpoint contribute nothing to the singular
    integrands (their divergence is carried by the touch/hit flags), and the
    endpoint log terms are floored at ``clip``.
    """
    t = path.times
    x = path.values
    horizon = float(t[-1])
    touch0 = bool(np.any(x <= 0.0)) or (path.hit0 is not None and path.hit0 <= horizon)
    touch1 = bool(np.any(x >= 1.0)) or (path.hit1 is not None and path.hit1 <= horizon)
    ia, ib, ic, idd, ie, ip = _integrand_rows(x, eta, clip)
    a = math.inf if touch0 else float(np.trapezoid(ia, t))
    b = math.inf if touch1 else float(np.trapezoid(ib, t))
    return PathFunctionals(
        a=a,
        b=b,
        c=float(np.trapezoid(ic, t)),
        d=float(np.trapezoid(idd, t)),
        e=float(np.trapezoid(ie, t)),
        t=horizon - float(t[0]),
        log_ratio_x=_guarded_log(float(x[-1]), clip) - _guarded_log(float(x[0]), clip),
        log_ratio_1mx=_guarded_log(1.0 - float(x[-1]), clip) - _guarded_log(1.0 - float(x[0]), clip),
        h_diff=float(eta.big_h(x[-1]) - eta.big_h(x[0])),
        eta_prime_term=float(np.trapezoid(ip, t)),
    )


def functionals_from_arrays(fa: FunctionalArrays, i: int, eta: EtaSpec, clip: float = DEFAULT_CLIP) -> PathFunctionals:
    """PathFunctionals for path ``i`` of a batch accumulation."""
    a = math.inf if fa.touched0[i] else float(fa.a[i])
    b = math.inf if fa.touched1[i] else float(fa.b[i])
    x0, xt = float(fa.x_start[i]), float(fa.x_end[i])
    return PathFunctionals(
        a=a,
        b=b,
        c=float(fa.c[i]),
        d=float(fa.d[i]),
        e=float(fa.e[i]),
        t=float(fa.t),
        log_ratio_x=_guarded_log(xt, clip) - _guarded_log(x0, clip),
        log_ratio_1mx=_guarded_log(1.0 - xt, clip) - _guarded_log(1.0 - x0, clip),
        h_diff=float(eta.big_h(xt) - eta.big_h(x0)),
        eta_prime_term=float(fa.eta_prime[i]),
    )


def observed_information(f: PathFunctionals) -> np.ndarray:
    """The 3x3 observed information I_T = (1/4) [[A,-T,C],[-T,B,-D],[C,-D,E]]."""
    return 0.25 * np.array(
        [
            [f.a, -f.t, f.c],
            [-f.t, f.b, -f.d],
            [f.c, -f.d, f.e],
        ]
    )


def score_vector(f: PathFunctionals, p0: MutSelParams) -> np.ndarray:
    """The transformed score offset Y_T relative to the dominating p0.

    Y1 = (1/2) log(X_T/X_0) + [A (1-a0) + b0 T - s0 C] / 4
    Y2 = (1/2) log((1-X_T)/(1-X_0)) + [B (1-b0) + a0 T + s0 D] / 4
    Y3 = (1/2) (H(X_T)-H(X_0)) - (1/4) int X(1-X) eta' dt
         - (1/4) (a0 C - b0 D + s0 E)
    """
    a0, b0, s0 = p0.alpha, p0.beta, p0.s
    y1 = 0.5 * f.log_ratio_x + 0.25 * (f.a * (1.0 - a0) + b0 * f.t - s0 * f.c)
    y2 = 0.5 * f.log_ratio_1mx + 0.25 * (f.b * (1.0 - b0) + a0 * f.t + s0 * f.d)
    y3 = 0.5 * f.h_diff - 0.25 * f.eta_prime_term - 0.25 * (a0 * f.c - b0 * f.d + s0 * f.e)
    return np.array([y1, y2, y3])


def log_likelihood(p: MutSelParams, p0: MutSelParams, f: PathFunctionals):
    """log dP_p / dP_p0 restricted to the path observed through ``f``.

    Returns SEPARATED when a coordinate in which p and p0 differ requires a
    functional that has exploded (the two measures are already mutually
    singular on this path). The dominating p0 may be any triple; the value
    is a genuine log Radon-Nikodym derivative, so chain-rule identities hold
    exactly.
    """
    da, db, ds = p.alpha - p0.alpha, p.beta - p0.beta, p.s - p0.s
    if da == 0.0 and db == 0.0 and ds == 0.0:
        return 0.0
    if da != 0.0 and not (math.isfinite(f.a) and math.isfinite(f.log_ratio_x)):
        return SEPARATED
    if db != 0.0 and not (math.isfinite(f.b) and math.isfinite(f.log_ratio_1mx)):
        return SEPARATED

    a0, b0, s0 = p0.alpha, p0.beta, p0.s
    val = 0.0
    if da != 0.0:
        val += da * (0.5 * f.log_ratio_x + 0.25 * (f.a * (1.0 - a0) + b0 * f.t - s0 * f.c))
    if db != 0.0:
        val += db * (0.5 * f.log_ratio_1mx + 0.25 * (f.b * (1.0 - b0) + a0 * f.t + s0 * f.d))
    if ds != 0.0:
        val += ds * (
            0.5 * f.h_diff - 0.25 * f.eta_prime_term - 0.25 * (a0 * f.c - b0 * f.d + s0 * f.e)
        )
    quad = ds * ds * f.e + 2.0 * da * ds * f.c - 2.0 * db * ds * f.d - 2.0 * da * db * f.t
    if da != 0.0:
        quad += da * da * f.a
    if db != 0.0:
        quad += db * db * f.b
    return float(val - 0.125 * quad)


def selection_rnd(
    path: SamplePath,
    eta: EtaSpec,
    alpha: float,
    beta: float,
    s1: float,
    s0: float,
) -> float:
    """log RND between selection coefficients s1 vs s0 at common (alpha, beta).

    Always finite for a finite horizon: the selection direction of the drift
    gap is bounded, so no functional can explode. Assembled here directly
    from the endpoint identity for the H-difference; deliberately not routed
    through :func:`log_likelihood` so the two computations cross-check each
    other.
    """
    t = path.times
    x = path.values
    ex = eta.eta(x)
    c_int = float(np.trapezoid((1.0 - x) * ex, t))
    d_int = float(np.trapezoid(x * ex, t))
    e_int = float(np.trapezoid(x * (1.0 - x) * ex * ex, t))
    ep_int = float(np.trapezoid(x * (1.0 - x) * eta.eta_prime(x), t))
    h_diff = float(eta.big_h(x[-1]) - eta.big_h(x[0]))
    y3 = 0.5 * h_diff - 0.25 * ep_int - 0.25 * (alpha * c_int - beta * d_int + s0 * e_int)
    dsel = s1 - s0
    return dsel * y3 - 0.125 * dsel * dsel * e_int
