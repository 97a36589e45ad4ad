"""Wright-Fisher diffusion model: parameters, selection shape, coefficients,
boundary classification, scale/speed functions, and stationary moments.

The diffusion on [0,1] solves

    dX_t = (1/2) [alpha (1 - X_t) - beta X_t + s X_t (1 - X_t) eta(X_t)] dt
           + sqrt(X_t (1 - X_t)) dW_t,

with mutation rates alpha/2, beta/2 (toward and away from the focal allele),
selection coefficient s, and a Lipschitz frequency-dependence shape eta.
Everything in this module is a pure function of the parameter values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import integrate


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature fails to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved tolerance {achieved:.3e})")
        self.achieved = achieved


class ErgodicityError(ValueError):
    """Raised when a stationary quantity is requested for a non-ergodic model."""


@dataclass(frozen=True)
class MutSelParams:
    """Parameter triple (alpha, beta, s).

    alpha, beta are the scaled mutation rates (each appears as rate/2 in the
    drift); s is the selection coefficient. alpha, beta must be finite and
    nonnegative; s finite.
    """

    alpha: float
    beta: float
    s: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "s"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(
                f"mutation rates must be nonnegative, got alpha={self.alpha}, beta={self.beta}"
            )

    def mirror(self) -> "MutSelParams":
        """Parameters of the frequency-flipped process x -> 1-x.

        The flipped process is again of the same family with alpha and beta
        exchanged, provided eta is replaced by its mirror (see EtaSpec.mirror).
        """
        return MutSelParams(self.beta, self.alpha, self.s)


@dataclass(frozen=True)
class EtaSpec:
    """Selection shape eta on [0,1], restricted to polynomial forms.

    Three constructors cover the standard cases:

    * ``EtaSpec.genic()``           -- eta(x) = 1 (haploid selection)
    * ``EtaSpec.diploid(h)``        -- eta(x) = x + h (1 - 2x), dominance h
    * ``EtaSpec.polynomial(coeffs)``-- arbitrary polynomial, ascending powers

    ``h_offset`` shifts the antiderivative H by a constant (H(0) = h_offset).
    All downstream formulas use only differences H(x) - H(y), so the offset
    must not affect any exported quantity; it exists so that tests can assert
    exactly that.
    """

    kind: str
    coeffs: tuple[float, ...]
    h_offset: float = 0.0

    def __post_init__(self):
        if not self.coeffs or all(c == 0.0 for c in self.coeffs):
            raise ValueError("eta must not be identically zero on [0,1]")
        if any(not math.isfinite(c) for c in self.coeffs):
            raise ValueError("eta coefficients must be finite")

    @classmethod
    def genic(cls) -> "EtaSpec":
        return cls("genic", (1.0,))

    @classmethod
    def diploid(cls, h: float) -> "EtaSpec":
        # x + h(1-2x) = h + (1-2h) x
        return cls("diploid", (float(h), 1.0 - 2.0 * float(h)))

    @classmethod
    def polynomial(cls, coeffs: Iterable[float]) -> "EtaSpec":
        return cls("polynomial", tuple(float(c) for c in coeffs))

    @property
    def is_genic(self) -> bool:
        c = self.coeffs
        return c[0] == 1.0 and all(ck == 0.0 for ck in c[1:])

    def eta(self, x):
        """Evaluate eta(x); accepts scalars or arrays."""
        return npoly.polyval(x, self.coeffs)

    def eta_prime(self, x):
        """Evaluate eta'(x)."""
        return npoly.polyval(x, npoly.polyder(self.coeffs))

    def big_h(self, x):
        """Antiderivative H(x) = integral of eta from 0 to x, plus h_offset."""
        anti = npoly.polyint(self.coeffs)  # constant term 0, so H(0)=0
        return npoly.polyval(x, anti) + self.h_offset

    def sup_abs(self) -> float:
        """max of |eta| over [0,1] (exact, via stationary points)."""
        crit = [0.0, 1.0]
        der = npoly.polyder(self.coeffs)
        if len(der) > 1 or der[0] != 0.0:
            roots = npoly.polyroots(der)
            crit += [float(r.real) for r in roots if abs(r.imag) < 1e-12 and 0.0 < r.real < 1.0]
        return float(max(abs(self.eta(c)) for c in crit))

    def mirror(self) -> "EtaSpec":
        """The mirrored shape eta'(x) = -eta(1-x).

        Under x -> 1-x the drift maps to the drift of MutSelParams.mirror()
        with this shape (same s).
        """
        # -eta(1-x): compose with (1-x), negate
        c = np.asarray(self.coeffs)
        n = len(c)
        out = np.zeros(n)
        # (1-x)^k expanded: sum_j C(k,j) (-1)^j x^j
        for k in range(n):
            for j in range(k + 1):
                out[j] += c[k] * math.comb(k, j) * (-1.0) ** j
        return EtaSpec("polynomial", tuple(-out), self.h_offset)


class BoundaryClass(Enum):
    EXIT = "exit"
    REGULAR_REFLECTING = "regular_reflecting"
    ENTRANCE = "entrance"


def _classify_rate(rate: float) -> BoundaryClass:
    if rate == 0.0:
        return BoundaryClass.EXIT
    if rate < 1.0:
        return BoundaryClass.REGULAR_REFLECTING
    return BoundaryClass.ENTRANCE


def classify_boundary(p: MutSelParams) -> tuple[BoundaryClass, BoundaryClass]:
    """Feller boundary classification at the endpoints 0 and 1.

    Determined solely by the local mutation rate: 0 -> exit, (0,1) ->
    regular reflecting, [1, inf) -> entrance (alpha governs the endpoint 0,
    beta the endpoint 1).
    """
    return _classify_rate(p.alpha), _classify_rate(p.beta)


def state_space(p: MutSelParams) -> tuple[bool, bool]:
    """Endpoint inclusion in the state space: included iff the rate is < 1."""
    return p.alpha < 1.0, p.beta < 1.0


def diffusion_sigma(x):
    """Diffusion coefficient sigma(x) = sqrt(x(1-x))."""
    return np.sqrt(np.asarray(x) * (1.0 - np.asarray(x)))


def drift(p: MutSelParams, eta: EtaSpec, x):
    """Drift mu(x) = (1/2)[alpha(1-x) - beta x + s x(1-x) eta(x)]."""
    x = np.asarray(x)
    return 0.5 * (p.alpha * (1.0 - x) - p.beta * x + p.s * x * (1.0 - x) * eta.eta(x))


def drift_gap_over_sigma(p1: MutSelParams, p0: MutSelParams, eta: EtaSpec, x):
    """The scaled drift gap b(x) = (mu_1(x) - mu_0(x)) / sigma(x) on (0,1).

    b(x) = (a1-a0)/2 sqrt((1-x)/x) + (b1-b0)/2 sqrt(x/(1-x))
           + (s1-s0)/2 sqrt(x(1-x)) eta(x).

    The first two terms are singular at the endpoints whenever the rates
    differ; x must be strictly interior.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0.0) or np.any(xa >= 1.0):
        raise ValueError("drift_gap_over_sigma requires x strictly inside (0,1)")
    da, db, ds = p1.alpha - p0.alpha, p1.beta - p0.beta, p1.s - p0.s
    out = (
        0.5 * da * np.sqrt((1.0 - xa) / xa)
        + 0.5 * db * np.sqrt(xa / (1.0 - xa))
        + 0.5 * ds * np.sqrt(xa * (1.0 - xa)) * eta.eta(xa)
    )
    return float(out) if np.isscalar(x) else out


# ---------------------------------------------------------------------------
# Scale function and speed measure
# ---------------------------------------------------------------------------

_SCALE_ANCHOR = 0.5  # d in the scale integral; only differences matter
_SCALE_SPLIT = 0.25  # below this (resp. above 1 - this) use the endpoint substitution


def _scale_integrand(p: MutSelParams, eta: EtaSpec):
    def g(y):
        return y ** (-p.alpha) * (1.0 - y) ** (-p.beta) * np.exp(-p.s * eta.big_h(y))

    return g


def _quad(f, a, b, rtol):
    val, err = integrate.quad(f, a, b, epsabs=1e-14, epsrel=rtol, limit=200)
    scale = max(1.0, abs(val))
    if err > 100 * rtol * scale + 1e-12:
        raise QuadratureError("scale-function quadrature did not converge", err / scale)
    return val


def _scale_piece_near_zero(p: MutSelParams, eta: EtaSpec, lo: float, hi: float, rtol: float) -> float:
    """integral_lo^hi y^-alpha (1-y)^-beta e^{-s H} dy with 0 <= lo < hi.

    For alpha in (0,1) substitute y = u^{1/(1-alpha)}; the substitution removes
    the integrable endpoint singularity of the dominant term exactly.
    """
    a = p.alpha
    if a == 0.0:
        g = _scale_integrand(p, eta)
        return _quad(g, lo, hi, rtol)
    if a >= 1.0:
        if lo == 0.0:
            return math.inf
        g = _scale_integrand(p, eta)
        return _quad(g, lo, hi, rtol)
    q = 1.0 - a

    def g_sub(u):
        y = u ** (1.0 / q)
        return (1.0 - y) ** (-p.beta) * np.exp(-p.s * eta.big_h(y)) / q

    return _quad(g_sub, lo**q, hi**q, rtol)


def _scale_piece_near_one(p: MutSelParams, eta: EtaSpec, lo: float, hi: float, rtol: float) -> float:
    b = p.beta
    if b == 0.0 or b >= 1.0:
        if b >= 1.0 and hi == 1.0:
            return math.inf
        g = _scale_integrand(p, eta)
        return _quad(g, lo, hi, rtol)
    q = 1.0 - b

    def g_sub(u):
        y = 1.0 - u ** (1.0 / q)
        return y ** (-p.alpha) * np.exp(-p.s * eta.big_h(y)) / q

    # u runs from (1-hi)^q to (1-lo)^q as y runs from hi down to lo
    return _quad(g_sub, (1.0 - hi) ** q, (1.0 - lo) ** q, rtol)


def scale_function(p: MutSelParams, eta: EtaSpec, x: float, *, rtol: float = 1e-11) -> float:
    """Scale function S(x) = integral_{1/2}^{x} y^-alpha (1-y)^-beta e^{-s H(y)} dy.

    The multiplicative constant is fixed to 1 and the anchor to 1/2; only
    differences S(x)-S(y) feed any downstream quantity. S(0) = -inf when
    alpha >= 1 and S(1) = +inf when beta >= 1 (inaccessible endpoints).
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0,1]")
    if x == _SCALE_ANCHOR:
        return 0.0
    g = _scale_integrand(p, eta)
    if x > _SCALE_ANCHOR:
        hi_split = 1.0 - _SCALE_SPLIT
        if x <= hi_split:
            return _quad(g, _SCALE_ANCHOR, x, rtol)
        if x == 1.0 and p.beta >= 1.0:
            return math.inf
        return _quad(g, _SCALE_ANCHOR, hi_split, rtol) + _scale_piece_near_one(
            p, eta, hi_split, x, rtol
        )
    if x >= _SCALE_SPLIT:
        return -_quad(g, x, _SCALE_ANCHOR, rtol)
    if x == 0.0 and p.alpha >= 1.0:
        return -math.inf
    return -(
        _quad(g, _SCALE_SPLIT, _SCALE_ANCHOR, rtol)
        + _scale_piece_near_zero(p, eta, x, _SCALE_SPLIT, rtol)
    )


def scale_increment(p: MutSelParams, eta: EtaSpec, lo: float, hi: float, *, rtol: float = 1e-11) -> float:
    """S(hi) - S(lo) computed without cancellation for 0 <= lo < hi <= 1."""
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("need 0 <= lo < hi <= 1")
    if hi <= _SCALE_SPLIT:
        return _scale_piece_near_zero(p, eta, lo, hi, rtol)
    if lo >= 1.0 - _SCALE_SPLIT:
        return _scale_piece_near_one(p, eta, lo, hi, rtol)
    return scale_function(p, eta, hi, rtol=rtol) - scale_function(p, eta, lo, rtol=rtol)


def speed_density(p: MutSelParams, eta: EtaSpec, x):
    """Speed measure density m(x) = x^{alpha-1} (1-x)^{beta-1} e^{s H(x)} on (0,1)."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0.0) or np.any(xa >= 1.0):
        raise ValueError("speed density is defined on the open interval (0,1)")
    out = xa ** (p.alpha - 1.0) * (1.0 - xa) ** (p.beta - 1.0) * np.exp(p.s * eta.big_h(xa))
    return float(out) if np.isscalar(x) else out


def speed_atom(p: MutSelParams, endpoint: int) -> float:
    """Speed measure atom at an endpoint: infinite iff the local rate is 0."""
    if endpoint not in (0, 1):
        raise ValueError("endpoint must be 0 or 1")
    rate = p.alpha if endpoint == 0 else p.beta
    return math.inf if rate == 0.0 else 0.0


def scale_and_speed(p: MutSelParams, eta: EtaSpec, x: float, *, rtol: float = 1e-11) -> tuple[float, float]:
    """(S(x), speed density at x) for interior x."""
    return scale_function(p, eta, x, rtol=rtol), speed_density(p, eta, x)


# ---------------------------------------------------------------------------
# Stationary moments and the asymptotic-information matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationaryMoments:
    """Stationary expectations feeding the asymptotic covariance.

    a_inf = E[(1-X)/X], b_inf = E[X/(1-X)], c_inf = E[(1-X) eta(X)],
    d_inf = E[X eta(X)], e_inf = E[X(1-X) eta(X)^2] under the stationary law.
    a_inf is infinite iff alpha <= 1; b_inf infinite iff beta <= 1. Infinite
    entries are represented by math.inf (set from the finiteness rule, never
    produced by overflow).
    """

    a_inf: float
    b_inf: float
    c_inf: float
    d_inf: float
    e_inf: float

    def all_finite(self) -> bool:
        return all(
            math.isfinite(v) for v in (self.a_inf, self.b_inf, self.c_inf, self.d_inf, self.e_inf)
        )


def _stationary_integral(p: MutSelParams, eta: EtaSpec, f, dalpha: float, dbeta: float, rtol: float):
    """integral_0^1 x^{alpha-1+dalpha} (1-x)^{beta-1+dbeta} e^{s H(x)} f(x) dx.

    Uses the algebraic-weight quadrature so the endpoint singularities are
    handled by the rule itself.
    """
    wa, wb = p.alpha - 1.0 + dalpha, p.beta - 1.0 + dbeta
    if wa <= -1.0 or wb <= -1.0:
        raise ValueError("non-integrable stationary integrand")

    def smooth(x):
        return math.exp(p.s * eta.big_h(x)) * f(x)

    val, err = integrate.quad(
        smooth, 0.0, 1.0, weight="alg", wvar=(wa, wb), epsabs=1e-14, epsrel=rtol, limit=200
    )
    scale = max(1.0, abs(val))
    if err > 100 * rtol * scale + 1e-12:
        raise QuadratureError("stationary-moment quadrature did not converge", err / scale)
    return val


def stationary_moments(
    p: MutSelParams, eta: EtaSpec, *, rtol: float = 1e-11
) -> tuple[StationaryMoments, np.ndarray]:
    """Stationary moments and the matrix Sigma they assemble into.

    Requires alpha > 0 and beta > 0 (the stationary density x^{alpha-1}
    (1-x)^{beta-1} e^{s H} / Z exists only in the ergodic regime). Entries
    that are analytically infinite (a_inf for alpha <= 1, b_inf for
    beta <= 1) are flagged as math.inf without attempting quadrature. For
    the neutral genic submodel the quadrature is cross-checked against the
    closed-form Beta moments.
    """
    if p.alpha <= 0.0 or p.beta <= 0.0:
        raise ErgodicityError(
            f"stationary law requires alpha > 0 and beta > 0, got ({p.alpha}, {p.beta})"
        )
    one = lambda x: 1.0
    z = _stationary_integral(p, eta, one, 0.0, 0.0, rtol)
    a_inf = math.inf if p.alpha <= 1.0 else _stationary_integral(p, eta, one, -1.0, 1.0, rtol) / z
    b_inf = math.inf if p.beta <= 1.0 else _stationary_integral(p, eta, one, 1.0, -1.0, rtol) / z
    c_inf = _stationary_integral(p, eta, lambda x: eta.eta(x), 0.0, 1.0, rtol) / z
    d_inf = _stationary_integral(p, eta, lambda x: eta.eta(x), 1.0, 0.0, rtol) / z
    e_inf = _stationary_integral(p, eta, lambda x: eta.eta(x) ** 2, 1.0, 1.0, rtol) / z

    if p.s == 0.0 and eta.is_genic:
        ref = neutral_genic_sigma(p.alpha, p.beta)
        got = np.array([a_inf, b_inf, c_inf, d_inf, e_inf])
        want = np.array([ref[0, 0], ref[1, 1], ref[0, 2], -ref[1, 2], ref[2, 2]])
        finite = np.isfinite(want)
        if not np.allclose(got[finite], want[finite], rtol=1e-8, atol=1e-12):
            raise QuadratureError(
                "stationary moments disagree with the closed-form Beta moments",
                float(np.max(np.abs(got[finite] - want[finite]))),
            )

    moments = StationaryMoments(a_inf, b_inf, c_inf, d_inf, e_inf)
    return moments, sigma_matrix(moments)


def sigma_matrix(m: StationaryMoments) -> np.ndarray:
    """Assemble Sigma = [[a, -1, c], [-1, b, -d], [c, -d, e]]."""
    return np.array(
        [
            [m.a_inf, -1.0, m.c_inf],
            [-1.0, m.b_inf, -m.d_inf],
            [m.c_inf, -m.d_inf, m.e_inf],
        ]
    )


def neutral_genic_sigma(alpha: float, beta: float) -> np.ndarray:
    """Closed form of Sigma for s = 0 and genic eta.

    a = beta/(alpha-1), b = alpha/(beta-1), c = beta/(alpha+beta),
    d = alpha/(alpha+beta), e = alpha beta/[(alpha+beta)(alpha+beta+1)];
    a (resp. b) is infinite when alpha <= 1 (resp. beta <= 1).
    """
    if alpha <= 0.0 or beta <= 0.0:
        raise ErgodicityError("closed-form Sigma requires alpha, beta > 0")
    a = math.inf if alpha <= 1.0 else beta / (alpha - 1.0)
    b = math.inf if beta <= 1.0 else alpha / (beta - 1.0)
    c = beta / (alpha + beta)
    d = alpha / (alpha + beta)
    e = alpha * beta / ((alpha + beta) * (alpha + beta + 1.0))
    return sigma_matrix(StationaryMoments(a, b, c, d, e))
