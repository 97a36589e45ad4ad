"""Separating points and separating times for pairs of Wright-Fisher laws.

Two path measures with parameters p0 and p1 stay equivalent up to a
(possibly infinite, possibly never-reached) separating time and are mutually
singular afterwards. The verdict here is symbolic: the extended time axis
carries an extra point "delta" beyond infinity, with infinity < delta, so
"separate at infinity" and "never separate" are distinct outcomes.

The separating time is computed from first principles as the minimum of
three ingredients:

* U -- separation on reaching the endpoint 0 (active only if 0 is a
  separating point, and only on paths that actually approach 0),
* V -- the same at the endpoint 1,
* R -- separation at infinity through the observable stationary law, which
  bites exactly when both endpoints are reflecting and non-separating.

These are reduced to symbols using the almost-sure hitting behaviour implied
by the boundary classification (which hitting times are a.s. finite, a.s.
infinite, or genuinely random). The published case table is used as a test
oracle only, never consulted here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import EtaSpec, MutSelParams, drift_gap_over_sigma


class VerdictKind(Enum):
    DELTA = "delta"  # never separate (equivalent on the whole horizon)
    INFINITY = "infinity"  # separate at infinity only
    HIT_ZERO = "hit_zero"
    HIT_ONE = "hit_one"
    HIT_EITHER = "hit_either"


@dataclass(frozen=True)
class SeparationVerdict:
    """Symbolic separating time under the law of p1.

    ``bar_convention`` matters only for HIT_ZERO / HIT_ONE: True encodes the
    barred hitting time (inf of the empty set is delta, i.e. "separate on
    hitting, else never"), False the plain one (inf of the empty set is
    infinity).
    """

    kind: VerdictKind
    bar_convention: bool = False

    def __post_init__(self):
        if self.bar_convention and self.kind not in (VerdictKind.HIT_ZERO, VerdictKind.HIT_ONE):
            raise ValueError("bar_convention applies only to single-endpoint hitting verdicts")

    def swapped(self) -> "SeparationVerdict":
        """Exchange the roles of the endpoints (x -> 1-x symmetry)."""
        if self.kind is VerdictKind.HIT_ZERO:
            return SeparationVerdict(VerdictKind.HIT_ONE, self.bar_convention)
        if self.kind is VerdictKind.HIT_ONE:
            return SeparationVerdict(VerdictKind.HIT_ZERO, self.bar_convention)
        return self


@dataclass(frozen=True)
class SeparatingPoints:
    """Which endpoints are separating points for the pair (p0, p1)."""

    at_zero: bool
    at_one: bool

    @property
    def points(self) -> frozenset:
        out = set()
        if self.at_zero:
            out.add(0)
        if self.at_one:
            out.add(1)
        return frozenset(out)


def separating_points(p0: MutSelParams, p1: MutSelParams) -> SeparatingPoints:
    """Endpoint separating-point rule.

    The endpoint 0 is non-separating iff alpha0 = alpha1 < 1; equal rates
    >= 1 still count as separating (separation by time T0 = infinity is then
    carried by other mechanisms). Interior points are never separating.
    Symmetric in (p0, p1).
    """
    return SeparatingPoints(
        at_zero=not (p0.alpha == p1.alpha and p1.alpha < 1.0),
        at_one=not (p0.beta == p1.beta and p1.beta < 1.0),
    )


class _Sym(Enum):
    """Almost-sure symbolic value of one ingredient under the p1-law."""

    DELTA = "delta"
    INF = "inf"  # deterministically infinite
    T0_FIN = "T0<inf"  # hit of 0, a.s. finite
    T1_FIN = "T1<inf"
    T0_BAR = "T0bar"  # hit of 0 when it happens, delta otherwise
    T1_BAR = "T1bar"


@dataclass(frozen=True)
class UVRDiagnostic:
    """The three ingredients before taking the minimum, in the canonical
    frame (alpha1 <= beta1); ``swapped`` records whether the inputs were
    mirrored to reach that frame."""

    u: _Sym
    v: _Sym
    r: _Sym
    swapped: bool


def _u_symbol(sep0: bool, p1: MutSelParams) -> _Sym:
    if not sep0:
        return _Sym.DELTA
    a1, b1 = p1.alpha, p1.beta
    if a1 >= 1.0:
        # 0 inaccessible: T0 = inf a.s.; the approach condition
        # liminf X = 0 holds iff the path is not absorbed at 1 first.
        return _Sym.INF if b1 > 0.0 else _Sym.DELTA
    if b1 > 0.0:
        return _Sym.T0_FIN  # 0 accessible and 1 non-absorbing: T0 < inf a.s.
    return _Sym.T0_BAR  # 1 absorbing: paths absorbed there never approach 0


def _v_symbol(sep1: bool, p1: MutSelParams) -> _Sym:
    if not sep1:
        return _Sym.DELTA
    a1, b1 = p1.alpha, p1.beta
    if b1 >= 1.0:
        return _Sym.INF if a1 > 0.0 else _Sym.DELTA
    if a1 > 0.0:
        return _Sym.T1_FIN
    return _Sym.T1_BAR


def _r_symbol(p0: MutSelParams, p1: MutSelParams) -> _Sym:
    both_reflecting_matched = (
        p0.alpha == p1.alpha
        and 0.0 < p1.alpha < 1.0
        and p0.beta == p1.beta
        and 0.0 < p1.beta < 1.0
    )
    return _Sym.INF if both_reflecting_matched else _Sym.DELTA


def _combine(u: _Sym, v: _Sym, r: _Sym) -> SeparationVerdict:
    u_hits = u in (_Sym.T0_FIN, _Sym.T0_BAR)
    v_hits = v in (_Sym.T1_FIN, _Sym.T1_BAR)
    if r is _Sym.INF:
        # R finite-at-infinity only when both endpoints are non-separating,
        # so no hitting ingredient can be active.
        assert not u_hits and not v_hits
        return SeparationVerdict(VerdictKind.INFINITY)
    if u_hits and v_hits:
        # Both endpoints accessible; the first hit of either separates and
        # one of the two occurs in finite time a.s.
        return SeparationVerdict(VerdictKind.HIT_EITHER)
    if u_hits:
        if u is _Sym.T0_FIN:
            return SeparationVerdict(VerdictKind.HIT_ZERO, bar_convention=False)
        assert v is _Sym.DELTA  # T0_BAR coexists only with an absorbing far end
        return SeparationVerdict(VerdictKind.HIT_ZERO, bar_convention=True)
    if v_hits:
        if v is _Sym.T1_FIN:
            return SeparationVerdict(VerdictKind.HIT_ONE, bar_convention=False)
        assert u is _Sym.DELTA
        return SeparationVerdict(VerdictKind.HIT_ONE, bar_convention=True)
    if _Sym.INF in (u, v):
        return SeparationVerdict(VerdictKind.INFINITY)
    return SeparationVerdict(VerdictKind.DELTA)


def separating_time(p0: MutSelParams, p1: MutSelParams) -> SeparationVerdict:
    """Symbolic separating time for (p0, p1) under the law of p1.

    Valid for interior starting points shared by both state spaces; starts
    at an endpoint are a different regime (the germ laws are already
    mutually singular whenever the local rates differ) and are handled by
    the empirical checks in :mod:`wfdiff.verify`.
    """
    verdict, _ = separating_time_detail(p0, p1)
    return verdict


def separating_time_detail(
    p0: MutSelParams, p1: MutSelParams
) -> tuple[SeparationVerdict, UVRDiagnostic]:
    """As :func:`separating_time`, also exposing the U/V/R ingredients.

    Inputs are first canonicalized to alpha1 <= beta1 through the mirror
    involution applied to both triples; the verdict is swapped back, so the
    diagnostic always refers to the canonical frame.
    """
    if p0 == p1:
        diag = UVRDiagnostic(_Sym.DELTA, _Sym.DELTA, _Sym.DELTA, swapped=False)
        return SeparationVerdict(VerdictKind.DELTA), diag
    swapped = p1.alpha > p1.beta
    q0, q1 = (p0.mirror(), p1.mirror()) if swapped else (p0, p1)
    pts = separating_points(q0, q1)
    u = _u_symbol(pts.at_zero, q1)
    v = _v_symbol(pts.at_one, q1)
    r = _r_symbol(q0, q1)
    verdict = _combine(u, v, r)
    if swapped:
        verdict = verdict.swapped()
    return verdict, UVRDiagnostic(u, v, r, swapped)


# ---------------------------------------------------------------------------
# Numerical integrability checks
# ---------------------------------------------------------------------------


class InteriorVerdict(Enum):
    NON_SEPARATING = "non_separating"
    SEPARATING = "separating"


def interior_point_check(
    p0: MutSelParams,
    p1: MutSelParams,
    eta: EtaSpec,
    z: float,
    *,
    levels: int = 8,
) -> InteriorVerdict:
    """Local-integrability test of (mu1-mu0)^2 / sigma^4 at an interior z.

    Integrates the squared scaled drift gap over a shrinking sequence of
    neighbourhoods of z. The integrand is continuous on any closed interior
    neighbourhood, so the verdict is NON_SEPARATING for every z in (0,1);
    the divergent branch exists for defensive completeness only.
    """
    if not 0.0 < z < 1.0:
        raise ValueError("interior check requires z strictly inside (0,1)")
    eps0 = min(z, 1.0 - z) / 2.0
    vals = []
    for k in range(levels):
        eps = eps0 * 2.0 ** (-k)
        xs = np.linspace(z - eps, z + eps, 513)
        integrand = drift_gap_over_sigma(p1, p0, eta, xs) ** 2 / (xs * (1.0 - xs))
        vals.append(float(np.trapezoid(integrand, xs)))
    # Shrinking windows of a locally integrable function have vanishing mass.
    if vals[-1] > vals[0] + 1.0:
        return InteriorVerdict.SEPARATING
    return InteriorVerdict.NON_SEPARATING


class HalfGoodVerdict(Enum):
    CONVERGES = "converges"
    DIVERGES = "diverges"


class InconclusiveShells(RuntimeError):
    """Shell-sum pattern fits neither the divergent nor the convergent regime."""


@dataclass(frozen=True)
class HalfGoodResult:
    verdict: HalfGoodVerdict
    shell_sums: tuple[float, ...]
    ratios: tuple[float, ...]
    vacuous: bool = False


def _half_good_zero(p0: MutSelParams, p1: MutSelParams, eta: EtaSpec, n_shells: int, eps: float) -> HalfGoodResult:
    """Shell-integrate |S1(y)-S1(0)| rho(y)^2 S1'(y) on dyadic shells at 0.

    S1 is the scale function of p1 and rho the density appearing in the
    endpoint regularity condition,
        rho(y) = y^{a1} (1-y)^{b1} e^{s1 H} [ (b0-b1)/(1-y) - (a0-a1)/y - (s0-s1) ].
    The product diverges at 0 like (a0-a1)^2 / [(1-a1) y]: log-divergent
    shells have roughly constant sums, convergent shells halve per level.
    """
    a1, b1, s1 = p1.alpha, p1.beta, p1.s
    q = 1.0 - a1

    # Fine log-spaced grid across all shells; cumulative scale increment
    # S1(y) - S1(0) by trapezoid in the substituted variable u = y^q, where
    # the integrand y^{-a1} ... dy becomes (1-y)^{-b1} e^{-s1 H} du / q.
    pts_per_shell = 160
    y = np.geomspace(eps * 2.0 ** (-n_shells), eps, n_shells * pts_per_shell + 1)
    u = y**q
    g_u = (1.0 - y) ** (-b1) * np.exp(-s1 * eta.big_h(y)) / q
    inc = np.empty_like(y)
    inc[0] = g_u[0] * u[0]  # integral from 0 to the first node; g_u(0+) finite
    inc[1:] = np.cumsum(0.5 * (g_u[1:] + g_u[:-1]) * np.diff(u))
    s_diff = inc  # S1(y) - S1(0) > 0

    bracket = (p0.beta - b1) / (1.0 - y) - (p0.alpha - a1) / y - (p0.s - s1)
    rho_sq = y ** (2 * a1) * (1.0 - y) ** (2 * b1) * np.exp(2 * s1 * eta.big_h(y)) * bracket**2
    s1_prime = y ** (-a1) * (1.0 - y) ** (-b1) * np.exp(-s1 * eta.big_h(y))
    integrand = s_diff * rho_sq * s1_prime

    sums = []
    for k in range(n_shells):
        lo, hi = eps * 2.0 ** (-(k + 1)), eps * 2.0 ** (-k)
        mask = (y >= lo) & (y <= hi)
        sums.append(float(np.trapezoid(integrand[mask], y[mask])))
    sums = sums[::-1]  # order from the outermost shell inward
    if max(sums) <= 1e-300:
        # identically-zero drift gap at this endpoint: trivially integrable
        return HalfGoodResult(HalfGoodVerdict.CONVERGES, tuple(sums), ())
    ratios = tuple(sums[i + 1] / sums[i] for i in range(len(sums) - 1))
    tail = ratios[-6:]
    geo = float(np.exp(np.mean(np.log(tail))))
    if geo > 0.85:
        verdict = HalfGoodVerdict.DIVERGES
    elif geo < 0.65:
        verdict = HalfGoodVerdict.CONVERGES
    else:
        raise InconclusiveShells(
            f"shell ratio {geo:.3f} sits between the convergent (~0.5) and divergent (~1.0) regimes"
        )
    return HalfGoodResult(verdict, tuple(sums), ratios)


def half_good_check(
    p0: MutSelParams,
    p1: MutSelParams,
    endpoint: int,
    eta: EtaSpec | None = None,
    *,
    n_shells: int = 12,
    eps: float = 1e-2,
) -> HalfGoodResult:
    """Numeric endpoint-regularity check behind the separating-point rule.

    Converges iff the endpoint rates agree (given the p1-rate is < 1); if
    the p1-rate is >= 1 the scale limit at the endpoint is infinite and the
    check is vacuously divergent.
    """
    if endpoint not in (0, 1):
        raise ValueError("endpoint must be 0 or 1")
    if eta is None:
        eta = EtaSpec.genic()
    if endpoint == 1:
        p0, p1, eta = p0.mirror(), p1.mirror(), eta.mirror()
    if p1.alpha >= 1.0:
        return HalfGoodResult(HalfGoodVerdict.DIVERGES, (), (), vacuous=True)
    return _half_good_zero(p0, p1, eta, n_shells, eps)
