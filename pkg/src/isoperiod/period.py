"""Minimal-period detection and independent 1D quadrature oracles.

Detection places a Poincare section through the starting point with the
flow direction as its normal, integrates with a fixed-step symplectic
scheme, refines each negative-to-positive section crossing by hybrid
bisection/secant on the sub-step flow, and accepts the first crossing whose
phase-space distance to the start is within the return tolerance.

For Lotka-Volterra runs the same machinery is applied to two projections
of the (Q, P) flow: the extracted populations and the drift-removed
coordinates.  The two detected periods cross-validate each other.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
import multiprocessing as mp

import numpy as np

from .integrate import StepperConfig, make_stepper
from .potentials import Polynomial1D
from .systems import (
    AnisotropicOscillator2D,
    HamiltonianSystem,
    HarmonicOscillator,
    Kepler,
    LotkaVolterraHamiltonian,
    PhasePoint,
    Potential1D,
    check_point,
    lv_embed,
    sample_energy_surface,
)

PERIODIC = "periodic"
NOT_PERIODIC = "not-periodic-within-horizon"
DEGENERATE = "degenerate-fixed-point"

SAME_PERIOD = "SAME-PERIOD"
MIXED = "MIXED"
SPREAD_EXCEEDED = "SPREAD-EXCEEDED"

_DEGENERATE_SPEED = 1e-12
_REFINE_TOL = 1e-12  # crossing time resolved to this fraction of one step


class NotConfiningError(ValueError):
    """The potential does not confine a single well at this energy."""


@dataclass(frozen=True)
class PeriodEstimate:
    verdict: str
    T: float | None = None
    residual: float | None = None
    returns_used: int = 0

    def __post_init__(self):
        if self.verdict not in (PERIODIC, NOT_PERIODIC, DEGENERATE):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if (self.verdict == PERIODIC) != (self.T is not None):
            raise ValueError("T must be present exactly when verdict is periodic")
        if self.T is not None and not (self.T > 0):
            raise ValueError("period must be positive")


class _IdentityView:
    """Section and distances measured directly in phase space."""

    def __init__(self, sys):
        self.sys = sys

    def project(self, z, t):
        return z

    def velocity(self, z, t):
        return self.sys.field_flat(z)


class _PopulationView:
    """x-dynamics of a Lotka-Volterra flow, extracted from (Q, P)."""

    def __init__(self, sys: LotkaVolterraHamiltonian):
        self.sys = sys

    def project(self, z, t):
        return self.sys.populations_flat(z)

    def velocity(self, z, t):
        x = self.sys.populations_flat(z)
        rhs = self.sys.population_rhs(np.asarray(x))
        return list(rhs)


class _DriftRemovedView:
    """(Q - q t, P + t (1/2) A q) coordinates of a Lotka-Volterra flow."""

    def __init__(self, sys: LotkaVolterraHamiltonian):
        self.sys = sys
        q, _ = sys.equilibrium_info
        self.q_eq = list(q)
        self.shift = list(0.5 * (sys.A @ q))

    def project(self, z, t):
        n = len(self.q_eq)
        return [
            *(z[i] - self.q_eq[i] * t for i in range(n)),
            *(z[n + i] + self.shift[i] * t for i in range(n)),
        ]

    def velocity(self, z, t):
        v = self.sys.field_flat(z)
        n = len(self.q_eq)
        return [
            *(v[i] - self.q_eq[i] for i in range(n)),
            *(v[n + i] + self.shift[i] for i in range(n)),
        ]


def _distance(a, b):
    return math.sqrt(sum((ai - bi) ** 2 for ai, bi in zip(a, b)))


def linearized_period(sys: HamiltonianSystem, pt: PhasePoint | None = None) -> float | None:
    """Small-oscillation (or orbit-family) period used to scale horizons."""
    if isinstance(sys, HarmonicOscillator):
        return 2.0 * math.pi * math.sqrt(sys.m / sys.k)
    if isinstance(sys, AnisotropicOscillator2D):
        return 2.0 * math.pi / min(sys.omega1, sys.omega2)
    if isinstance(sys, Kepler):
        if pt is None:
            return None
        energy = sys.ham_flat(pt.flat())
        if energy >= 0:
            return None
        a = sys.semi_major_axis(energy)
        return 2.0 * math.pi * math.sqrt(a ** 3 / (sys.G * sys.M))
    if isinstance(sys, Potential1D):
        qmin, _ = sys.min_potential()
        curv = sys.V.derivative().derivative()(qmin)
        if curv <= 0:
            return None
        return 2.0 * math.pi / math.sqrt(2.0 * sys.c * curv)
    if isinstance(sys, LotkaVolterraHamiltonian):
        q, _ = sys.equilibrium_info
        lam = np.linalg.eigvals(np.diag(q) @ sys.A)
        imag = np.abs(lam.imag)
        imag = imag[imag > 1e-12]
        if len(imag) == 0:
            return None
        return 2.0 * math.pi / float(np.min(imag))
    return None


def default_return_tol(x0) -> float:
    return 1e-6 * (math.sqrt(sum(v * v for v in x0)) + 1.0)


def default_horizon(sys, pt, fallback=1000.0) -> float:
    base = linearized_period(sys, pt)
    return 50.0 * base if base else fallback


def _advance(stepper, z, h, duration):
    """March `duration` of flow time: full h-steps plus one partial step."""
    k = int(math.floor(duration / h + 1e-12))
    for _ in range(k):
        z = stepper(z, h)
    rem = duration - k * h
    if rem > 1e-15 * max(1.0, duration):
        z = stepper(z, rem)
    return z


def _refine_crossing(stepper, view, z_prev, t_prev, h, s_prev, s_next, x0, normal):
    """Locate the in-step crossing time by bisection sharpened with secant."""

    def s_at(theta):
        if theta <= 0.0:
            return s_prev, z_prev
        zt = stepper(z_prev, theta * h)
        xt = view.project(zt, t_prev + theta * h)
        return sum((a - b) * nv for a, b, nv in zip(xt, x0, normal)), zt

    lo, s_lo = 0.0, s_prev
    hi, s_hi = 1.0, s_next
    z_hi = None
    for _ in range(90):
        if hi - lo <= _REFINE_TOL:
            break
        if s_hi != s_lo:
            theta = hi - s_hi * (hi - lo) / (s_hi - s_lo)
        else:
            theta = 0.5 * (lo + hi)
        margin = 0.1 * (hi - lo)
        if not (lo + 1e-3 * margin < theta < hi - 1e-3 * margin):
            theta = 0.5 * (lo + hi)
        s_t, z_t = s_at(theta)
        if s_t < 0.0:
            lo, s_lo = theta, s_t
        else:
            hi, s_hi, z_hi = theta, s_t, z_t
    if z_hi is None:
        _, z_hi = s_at(hi)
    return hi, z_hi


def detect_period(sys: HamiltonianSystem, pt0: PhasePoint, cfg: StepperConfig,
                  horizon: float | None = None, return_tol: float | None = None,
                  view=None) -> PeriodEstimate:
    """First-return minimal period of the orbit through pt0.

    Returns a PeriodEstimate whose verdict is ``periodic`` (with T and the
    phase-space residual at the detected return), ``not-periodic-within-horizon``
    or ``degenerate-fixed-point`` (velocity below 1e-12 at pt0).  A
    confirmation pass rejects half-period artifacts: the detected T must
    return within tolerance while T/2 must not.
    """
    check_point(sys, pt0)
    if horizon is None:
        horizon = default_horizon(sys, pt0)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    view = view or _IdentityView(sys)
    stepper = make_stepper(sys, cfg)
    z0 = pt0.flat()
    x0 = list(view.project(z0, 0.0))
    v0 = view.velocity(z0, 0.0)
    speed = math.sqrt(sum(v * v for v in v0))
    if speed < _DEGENERATE_SPEED:
        return PeriodEstimate(DEGENERATE)
    if return_tol is None:
        return_tol = default_return_tol(x0)
    normal = v0

    h = cfg.h
    n_steps = int(math.ceil(horizon / h))
    z = z0
    s_prev = 0.0
    returns_used = 0
    for i in range(1, n_steps + 1):
        z_next = stepper(z, h)
        t_next = i * h
        xt = view.project(z_next, t_next)
        s_next = sum((a - b) * nv for a, b, nv in zip(xt, x0, normal))
        if s_prev < 0.0 <= s_next:
            theta, zc = _refine_crossing(
                stepper, view, z, (i - 1) * h, h, s_prev, s_next, x0, normal
            )
            tc = (i - 1) * h + theta * h
            returns_used += 1
            dist = _distance(view.project(zc, tc), x0)
            if dist <= return_tol:
                T, residual = tc, dist
                # guard against reporting a multiple of the true period
                for _ in range(3):
                    z_half = _advance(stepper, z0, h, 0.5 * T)
                    d_half = _distance(view.project(z_half, 0.5 * T), x0)
                    if d_half > return_tol:
                        break
                    T, residual = 0.5 * T, d_half
                return PeriodEstimate(PERIODIC, T=T, residual=residual,
                                      returns_used=returns_used)
        z, s_prev = z_next, s_next
    return PeriodEstimate(NOT_PERIODIC, returns_used=returns_used)


def detect_period_lv(sys: LotkaVolterraHamiltonian, x0, cfg: StepperConfig,
                     horizon: float | None = None, return_tol: float | None = None,
                     ) -> tuple[PeriodEstimate, PeriodEstimate]:
    """Detect the period of an LV orbit in x-space and after drift removal.

    The population orbit is periodic exactly when the drift-removed (Q, P)
    orbit is; both estimates are returned for cross-validation.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    state = lv_embed(x0, sys)
    pt0 = state.phase_point()
    if horizon is None:
        horizon = default_horizon(sys, pt0)
    est_x = detect_period(sys, pt0, cfg, horizon, return_tol,
                          view=_PopulationView(sys))
    est_drift = detect_period(sys, pt0, cfg, horizon, return_tol,
                              view=_DriftRemovedView(sys))
    return est_x, est_drift


def lv_time_average(sys: LotkaVolterraHamiltonian, x0, cfg: StepperConfig,
                    duration: float) -> np.ndarray:
    """Time-average of the populations over [0, duration].

    Uses the flow's own accumulated coordinates: the average is Q(T)/T,
    which is the discrete counterpart of (1/T) integral of x dt.
    """
    state = lv_embed(x0, sys)
    stepper = make_stepper(sys, cfg)
    z = _advance(stepper, state.phase_point().flat(), cfg.h, duration)
    n = sys.ndof
    return np.asarray(z[:n]) / duration


# --------------------------------------------------------------------------
# 1D quadrature oracles
# --------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _gauss_legendre(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * math.pi * x, 0.5 * math.pi * w  # theta in (-pi/2, pi/2)


def turning_points_1d(V: Polynomial1D, energy: float,
                      interval: tuple[float, float] | None = None) -> tuple[float, float]:
    """The two turning points of the single well of V at this energy."""
    roots = V.real_roots(energy)
    if interval is not None:
        roots = roots[(roots >= interval[0]) & (roots <= interval[1])]
    wells = []
    for a, b in zip(roots[:-1], roots[1:]):
        if b - a > 1e-12 and V(0.5 * (a + b)) < energy:
            wells.append((float(a), float(b)))
    if not wells:
        raise NotConfiningError(f"no classically allowed well at E={energy}")
    if len(wells) > 1:
        raise NotConfiningError(
            f"{len(wells)} wells at E={energy}; restrict the interval to one"
        )
    return wells[0]


def _well_profile(V, c, energy, interval, nodes):
    """Integrand profile G(theta) with E - V = (w cos(theta))^2 G(theta)."""
    q_lo, q_hi = turning_points_1d(V, energy, interval)
    mid, half = 0.5 * (q_lo + q_hi), 0.5 * (q_hi - q_lo)
    theta, weights = _gauss_legendre(nodes)
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)
    vals = energy - V(mid + half * sin_t)
    profile = vals / (half * cos_t) ** 2
    floor = 1e-12 * float(np.median(profile[profile > 0])) if np.any(profile > 0) else 1e-300
    return np.maximum(profile, floor), cos_t, weights, half


def period_oracle_1d(V: Polynomial1D, c: float, energy: float,
                     interval: tuple[float, float] | None = None,
                     nodes: int = 2000) -> float:
    """Closed-orbit period of H = c p^2 + V(q) at the given energy.

    T = 2 * integral dq / (2 c p(q)) over the well, with the turning-point
    square-root singularity removed by the substitution q = mid + half*sin(theta);
    Gauss-Legendre quadrature in theta then converges spectrally.
    """
    if c <= 0:
        raise ValueError("kinetic coefficient must be positive")
    profile, _, weights, _ = _well_profile(V, c, energy, interval, nodes)
    return float(np.sum(weights / np.sqrt(profile)) / math.sqrt(c))


def action_1d(V: Polynomial1D, c: float, energy: float,
              interval: tuple[float, float] | None = None,
              nodes: int = 2000) -> float:
    """Loop action S(E) = contour integral of p dq; dS/dE equals the period."""
    if c <= 0:
        raise ValueError("kinetic coefficient must be positive")
    profile, cos_t, weights, half = _well_profile(V, c, energy, interval, nodes)
    return float(2.0 * half ** 2 / math.sqrt(c)
                 * np.sum(weights * cos_t ** 2 * np.sqrt(profile)))


# --------------------------------------------------------------------------
# iso-energy surveys
# --------------------------------------------------------------------------

@dataclass
class SurveyReport:
    """Aggregate of per-sample period detections on one energy surface."""

    energy: float
    samples: int
    rows: list[dict]
    periods: list[float]
    spread_rel: float
    verdict_counts: dict
    excluded_degenerate: int
    verdict: str
    tol_rel: float

    @property
    def period_mean(self) -> float | None:
        return float(np.mean(self.periods)) if self.periods else None

    def to_json_dict(self) -> dict:
        return {
            "energy": self.energy,
            "samples": self.samples,
            "rows": self.rows,
            "periods": self.periods,
            "period_mean": self.period_mean,
            "spread_rel": self.spread_rel,
            "verdict_counts": self.verdict_counts,
            "excluded_degenerate": self.excluded_degenerate,
            "tol_rel": self.tol_rel,
            "verdict": self.verdict,
        }

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("sample,verdict,T,residual\n")
            for row in self.rows:
                t = "" if row["T"] is None else f"{row['T']:.17g}"
                r = "" if row["residual"] is None else f"{row['residual']:.17g}"
                fh.write(f"{row['sample']},{row['verdict']},{t},{r}\n")


def _detect_task(payload):
    sys, cfg, flat, ndof, horizon, return_tol = payload
    pt = PhasePoint.from_flat(flat, ndof)
    est = detect_period(sys, pt, cfg, horizon, return_tol)
    return est


def _run_detections(sys, cfg, points, horizon, return_tol, workers):
    payloads = [
        (sys, cfg, pt.flat(), sys.ndof, horizon, return_tol) for pt in points
    ]
    if workers <= 1 or len(points) <= 1:
        return [_detect_task(p) for p in payloads]
    ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods() else "spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(_detect_task, payloads))


def survey_points(sys: HamiltonianSystem, energy: float, points, cfg: StepperConfig,
                  tol_rel: float, horizon: float | None = None,
                  return_tol: float | None = None, workers: int = 1) -> SurveyReport:
    """Detect periods for explicit starting points and aggregate verdicts."""
    live: list[tuple[int, PhasePoint]] = []
    excluded = 0
    for i, pt in enumerate(points):
        speed = math.sqrt(sum(v * v for v in sys.field_flat(pt.flat())))
        if speed < _DEGENERATE_SPEED:
            excluded += 1
        else:
            live.append((i, pt))
    if not live:
        raise ValueError("all samples are degenerate fixed points")
    if horizon is None:
        horizon = default_horizon(sys, live[0][1])
    estimates = _run_detections(sys, cfg, [pt for _, pt in live], horizon,
                                return_tol, workers)

    rows = []
    periods = []
    counts = {PERIODIC: 0, NOT_PERIODIC: 0, DEGENERATE: excluded}
    for (i, _), est in zip(live, estimates):
        counts[est.verdict] = counts.get(est.verdict, 0) + 1
        rows.append({"sample": i, "verdict": est.verdict, "T": est.T,
                     "residual": est.residual})
        if est.verdict == PERIODIC:
            periods.append(est.T)
        if est.verdict == DEGENERATE:
            excluded += 1
    rows.sort(key=lambda r: r["sample"])

    if periods:
        spread = (max(periods) - min(periods)) / float(np.mean(periods)) if len(periods) > 1 else 0.0
    else:
        spread = 0.0
    if counts[NOT_PERIODIC] > 0:
        verdict = MIXED
    elif periods and spread <= tol_rel:
        verdict = SAME_PERIOD
    else:
        verdict = SPREAD_EXCEEDED if periods else MIXED
    return SurveyReport(
        energy=energy,
        samples=len(points),
        rows=rows,
        periods=periods,
        spread_rel=spread,
        verdict_counts=counts,
        excluded_degenerate=excluded,
        verdict=verdict,
        tol_rel=tol_rel,
    )


def survey_periods(sys: HamiltonianSystem, energy: float, count: int, seed: int,
                   cfg: StepperConfig, tol_rel: float = 1e-6,
                   horizon: float | None = None, return_tol: float | None = None,
                   workers: int = 1, box=None) -> SurveyReport:
    """Sample the energy surface and test the equal-period prediction.

    Verdict SAME-PERIOD when every non-degenerate sample is periodic with
    relative period spread at most tol_rel; MIXED when any sample fails to
    return within the horizon.  Deterministic for a fixed seed, independent
    of the worker count.
    """
    points = sample_energy_surface(sys, energy, count, seed, box=box)
    return survey_points(sys, energy, points, cfg, tol_rel, horizon,
                         return_tol, workers)
