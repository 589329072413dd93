"""Catalog of Hamiltonian systems with exact symbols, gradients and guards.

Every system exposes two faces: a numpy-facing API (``hamiltonian``,
``gradient``, ``hamiltonian_batch``) used by analysis code, and a flat
float API (``ham_flat``, ``field_flat``, ``force_flat``) consumed by the
fixed-step integrators, where per-call numpy overhead would dominate.

Sign conventions: canonical systems use ``qdot = dH/dp, pdot = -dH/dq``.
The Lotka-Volterra system is Hamiltonian with both signs flipped
(``Qdot = -dH/dP, Pdot = +dH/dQ``); the integrators only ever consume
``vector_field`` / ``field_flat``, so the convention lives here and
nowhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .potentials import Polynomial1D, parse_potential

CANONICAL = "canonical"
PAPER_LV = "paper-lv"


class DomainError(ValueError):
    """Phase point outside the admissible domain of a system."""


class RangeError(ValueError):
    """Intermediate quantity would overflow (e.g. exp of a huge exponent)."""


class NoUniqueEquilibriumError(ValueError):
    """The interaction matrix is singular; no unique equilibrium exists."""


class DegenerateSurfaceError(ValueError):
    """The requested energy is a critical value; the surface degenerates."""


class SurfaceUnreachableError(RuntimeError):
    """Sampling failed to place points on the requested energy surface."""


class UnsupportedSystemError(TypeError):
    """Operation not defined for this system kind."""


@dataclass(frozen=True)
class PhasePoint:
    """Position/momentum pair (q, p) in a 2n-dimensional phase space."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.ndim != 1 or p.ndim != 1 or len(q) != len(p) or len(q) < 1:
            raise ValueError("q and p must be 1-d arrays of equal length >= 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase point components must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def ndof(self) -> int:
        return len(self.q)

    def flat(self) -> list[float]:
        return [*self.q.tolist(), *self.p.tolist()]

    @classmethod
    def from_flat(cls, z, ndof: int) -> "PhasePoint":
        return cls(np.asarray(z[:ndof], dtype=float), np.asarray(z[ndof:], dtype=float))

    def norm(self) -> float:
        return math.hypot(float(np.linalg.norm(self.q)), float(np.linalg.norm(self.p)))


@dataclass(frozen=True)
class VolterraState:
    """Accumulated-population coordinates (Q, P) of a Lotka-Volterra orbit.

    Q_j is the integral of the j-th population up to time t (zero at t=0 by
    definition), P_j = log Qdot_j - (1/2) sum_k a_jk Q_k.
    """

    Q: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        Q = np.atleast_1d(np.asarray(self.Q, dtype=float))
        P = np.atleast_1d(np.asarray(self.P, dtype=float))
        if Q.shape != P.shape or Q.ndim != 1:
            raise ValueError("Q and P must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(P))):
            raise ValueError("Volterra state components must be finite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P", P)

    def phase_point(self) -> PhasePoint:
        return PhasePoint(self.Q, self.P)


class HamiltonianSystem:
    """Common behaviour shared by the catalog systems."""

    kind: str = ""
    convention: str = CANONICAL
    separable: bool = False

    # --- subclass obligations -------------------------------------------
    @property
    def ndof(self) -> int:
        raise NotImplementedError

    def ham_flat(self, z) -> float:
        raise NotImplementedError

    def field_flat(self, z) -> list[float]:
        raise NotImplementedError

    def grad_flat(self, z) -> tuple[list[float], list[float]]:
        raise NotImplementedError

    def in_domain_flat(self, z) -> bool:
        return True

    def domain_violation(self, z) -> str | None:
        """Human-readable reason a point is inadmissible, or None."""
        return None if self.in_domain_flat(z) else "outside domain"

    # --- numpy-facing API -----------------------------------------------
    def hamiltonian(self, q, p) -> float:
        return self.ham_flat([*np.asarray(q, dtype=float).ravel(),
                              *np.asarray(p, dtype=float).ravel()])

    def gradient(self, q, p) -> tuple[np.ndarray, np.ndarray]:
        dq, dp = self.grad_flat([*np.asarray(q, dtype=float).ravel(),
                                 *np.asarray(p, dtype=float).ravel()])
        return np.asarray(dq), np.asarray(dp)

    def hamiltonian_batch(self, qs: np.ndarray, ps: np.ndarray) -> np.ndarray:
        """Vectorized H over (N, ndof) arrays of states."""
        raise NotImplementedError

    def potential_flat(self, q) -> float:
        """Potential part V(q) for kinetic+potential systems."""
        raise UnsupportedSystemError(f"{self.kind} has no kinetic/potential split")

    def params_dict(self) -> dict:
        raise NotImplementedError

    def default_sample_box(self, energy: float) -> list[tuple[float, float]]:
        raise UnsupportedSystemError(
            f"{self.kind} has no default sampling box; pass one explicitly"
        )


@dataclass(frozen=True)
class HarmonicOscillator(HamiltonianSystem):
    """H = |p|^2 / (2m) + (k/2) |q|^2 in any number of degrees of freedom."""

    m: float = 1.0
    k: float = 1.0
    dof: int = 1

    kind = "harmonic-oscillator"
    separable = True

    def __post_init__(self):
        if self.m <= 0 or self.k <= 0:
            raise ValueError("harmonic oscillator requires m > 0 and k > 0")
        if self.dof < 1:
            raise ValueError("dof must be >= 1")

    @property
    def ndof(self) -> int:
        return self.dof

    @property
    def inv_mass(self) -> float:
        return 1.0 / self.m

    def ham_flat(self, z):
        n = self.dof
        s_p = 0.0
        s_q = 0.0
        for i in range(n):
            s_q += z[i] * z[i]
            s_p += z[n + i] * z[n + i]
        return s_p / (2.0 * self.m) + 0.5 * self.k * s_q

    def force_flat(self, q):
        k = self.k
        return [k * qi for qi in q]

    def grad_flat(self, z):
        n = self.dof
        return [self.k * z[i] for i in range(n)], [z[n + i] / self.m for i in range(n)]

    def field_flat(self, z):
        n = self.dof
        invm = 1.0 / self.m
        k = self.k
        return [*(z[n + i] * invm for i in range(n)), *(-k * z[i] for i in range(n))]

    def hamiltonian_batch(self, qs, ps):
        return np.sum(ps * ps, axis=-1) / (2.0 * self.m) + 0.5 * self.k * np.sum(qs * qs, axis=-1)

    def potential_flat(self, q):
        return 0.5 * self.k * sum(qi * qi for qi in q)

    def params_dict(self):
        return {"m": self.m, "k": self.k, "dof": self.dof}

    def default_sample_box(self, energy):
        if energy <= 0:
            raise DegenerateSurfaceError(
                f"E={energy} is not above the oscillator minimum; surface degenerates"
            )
        r = math.sqrt(2.0 * energy / self.k)
        return [(-r, r)] * self.dof


@dataclass(frozen=True)
class Kepler(HamiltonianSystem):
    """Attractive inverse-square problem H = |p|^2/(2m) - G M m / |q|.

    The collision_radius is an integration guard, not part of the symbol:
    trajectories entering |q| < collision_radius are truncated upstream.
    """

    G: float = 1.0
    M: float = 1.0
    m: float = 1.0
    dof: int = 2
    collision_radius: float = 1e-3

    kind = "kepler"
    separable = True

    def __post_init__(self):
        if self.G <= 0 or self.M <= 0 or self.m <= 0:
            raise ValueError("kepler requires G, M, m > 0")
        if self.dof not in (2, 3):
            raise ValueError("kepler supports 2 or 3 spatial dimensions")

    @property
    def ndof(self) -> int:
        return self.dof

    @property
    def mu(self) -> float:
        """Gravitational parameter G*M of the one-body flow."""
        return self.G * self.M

    @property
    def inv_mass(self) -> float:
        return 1.0 / self.m

    def _r(self, z):
        s = 0.0
        for i in range(self.dof):
            s += z[i] * z[i]
        return math.sqrt(s)

    def ham_flat(self, z):
        n = self.dof
        r = self._r(z)
        if r == 0.0:
            raise DomainError("kepler: |q| = 0 (collision point) is excluded")
        s_p = 0.0
        for i in range(n):
            s_p += z[n + i] * z[n + i]
        return s_p / (2.0 * self.m) - self.G * self.M * self.m / r

    def force_flat(self, q):
        r2 = sum(qi * qi for qi in q)
        r = math.sqrt(r2)
        if r == 0.0:
            raise DomainError("kepler: |q| = 0 (collision point) is excluded")
        coef = self.G * self.M * self.m / (r2 * r)
        return [coef * qi for qi in q]

    def grad_flat(self, z):
        n = self.dof
        return self.force_flat(z[:n]), [z[n + i] / self.m for i in range(n)]

    def field_flat(self, z):
        n = self.dof
        invm = 1.0 / self.m
        f = self.force_flat(z[:n])
        return [*(z[n + i] * invm for i in range(n)), *(-fi for fi in f)]

    def in_domain_flat(self, z):
        return self._r(z) >= self.collision_radius

    def domain_violation(self, z):
        r = self._r(z)
        if r < self.collision_radius:
            return f"kepler: |q| = {r:.3e} below collision radius {self.collision_radius:.3e}"
        return None

    def hamiltonian_batch(self, qs, ps):
        r = np.sqrt(np.sum(qs * qs, axis=-1))
        return np.sum(ps * ps, axis=-1) / (2.0 * self.m) - self.G * self.M * self.m / r

    def potential_flat(self, q):
        r = math.sqrt(sum(qi * qi for qi in q))
        if r == 0.0:
            raise DomainError("kepler: |q| = 0 (collision point) is excluded")
        return -self.G * self.M * self.m / r

    def semi_major_axis(self, energy: float) -> float:
        """a = -G M m / (2E) for bound (E < 0) orbits."""
        if energy >= 0:
            raise ValueError("bound Kepler orbits require E < 0")
        return -self.G * self.M * self.m / (2.0 * energy)

    def params_dict(self):
        return {"G": self.G, "M": self.M, "m": self.m, "dof": self.dof,
                "collision_radius": self.collision_radius}

    def default_sample_box(self, energy):
        a = self.semi_major_axis(energy)
        return [(-2.0 * a, 2.0 * a)] * self.dof


@dataclass(frozen=True)
class LotkaVolterraHamiltonian(HamiltonianSystem):
    """Competition of n species in accumulated-population coordinates.

    The population dynamics xdot_j = eps_j x_j + sum_k a_jk x_j x_k (with
    unit beta_j and skew-symmetric A) becomes Hamiltonian in (Q, P) with

        H(Q, P) = sum_j eps_j Q_j - sum_j exp(P_j + (1/2) sum_k a_jk Q_k)

    and the flipped-sign equations Pdot = +dH/dQ, Qdot = -dH/dP.  The
    populations are recovered as x_j = exp(P_j + (1/2)(A Q)_j) = Qdot_j > 0.
    """

    eps: np.ndarray
    A: np.ndarray
    skew_tol: float = 1e-12

    kind = "lotka-volterra"
    convention = PAPER_LV
    separable = False

    def __post_init__(self):
        eps = np.atleast_1d(np.asarray(self.eps, dtype=float))
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != len(eps):
            raise ValueError("A must be square and match the length of eps")
        if np.max(np.abs(A + A.T)) > self.skew_tol:
            raise ValueError(
                f"interaction matrix must be skew-symmetric to {self.skew_tol:g}"
            )
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "A", A)

    @property
    def ndof(self) -> int:
        return len(self.eps)

    @cached_property
    def _eps_t(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.eps)

    @cached_property
    def _half_rows(self) -> tuple[tuple[float, ...], ...]:
        return tuple(tuple(0.5 * v for v in row) for row in self.A)

    @cached_property
    def _half_cols(self) -> tuple[tuple[float, ...], ...]:
        return tuple(tuple(0.5 * v for v in col) for col in self.A.T)

    @cached_property
    def equilibrium_info(self) -> tuple[np.ndarray, bool]:
        return lv_equilibrium(self.eps, self.A)

    @property
    def equilibrium(self) -> np.ndarray:
        return self.equilibrium_info[0]

    def _exponents(self, z):
        n = len(self._eps_t)
        out = []
        for j, row in enumerate(self._half_rows):
            acc = z[n + j]
            for k in range(n):
                acc += row[k] * z[k]
            out.append(acc)
        return out

    def populations_flat(self, z) -> list[float]:
        """x_j = exp(P_j + (1/2)(A Q)_j); raises RangeError on overflow."""
        xs = []
        for e in self._exponents(z):
            if e > 700.0 or e < -700.0:
                raise RangeError(f"population exponent {e:.3g} out of range (|.| > 700)")
            xs.append(math.exp(e))
        return xs

    def ham_flat(self, z):
        acc = 0.0
        for j, ej in enumerate(self._eps_t):
            acc += ej * z[j]
        for e in self._exponents(z):
            if e > 700.0:
                raise RangeError(f"population exponent {e:.3g} out of range")
            acc -= math.exp(e)
        return acc

    def grad_flat(self, z):
        n = len(self._eps_t)
        x = self.populations_flat(z)
        dQ = []
        for j, col in enumerate(self._half_cols):
            acc = self._eps_t[j]
            for i in range(n):
                acc -= col[i] * x[i]
            dQ.append(acc)
        dP = [-xi for xi in x]
        return dQ, dP

    def field_flat(self, z):
        # Qdot = -dH/dP = x,  Pdot = +dH/dQ
        n = len(self._eps_t)
        eps = self._eps_t
        exp = math.exp
        x = []
        for j, row in enumerate(self._half_rows):
            acc = z[n + j]
            for k in range(n):
                acc += row[k] * z[k]
            if acc > 700.0 or acc < -700.0:
                raise RangeError(f"population exponent {acc:.3g} out of range (|.| > 700)")
            x.append(exp(acc))
        out = list(x)
        for j, col in enumerate(self._half_cols):
            acc = eps[j]
            for i in range(n):
                acc -= col[i] * x[i]
            out.append(acc)
        return out

    def hamiltonian_batch(self, qs, ps):
        expo = ps + 0.5 * qs @ self.A.T
        return qs @ self.eps - np.sum(np.exp(expo), axis=-1)

    def populations_batch(self, qs, ps) -> np.ndarray:
        return np.exp(ps + 0.5 * qs @ self.A.T)

    def population_rhs(self, x: np.ndarray) -> np.ndarray:
        """Right side eps_j x_j + sum_k a_jk x_j x_k of the population ODE."""
        x = np.asarray(x, dtype=float)
        return x * (self.eps + x @ self.A.T)

    def params_dict(self):
        return {"eps": self.eps.tolist(), "A": self.A.tolist()}


@dataclass(frozen=True)
class Potential1D(HamiltonianSystem):
    """One-degree-of-freedom system H = c p^2 + V(q) with c > 0.

    The kinetic normalization matches the semiclassical symbol (coefficient
    one when c = 1); the classical oscillator with mass m corresponds to
    c = 1/(2m).
    """

    V: Polynomial1D
    c: float = 1.0
    box: tuple[float, float] | None = None

    kind = "potential-1d"
    separable = True

    def __post_init__(self):
        if isinstance(self.V, str):
            object.__setattr__(self, "V", parse_potential(self.V))
        if self.c <= 0:
            raise ValueError("kinetic coefficient must be positive")
        if self.box is None and not self.V.bounded_below():
            raise ValueError(
                "potential must be bounded below; restrict it with an explicit box"
            )
        object.__setattr__(self, "_dV", self.V.derivative())

    @property
    def ndof(self) -> int:
        return 1

    @property
    def inv_mass(self) -> float:
        # qdot = dH/dp = 2 c p
        return 2.0 * self.c

    def ham_flat(self, z):
        return self.c * z[1] * z[1] + self.V(z[0])

    def force_flat(self, q):
        return [self._dV(q[0])]

    def grad_flat(self, z):
        return [self._dV(z[0])], [2.0 * self.c * z[1]]

    def field_flat(self, z):
        return [2.0 * self.c * z[1], -self._dV(z[0])]

    def hamiltonian_batch(self, qs, ps):
        return self.c * ps[..., 0] ** 2 + self.V(qs[..., 0])

    def potential_flat(self, q):
        return self.V(q[0])

    def min_potential(self) -> tuple[float, float]:
        """(argmin, min) of V over the box (or the whole line)."""
        crits = self._dV.real_roots()
        lo, hi = self.box if self.box is not None else (None, None)
        candidates = [c for c in crits if (lo is None or lo <= c <= hi)]
        if lo is not None:
            candidates += [lo, hi]
        if not candidates:
            candidates = [0.0]
        vals = [self.V(c) for c in candidates]
        i = int(np.argmin(vals))
        return candidates[i], vals[i]

    def params_dict(self):
        d = {"V": self.V.to_expression(), "c": self.c}
        if self.box is not None:
            d["box"] = list(self.box)
        return d

    def default_sample_box(self, energy):
        if self.box is not None:
            return [self.box]
        roots = self.V.real_roots(energy)
        if len(roots) < 2:
            raise DegenerateSurfaceError(
                f"E={energy} leaves no classically allowed interval"
            )
        span = roots[-1] - roots[0]
        return [(roots[0] - 0.05 * span, roots[-1] + 0.05 * span)]


@dataclass(frozen=True)
class AnisotropicOscillator2D(HamiltonianSystem):
    """H = (p1^2 + p2^2)/2 + (w1^2 q1^2 + w2^2 q2^2)/2."""

    omega1: float = 1.0
    omega2: float = math.sqrt(2.0)

    kind = "anisotropic-oscillator-2d"
    separable = True

    def __post_init__(self):
        if self.omega1 <= 0 or self.omega2 <= 0:
            raise ValueError("frequencies must be positive")

    @property
    def ndof(self) -> int:
        return 2

    @property
    def inv_mass(self) -> float:
        return 1.0

    def ham_flat(self, z):
        w1, w2 = self.omega1, self.omega2
        return 0.5 * (z[2] * z[2] + z[3] * z[3]) + 0.5 * (
            w1 * w1 * z[0] * z[0] + w2 * w2 * z[1] * z[1]
        )

    def force_flat(self, q):
        return [self.omega1 ** 2 * q[0], self.omega2 ** 2 * q[1]]

    def grad_flat(self, z):
        return self.force_flat(z[:2]), [z[2], z[3]]

    def field_flat(self, z):
        f = self.force_flat(z[:2])
        return [z[2], z[3], -f[0], -f[1]]

    def hamiltonian_batch(self, qs, ps):
        w = np.array([self.omega1, self.omega2])
        return 0.5 * np.sum(ps * ps, axis=-1) + 0.5 * np.sum((w * qs) ** 2, axis=-1)

    def potential_flat(self, q):
        return 0.5 * (self.omega1 ** 2 * q[0] ** 2 + self.omega2 ** 2 * q[1] ** 2)

    def params_dict(self):
        return {"omega1": self.omega1, "omega2": self.omega2}

    def default_sample_box(self, energy):
        if energy <= 0:
            raise DegenerateSurfaceError(
                f"E={energy} is not above the oscillator minimum; surface degenerates"
            )
        return [
            (-math.sqrt(2 * energy) / self.omega1, math.sqrt(2 * energy) / self.omega1),
            (-math.sqrt(2 * energy) / self.omega2, math.sqrt(2 * energy) / self.omega2),
        ]


# --------------------------------------------------------------------------
# module-level operations
# --------------------------------------------------------------------------

def check_point(sys: HamiltonianSystem, pt: PhasePoint) -> None:
    """Raise DomainError when pt violates the system's domain guard."""
    if pt.ndof != sys.ndof:
        raise ValueError(f"point has {pt.ndof} dof, system {sys.kind} has {sys.ndof}")
    reason = sys.domain_violation(pt.flat())
    if reason is not None:
        raise DomainError(reason)


def eval_hamiltonian(sys: HamiltonianSystem, pt: PhasePoint) -> float:
    check_point(sys, pt)
    return sys.ham_flat(pt.flat())


def eval_gradient(sys: HamiltonianSystem, pt: PhasePoint) -> tuple[np.ndarray, np.ndarray]:
    check_point(sys, pt)
    dq, dp = sys.grad_flat(pt.flat())
    return np.asarray(dq), np.asarray(dp)


def vector_field(sys: HamiltonianSystem, pt: PhasePoint) -> PhasePoint:
    """Phase-space velocity with the system's declared sign convention."""
    check_point(sys, pt)
    v = sys.field_flat(pt.flat())
    n = sys.ndof
    return PhasePoint(np.asarray(v[:n]), np.asarray(v[n:]))


def lv_equilibrium(eps, A) -> tuple[np.ndarray, bool]:
    """Solve eps + A q = 0; returns (q, q_in_positive_cone).

    Raises NoUniqueEquilibriumError for singular interaction matrices.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape != (len(eps), len(eps)):
        raise ValueError("A must be square with the dimension of eps")
    if np.linalg.cond(A) > 1e12:
        raise NoUniqueEquilibriumError("interaction matrix is singular")
    q = np.linalg.solve(A, -eps)
    return q, bool(np.all(q > 0))


def lv_embed(x0, sys: LotkaVolterraHamiltonian) -> VolterraState:
    """Initial Volterra state for populations x0: Q = 0, P = log x0, t = 0."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if len(x0) != sys.ndof:
        raise ValueError("x0 dimension mismatch")
    if np.any(x0 <= 0):
        raise DomainError("populations must be strictly positive")
    return VolterraState(np.zeros_like(x0), np.log(x0), 0.0)


def lv_extract(state: VolterraState, sys: LotkaVolterraHamiltonian) -> np.ndarray:
    """Recover populations x_j = exp(P_j + (1/2)(A Q)_j) from a Volterra state."""
    expo = state.P + 0.5 * (sys.A @ state.Q)
    if np.any(np.abs(expo) > 700.0):
        raise RangeError("population exponent out of range (|.| > 700)")
    return np.exp(expo)


def lv_drift_removal(traj, equilibrium, A):
    """Subtract the linear-in-time drift from a (Q, P) trajectory.

    Qtilde = Q - q t and Ptilde = P + t (1/2) A q, pointwise; timestamps and
    the conserved-quantity record are carried over unchanged.
    """
    from .integrate import Trajectory  # local import to avoid a cycle

    q = np.atleast_1d(np.asarray(equilibrium, dtype=float))
    A = np.asarray(A, dtype=float)
    if traj.qs.shape[1] != len(q):
        raise ValueError("equilibrium dimension does not match trajectory")
    shift = 0.5 * (A @ q)
    t = traj.times[:, None]
    return Trajectory(
        times=traj.times.copy(),
        qs=traj.qs - q[None, :] * t,
        ps=traj.ps + shift[None, :] * t,
        energies=traj.energies.copy(),
        exit_reason=traj.exit_reason,
    )


def _draw_on_surface(sys, energy, rng, box, tol):
    """One rejection draw for sample_energy_surface; None when rejected."""
    n = sys.ndof
    q = [lo + (hi - lo) * rng.random() for lo, hi in box]
    if isinstance(sys, Kepler):
        r = math.sqrt(sum(qi * qi for qi in q))
        a = sys.semi_major_axis(energy)
        if r < 0.1 * a:
            return None
    try:
        v = sys.potential_flat(q)
    except DomainError:
        return None
    if v >= energy:
        return None
    d = rng.standard_normal(n)
    dn = float(np.linalg.norm(d))
    if dn < 1e-12:
        return None
    d = [di / dn for di in d]

    def h_on_ray(r):
        return sys.ham_flat([*q, *(r * di for di in d)]) - energy

    lo_r, hi_r = 0.0, 1.0
    f_hi = h_on_ray(hi_r)
    doublings = 0
    while f_hi < 0.0:
        hi_r *= 2.0
        f_hi = h_on_ray(hi_r)
        doublings += 1
        if doublings > 200:
            return None
    for _ in range(200):
        mid = 0.5 * (lo_r + hi_r)
        f_mid = h_on_ray(mid)
        if abs(f_mid) <= tol:
            return PhasePoint(np.array(q), np.array([mid * di for di in d]))
        if f_mid < 0.0:
            lo_r = mid
        else:
            hi_r = mid
    return None


def sample_energy_surface(sys: HamiltonianSystem, energy: float, count: int,
                          seed: int, box=None) -> list[PhasePoint]:
    """Draw `count` points with H = energy to 1e-10 * max(1, |E|).

    Positions are sampled uniformly in a per-system box (rejecting those with
    potential energy above E), momenta along a random direction with the ray
    parameter bracketed and bisected onto the surface.  Deterministic for a
    fixed seed.
    """
    if isinstance(sys, LotkaVolterraHamiltonian):
        raise UnsupportedSystemError(
            "Lotka-Volterra surfaces are sampled with lv_hlevel_sampler"
        )
    if count < 1:
        raise ValueError("count must be >= 1")
    box = box if box is not None else sys.default_sample_box(energy)
    tol = 1e-10 * max(1.0, abs(energy))
    rng = np.random.default_rng(seed)
    points: list[PhasePoint] = []
    failures = 0
    while len(points) < count:
        pt = _draw_on_surface(sys, energy, rng, box, tol)
        if pt is None:
            failures += 1
            if failures > 1000 * count:
                raise SurfaceUnreachableError(
                    f"could not reach H={energy} after {failures} failed draws"
                )
            continue
        points.append(pt)
    return points


# --------------------------------------------------------------------------
# JSON serialization: {"kind": ..., "params": {...}, "convention": ...}
# --------------------------------------------------------------------------

_KIND_MAP = {
    "harmonic-oscillator": HarmonicOscillator,
    "kepler": Kepler,
    "lotka-volterra": LotkaVolterraHamiltonian,
    "potential-1d": Potential1D,
    "anisotropic-oscillator-2d": AnisotropicOscillator2D,
}


def system_to_json(sys: HamiltonianSystem) -> dict:
    return {"kind": sys.kind, "params": sys.params_dict(), "convention": sys.convention}


def system_from_json(obj: dict) -> HamiltonianSystem:
    kind = obj.get("kind")
    if kind not in _KIND_MAP:
        raise ValueError(f"unknown system kind {kind!r}")
    params = dict(obj.get("params", {}))
    if kind == "lotka-volterra":
        params["eps"] = np.asarray(params["eps"], dtype=float)
        params["A"] = np.asarray(params["A"], dtype=float)
    if kind == "potential-1d":
        params["V"] = parse_potential(params["V"])
        if "box" in params and params["box"] is not None:
            params["box"] = tuple(params["box"])
    sys = _KIND_MAP[kind](**params)
    conv = obj.get("convention", sys.convention)
    if conv != sys.convention:
        raise ValueError(
            f"system kind {kind!r} uses convention {sys.convention!r}, got {conv!r}"
        )
    return sys
