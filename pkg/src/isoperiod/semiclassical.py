"""Semiclassical Schrodinger spectra and the difference-spectrum dichotomy.

The quantum side of the laboratory: discretize -hbar^2 d^2/dx^2 + V(x) on a
Dirichlet grid, collect the eigenvalues within c*hbar^(1-delta) of a target
energy for a decreasing hbar schedule, form the scaled eigenvalue
differences (E_k - E_l)/hbar, and decide between a lattice of cluster
points (spacing 2*pi/T, T the classical period) and a dense fill of the
real line.  Separable 2D spectra are assembled as tensor sums of two 1D
problems, which is what feeds the dense branch.

The kinetic symbol is p^2 (coefficient one, not 1/2); all classical
comparisons in this module use kinetic coefficient c = 1 accordingly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .potentials import Polynomial1D
from .period import action_1d, period_oracle_1d, turning_points_1d


class ParameterError(ValueError):
    """Window or verdict parameters outside their admissible range."""


class EigenvalueCountError(RuntimeError):
    """Eigensolver output contradicts the Sturm inertia count."""


class ConfinementWarning(UserWarning):
    """The box may be too small for the requested spectral window."""


LATTICE = "LATTICE"
DENSE = "DENSE"
INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class Grid1D:
    """Uniform Dirichlet grid on (-L, L) with N interior nodes."""

    L: float
    N: int

    def __post_init__(self):
        if self.N < 16:
            raise ValueError("grid needs at least 16 interior points")
        if self.L <= 0:
            raise ValueError("half-width must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.L / (self.N + 1)

    @property
    def nodes(self) -> np.ndarray:
        return -self.L + self.spacing * np.arange(1, self.N + 1)


@dataclass(frozen=True)
class Tridiagonal:
    """Symmetric tridiagonal operator (diagonal, off-diagonal)."""

    diag: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        off = np.asarray(self.off, dtype=float)
        if off.shape != (len(diag) - 1,):
            raise ValueError("off-diagonal must have length N-1")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "off", off)

    @property
    def n(self) -> int:
        return len(self.diag)

    def norm_bound(self) -> float:
        """Gershgorin bound on the spectral radius."""
        pad = np.zeros(1)
        reach = np.concatenate([pad, np.abs(self.off)]) + np.concatenate(
            [np.abs(self.off), pad]
        )
        return float(np.max(np.abs(self.diag) + reach))

    def gershgorin_min(self) -> float:
        pad = np.zeros(1)
        reach = np.concatenate([pad, np.abs(self.off)]) + np.concatenate(
            [np.abs(self.off), pad]
        )
        return float(np.min(self.diag - reach))

    def to_dense(self) -> np.ndarray:
        mat = np.diag(self.diag)
        idx = np.arange(self.n - 1)
        mat[idx, idx + 1] = self.off
        mat[idx + 1, idx] = self.off
        return mat


def discretize_1d(V, hbar: float, grid: Grid1D) -> Tridiagonal:
    """Three-point Dirichlet discretization of -hbar^2 d^2/dx^2 + V(x)."""
    if hbar <= 0:
        raise ParameterError("hbar must be positive")
    dx = grid.spacing
    x = grid.nodes
    v = np.asarray(V(x), dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("potential must be finite on the grid")
    kin = hbar * hbar / (dx * dx)
    return Tridiagonal(2.0 * kin + v, np.full(grid.N - 1, -kin))


def confinement_warning(V, grid: Grid1D, e_top: float) -> str | None:
    """Warn when V at the box edge fails to dominate the window top."""
    edge = min(float(V(-grid.L)), float(V(grid.L)))
    if edge < e_top:
        msg = (
            f"V at the box edge ({edge:.6g}) is below the window top "
            f"({e_top:.6g}); window eigenvalues may feel the box"
        )
        warnings.warn(msg, ConfinementWarning, stacklevel=2)
        return msg
    return None


def sturm_count_below(op: Tridiagonal, sigma: float) -> int:
    """Number of eigenvalues strictly below sigma (Sturm/LDL^T inertia)."""
    diag = op.diag
    off = op.off
    tiny = 1e-300
    d = diag[0] - sigma
    count = 1 if d < 0 else 0
    for i in range(1, len(diag)):
        b = off[i - 1]
        if d == 0.0:
            d = tiny
        d = (diag[i] - sigma) - b * b / d
        if d < 0:
            count += 1
    return count


def eig_tridiagonal(op: Tridiagonal, lo: float, hi: float) -> np.ndarray:
    """Sorted eigenvalues in (lo, hi], bisection-based, count-verified.

    The count returned by the LAPACK range solver must equal the Sturm
    inertia difference at the interval endpoints exactly; a mismatch raises
    EigenvalueCountError rather than silently dropping eigenvalues.
    """
    if not (lo < hi):
        raise ValueError("need lo < hi")
    vals = eigvalsh_tridiagonal(
        op.diag, op.off, select="v", select_range=(lo, hi), lapack_driver="stebz"
    )
    expected = sturm_count_below(op, hi) - sturm_count_below(op, lo)
    if len(vals) != expected:
        raise EigenvalueCountError(
            f"solver returned {len(vals)} eigenvalues in ({lo:.6g}, {hi:.6g}], "
            f"Sturm count expects {expected}"
        )
    return np.sort(vals)


@dataclass(frozen=True)
class SpectralWindow:
    """Eigenvalues within the shrinking window |E - E_k| < c hbar^(1-delta)."""

    hbar: float
    energy: float
    c: float
    delta: float
    eigenvalues: np.ndarray

    def __post_init__(self):
        if self.hbar <= 0:
            raise ParameterError("hbar must be positive")
        if self.c <= 0:
            raise ParameterError("window constant c must be positive")
        if not (0.0 < self.delta < 0.5):
            raise ParameterError("delta must lie strictly inside (0, 1/2)")
        eigs = np.sort(np.asarray(self.eigenvalues, dtype=float))
        if np.any(np.abs(eigs - self.energy) >= self.half_width):
            raise ParameterError("window members must satisfy the strict inequality")
        object.__setattr__(self, "eigenvalues", eigs)

    @property
    def half_width(self) -> float:
        return self.c * self.hbar ** (1.0 - self.delta)

    @property
    def empty(self) -> bool:
        return len(self.eigenvalues) == 0

    def __len__(self) -> int:
        return len(self.eigenvalues)


def window(eigs, energy: float, c: float, delta: float, hbar: float) -> SpectralWindow:
    """Filter eigenvalues into the window; empty results are allowed."""
    eigs = np.sort(np.asarray(eigs, dtype=float))
    half = c * hbar ** (1.0 - delta)
    kept = eigs[np.abs(eigs - energy) < half]
    return SpectralWindow(hbar, energy, c, delta, kept)


def tensor_sum_spectrum(eigs_x, eigs_y, energy: float, margin: float) -> np.ndarray:
    """All pairwise sums within [energy - margin, energy + margin].

    Merge-based: for each eigenvalue of one factor the admissible slice of
    the other is located by bisection, so the full product is never formed.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    ex = np.sort(np.asarray(eigs_x, dtype=float))
    ey = np.sort(np.asarray(eigs_y, dtype=float))
    lo, hi = energy - margin, energy + margin
    chunks = []
    for b in ey:
        i0 = np.searchsorted(ex, lo - b, side="left")
        i1 = np.searchsorted(ex, hi - b, side="right")
        if i1 > i0:
            chunks.append(ex[i0:i1] + b)
    if not chunks:
        return np.array([])
    return np.sort(np.concatenate(chunks))


def difference_spectrum(win: SpectralWindow) -> np.ndarray:
    """Scaled differences (E_k - E_l)/hbar over ordered pairs k != l."""
    eigs = win.eigenvalues
    m = len(eigs)
    if m < 2:
        return np.array([])
    diffs = (eigs[:, None] - eigs[None, :]) / win.hbar
    return diffs[~np.eye(m, dtype=bool)]


def _positive_histogram(diffs: np.ndarray, edges: np.ndarray) -> np.ndarray:
    pos = diffs[diffs > 0]
    counts, _ = np.histogram(pos, bins=edges)
    return counts


def fit_progression(points, rel_tol: float, max_base: int = 8) -> float | None:
    """Least-squares spacing s with points ~ s*{k_i}, k_i distinct integers.

    Bases k_1 = 1, 2, ... are tried for the smallest point; the first base
    whose relative residual stays below rel_tol wins, so the largest
    consistent spacing is preferred.
    """
    pts = sorted(float(p) for p in points)
    if not pts or pts[0] <= 0:
        return None
    for k1 in range(1, max_base + 1):
        s0 = pts[0] / k1
        ks = [max(1, round(p / s0)) for p in pts]
        if len(set(ks)) != len(ks):
            continue
        s = sum(p * k for p, k in zip(pts, ks)) / sum(k * k for k in ks)
        resid = max(abs(p - k * s) / (k * s) for p, k in zip(pts, ks))
        if resid < rel_tol:
            return s
    return None


def _clusters_from_histogram(counts, centers, diffs, persist_ok, max_span_bins=3):
    """Group persistently populated consecutive bins; position = data mean."""
    populated = [i for i in range(1, len(centers)) if counts[i] > 0 and persist_ok[i]]
    clusters = []
    run: list[int] = []
    for i in populated + [None]:
        if run and (i is None or i != run[-1] + 1):
            lo_edge = centers[run[0]] - 0.5 * (centers[1] - centers[0])
            hi_edge = centers[run[-1]] + 0.5 * (centers[1] - centers[0])
            members = diffs[(diffs > lo_edge) & (diffs <= hi_edge)]
            clusters.append({
                "position": float(np.mean(members)) if len(members) else float(
                    np.mean([centers[j] for j in run])
                ),
                "span_bins": len(run),
                "count": int(sum(counts[j] for j in run)),
            })
            run = []
        if i is not None:
            run.append(i)
    return [c for c in clusters if c["span_bins"] <= max_span_bins], clusters


@dataclass
class DiffSpectrumReport:
    """Per-hbar windows, scaled differences and the lattice/dense verdict."""

    hbars: list[float]
    energy: float
    c: float
    delta: float
    windows: list[SpectralWindow]
    bin_width: float
    r_max: float
    histograms: list[np.ndarray]
    fill_fractions: list[float]
    cluster_points: list[float]
    per_hbar_spacing: list[float | None]
    fitted_spacing: float | None
    verdict: str
    warnings: list[str] = field(default_factory=list)

    @property
    def fill_fraction(self) -> float:
        """Fill at the smallest hbar (the verdict-bearing one)."""
        return self.fill_fractions[-1]

    @property
    def period_estimate(self) -> float | None:
        """T rebuilt from the fitted lattice spacing via T = 2*pi/s."""
        if self.fitted_spacing is None:
            return None
        return 2.0 * math.pi / self.fitted_spacing

    def to_json_dict(self) -> dict:
        return {
            "hbars": list(self.hbars),
            "energy": self.energy,
            "c": self.c,
            "delta": self.delta,
            "window_eigenvalues": [w.eigenvalues.tolist() for w in self.windows],
            "window_sizes": [len(w) for w in self.windows],
            "bin_width": self.bin_width,
            "r_max": self.r_max,
            "fill_fractions": self.fill_fractions,
            "fill_fraction": self.fill_fraction,
            "cluster_points": self.cluster_points,
            "per_hbar_spacing": self.per_hbar_spacing,
            "fitted_spacing": self.fitted_spacing,
            "period_estimate": self.period_estimate,
            "verdict": self.verdict,
            "warnings": self.warnings,
        }

    def histogram_csv(self, path) -> None:
        centers = (np.arange(len(self.histograms[0])) + 0.5) * self.bin_width
        with open(path, "w") as fh:
            fh.write("hbar,bin_center,count\n")
            for hbar, counts in zip(self.hbars, self.histograms):
                for center, count in zip(centers, counts):
                    fh.write(f"{hbar:.17g},{center:.17g},{int(count)}\n")


def cluster_verdict(windows: list[SpectralWindow], bin_width: float = 0.1,
                    persist_tol: float | None = None, r_max: float = 10.0,
                    fill_threshold: float = 0.9, fit_rel_tol: float = 0.02,
                    extra_warnings=None) -> DiffSpectrumReport:
    """Decide LATTICE / DENSE / INCONCLUSIVE from a decreasing hbar schedule.

    Positive scaled differences are histogrammed on [0, r_max].  Cluster
    points are bin positions populated at every hbar (within persist_tol);
    they vote LATTICE when they fit an arithmetic progression s*{1, 2, ...}
    to better than fit_rel_tol.  A fill fraction above fill_threshold at the
    smallest hbar votes DENSE and takes precedence, since near-full
    histograms make any progression fit meaningless.
    """
    if len(windows) < 3:
        raise ParameterError("need at least 3 hbar values")
    hbars = [w.hbar for w in windows]
    if any(b >= a for a, b in zip(hbars, hbars[1:])):
        raise ParameterError("hbar schedule must be strictly decreasing")
    if persist_tol is None:
        persist_tol = bin_width

    n_bins = int(round(r_max / bin_width))
    edges = np.linspace(0.0, n_bins * bin_width, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])

    all_diffs = [difference_spectrum(w) for w in windows]
    histograms = [_positive_histogram(d, edges) for d in all_diffs]
    fills = [float(np.count_nonzero(h)) / n_bins for h in histograms]

    # persistence: a bin at the smallest hbar counts only if every other
    # hbar has a populated bin within persist_tol of it
    smallest = histograms[-1]
    persist_ok = np.zeros(n_bins, dtype=bool)
    pop_centers = [centers[h > 0] for h in histograms]
    for i in range(n_bins):
        if smallest[i] == 0:
            continue
        persist_ok[i] = all(
            len(pc) > 0 and np.min(np.abs(pc - centers[i])) <= persist_tol + 1e-12
            for pc in pop_centers
        )

    narrow, all_clusters = _clusters_from_histogram(
        smallest, centers, all_diffs[-1][all_diffs[-1] > 0], persist_ok
    )
    cluster_points = [c["position"] for c in narrow]

    per_hbar_spacing = []
    for counts, diffs in zip(histograms, all_diffs):
        ok = counts > 0
        own, _ = _clusters_from_histogram(counts, centers, diffs[diffs > 0], ok)
        per_hbar_spacing.append(fit_progression([c["position"] for c in own], fit_rel_tol))

    fitted = None
    verdict = INCONCLUSIVE
    if fills[-1] > fill_threshold:
        verdict = DENSE
    else:
        all_narrow = len(narrow) == len(all_clusters) and len(narrow) > 0
        fitted = fit_progression(cluster_points, fit_rel_tol) if all_narrow else None
        if fitted is not None:
            verdict = LATTICE

    return DiffSpectrumReport(
        hbars=hbars,
        energy=windows[0].energy,
        c=windows[0].c,
        delta=windows[0].delta,
        windows=windows,
        bin_width=bin_width,
        r_max=n_bins * bin_width,
        histograms=histograms,
        fill_fractions=fills,
        cluster_points=cluster_points,
        per_hbar_spacing=per_hbar_spacing,
        fitted_spacing=fitted,
        verdict=verdict,
        warnings=list(extra_warnings or []),
    )


@dataclass
class BohrSommerfeldReport:
    """Action-quantization residuals and gap ratios for one window."""

    hbar: float
    eigenvalues: np.ndarray
    actions: np.ndarray
    residuals: np.ndarray
    gap_ratios: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "hbar": self.hbar,
            "eigenvalues": self.eigenvalues.tolist(),
            "actions": self.actions.tolist(),
            "residuals": self.residuals.tolist(),
            "gap_ratios": self.gap_ratios.tolist(),
        }


def bohr_sommerfeld_residuals(V, c: float, hbar: float, win: SpectralWindow,
                              interval=None) -> BohrSommerfeldReport:
    """Residuals of S(E_k)/(2 pi hbar) against half-integers.

    A 1D confining well has two turning points, hence Maslov index 2 and
    quantization S(E_k) ~ 2 pi hbar (k + 1/2).  The residual is measured to
    the nearest half-integer so no absolute level index is needed.  Gap
    ratios compare consecutive window gaps with 2 pi hbar / T(E) at the gap
    midpoint, T from the classical quadrature oracle.
    """
    eigs = win.eigenvalues
    actions = np.array([action_1d(V, c, e, interval) for e in eigs])
    nu = actions / (2.0 * math.pi * hbar)
    residuals = nu - 0.5 - np.round(nu - 0.5)
    ratios = []
    for lo, hi in zip(eigs[:-1], eigs[1:]):
        t_mid = period_oracle_1d(V, c, 0.5 * (lo + hi), interval)
        ratios.append((hi - lo) / (2.0 * math.pi * hbar / t_mid))
    return BohrSommerfeldReport(
        hbar=win.hbar,
        eigenvalues=eigs.copy(),
        actions=actions,
        residuals=residuals,
        gap_ratios=np.array(ratios),
    )


# --------------------------------------------------------------------------
# end-to-end pipeline helpers
# --------------------------------------------------------------------------

def auto_grid(V, e_top: float, hbar: float, points_per_wave: float = 24.0,
              n_min: int = 600, n_cap: int = 8000, pad: float = 1.6) -> Grid1D:
    """Pick a box and resolution adequate for eigenvalues up to e_top."""
    lo, hi = turning_points_1d(V, e_top)
    half = pad * max(abs(lo), abs(hi))
    for _ in range(8):
        if min(float(V(-half)), float(V(half))) >= e_top:
            break
        half *= 1.3
    p_max = math.sqrt(max(e_top - min(float(V(x)) for x in (0.0, lo, hi)), 1e-12))
    dx = 2.0 * math.pi * hbar / (points_per_wave * p_max)
    n = int(math.ceil(2.0 * half / dx))
    return Grid1D(half, max(16, n_min, min(n, n_cap)))


def spectral_window_1d(V, hbar: float, energy: float, c: float, delta: float,
                       grid: Grid1D | None = None, warn_sink=None) -> SpectralWindow:
    """Window of the 1D operator -hbar^2 d^2/dx^2 + V around the energy."""
    half = c * hbar ** (1.0 - delta)
    e_top = energy + 10.0 * half
    if grid is None:
        grid = auto_grid(V, e_top, hbar)
    msg = confinement_warning(V, grid, e_top)
    if msg and warn_sink is not None:
        warn_sink.append(f"hbar={hbar:g}: {msg}")
    op = discretize_1d(V, hbar, grid)
    eigs = eig_tridiagonal(op, energy - half, energy + half)
    return window(eigs, energy, c, delta, hbar)


def spectral_window_separable(Vx, Vy, hbar: float, energy: float, c: float,
                              delta: float, grid_x: Grid1D | None = None,
                              grid_y: Grid1D | None = None,
                              warn_sink=None) -> SpectralWindow:
    """Window of the separable 2D operator via tensor sums of 1D spectra."""
    half = c * hbar ** (1.0 - delta)
    e_top = energy + 10.0 * half
    sums = []
    factors = []
    for V, grid in ((Vx, grid_x), (Vy, grid_y)):
        if grid is None:
            grid = auto_grid(V, e_top, hbar)
        msg = confinement_warning(V, grid, e_top)
        if msg and warn_sink is not None:
            warn_sink.append(f"hbar={hbar:g}: {msg}")
        op = discretize_1d(V, hbar, grid)
        factors.append(eig_tridiagonal(op, op.gershgorin_min() - 1.0, energy + half))
    sums = tensor_sum_spectrum(factors[0], factors[1], energy, half)
    return window(sums, energy, c, delta, hbar)


def diffspec_pipeline(potentials, hbars, energy: float, c: float = 2.0,
                      delta: float = 0.25, bin_width: float = 0.1,
                      r_max: float = 10.0, persist_tol: float | None = None,
                      grids=None) -> DiffSpectrumReport:
    """Run the full difference-spectrum experiment for a 1D or separable V.

    `potentials` is one Polynomial1D (1D problem) or a pair (separable 2D
    problem assembled by tensor sums).  `grids` optionally pins one Grid1D
    per hbar (1D) or a pair per hbar (separable).
    """
    if isinstance(potentials, Polynomial1D):
        potentials = (potentials,)
    potentials = tuple(potentials)
    if len(potentials) not in (1, 2):
        raise ValueError("need one potential or a separable pair")
    warn_sink: list[str] = []
    wins = []
    for i, hbar in enumerate(hbars):
        grid = grids[i] if grids is not None else None
        if len(potentials) == 1:
            wins.append(spectral_window_1d(potentials[0], hbar, energy, c, delta,
                                           grid, warn_sink))
        else:
            gx, gy = grid if grid is not None else (None, None)
            wins.append(spectral_window_separable(potentials[0], potentials[1],
                                                  hbar, energy, c, delta,
                                                  gx, gy, warn_sink))
    return cluster_verdict(wins, bin_width=bin_width, persist_tol=persist_tol,
                           r_max=r_max, extra_warnings=warn_sink)
