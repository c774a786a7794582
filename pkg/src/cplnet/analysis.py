"""Network-level stability studies.

All sweeps linearize about the nominal operating point by default
(``op_mode="nominal"``): duty cycles and node voltages stay at their lossless
values while the line resistance varies in the coupling terms.  That keeps a
well-defined model for any ``R`` (including resistances at which no physical
steady state exists).  ``op_mode="resolved"`` re-solves the operating point
at every ``R`` and treats an infeasible one as unstable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .control import ConverterGain, GlobalFeedback, assemble_global, closed_loop
from .model import (
    CouplingConvention,
    InfeasibleOperatingPoint,
    NetworkSpec,
    nominal_operating_point,
    solve_operating_point,
)
from .smallsignal import (
    DesignVariant,
    InputGroundRC,
    InputShuntC,
    OutputShuntR,
    Spectrum,
    StateSpace,
    apply_design,
    build_network,
    eigenvalues,
    is_stable,
)

PAPER = CouplingConvention.PAPER_EXACT


class PreconditionError(ValueError):
    pass


class NotStabilizable(RuntimeError):
    def __init__(self, message: str, worst_R: float, spectrum: Spectrum):
        super().__init__(message)
        self.worst_R = worst_R
        self.spectrum = spectrum


def default_R_set() -> np.ndarray:
    """Line resistances used to certify plug-and-play stability."""
    return np.logspace(-2, 1, 20)


def gains_for(gains: ConverterGain | GlobalFeedback, n: int) -> GlobalFeedback:
    if isinstance(gains, ConverterGain):
        return GlobalFeedback.uniform(gains, n)
    if len(gains) == n:
        return gains
    if len(set(gains.gains)) == 1:
        return GlobalFeedback.uniform(gains.gains[0], n)
    raise ValueError(f"cannot stretch {len(gains)} distinct gains to {n} converters")


def closed_loop_model(
    spec: NetworkSpec,
    gains: ConverterGain | GlobalFeedback,
    *,
    design: DesignVariant = None,
    coupling: CouplingConvention = PAPER,
    op_mode: str = "nominal",
) -> StateSpace:
    shunt = design.R_s if isinstance(design, OutputShuntR) else None
    if op_mode == "nominal":
        op = nominal_operating_point(spec, shunt)
    elif op_mode == "resolved":
        op = solve_operating_point(spec, coupling, shunt_R=shunt)
    else:
        raise ValueError(f"op_mode must be 'nominal' or 'resolved', got {op_mode!r}")
    ss = build_network(spec, op, coupling)
    ss = apply_design(ss, spec, op, design, coupling)
    F = assemble_global(gains_for(gains, spec.n), spec.n, ss.state_labels)
    return closed_loop(ss, F)


def max_real_at(spec: NetworkSpec, gains, R: float, **kw) -> float:
    """Largest real part of the closed-loop spectrum at line resistance ``R``.

    An infeasible operating point (resolved mode only) reports ``+inf``.
    """
    try:
        ss = closed_loop_model(spec.with_R(R), gains, **kw)
    except InfeasibleOperatingPoint:
        return math.inf
    return eigenvalues(ss.A).max_real_part


@dataclass
class ThresholdSearch:
    R_star: float
    bracket: tuple[float, float]
    tol: float
    evaluations: int
    multiple_crossings: bool = False
    grid_R: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    grid_max_real: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.R_star)


def scan_R(spec, gains, R_values: Iterable[float], map_fn: Callable = map, **kw) -> np.ndarray:
    return np.array(list(map_fn(partial(_max_real_at_R, spec, gains, kw), list(R_values))))


def _max_real_at_R(spec, gains, kw, R):
    return max_real_at(spec, gains, R, **kw)


def max_stable_R(
    spec: NetworkSpec,
    gains: ConverterGain | GlobalFeedback,
    R_max_search: float = 10.0,
    tol: float = 1e-6,
    *,
    grid_points: int = 1000,
    map_fn: Callable = map,
    **kw,
) -> ThresholdSearch:
    """Smallest line resistance at which the closed loop loses stability.

    A ``grid_points`` pre-scan of ``[0, R_max_search]`` brackets the first
    crossing (and flags any later ones); bisection then narrows it to ``tol``.
    Returns ``R_star = inf`` if every grid point is stable.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    base = max_real_at(spec, gains, 0.0, **kw)
    if not base < 0:
        raise PreconditionError(
            f"closed loop is not stable at R=0 (max Re = {base:.6g}); "
            "converters are not individually stabilized"
        )
    grid = np.linspace(0.0, R_max_search, grid_points)
    vals = scan_R(spec, gains, grid, map_fn, **kw)
    unstable = vals >= 0
    evals = grid_points + 1
    if not unstable.any():
        return ThresholdSearch(math.inf, (0.0, R_max_search), tol, evals, False, grid, vals)
    j = int(np.argmax(unstable))
    crossings = int(np.count_nonzero(np.diff(unstable.astype(int)) != 0))
    lo, hi = float(grid[j - 1]), float(grid[j])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        evals += 1
        if max_real_at(spec, gains, mid, **kw) >= 0:
            hi = mid
        else:
            lo = mid
    return ThresholdSearch(hi, (lo, hi), tol, evals, crossings > 1, grid, vals)


@dataclass
class StabilityBoundary:
    points: list[tuple[int, float]]
    searches: list[ThresholdSearch]
    R_max_search: float
    tol: float

    @property
    def evaluations(self) -> int:
        return sum(s.evaluations for s in self.searches)


def stability_boundary(
    spec_template: NetworkSpec,
    gain: ConverterGain | GlobalFeedback,
    n_values: Sequence[int],
    R_max_search: float = 10.0,
    tol: float = 1e-6,
    **kw,
) -> StabilityBoundary:
    """``R_star`` for each network size, every converter using the same gain."""
    points, searches = [], []
    for n in sorted(n_values):
        s = max_stable_R(spec_template.with_n(n), gains_for(gain, n), R_max_search, tol, **kw)
        points.append((n, s.R_star))
        searches.append(s)
    return StabilityBoundary(points, searches, R_max_search, tol)


@dataclass
class CriticalN:
    N0: int | None
    max_real_parts: list[float]
    spectrum: Spectrum

    @property
    def found(self) -> bool:
        return self.N0 is not None


def critical_n(
    spec_template: NetworkSpec,
    gain: ConverterGain | GlobalFeedback,
    R: float,
    n_max: int = 50,
    **kw,
) -> CriticalN:
    """Smallest feeder size (up to ``n_max``) that is unstable at resistance ``R``."""
    if not R > 0:
        raise ValueError("R must be positive")
    history = []
    spec = None
    for n in range(1, n_max + 1):
        spec = spec_template.with_n(n).with_R(R)
        ss = closed_loop_model(spec, gains_for(gain, n), **kw)
        spec_n = eigenvalues(ss.A)
        history.append(spec_n.max_real_part)
        if spec_n.max_real_part > 0:
            return CriticalN(n, history, spec_n)
    return CriticalN(None, history, spec_n)


def large_R_limit(
    spec: NetworkSpec,
    gains: ConverterGain | GlobalFeedback,
    *,
    design: DesignVariant = None,
    coupling: CouplingConvention = PAPER,
) -> Spectrum | None:
    """Spectrum the closed loop approaches as ``R -> inf``, if that limit is simple.

    Applies when the closed-loop matrix is affine in ``R``, ``A0 + R K``, with
    ``K`` Hurwitz on its support: those modes run off to ``-inf`` and the rest
    converge to the spectrum of ``A0`` restricted to the complement.  Returns
    ``None`` when the model is not of that form.
    """
    mats = [closed_loop_model(spec.with_R(R), gains, design=design, coupling=coupling).A for R in (0.0, 1.0, 2.0)]
    A0, A1, A2 = mats
    K = A1 - A0
    if np.max(np.abs(A2 - 2 * A1 + A0)) > 1e-9 * np.max(np.abs(A1)):
        return None
    scale = np.max(np.abs(K))
    if scale == 0:
        return eigenvalues(A0)
    touched = (np.abs(K) > 1e-12 * scale)
    fast = np.flatnonzero(touched.any(axis=0) | touched.any(axis=1))
    slow = np.setdiff1d(np.arange(len(A0)), fast)
    if eigenvalues(K[np.ix_(fast, fast)]).max_real_part >= 0:
        return None
    return eigenvalues(A0[np.ix_(slow, slow)])


@dataclass
class DesignReport:
    variant: DesignVariant
    stable: bool
    loss_watts: float | None = None
    efficiency: float | None = None
    R_star: float | None = None
    C_s_star: float | None = None
    certified: bool | None = None
    verdicts: list[tuple[float, float, bool]] = field(default_factory=list)
    asymptotic_max_real: float | None = None


def certify_design(spec, gains, design, R_set, coupling=PAPER) -> list[tuple[float, float, bool]]:
    """``(R, max Re, stable)`` for the closed loop with ``design`` at each ``R``."""
    verdicts = []
    for R in R_set:
        m = max_real_at(spec, gains, float(R), design=design, coupling=coupling)
        verdicts.append((float(R), m, m < 0))
    return verdicts


def evaluate_output_shunt(
    spec: NetworkSpec,
    gains: ConverterGain | GlobalFeedback,
    R_s: float,
    *,
    R_set: Sequence[float] | None = None,
) -> DesignReport:
    """Stability and dissipation of an output shunt resistor on every converter.

    ``stable`` is the verdict at ``spec.R``.  With
    ``R_set`` the report also certifies stability over that set and in the
    ``R -> inf`` limit (``certified``).
    """
    design = OutputShuntR(R_s)
    ss = closed_loop_model(spec, gains, design=design)
    stable = is_stable(eigenvalues(ss.A))
    P = sum(ld.P for ld in spec.loads)
    loss = float(sum(ld.V_nominal**2 for ld in spec.loads) / R_s)
    report = DesignReport(design, stable, loss_watts=loss, efficiency=P / (P + loss))
    if R_set is not None:
        report.verdicts = certify_design(spec, gains, design, R_set)
        lim = large_R_limit(spec, gains, design=design)
        report.asymptotic_max_real = None if lim is None else lim.max_real_part
        report.certified = all(v[2] for v in report.verdicts) and lim is not None and is_stable(lim)
    return report


def least_lossy_stabilizing_shunt(
    spec: NetworkSpec,
    gains: ConverterGain | GlobalFeedback,
    Rs_grid: Sequence[float],
    R_set: Sequence[float] | None = None,
) -> tuple[DesignReport | None, list[DesignReport]]:
    """Largest shunt resistance on ``Rs_grid`` that certifies plug-and-play stability."""
    R_set = default_R_set() if R_set is None else R_set
    reports = [evaluate_output_shunt(spec, gains, float(r), R_set=R_set) for r in sorted(Rs_grid)]
    ok = [r for r in reports if r.certified]
    best = max(ok, key=lambda r: r.variant.R_s) if ok else None
    return best, reports


def evaluate_input_rc(
    spec: NetworkSpec,
    gains: ConverterGain | GlobalFeedback,
    R_f: float,
    C_f: float,
    R_max_search: float = 10.0,
    tol: float = 1e-6,
    **kw,
) -> DesignReport:
    design = InputGroundRC(R_f, C_f)
    search = max_stable_R(spec, gains, R_max_search, tol, design=design, **kw)
    stable = max_real_at(spec, gains, spec.R, design=design) < 0
    return DesignReport(design, stable, R_star=search.R_star)


def _worst_over(spec, gains, C_s, R_set, coupling):
    worst, worst_R = -math.inf, None
    for R in R_set:
        m = max_real_at(spec, gains, float(R), design=InputShuntC(C_s), coupling=coupling)
        if m > worst:
            worst, worst_R = m, float(R)
    return worst, worst_R


def min_stabilizing_Cs(
    spec: NetworkSpec,
    gains: ConverterGain | GlobalFeedback,
    R_set: Sequence[float] | None = None,
    Cs_bracket: tuple[float, float] = (1e-9, 1.0),
    *,
    rel_tol: float = 1e-3,
    grid_points: int = 25,
    coupling: CouplingConvention = PAPER,
) -> DesignReport:
    """Smallest input shunt capacitance stabilizing every resistance in ``R_set``.

    Log-grid refinement over the bracket, then geometric bisection to
    ``rel_tol``.  Raises :class:`NotStabilizable` when the upper bracket fails.
    """
    R_set = default_R_set() if R_set is None else np.asarray(R_set, dtype=float)
    if np.any(R_set <= 0):
        raise ValueError("every R in R_set must be positive")
    lo, hi = Cs_bracket
    worst, worst_R = _worst_over(spec, gains, hi, R_set, coupling)
    if not worst < 0:
        ss = closed_loop_model(spec.with_R(worst_R), gains, design=InputShuntC(hi), coupling=coupling)
        raise NotStabilizable(
            f"C_s = {hi:.3g} F leaves R = {worst_R:.4g} ohm unstable (max Re {worst:.4g})",
            worst_R,
            eigenvalues(ss.A),
        )
    grid = np.geomspace(lo, hi, grid_points)
    ok = [_worst_over(spec, gains, c, R_set, coupling)[0] < 0 for c in grid]
    j = ok.index(True)
    if j == 0:
        star = float(grid[0])
    else:
        a, b = float(grid[j - 1]), float(grid[j])
        while b / a - 1 > rel_tol:
            mid = math.sqrt(a * b)
            if _worst_over(spec, gains, mid, R_set, coupling)[0] < 0:
                b = mid
            else:
                a = mid
        star = b
    verdicts = certify_design(spec, gains, InputShuntC(star), R_set, coupling)
    return DesignReport(
        InputShuntC(star),
        all(v[2] for v in verdicts),
        C_s_star=star,
        certified=all(v[2] for v in verdicts),
        verdicts=verdicts,
    )


def isolated_spectrum(spec: NetworkSpec, gains: ConverterGain | GlobalFeedback) -> np.ndarray:
    """Union of the standalone closed-loop converter spectra."""
    g = gains_for(gains, spec.n)
    ss = closed_loop_model(spec.with_R(0.0), g)
    return eigenvalues(ss.A).eigenvalues


def _hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    pa = np.column_stack([a.real, a.imag])
    pb = np.column_stack([b.real, b.imag])
    return max(directed_hausdorff(pa, pb)[0], directed_hausdorff(pb, pa)[0])


def decoupling_gap(
    spec: NetworkSpec,
    gains: ConverterGain | GlobalFeedback,
    C_s: float,
    R: float,
    *,
    coupling: CouplingConvention = PAPER,
) -> float:
    """Distance between the shunt-capacitor network's converter modes and the isolated ones.

    The ``n`` modes whose eigenvectors put the largest share of their weight
    on the node-capacitor states are dropped before taking the Hausdorff
    distance.
    """
    iso = isolated_spectrum(spec, gains)
    if R == 0:
        coupled = eigenvalues(closed_loop_model(spec.with_R(0.0), gains).A).eigenvalues
        return _hausdorff(coupled, iso)
    ss = closed_loop_model(spec.with_R(R), gains, design=InputShuntC(C_s), coupling=coupling)
    lam, vec = np.linalg.eig(ss.A)
    node = [ss.index(f"vc{k}") for k in range(1, spec.n + 1)]
    w = np.abs(vec) ** 2
    share = w[node].sum(axis=0) / w.sum(axis=0)
    keep = np.argsort(share)[: len(lam) - spec.n]
    return _hausdorff(lam[keep], iso)
