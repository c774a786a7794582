"""Physical parameters and steady-state operating points of a radial DC feeder.

The feeder is a stiff source followed by ``n`` resistive segments of equal
resistance ``R``; converter ``k`` (1-based) taps the node after segment ``k``.
Every converter is an ideal buck regulating its output to the load's nominal
voltage, and every load is a constant power load (CPL).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np


class ModelError(Exception):
    """Base class for physical-model failures (exit code 3 at the CLI)."""


class InfeasibleOperatingPoint(ModelError):
    def __init__(self, message: str, converter: int | None = None):
        super().__init__(message)
        self.converter = converter


class ConvergenceError(Exception):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class CouplingConvention(enum.Enum):
    """How a converter's averaged input current loads the feeder.

    ``PAPER_EXACT`` charges each segment with the inductor currents of all
    downstream converters.  ``PHYSICAL`` charges it with the duty-weighted
    currents ``D_k * I_k``, which is the true period average of the switched
    input current.
    """

    PAPER_EXACT = "paper_exact"
    PHYSICAL = "physical"


@dataclass(frozen=True)
class ConverterParams:
    L: float
    C: float
    f_sw: float = 200e3

    def __post_init__(self):
        if not (self.L > 0 and self.C > 0 and self.f_sw > 0):
            raise ValueError(f"converter parameters must be positive, got {self}")

    @property
    def T(self) -> float:
        return 1.0 / self.f_sw


@dataclass(frozen=True)
class SourceParams:
    V_g: float

    def __post_init__(self):
        if not self.V_g > 0:
            raise ValueError(f"source voltage must be positive, got {self.V_g}")


@dataclass(frozen=True)
class CPLoad:
    P: float
    V_nominal: float = 48.0
    V_min: float = 20.0
    V_max: float = 120.0

    def __post_init__(self):
        if self.P < 0:
            raise ValueError(f"load power must be non-negative, got {self.P}")
        if not 0 < self.V_min <= self.V_nominal <= self.V_max:
            raise ValueError(
                "need 0 < V_min <= V_nominal <= V_max, got "
                f"{self.V_min}, {self.V_nominal}, {self.V_max}"
            )


@dataclass(frozen=True)
class LineNetwork:
    n: int
    R: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"converter count must be an integer >= 1, got {self.n}")
        if not self.R >= 0:
            raise ValueError(f"line resistance must be >= 0, got {self.R}")


@dataclass(frozen=True)
class NetworkSpec:
    source: SourceParams
    line: LineNetwork
    converters: tuple[ConverterParams, ...]
    loads: tuple[CPLoad, ...]

    def __post_init__(self):
        object.__setattr__(self, "converters", tuple(self.converters))
        object.__setattr__(self, "loads", tuple(self.loads))
        if len(self.converters) != self.line.n or len(self.loads) != self.line.n:
            raise ValueError(
                f"expected {self.line.n} converters and loads, got "
                f"{len(self.converters)} and {len(self.loads)}"
            )

    @property
    def n(self) -> int:
        return self.line.n

    @property
    def R(self) -> float:
        return self.line.R

    def with_R(self, R: float) -> "NetworkSpec":
        return replace(self, line=LineNetwork(self.line.n, R))

    def with_n(self, n: int) -> "NetworkSpec":
        """Grow or shrink the feeder by repeating the first converter and load."""
        return NetworkSpec(
            self.source,
            LineNetwork(n, self.line.R),
            (self.converters[0],) * n,
            (self.loads[0],) * n,
        )

    @classmethod
    def uniform(
        cls,
        n: int,
        R: float = 0.0,
        *,
        V_g: float = 110.0,
        L: float = 20e-6,
        C: float = 29e-6,
        f_sw: float = 200e3,
        P: float = 1000.0,
        V_nominal: float = 48.0,
        V_min: float = 20.0,
        V_max: float = 120.0,
    ) -> "NetworkSpec":
        """Feeder of identical converters; defaults are the bench circuit values."""
        conv = ConverterParams(L, C, f_sw)
        load = CPLoad(P, V_nominal, V_min, V_max)
        return cls(SourceParams(V_g), LineNetwork(n, R), (conv,) * n, (load,) * n)


@dataclass(frozen=True)
class OperatingPoint:
    """Per-converter steady state. Arrays are indexed by converter (0-based)."""

    D: np.ndarray
    Vbar: np.ndarray
    Ibar: np.ndarray
    Vbar_node: np.ndarray
    coupling: CouplingConvention = CouplingConvention.PHYSICAL
    residual: float = 0.0
    iterations: int = 0

    @property
    def n(self) -> int:
        return len(self.D)


def feeder_matrix(n: int) -> np.ndarray:
    """``M[j, k] = min(j, k)`` (1-based): the shared-segment count between two taps.

    Node voltage drops are ``R * M @ injected``; the inverse of ``M`` is the
    feeder's nodal Laplacian.
    """
    idx = np.arange(1, n + 1)
    return np.minimum.outer(idx, idx).astype(float)


def cpl_current(load: CPLoad, v: float) -> float:
    """Current drawn by a constant power load at terminal voltage ``v``.

    The load draws ``P / v`` inside ``[V_min, V_max]`` and shuts off outside it.
    """
    if not v > 0:
        raise ValueError(f"CPL voltage must be positive, got {v}")
    if load.V_min <= v <= load.V_max:
        return load.P / v
    return 0.0


def _output_currents(spec: NetworkSpec, shunt_R: float | None) -> np.ndarray:
    I = np.array([ld.P / ld.V_nominal for ld in spec.loads])
    if shunt_R is not None:
        I = I + np.array([ld.V_nominal for ld in spec.loads]) / shunt_R
    return I


def nominal_operating_point(spec: NetworkSpec, shunt_R: float | None = None) -> OperatingPoint:
    """Operating point with the feeder drops ignored (every node at ``V_g``).

    This is the fixed linearization point the stability sweeps use: duty
    cycles and node voltages are held at their lossless values while ``R``
    varies in the small-signal matrices.
    """
    Vg = spec.source.V_g
    Vbar = np.array([ld.V_nominal for ld in spec.loads])
    Ibar = _output_currents(spec, shunt_R)
    D = Vbar / Vg
    _check_feasible(D, np.full(spec.n, Vg))
    return OperatingPoint(D, Vbar, Ibar, np.full(spec.n, Vg), CouplingConvention.PAPER_EXACT)


def _check_feasible(D: np.ndarray, node: np.ndarray) -> None:
    for k in range(len(D)):
        if not node[k] > 0:
            raise InfeasibleOperatingPoint(
                f"node voltage at converter {k + 1} is {node[k]:.6g} V", converter=k + 1
            )
        if not 0 < D[k] < 1:
            raise InfeasibleOperatingPoint(
                f"converter {k + 1} needs duty {D[k]:.6g} outside (0, 1)", converter=k + 1
            )


def _node_voltages(Vg: float, R: float, M: np.ndarray, injected: np.ndarray) -> np.ndarray:
    return Vg - R * (M @ injected)


def _bisect_single(Vg: float, R: float, P_eff: float, tol: float) -> tuple[float, int]:
    # high-voltage root of u = Vg - R * P_eff / u on [Vg/2, Vg]
    f = lambda u: u - Vg + R * P_eff / u
    lo, hi = Vg / 2.0, Vg
    if f(lo) > 0:
        raise InfeasibleOperatingPoint(
            f"feeder cannot deliver {P_eff:.6g} W through {R:.6g} ohm", converter=1
        )
    it = 0
    while hi - lo > tol * Vg and it < 200:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        it += 1
    return 0.5 * (lo + hi), it


def solve_operating_point(
    spec: NetworkSpec,
    coupling: CouplingConvention = CouplingConvention.PHYSICAL,
    *,
    shunt_R: float | None = None,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    damping: float = 0.5,
) -> OperatingPoint:
    """Steady state of the averaged feeder equations.

    Each output sits at its nominal voltage.  Under ``PAPER_EXACT`` the segment
    currents are sums of inductor currents and the node voltages follow in
    closed form; under ``PHYSICAL`` they are sums of ``D_k * I_k``, which
    couples the node voltages and is solved by damped fixed-point iteration
    (bisection fallback for a single converter).

    ``shunt_R`` adds the output shunt resistor current ``V / R_s`` to each
    inductor current.
    """
    n, R, Vg = spec.n, spec.R, spec.source.V_g
    Vbar = np.array([ld.V_nominal for ld in spec.loads])
    Ibar = _output_currents(spec, shunt_R)
    M = feeder_matrix(n)

    if coupling is CouplingConvention.PAPER_EXACT or R == 0:
        node = _node_voltages(Vg, R, M, Ibar)
        _check_feasible(Vbar / np.where(node > 0, node, np.nan), node)
        D = Vbar / node
        return OperatingPoint(D, Vbar, Ibar, node, coupling, 0.0, 0)

    P_eff = Vbar * Ibar  # D_k * I_k = P_eff_k / node_k
    node = np.full(n, Vg)
    residual = np.inf
    it = 0
    converged = ran_away = False
    while it < max_iter:
        it += 1
        target = _node_voltages(Vg, R, M, P_eff / node)
        if np.any(target <= 0) or not np.all(np.isfinite(target)):
            ran_away = True
            break
        step = target - node
        node = node + damping * step
        residual = np.max(np.abs(step)) / Vg
        if residual <= tol * 1e-3:
            converged = True
            break

    if not converged:
        if n == 1:
            u, it2 = _bisect_single(Vg, R, float(P_eff[0]), tol * 1e-3)
            node = np.array([u])
            it += it2
        elif ran_away:
            k = int(np.argmin(target)) + 1
            raise InfeasibleOperatingPoint(
                f"feeder cannot supply the loads at R={R:.6g} ohm "
                f"(node {k} collapses)", converter=k
            )
        else:
            raise ConvergenceError(
                f"operating point did not converge in {max_iter} iterations", residual
            )

    D = Vbar / node
    _check_feasible(D, node)
    res = node - _node_voltages(Vg, R, M, D * Ibar)
    rel = float(np.max(np.abs(res)) / Vg)
    if rel > tol:
        raise ConvergenceError(f"operating point residual {rel:.3g} exceeds {tol:.3g}", rel)
    return OperatingPoint(D, Vbar, Ibar, node, coupling, rel, it)


def segment_currents(spec: NetworkSpec, op: OperatingPoint) -> np.ndarray:
    """Current through each feeder segment at the operating point."""
    inj = op.Ibar if op.coupling is CouplingConvention.PAPER_EXACT else op.D * op.Ibar
    return np.cumsum(inj[::-1])[::-1]


def power_balance_residual(spec: NetworkSpec, op: OperatingPoint, shunt_R: float | None = None) -> float:
    """Relative mismatch between source power and load + line + shunt losses."""
    seg = segment_currents(spec, op)
    p_source = spec.source.V_g * seg[0]
    p_loads = sum(ld.P for ld in spec.loads)
    p_line = spec.R * float(np.sum(seg**2))
    p_shunt = 0.0 if shunt_R is None else float(np.sum(op.Vbar**2) / shunt_R)
    return abs(p_source - p_loads - p_line - p_shunt) / max(p_source, 1e-300)
