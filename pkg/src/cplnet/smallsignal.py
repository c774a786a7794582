"""Small-signal state-space models, spectra and stability verdicts.

State naming: ``i{k}`` inductor current, ``v{k}`` output voltage, ``vc{k}``
input shunt-capacitor (node) voltage, ``vf{k}`` RC damping-leg capacitor
voltage.  Converter indices in labels are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .model import (
    ConverterParams,
    CouplingConvention,
    CPLoad,
    NetworkSpec,
    OperatingPoint,
    SourceParams,
    feeder_matrix,
)


@dataclass(frozen=True, eq=False)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    state_labels: tuple[str, ...]

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "state_labels", tuple(self.state_labels))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        if len(self.state_labels) != A.shape[0]:
            raise ValueError("one label per state is required")
        if len(set(self.state_labels)) != len(self.state_labels):
            raise ValueError(f"duplicate state labels in {self.state_labels}")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    def index(self, label: str) -> int:
        return self.state_labels.index(label)


@dataclass(frozen=True)
class OutputShuntR:
    R_s: float

    def __post_init__(self):
        if not self.R_s > 0:
            raise ValueError(f"R_s must be positive, got {self.R_s}")


@dataclass(frozen=True)
class InputGroundRC:
    """Series R_f-C_f damping leg from each converter's input node to ground."""

    R_f: float
    C_f: float

    def __post_init__(self):
        if not (self.R_f > 0 and self.C_f > 0):
            raise ValueError(f"R_f and C_f must be positive, got {self}")


@dataclass(frozen=True)
class InputShuntC:
    C_s: float

    def __post_init__(self):
        if not self.C_s > 0:
            raise ValueError(f"C_s must be positive, got {self.C_s}")


DesignVariant = Union[OutputShuntR, InputGroundRC, InputShuntC, None]


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray

    @property
    def max_real_part(self) -> float:
        return float(np.max(self.eigenvalues.real))

    def __len__(self):
        return len(self.eigenvalues)


def build_single(conv: ConverterParams, load: CPLoad, src: SourceParams, op: OperatingPoint) -> StateSpace:
    """Standalone converter on a stiff source, state order ``[v, i]``."""
    Vbar = float(op.Vbar[0])
    A = np.array(
        [
            [load.P / (conv.C * Vbar**2), 1.0 / conv.C],
            [-1.0 / conv.L, 0.0],
        ]
    )
    B = np.array([[0.0], [src.V_g / conv.L]])
    return StateSpace(A, B, ("v1", "i1"))


def _base_labels(n: int) -> tuple[str, ...]:
    return tuple(lab for k in range(1, n + 1) for lab in (f"i{k}", f"v{k}"))


def _check_dims(spec: NetworkSpec, op: OperatingPoint) -> None:
    if op.n != spec.n:
        raise ValueError(f"operating point has {op.n} converters, spec has {spec.n}")


def _converter_rows(spec: NetworkSpec, op: OperatingPoint, A, B, ii, vv):
    """Fill the parts of the i/v rows that do not involve the feeder."""
    for k, (conv, load) in enumerate(zip(spec.converters, spec.loads)):
        A[ii[k], vv[k]] = -1.0 / conv.L
        A[vv[k], ii[k]] = 1.0 / conv.C
        A[vv[k], vv[k]] = load.P / (conv.C * op.Vbar[k] ** 2)
        B[ii[k], k] = op.Vbar_node[k] / conv.L


def _assemble(
    spec: NetworkSpec,
    op: OperatingPoint,
    coupling: CouplingConvention,
    rc: InputGroundRC | None = None,
) -> StateSpace:
    # The node voltages are algebraic here:
    #   du = W (-R M (c*di + Ibar*dd) + (R/R_f) M dvf),  W = (I + (R/R_f) M)^-1
    # with c = 1 (paper-exact) or D (physical); the Ibar*dd term is physical only.
    n, R = spec.n, spec.R
    per = 3 if rc else 2
    N = per * n
    ii = [per * k for k in range(n)]
    vv = [per * k + 1 for k in range(n)]
    ff = [per * k + 2 for k in range(n)] if rc else []
    A = np.zeros((N, N))
    B = np.zeros((N, n))
    _converter_rows(spec, op, A, B, ii, vv)

    physical = coupling is CouplingConvention.PHYSICAL
    M = feeder_matrix(n)
    c = op.D if physical else np.ones(n)
    if rc:
        W = np.linalg.inv(np.eye(n) + (R / rc.R_f) * M)
    else:
        W = np.eye(n)
    S_i = -R * (W @ M) * c[None, :]
    S_d = -R * (W @ M) * op.Ibar[None, :] if physical else np.zeros((n, n))
    S_f = (R / rc.R_f) * (W @ M) if rc else None

    L = np.array([cv.L for cv in spec.converters])
    for k in range(n):
        g = op.D[k] / L[k]
        for m in range(n):
            A[ii[k], ii[m]] += g * S_i[k, m]
            B[ii[k], m] += g * S_d[k, m]
            if rc:
                A[ii[k], ff[m]] += g * S_f[k, m]
    if rc:
        tau = rc.R_f * rc.C_f
        for k in range(n):
            for m in range(n):
                A[ff[k], ii[m]] += S_i[k, m] / tau
                A[ff[k], ff[m]] += S_f[k, m] / tau
                B[ff[k], m] += S_d[k, m] / tau
            A[ff[k], ff[k]] -= 1.0 / tau

    labels = _base_labels(n)
    if rc:
        labels = tuple(lab for k in range(1, n + 1) for lab in (f"i{k}", f"v{k}", f"vf{k}"))
    return StateSpace(A, B, labels)


def build_network(
    spec: NetworkSpec,
    op: OperatingPoint,
    coupling: CouplingConvention = CouplingConvention.PAPER_EXACT,
    *,
    paper_b: bool = False,
) -> StateSpace:
    """Linearized n-converter feeder, state order ``[i1, v1, ..., in, vn]``.

    With ``PAPER_EXACT`` the inductor row of converter ``k`` carries
    ``-(D_k R / L_k) * min(k, m)`` on every ``i_m``.  ``PHYSICAL`` is the
    consistent linearization of the duty-weighted feeder: the couplings gain
    a factor ``D_m`` and each duty perturbation also shifts upstream node
    voltages through ``Ibar_m``.  ``paper_b`` replaces the input-node voltage
    in ``B`` with the output voltage.
    """
    _check_dims(spec, op)
    ss = _assemble(spec, op, coupling)
    if paper_b:
        B = ss.B.copy()
        for k, conv in enumerate(spec.converters):
            B[2 * k, k] += (op.Vbar[k] - op.Vbar_node[k]) / conv.L
        ss = StateSpace(ss.A, B, ss.state_labels)
    return ss


def _assemble_shunt_c(
    spec: NetworkSpec, op: OperatingPoint, cs: InputShuntC, coupling: CouplingConvention
) -> StateSpace:
    n, R = spec.n, spec.R
    if R == 0:
        raise ValueError("an input shunt capacitor across a stiff source has no dynamics (R = 0)")
    N = 3 * n
    cc = [3 * k for k in range(n)]
    ii = [3 * k + 1 for k in range(n)]
    vv = [3 * k + 2 for k in range(n)]
    A = np.zeros((N, N))
    B = np.zeros((N, n))
    _converter_rows(spec, op, A, B, ii, vv)

    physical = coupling is CouplingConvention.PHYSICAL
    G = 1.0 / (cs.C_s * R)
    for k, conv in enumerate(spec.converters):
        # upstream neighbour (the source for k = 0 contributes no perturbation)
        A[cc[k], cc[k]] -= G
        if k > 0:
            A[cc[k], cc[k - 1]] += G
        if k < n - 1:
            A[cc[k], cc[k]] -= G
            A[cc[k], cc[k + 1]] += G
        A[cc[k], ii[k]] = -(op.D[k] if physical else 1.0) / cs.C_s
        if physical:
            B[cc[k], k] = -op.Ibar[k] / cs.C_s
        A[ii[k], cc[k]] = op.D[k] / conv.L
    labels = tuple(lab for k in range(1, n + 1) for lab in (f"vc{k}", f"i{k}", f"v{k}"))
    return StateSpace(A, B, labels)


def apply_design(
    ss: StateSpace,
    spec: NetworkSpec,
    op: OperatingPoint,
    design: DesignVariant,
    coupling: CouplingConvention = CouplingConvention.PAPER_EXACT,
) -> StateSpace:
    """Augment a network model with one passive design applied to every converter.

    The output shunt only edits the ``v`` diagonal of ``ss``.  The input-side
    designs change how node voltages respond, so their feeder rows are rebuilt
    from ``spec`` and ``op`` under ``coupling``.
    """
    if design is None:
        return ss
    _check_dims(spec, op)
    if ss.state_labels != _base_labels(spec.n):
        raise ValueError("apply_design expects an unaugmented network model")
    if isinstance(design, OutputShuntR):
        A = ss.A.copy()
        for k, (conv, load) in enumerate(zip(spec.converters, spec.loads)):
            j = ss.index(f"v{k + 1}")
            a = load.P / (conv.C * op.Vbar[k] ** 2)
            b = 1.0 / (conv.C * design.R_s)
            # a residue of a few ulps at R_s = V^2/P is roundoff, not a sign
            A[j, j] = 0.0 if abs(a - b) <= 4 * np.finfo(float).eps * max(a, b) else a - b
        return StateSpace(A, ss.B.copy(), ss.state_labels)
    if isinstance(design, InputShuntC):
        return _assemble_shunt_c(spec, op, design, coupling)
    if isinstance(design, InputGroundRC):
        return _assemble(spec, op, coupling, rc=design)
    raise TypeError(f"unknown design variant {design!r}")


def eigenvalues(A: np.ndarray) -> Spectrum:
    """Eigenvalues sorted by descending real part, then descending imaginary part."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    lam = np.linalg.eigvals(A).astype(complex)
    order = np.lexsort((-lam.imag, -lam.real))
    return Spectrum(lam[order])


def is_stable(spectrum: Spectrum, margin: float = 0.0) -> bool:
    if margin < 0:
        raise ValueError("margin must be non-negative")
    return spectrum.max_real_part < -margin


def single_converter_eigenvalues(P: float, C: float, L: float, Vbar: float) -> np.ndarray:
    """Closed-form roots of ``s^2 - a s + 1/(LC)`` with ``a = P / (C Vbar^2)``.

    Real roots are formed without cancellation (the small root via the product
    of roots).
    """
    a = P / (C * Vbar**2)
    w2 = 1.0 / (L * C)
    disc = a * a - 4.0 * w2
    if disc >= 0:
        big = 0.5 * (a + np.sqrt(disc))
        small = w2 / big if big != 0 else 0.0
        return np.array([big, small], dtype=complex)
    im = 0.5 * np.sqrt(-disc)
    return np.array([0.5 * a + 1j * im, 0.5 * a - 1j * im])


@dataclass(frozen=True)
class SchurCheck:
    det_schur: float
    det_direct: float
    agree: bool


class SingularBlockError(ValueError):
    pass


def schur_determinant_check(A: np.ndarray, block_dim: int) -> SchurCheck:
    """Determinant via ``det(A1) det(A2 - A21 A1^-1 A12)`` against a direct LU."""
    A = np.asarray(A, dtype=float)
    A1 = A[:block_dim, :block_dim]
    A12 = A[:block_dim, block_dim:]
    A21 = A[block_dim:, :block_dim]
    A2 = A[block_dim:, block_dim:]
    if np.linalg.cond(A1) * np.finfo(float).eps > 1.0:
        raise SingularBlockError(f"leading block A1 ({block_dim}x{block_dim}) is singular")
    schur = A2 - A21 @ np.linalg.solve(A1, A12)
    det_schur = float(np.linalg.det(A1) * np.linalg.det(schur))
    det_direct = float(np.linalg.det(A))
    agree = abs(det_schur - det_direct) <= 1e-8 * max(1.0, abs(det_direct))
    return SchurCheck(det_schur, det_direct, bool(agree))


def sign_structure(A: np.ndarray, n: int | None = None, rel_tol: float = 1e-12) -> np.ndarray:
    """Entrywise ``'+'``, ``'-'`` or ``'0'`` pattern of a matrix.

    Entries below ``rel_tol`` times the largest magnitude count as zero.  When
    ``n`` is given the matrix must be the ``2n``-state network model.
    """
    A = np.asarray(A, dtype=float)
    if n is not None and A.shape != (2 * n, 2 * n):
        raise ValueError(f"expected a {2 * n}x{2 * n} matrix, got {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    out = np.full(A.shape, "0", dtype=object)
    out[A > rel_tol * scale] = "+"
    out[A < -rel_tol * scale] = "-"
    return out
