"""Per-converter state feedback and the block-diagonal global gain."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ModelError, NetworkSpec, nominal_operating_point
from .smallsignal import StateSpace, build_single


class UncontrollableError(ModelError):
    pass


@dataclass(frozen=True)
class ConverterGain:
    """Duty perturbation ``d = f_i * i + f_v * v`` from the converter's own states."""

    f_i: float
    f_v: float

    def __post_init__(self):
        if not (np.isfinite(self.f_i) and np.isfinite(self.f_v)):
            raise ValueError(f"gains must be finite, got {self}")


@dataclass(frozen=True)
class GlobalFeedback:
    gains: tuple[ConverterGain, ...]

    def __post_init__(self):
        object.__setattr__(self, "gains", tuple(self.gains))

    def __len__(self):
        return len(self.gains)

    @classmethod
    def uniform(cls, gain: ConverterGain, n: int) -> "GlobalFeedback":
        return cls((gain,) * n)

    def to_json(self) -> str:
        body = {
            "schema_version": 1,
            "gains": [{"f_i": g.f_i, "f_v": g.f_v} for g in self.gains],
        }
        return json.dumps(body, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GlobalFeedback":
        body = json.loads(text)
        if body.get("schema_version") != 1 or set(body) != {"schema_version", "gains"}:
            raise ValueError("gains file must have exactly schema_version=1 and gains")
        out = []
        for g in body["gains"]:
            if set(g) != {"f_i", "f_v"}:
                raise ValueError(f"gain entries need exactly f_i and f_v, got {sorted(g)}")
            out.append(ConverterGain(float(g["f_i"]), float(g["f_v"])))
        return cls(tuple(out))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "GlobalFeedback":
        return cls.from_json(Path(path).read_text())


def _controllability(ss: StateSpace) -> np.ndarray:
    if ss.n_states != 2 or ss.n_inputs != 1:
        raise ValueError(f"expected a 2-state single-input model, got {ss.A.shape} / {ss.B.shape}")
    b = ss.B[:, 0]
    return np.column_stack([b, ss.A @ b])


def check_controllability(ss: StateSpace) -> bool:
    Wc = _controllability(ss)
    sv = np.linalg.svd(Wc, compute_uv=False)
    if sv[0] == 0:
        return False
    return bool(sv[-1] > 1e-10 * sv[0])


def design_individual(ss: StateSpace, desired_poles: Sequence[complex]) -> ConverterGain:
    """Place the closed-loop poles of a standalone converter.

    Ackermann's formula on the 2x2 characteristic polynomial: with ``u = F x``
    the closed loop is ``A + B F`` and ``F = -[0 1] W^-1 p(A)`` where ``W`` is
    the controllability matrix and ``p`` the desired characteristic polynomial.
    """
    p1, p2 = (complex(p) for p in desired_poles)
    if p1.real >= 0 or p2.real >= 0:
        raise ValueError(f"desired poles must have negative real parts, got {p1}, {p2}")
    if not (abs(p1.imag) == 0 and abs(p2.imag) == 0) and abs(p1 - p2.conjugate()) > 1e-12 * abs(p1):
        raise ValueError("complex poles must form a conjugate pair")
    if not check_controllability(ss):
        raise UncontrollableError("converter model is not controllable")

    s_sum = (p1 + p2).real
    s_prod = (p1 * p2).real
    A = ss.A
    pA = A @ A - s_sum * A + s_prod * np.eye(2)
    Wc = _controllability(ss)
    F = -np.linalg.solve(Wc.T, np.array([0.0, 1.0])) @ pA
    f = dict(zip(ss.state_labels, F))
    (ilab,) = [lab for lab in ss.state_labels if lab.startswith("i")]
    (vlab,) = [lab for lab in ss.state_labels if lab.startswith("v")]
    return ConverterGain(float(f[ilab]), float(f[vlab]))


def default_poles(L: float, C: float) -> tuple[complex, complex]:
    """``-w0 (1 +/- j)`` with ``w0`` half the LC resonance."""
    w0 = 0.5 / np.sqrt(L * C)
    return complex(-w0, w0), complex(-w0, -w0)


def design_network_gains(spec: NetworkSpec, poles: Sequence[Sequence[complex]] | None = None) -> GlobalFeedback:
    """Individually stabilizing gains, each designed on its standalone converter."""
    op = nominal_operating_point(spec)
    out = []
    for k, (conv, load) in enumerate(zip(spec.converters, spec.loads)):
        sub = type(op)(op.D[k : k + 1], op.Vbar[k : k + 1], op.Ibar[k : k + 1], op.Vbar_node[k : k + 1])
        ss = build_single(conv, load, spec.source, sub)
        pk = poles[k] if poles is not None else default_poles(conv.L, conv.C)
        out.append(design_individual(ss, pk))
    return GlobalFeedback(tuple(out))


def assemble_global(
    gains: GlobalFeedback, n: int, state_labels: Sequence[str] | None = None
) -> np.ndarray:
    """``n x N`` gain matrix; row ``k`` touches only ``i{k}`` and ``v{k}``.

    Without labels the layout is the plain network order ``[i1, v1, ...]``.
    Extra passive-design states are never fed back.
    """
    if len(gains) != n:
        raise ValueError(f"{len(gains)} gains for {n} converters")
    labels = list(state_labels) if state_labels is not None else [
        lab for k in range(1, n + 1) for lab in (f"i{k}", f"v{k}")
    ]
    F = np.zeros((n, len(labels)))
    for k, g in enumerate(gains.gains):
        F[k, labels.index(f"i{k + 1}")] = g.f_i
        F[k, labels.index(f"v{k + 1}")] = g.f_v
    return F


def closed_loop(ss: StateSpace, F: np.ndarray) -> StateSpace:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape != (ss.n_inputs, ss.n_states):
        raise ValueError(f"F must be {ss.n_inputs}x{ss.n_states}, got {F.shape}")
    return StateSpace(ss.A + ss.B @ F, ss.B, ss.state_labels)
