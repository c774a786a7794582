import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from cplnet.control import assemble_global, closed_loop
from cplnet.model import (
    ConverterParams,
    CouplingConvention,
    CPLoad,
    LineNetwork,
    NetworkSpec,
    SourceParams,
    nominal_operating_point,
    solve_operating_point,
)
from cplnet.smallsignal import (
    InputGroundRC,
    InputShuntC,
    OutputShuntR,
    SingularBlockError,
    Spectrum,
    StateSpace,
    apply_design,
    build_network,
    build_single,
    eigenvalues,
    is_stable,
    schur_determinant_check,
    sign_structure,
    single_converter_eigenvalues,
)

PE = CouplingConvention.PAPER_EXACT
PH = CouplingConvention.PHYSICAL
L, C, P, V, VG = 20e-6, 29e-6, 1000.0, 48.0, 110.0


def _single(P=P):
    spec = NetworkSpec.uniform(1, P=P)
    op = solve_operating_point(spec)
    return build_single(spec.converters[0], spec.loads[0], spec.source, op)


def test_single_converter_matrix():
    ss = _single()
    assert ss.state_labels == ("v1", "i1")
    assert ss.A[0, 0] == pytest.approx(P / (C * V**2), rel=1e-15)
    assert ss.A[0, 0] == pytest.approx(1.4967e4, rel=1e-4)
    # same entry from a central difference of the load current P/v
    h = 1e-4
    dI_dv = (P / (V + h) - P / (V - h)) / (2 * h)
    assert ss.A[0, 0] == pytest.approx(-dI_dv / C, rel=1e-7)
    assert np.array_equal(ss.B[:, 0], [0.0, 5.5e6])
    assert ss.A[1, 0] == -1 / L and ss.A[0, 1] == 1 / C and ss.A[1, 1] == 0


def test_single_zero_power():
    ss = _single(P=0.0)
    assert np.array_equal(ss.A, [[0, 1 / C], [-1 / L, 0]])
    lam = eigenvalues(ss.A).eigenvalues
    assert np.allclose(lam.real, 0, atol=1e-9)
    assert lam[0].imag == pytest.approx(41523.5, rel=1e-4)
    assert lam[0].imag == pytest.approx(1 / np.sqrt(L * C), rel=1e-12)


def test_open_loop_single_is_unstable():
    spec = eigenvalues(_single().A)
    assert spec.max_real_part == pytest.approx(7.483e3, rel=1e-3)
    assert not is_stable(spec)


@pytest.mark.parametrize(
    "lam, margin, expected",
    [([-1 + 2j, -1 - 2j], 0.0, True), ([7.483e3 + 4.084e4j, 7.483e3 - 4.084e4j], 0.0, False), ([-0.5], 1.0, False)],
)
def test_is_stable(lam, margin, expected):
    assert is_stable(Spectrum(np.array(lam)), margin) is expected


def test_eigenvalue_order_and_domain():
    assert np.array_equal(eigenvalues(np.diag([-1.0, -2.0])).eigenvalues, [-1, -2])
    lam = eigenvalues(np.array([[0.0, -1.0], [1.0, 0.0]])).eigenvalues
    assert lam[0].imag > 0 > lam[1].imag
    with pytest.raises(ValueError):
        eigenvalues(np.array([[np.nan, 0], [0, 1]]))
    with pytest.raises(ValueError):
        eigenvalues(np.ones((2, 3)))


def _rel_match(a, b):
    a, b = np.asarray(a), np.asarray(b)
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return np.max(cost[r, c] / np.maximum(np.abs(b[c]), 1e-300))


@settings(max_examples=100, deadline=None)
@given(
    lL=st.floats(np.log(1e-6), np.log(1e-3)),
    lC=st.floats(np.log(1e-6), np.log(1e-3)),
    P=st.floats(0.0, 5000.0),
    V=st.floats(12.0, 400.0),
)
def test_spectrum_matches_closed_form(lL, lC, P, V):
    L, C = np.exp(lL), np.exp(lC)
    A = np.array([[P / (C * V**2), 1 / C], [-1 / L, 0.0]])
    assert _rel_match(eigenvalues(A).eigenvalues, single_converter_eigenvalues(P, C, L, V)) < 1e-9


def test_backward_error_small():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(8, 8))
    lam = eigenvalues(A).eigenvalues
    for z in lam:
        smin = np.linalg.svd(A - z * np.eye(8), compute_uv=False)[-1]
        assert smin <= 1e-10 * np.linalg.norm(A, 2)


def test_network_paper_exact_n2():
    spec = NetworkSpec.uniform(2, R=0.4)
    op = nominal_operating_point(spec)
    A = build_network(spec, op, PE).A
    D = op.D[0]
    assert A[2, 0] == pytest.approx(-D * 0.4 / L, rel=1e-15)
    assert A[0, 2] == pytest.approx(-D * 0.4 / L, rel=1e-15)
    assert A[2, 2] == pytest.approx(-2 * D * 0.4 / L, rel=1e-15)
    assert A[0, 0] == pytest.approx(-D * 0.4 / L, rel=1e-15)
    assert A[1, 1] == pytest.approx(P / (C * V**2))
    assert A[0, 3] == A[1, 2] == A[1, 3] == A[3, 0] == A[3, 1] == 0


def test_network_min_pattern_n3():
    spec = NetworkSpec.uniform(3, R=0.2)
    op = nominal_operating_point(spec)
    A = build_network(spec, op, PE).A
    sub = A[np.ix_([0, 2, 4], [0, 2, 4])]
    # hand derivation: segment j carries the currents of converters j..n
    expected = -(op.D[0] * 0.2 / L) * np.array([[1, 1, 1], [1, 2, 2], [1, 2, 3]])
    assert np.allclose(sub, expected, rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 6), Ps=st.lists(st.floats(0.0, 2000.0), min_size=6, max_size=6))
def test_zero_coupling_factorizes(n, Ps):
    loads = tuple(CPLoad(p) for p in Ps[:n])
    spec = NetworkSpec(SourceParams(VG), LineNetwork(n, 0.0), (ConverterParams(L, C),) * n, loads)
    op = solve_operating_point(spec)
    lam = eigenvalues(build_network(spec, op).A).eigenvalues
    ref = np.concatenate([single_converter_eigenvalues(p, C, L, V) for p in Ps[:n]])
    assert _rel_match(lam, ref) < 1e-9


def test_permutation_invariance():
    loads = (CPLoad(300.0), CPLoad(900.0), CPLoad(600.0))
    convs = (ConverterParams(20e-6, 29e-6), ConverterParams(30e-6, 20e-6), ConverterParams(10e-6, 50e-6))
    spec = NetworkSpec(SourceParams(VG), LineNetwork(3, 0.0), convs, loads)
    perm = [2, 0, 1]
    spec_p = NetworkSpec(SourceParams(VG), LineNetwork(3, 0.0), tuple(convs[j] for j in perm), tuple(loads[j] for j in perm))
    a = eigenvalues(build_network(spec, solve_operating_point(spec)).A).eigenvalues
    b = eigenvalues(build_network(spec_p, solve_operating_point(spec_p)).A).eigenvalues
    assert np.allclose(a, b, rtol=1e-10)


def test_physical_coupling_carries_duty(spec2):
    spec = spec2.with_R(0.3)
    op = solve_operating_point(spec, PH)
    ss = build_network(spec, op, PH)
    D = op.D
    assert ss.A[0, 2] == pytest.approx(-D[0] * 0.3 * D[1] / L)
    assert ss.B[0, 1] == pytest.approx(-D[0] * 0.3 * op.Ibar[1] / L)


def test_physical_linearization_matches_finite_difference(spec2):
    # oracle: differentiate the averaged RHS numerically
    spec = spec2.with_R(0.3)
    op = solve_operating_point(spec, PH)
    ss = build_network(spec, op, PH)
    M = np.array([[1.0, 1.0], [1.0, 2.0]])

    def f(x, d):
        i, v = x[[0, 2]], x[[1, 3]]
        u = VG - 0.3 * M @ (d * i)
        di = (d * u - v) / L
        dv = (i - P / v) / C
        return np.array([di[0], dv[0], di[1], dv[1]])

    x0 = np.array([op.Ibar[0], op.Vbar[0], op.Ibar[1], op.Vbar[1]])
    J = np.zeros((4, 4))
    Jd = np.zeros((4, 2))
    for j in range(4):
        h = 1e-6 * max(1.0, abs(x0[j]))
        e = np.zeros(4)
        e[j] = h
        J[:, j] = (f(x0 + e, op.D) - f(x0 - e, op.D)) / (2 * h)
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-7
        Jd[:, j] = (f(x0, op.D + e) - f(x0, op.D - e)) / 2e-7
    assert np.allclose(ss.A, J, rtol=1e-6, atol=1e-3)
    assert np.allclose(ss.B, Jd, rtol=1e-6, atol=1e-3)


def test_paper_b_uses_output_voltage(spec2):
    op = nominal_operating_point(spec2)
    ss = build_network(spec2, op, paper_b=True)
    assert ss.B[0, 0] == pytest.approx(V / L)
    assert ss.B[2, 1] == pytest.approx(V / L)


def test_output_shunt_boundary_zeroes_diagonal(spec2):
    op = nominal_operating_point(spec2)
    ss = build_network(spec2, op)
    out = apply_design(ss, spec2, op, OutputShuntR(V**2 / P))
    assert out.A[1, 1] == 0.0 and out.A[3, 3] == 0.0
    diag = [apply_design(ss, spec2, op, OutputShuntR(1 / g)).A[1, 1] for g in np.linspace(0.01, 1.0, 20)]
    assert np.all(np.diff(diag) < 0)


def test_apply_none_is_identity(spec2):
    op = nominal_operating_point(spec2)
    ss = build_network(spec2, op)
    assert apply_design(ss, spec2, op, None) is ss


def test_shunt_c_entries_n2():
    spec = NetworkSpec.uniform(2, R=0.5)
    op = nominal_operating_point(spec)
    Cs = 1e-3
    ss = apply_design(build_network(spec, op), spec, op, InputShuntC(Cs))
    A = ss.A
    g = 1 / (Cs * 0.5)
    assert ss.state_labels == ("vc1", "i1", "v1", "vc2", "i2", "v2")
    assert A[0, 0] == pytest.approx(-2 * g) and A[0, 3] == pytest.approx(g)
    assert A[3, 0] == pytest.approx(g) and A[3, 3] == pytest.approx(-g)
    assert A[0, 1] == pytest.approx(-1 / Cs) and A[1, 0] == pytest.approx(op.D[0] / L)
    assert ss.B[1, 0] == pytest.approx(VG / L)


def test_shunt_c_rejects_stiff_feeder(spec2):
    op = nominal_operating_point(spec2)
    with pytest.raises(ValueError):
        apply_design(build_network(spec2, op), spec2, op, InputShuntC(1e-3))


def test_huge_shunt_c_decouples(spec2, gains2):
    spec = spec2.with_R(0.5)
    op = nominal_operating_point(spec)
    ss = apply_design(build_network(spec, op), spec, op, InputShuntC(1e6))
    F = assemble_global(gains2, 2, ss.state_labels)
    lam = eigenvalues(closed_loop(ss, F).A).eigenvalues
    # drop the slow node modes; the rest must be the standalone closed loops
    iso_ss = build_network(spec.with_R(0.0), op)
    iso = eigenvalues(closed_loop(iso_ss, assemble_global(gains2, 2)).A).eigenvalues
    fast = lam[np.abs(lam) > 1.0]
    assert len(fast) == 4
    assert _rel_match(fast, iso) < 1e-3


def test_rc_leg_keeps_v_row_signs(spec2, gains2):
    spec = spec2.with_R(0.5)
    op = nominal_operating_point(spec)
    base = closed_loop(build_network(spec, op), assemble_global(gains2, 2))
    aug = apply_design(build_network(spec, op), spec, op, InputGroundRC(1.0, 100e-6))
    aug = closed_loop(aug, assemble_global(gains2, 2, aug.state_labels))
    idx = [aug.index(lab) for lab in ("i1", "v1", "i2", "v2")]
    assert np.array_equal(sign_structure(aug.A)[np.ix_(idx, idx)][[1, 3]], sign_structure(base.A)[[1, 3]])


def test_rc_leg_vanishing_capacitor_limit(spec2):
    spec = spec2.with_R(0.5)
    op = nominal_operating_point(spec)
    base = build_network(spec, op)
    aug = apply_design(base, spec, op, InputGroundRC(1.0, 1e-12))
    lam = eigenvalues(aug.A).eigenvalues
    slow = lam[np.argsort(np.abs(lam))[:4]]
    # the leg's own modes run off to -inf; the converter modes are unchanged
    assert _rel_match(slow, eigenvalues(base.A).eigenvalues) < 1e-4


def test_schur_examples():
    r = schur_determinant_check(np.eye(4), 2)
    assert r.det_schur == r.det_direct == 1.0 and r.agree
    M1 = np.array([[2.0, 1.0], [0.5, 3.0]])
    M2 = np.array([[-1.0, 4.0], [2.0, 1.0]])
    blk = np.block([[M1, np.zeros((2, 2))], [np.zeros((2, 2)), M2]])
    r = schur_determinant_check(blk, 2)
    assert r.det_schur == pytest.approx(np.linalg.det(M1) * np.linalg.det(M2))
    with pytest.raises(SingularBlockError):
        schur_determinant_check(np.block([[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.eye(2)]]), 2)


def test_sign_structure_examples(spec2, gains2):
    pat = sign_structure(_single().A)
    assert pat.tolist() == [["+", "+"], ["-", "0"]]
    op = nominal_operating_point(spec2)
    pat = sign_structure(build_network(spec2, op).A, 2)
    assert pat[0, 2] == pat[2, 0] == pat[0, 3] == pat[1, 2] == "0"
    spec = spec2.with_R(0.4)
    cl = closed_loop(build_network(spec, op), assemble_global(gains2, 2))
    printed = [["-", "-", "-", "0"], ["+", "+", "0", "0"], ["-", "0", "-", "-"], ["0", "0", "+", "+"]]
    assert sign_structure(cl.A, 2).tolist() == printed


def test_statespace_validation():
    with pytest.raises(ValueError):
        StateSpace(np.zeros((2, 3)), np.zeros((2, 1)), ("a", "b"))
    with pytest.raises(ValueError):
        StateSpace(np.zeros((2, 2)), np.zeros((3, 1)), ("a", "b"))
    with pytest.raises(ValueError):
        StateSpace(np.zeros((2, 2)), np.zeros((2, 1)), ("a", "a"))
