import math

import numpy as np
import pytest

from cplnet import analysis as an
from cplnet.control import ConverterGain, GlobalFeedback
from cplnet.model import CouplingConvention, NetworkSpec
from cplnet.smallsignal import (
    InputGroundRC,
    OutputShuntR,
    eigenvalues,
    schur_determinant_check,
)

PE = CouplingConvention.PAPER_EXACT


@pytest.fixture(scope="module")
def search2(spec2, gains2):
    return an.max_stable_R(spec2, gains2)


def test_threshold_n2(spec2, gains2, search2):
    R = search2.R_star
    assert search2.finite and not search2.multiple_crossings
    assert search2.bracket[1] - search2.bracket[0] <= 1e-6
    assert an.max_real_at(spec2, gains2, 2 * R) > 0
    # independent dense scan around the result
    grid = np.linspace(R - 0.01, R + 0.01, 2001)
    vals = np.array([an.max_real_at(spec2, gains2, r) for r in grid])
    first = grid[np.argmax(vals >= 0)]
    assert abs(first - R) <= (grid[1] - grid[0]) + 1e-6
    assert an.max_real_at(spec2, gains2, R - 2e-6) < 0


def test_threshold_sentinel(spec2, gains2, search2):
    s = an.max_stable_R(spec2, gains2, R_max_search=0.5 * search2.R_star)
    assert s.R_star == math.inf and not s.finite


def test_threshold_single_converter(spec1, gain):
    s = an.max_stable_R(spec1, GlobalFeedback((gain,)))
    grid = np.linspace(0, 10, 1000)
    vals = np.array([an.max_real_at(spec1, GlobalFeedback((gain,)), r) for r in grid])
    if np.all(vals < 0):
        assert s.R_star == math.inf
    else:
        j = np.argmax(vals >= 0)
        assert grid[j - 1] <= s.R_star <= grid[j]


def test_threshold_requires_individual_stability(spec2):
    with pytest.raises(an.PreconditionError):
        an.max_stable_R(spec2, ConverterGain(0.0, 0.0))


def test_determinant_witness(spec2, gains2, search2):
    for R in (search2.R_star * (1 + 1e-3), 1.5 * search2.R_star, 2 * search2.R_star):
        A = an.closed_loop_model(spec2.with_R(R), gains2).A
        chk = schur_determinant_check(A, 2)
        assert chk.agree and chk.det_direct < 0


def test_boundary_strictly_decreasing(spec2, gain):
    b = an.stability_boundary(spec2, gain, range(2, 9), grid_points=400)
    rs = [r for _, r in b.points]
    assert all(math.isfinite(r) and r > 0 for r in rs)
    assert all(a > b for a, b in zip(rs, rs[1:]))
    assert [n for n, _ in b.points] == list(range(2, 9))


def test_critical_n(spec2, gain, search2):
    R = search2.R_star
    assert an.critical_n(spec2, gain, 2 * R).N0 == 2
    half = an.critical_n(spec2, gain, R / 2)
    assert half.found and half.N0 > 2
    assert half.max_real_parts[-1] > 0 and all(m < 0 for m in half.max_real_parts[:-1])
    tiny = an.critical_n(spec2, gain, 1e-6, n_max=50)
    assert not tiny.found and len(tiny.max_real_parts) == 50
    assert len(tiny.spectrum) == 100
    with pytest.raises(ValueError):
        an.critical_n(spec2, gain, 0.0)


def test_output_shunt_efficiency_identities(spec2, gains2):
    rep = an.evaluate_output_shunt(spec2, gains2, 48.0**2 / 1000.0)
    assert rep.loss_watts == pytest.approx(2000.0) and rep.efficiency == pytest.approx(0.5)
    rep = an.evaluate_output_shunt(spec2, gains2, 48.0**2 / 2000.0)
    assert rep.efficiency == pytest.approx(1 / 3)


def test_output_shunt_bound(spec2, gains2):
    grid = np.geomspace(0.1, 10.0, 30) * 48.0**2 / 1000.0
    best, reports = an.least_lossy_stabilizing_shunt(spec2, gains2, grid)
    assert best is not None
    for r in reports:
        if r.certified:
            assert r.efficiency <= 0.5 + 1e-6


def test_large_R_limit_of_output_shunt(spec2, gains2):
    # slow modes tend to the v-diagonal entries P/(C V^2) - 1/(C R_s)
    Rs = 2.0
    lim = an.large_R_limit(spec2, gains2, design=OutputShuntR(Rs))
    expected = 1000 / (29e-6 * 48**2) - 1 / (29e-6 * Rs)
    assert np.allclose(lim.eigenvalues.real, expected) and np.allclose(lim.eigenvalues.imag, 0)
    A = an.closed_loop_model(spec2.with_R(1e5), gains2, design=OutputShuntR(Rs)).A
    assert eigenvalues(A).max_real_part == pytest.approx(expected, rel=1e-3)


def test_input_rc_never_fixes_instability(spec2, gains2, search2):
    rep = an.evaluate_input_rc(spec2, gains2, 1.0, 100e-6, grid_points=300)
    assert math.isfinite(rep.R_star)
    small = an.evaluate_input_rc(spec2, gains2, 1.0, 1e-12, grid_points=300)
    assert small.R_star == pytest.approx(search2.R_star, rel=1e-2)


def test_min_Cs_default_instance_not_stabilizable(spec2, gains2):
    with pytest.raises(an.NotStabilizable) as e:
        an.min_stabilizing_Cs(spec2, gains2)
    assert e.value.worst_R > 1.0
    assert e.value.spectrum.max_real_part > 0


def test_min_Cs_inactive_constraint(spec1, gain):
    R_set = np.logspace(-2, 0, 5)
    rep = an.min_stabilizing_Cs(spec1, GlobalFeedback((gain,)), R_set, (1e-9, 1.0))
    assert rep.C_s_star == 1e-9 and rep.certified


def test_decoupling_gap(spec2, gains2):
    assert an.decoupling_gap(spec2, gains2, 1e-3, 0.0) <= 1e-9
    for R in (0.1, 0.5, 2.0):
        gaps = [an.decoupling_gap(spec2, gains2, c, R) for c in np.geomspace(1e-4, 1.0, 5)]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
    w0 = 0.5 / math.sqrt(20e-6 * 29e-6)
    assert an.decoupling_gap(spec2, gains2, 1.0, 0.5) < 1e-2 * w0


def test_resolved_mode_reports_infeasible_as_unstable(spec2, gains2):
    assert an.max_real_at(spec2, gains2, 5.0, op_mode="resolved") == math.inf
    with pytest.raises(ValueError):
        an.closed_loop_model(spec2, gains2, op_mode="bogus")


def test_gains_for_stretching(gain):
    assert len(an.gains_for(gain, 4)) == 4
    with pytest.raises(ValueError):
        an.gains_for(GlobalFeedback((gain, ConverterGain(0.0, 0.0))), 3)


def test_scan_is_map_agnostic(spec2, gains2):
    R = np.linspace(0, 2, 7)
    a = an.scan_R(spec2, gains2, R)
    b = an.scan_R(spec2, gains2, R, map_fn=lambda f, xs: [f(x) for x in xs])
    assert np.array_equal(a, b)
