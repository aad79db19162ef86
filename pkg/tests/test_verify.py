import numpy as np
import pytest

from lpvcert.conditions import Certificate, case_study, solve_condition
from lpvcert.gains import gain_from_certificate
from lpvcert.lpv import from_vertices
from lpvcert.verify import (VerificationReport, check_vertex_certificate, default_a3, default_grid_points,
                            lti_ground_truth, monte_carlo_descent)


def lti(a, b=0.0, c=0.0):
    return from_vertices([[[a]]], [[b]], [[c]])


@pytest.fixture(scope="module")
def l14():
    s = case_study(0.5)
    out, cert = solve_condition("polyqs_l14", s)
    assert out.feasible
    return s, cert


def test_polyqs_certificate_passes(l14):
    s, cert = l14
    rep = check_vertex_certificate(s, cert)
    assert rep.mode == "open" and len(rep.vertex_margins) == 4
    assert all(k[2] == "vertex" for k in rep.vertex_margins)
    assert rep.passed


def test_negated_certificate_fails(l14):
    s, cert = l14
    neg = Certificate(cert.condition, {k: -v for k, v in cert.values.items()})
    assert not check_vertex_certificate(s, neg).passed


def test_scalar_error_system():
    s = lti(0.5, c=1.0)
    cert = Certificate("det_thm1", {"P_1": np.eye(1)})
    gain = gain_from_certificate(s, cert)
    assert gain.vertex_gains[0, 0, 0] == pytest.approx(-0.25)
    rep = check_vertex_certificate(s, cert, gain=gain)
    assert rep.mode == "error_system"
    # [[1, 0.25], [0.25, 1]] has smallest eigenvalue 0.75; its Schur complement is 1 - 0.0625
    assert rep.min_margin == pytest.approx(0.75)
    assert rep.passed


def test_mode_errors(l14):
    s, cert = l14
    with pytest.raises(ValueError):
        check_vertex_certificate(s, cert, mode="closed_loop")
    with pytest.raises(ValueError):
        check_vertex_certificate(s, cert, mode="sideways")
    obs = gain_from_certificate(case_study(0.5), solve_condition("det_thm1", case_study(0.5))[1])
    with pytest.raises(ValueError):
        check_vertex_certificate(s, cert, mode="closed_loop", gain=obs)
    with pytest.raises(ValueError):
        check_vertex_certificate(s, [np.eye(4)])


def test_stable_lti_descent_ratio():
    rep = monte_carlo_descent(lti(0.5), [np.eye(1)], num_seq=10, horizon=5, seed=0, a3=0.0)
    assert rep.mc_worst_ratio == pytest.approx(-0.75)
    assert rep.passed and rep.sequences_run == 10 and rep.horizon == 5


def test_zero_initial_state_is_vacuous():
    rep = monte_carlo_descent(lti(3.0), [np.eye(1)], num_seq=3, horizon=4, a3=0.0, x0=[0.0])
    assert rep.mc_worst_ratio == 0.0


def test_unstable_system_fails_descent():
    rep = monte_carlo_descent(lti(1.5), [np.eye(1)], num_seq=3, horizon=2, a3=0.0)
    assert rep.mc_worst_ratio == pytest.approx(1.25)
    assert not rep.passed


def test_thm3_closed_loop_monte_carlo():
    s = case_study(1.0)
    out, cert = solve_condition("stab_thm3", s)
    gain = gain_from_certificate(s, cert)
    rep = monte_carlo_descent(s, cert, gain, num_seq=1000, horizon=50, seed=42, a3=0.0)
    assert rep.mode == "closed_loop"
    assert all(k[2] == "grid" for k in rep.vertex_margins)
    assert rep.passed


def test_default_a3_and_grid():
    assert default_a3([np.eye(2) * 2], 0.5) == pytest.approx(0.5 * 0.5 * 4)
    assert default_a3([np.eye(2)], -1.0) == 0.0
    assert default_grid_points(case_study(1.0)) == 21
    assert default_grid_points(case_study(1.0, copies=3)) ** 6 <= 20000


def test_descent_is_seeded(l14):
    s, cert = l14
    a = monte_carlo_descent(s, cert, num_seq=20, horizon=10, seed=3)
    b = monte_carlo_descent(s, cert, num_seq=20, horizon=10, seed=3)
    assert a.mc_worst_ratio == b.mc_worst_ratio and a.a3_used == b.a3_used > 0


def test_report_export(tmp_path, l14):
    s, cert = l14
    rep = monte_carlo_descent(s, cert, num_seq=5, horizon=3)
    d = rep.to_dict()
    assert d["passed"] and d["schema_version"] == 1 and len(d["vertex_margins"]) == 4
    rep.save(tmp_path / "r.json")
    assert VerificationReport("open").passed is False


def test_lti_ground_truth_examples():
    assert lti_ground_truth([[0.5]], C=[[0.0]])["detectable"]
    assert not lti_ground_truth([[2.0]], C=[[0.0]])["detectable"]
    assert lti_ground_truth(np.diag([2.0, 0.5]), B=[[1.0], [0.0]])["stabilizable"]
    assert not lti_ground_truth(np.diag([2.0, 0.5]), B=[[0.0], [1.0]])["stabilizable"]
    assert lti_ground_truth(np.diag([2.0, 0.5]), C=[[1.0, 0.0]])["detectable"]
    with pytest.raises(ValueError):
        lti_ground_truth(np.ones((2, 3)))
