import numpy as np
import pytest

from lpvcert.conditions import (CONDITIONS, LMI_CONDITIONS, Certificate, build, case_study,
                                check_thm2_sampled, count_decision_vars, pair_grid, solve_condition)
from lpvcert.gains import t43_vertex_gains
from lpvcert.lpv import from_affine_scalar, from_vertices
from lpvcert.matcore import min_eigenvalue
from lpvcert.sdpfeas import FEASIBLE, INFEASIBLE

# closed-form counts evaluated by hand; stab_nec and lti_* are declared-variable sums
TABLE_III = {
    (2, 4, 1, 1): {"polyqs_l12": 52, "polyqs_l13": 52, "polyqs_l14": 20, "det_thm1": 20, "det_rem1": 60,
                   "stab_nec": 20, "stab_thm3": 52, "synth_t43": 28, "synth_t44": 132, "synth_daafouz": 60},
    (8, 12, 3, 3): {"polyqs_l12": 1776, "polyqs_l13": 1776, "polyqs_l14": 624, "det_thm1": 624,
                    "det_rem1": 2064, "stab_nec": 624, "stab_thm3": 1776, "synth_t43": 912,
                    "synth_t44": 13296, "synth_daafouz": 2064},
}


def lti(a, b=0.0, c=0.0):
    return from_vertices([[[a]]], [[b]], [[c]])


def status(cond, system, **kw):
    return solve_condition(cond, system, **kw)[0].status


@pytest.mark.parametrize("dims", list(TABLE_III))
def test_counts_match_table(dims):
    for cond, want in TABLE_III[dims].items():
        assert count_decision_vars(cond, *dims) == want, cond


def test_counts_match_compiler():
    for N, nx, nu in [(1, 1, 1), (2, 4, 1), (1, 4, 3), (3, 2, 3)]:
        rng = np.random.default_rng(N * 100 + nx)
        sys_ = from_vertices(rng.standard_normal((N, nx, nx)), rng.standard_normal((nx, nu)),
                             rng.standard_normal((nu, nx)))
        for cond in LMI_CONDITIONS:
            if cond.startswith("lti_") and N != 1:
                continue
            prob = build(cond, sys_)
            assert prob.num_scalars == count_decision_vars(cond, N, nx, nu, nu), cond
            assert prob.compile().num_scalars == prob.num_scalars


def test_count_errors():
    with pytest.raises(ValueError):
        count_decision_vars("nope", 2, 4)
    with pytest.raises(ValueError):
        count_decision_vars("polyqs_l14", 0, 4)


def test_build_errors():
    with pytest.raises(ValueError):
        build("lti_det", case_study(1.0))
    with pytest.raises(ValueError):
        build("thm2_sampled", case_study(1.0))
    with pytest.raises(ValueError):
        build("polyqs_l14", case_study(1.0), eps=0.0)
    with pytest.raises(ValueError):
        build("bogus", case_study(1.0))
    assert "thm2_sampled" in CONDITIONS


def test_block_counts():
    # one block per (i, j) plus positivity blocks where the condition requires them
    s = case_study(1.0)
    assert len(build("polyqs_l14", s).constraints) == 4
    assert len(build("det_thm1", s).constraints) == 6
    assert len(build("stab_nec", s).constraints) == 6
    assert {c.expr.shape[0] for c in build("synth_t44", s).constraints} == {12}


def test_case_study_stability_verdicts():
    assert status("polyqs_l14", case_study(0.5)) == FEASIBLE
    assert status("polyqs_l14", case_study(0.75)) == INFEASIBLE


def test_case_study_detectability_verdicts():
    assert status("det_thm1", case_study(4.0)) == FEASIBLE
    assert status("det_thm1", case_study(4.5)) == INFEASIBLE


def test_case_study_synthesis_verdicts():
    assert status("synth_t43", case_study(1.0)) == FEASIBLE
    assert status("synth_t43", case_study(1.3)) == INFEASIBLE


def test_scalar_examples():
    assert status("det_thm1", lti(2.0, c=1.0)) == FEASIBLE
    assert status("stab_nec", lti(2.0, b=1.0)) == FEASIBLE
    assert status("det_thm1", lti(2.0)) == INFEASIBLE
    assert status("lti_det", lti(0.5)) == FEASIBLE


def test_implication_t43_to_l14():
    s = case_study(1.0)
    out, cert = solve_condition("synth_t43", s)
    assert out.status == FEASIBLE
    K = t43_vertex_gains(cert.family("Y"), cert.family("S"))
    closed = s.with_vertices(s.vertices + np.einsum("ab,kbc->kac", s.B, K))
    S = cert.family("S")
    for i in range(2):
        for j in range(2):
            M = closed.vertices[i] @ S[i]
            assert min_eigenvalue(np.block([[S[i], M.T], [M, S[j]]])) > 0
    assert status("polyqs_l14", closed) == FEASIBLE


def test_thm3_implies_necessary_condition():
    for g in (0.5, 1.0):
        s = case_study(g)
        if status("stab_thm3", s) == FEASIBLE:
            assert status("stab_nec", s) == FEASIBLE


def test_thm2_sampled_examples():
    # constant case is the LTI stabilizability LMI at one point
    s = lti(0.5, b=1.0)
    m = check_thm2_sampled(s, [np.eye(1)], [(np.array([1.0]), np.array([1.0]))])
    assert m == pytest.approx([1 - 0.25 + 1])
    s = lti(2.0, b=0.0)
    assert check_thm2_sampled(s, [np.eye(1)], [(np.array([1.0]), np.array([1.0]))])[0] == pytest.approx(-3.0)
    with pytest.raises(ValueError):
        check_thm2_sampled(s, [-np.eye(1)], [(np.array([1.0]), np.array([1.0]))])
    with pytest.raises(ValueError):
        check_thm2_sampled(s, [np.eye(1)], [])


def test_thm2_sampled_on_thm3_certificate():
    s = case_study(1.0)
    out, cert = solve_condition("stab_thm3", s)
    assert out.status == FEASIBLE
    grid = pair_grid(s, 21)
    assert len(grid) == 441
    assert np.all(check_thm2_sampled(s, cert.lyapunov(), grid) > 0)


def test_certificate_roundtrip(tmp_path):
    out, cert = solve_condition("det_rem1", case_study(2.0), gamma=2.0)
    assert cert.N == 2
    path = tmp_path / "c.json"
    cert.save(path)
    back = Certificate.load(path)
    assert back.condition == "det_rem1" and back.gamma == 2.0
    for k, v in cert.values.items():
        assert np.array_equal(np.atleast_2d(v), back.values[k])
    t44 = solve_condition("synth_t44", case_study(0.8))[1]
    assert len(t44.pair_family("X")) == 2 and t44.pair_family("X")[1][0].shape == (4, 4)


def test_affine_builder_scalar_family():
    s = from_affine_scalar([[0.5]], [[1.0]], 0.4, [[1.0]], [[1.0]])
    assert status("polyqs_l14", s) == FEASIBLE
    s = from_affine_scalar([[0.5]], [[1.0]], 0.6, [[1.0]], [[1.0]])
    assert status("polyqs_l14", s) == INFEASIBLE
