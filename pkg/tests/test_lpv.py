import numpy as np
import pytest

from lpvcert.conditions import CASE_A0, CASE_AP, CASE_B, CASE_C, case_study
from lpvcert.lpv import (OracleBudgetError, block_diag_compose, from_affine_scalar, from_vertices,
                         load_system, product_radius_oracle, save_system, simulate, system_from_dict)


def scalar(a0, ap, gamma, b=1.0, c=1.0):
    return from_affine_scalar([[a0]], [[ap]], gamma, [[b]], [[c]])


def test_affine_embedding_midpoint():
    s = case_study(1.0)
    assert np.allclose(s.xi(0.0), [0.5, 0.5])
    assert s.strictly_polytopic
    assert np.allclose(s.evaluate_A(0.0), CASE_A0, atol=1e-15)


def test_vertex_attainment():
    s = case_study(0.5)
    assert np.allclose(s.xi(0.5), [0.0, 1.0])
    assert np.allclose(s.evaluate_A(0.5), s.vertices[1])
    assert np.allclose(s.vertices[1], CASE_A0 + 0.5 * CASE_AP)
    assert np.allclose(s.evaluate_A(-0.5), s.vertices[0])


def test_zero_direction_gives_equal_vertices():
    s = from_affine_scalar(CASE_A0, np.zeros((4, 4)), 2.0, CASE_B, CASE_C)
    assert np.array_equal(s.vertices[0], s.vertices[1])


def test_affine_errors():
    with pytest.raises(ValueError):
        scalar(0.5, 1.0, 0.0)
    with pytest.raises(ValueError):
        from_affine_scalar(np.eye(2), np.eye(3), 1.0, np.ones((2, 1)), np.ones((1, 2)))
    with pytest.raises(ValueError, match="outside"):
        case_study(0.5).evaluate_A(0.6)


def test_affine_consistency(rng):
    s = case_study(0.8)
    for p in rng.uniform(-0.8, 0.8, 50):
        assert np.allclose(s.evaluate_A(p), CASE_A0 + p * CASE_AP, atol=1e-12, rtol=0)


def test_three_copies():
    s = case_study(1.0, copies=3)
    assert (s.n_x, s.n_u, s.n_y, s.N) == (12, 3, 3, 8)
    assert s.strictly_polytopic


def test_single_compose_is_identity():
    s = case_study(1.0)
    assert block_diag_compose([s]) is s
    with pytest.raises(ValueError):
        block_diag_compose([])


def test_compose_two_scalars():
    a = from_vertices([[[0.1]], [[0.2]]], [[1.0]], [[1.0]])
    b = from_vertices([[[0.3]], [[0.4]]], [[1.0]], [[1.0]])
    s = block_diag_compose([a, b])
    expect = [np.diag(d) for d in [(0.1, 0.3), (0.1, 0.4), (0.2, 0.3), (0.2, 0.4)]]
    assert s.N == 4
    assert all(np.array_equal(V, E) for V, E in zip(s.vertices, expect))
    assert np.allclose(s.xi([0.25, 0.75, 0.5, 0.5]), [0.125, 0.125, 0.375, 0.375])


def test_simplex_validity(rng):
    s = case_study(1.0, copies=2)
    P = s.params.sample(rng, 1000)
    X = s.xi(P)
    assert np.all(X >= -1e-12)
    assert np.allclose(X.sum(axis=1), 1, atol=1e-12)


def test_simulate_zero_vertices():
    s = from_vertices(np.zeros((2, 2, 2)), [[1.0], [2.0]], [[1.0, 0.0]])
    tr = simulate(s, [5.0, -1.0], [[0.5, 0.5]], [[3.0]])
    assert np.allclose(tr.states[1], [3.0, 6.0])


def test_simulate_scalar_parameter():
    s = scalar(0.0, 1.0, 1.0)
    tr = simulate(s, [1.0], [0.5, 0.5])
    assert tr.states[2, 0] == pytest.approx(0.25)


def test_simulate_matches_matrix_power():
    s = case_study(0.5)
    tr = simulate(s, np.eye(4)[0], np.zeros(5))
    assert np.allclose(tr.states[5], np.linalg.matrix_power(CASE_A0, 5) @ np.eye(4)[0], atol=1e-14)


def test_simulate_errors():
    s = case_study(0.5)
    with pytest.raises(ValueError):
        simulate(s, np.ones(3), [0.0])
    with pytest.raises(ValueError):
        simulate(s, np.ones(4), [0.0], mode="closed_loop")
    with pytest.raises(ValueError):
        simulate(s, np.ones(4), [0.0, 0.1], inputs=np.zeros((3, 1)))


def test_product_radius_examples():
    A = np.array([[0.5, 1.0], [0.0, -0.7]])
    assert product_radius_oracle(from_vertices([A], np.ones((2, 1)), np.ones((1, 2))), 3) == pytest.approx(0.7)
    s = from_vertices([[[0.5]], [[2.0]]], [[1.0]], [[1.0]])
    assert product_radius_oracle(s, 4) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        product_radius_oracle(s, 0)


def test_product_radius_case_study_monotone():
    s = case_study(0.75)
    bounds = [product_radius_oracle(s, m) for m in range(1, 9)]
    assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(bounds, bounds[1:]))
    # brute force over all words of length <= 4
    import itertools
    ref = 0.0
    for L in range(1, 5):
        for w in itertools.product(range(2), repeat=L):
            M = np.eye(4)
            for i in w:
                M = s.vertices[i] @ M
            ref = max(ref, np.max(np.abs(np.linalg.eigvals(M))) ** (1 / L))
    assert bounds[3] == pytest.approx(ref, rel=1e-9)


def test_product_radius_budget():
    s = case_study(1.0, copies=2)
    with pytest.raises(OracleBudgetError) as e:
        product_radius_oracle(s, 12, budget=100)
    assert e.value.partial_bound > 0


def test_json_roundtrip(tmp_path):
    s = case_study(0.9, copies=2)
    path = tmp_path / "sys.json"
    save_system(s, path)
    t = load_system(path)
    assert np.array_equal(s.vertices, t.vertices) and np.array_equal(s.B, t.B)
    u = load_system(path, gamma=0.3)
    assert np.allclose(u.vertices, case_study(0.3, copies=2).vertices)
    v = system_from_dict({"kind": "vertices", "A": [[[0.1]], [[0.2]]], "B": [[1]], "C": [[1]]})
    assert v.N == 2 and v.strictly_polytopic
    with pytest.raises(ValueError):
        system_from_dict({"kind": "nope"})
