import numpy as np
import pytest

from kooph2.edmd import LinearPredictor
from kooph2.polytope import (
    build_polytope,
    convex_combine,
    entry_stats,
    load_polytope,
    save_polytope,
    spread_table,
)


def model(A, B=None, Bw=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.zeros((n, 1)) if B is None else B
    Bw = np.ones((n, 1)) if Bw is None else Bw
    return LinearPredictor(A=A, B=B, B_w=Bw)


def worked_example_models():
    # two entries vary across the fleet, the other two are common
    b, d = 0.3, 0.8
    a_vals = [0.5, 1.1, 0.9]
    c_vals = [-0.2, 0.25, 0.1]
    return [model([[a, b], [c, d]]) for a, c in zip(a_vals, c_vals)], (b, d)


def test_entry_stats_single_model():
    m = model([[1.0, 2.0], [3.0, 4.0]])
    stats = entry_stats([m])
    mx, mn, mean = stats["A"]
    assert np.array_equal(mx, m.A)
    assert np.array_equal(mn, m.A)
    assert np.array_equal(mean, m.A)


def test_entry_stats_two_models():
    m1 = model([[1.0, 0.0], [0.0, 0.0]])
    m2 = model([[3.0, 0.0], [0.0, 0.0]])
    mx, mn, mean = entry_stats([m1, m2])["A"]
    assert mx[0, 0] == 3.0 and mn[0, 0] == 1.0 and mean[0, 0] == 2.0


def test_entry_stats_matches_bruteforce_scan():
    rng = np.random.default_rng(0)
    models = [model(rng.standard_normal((3, 3)), rng.standard_normal((3, 2)))
              for _ in range(4)]
    stats = entry_stats(models)
    for name, pick in (("A", lambda m: m.A), ("B", lambda m: m.B)):
        mx, mn, mean = stats[name]
        for i in range(pick(models[0]).shape[0]):
            for j in range(pick(models[0]).shape[1]):
                vals = [pick(m)[i, j] for m in models]
                assert mx[i, j] == max(vals)
                assert mn[i, j] == min(vals)
                assert mean[i, j] == pytest.approx(sum(vals) / 4)


def test_entry_stats_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        entry_stats([model([[1.0]]), model([[1.0, 0.0], [0.0, 1.0]])])


def test_h0_single_mean_vertex():
    models, _ = worked_example_models()
    poly = build_polytope(models, 0)
    assert poly.num_vertices == 1
    mean = entry_stats(models)["A"][2]
    assert np.allclose(poly.vertices[0][0], mean)
    assert poly.varied_entries == []


def test_worked_two_entry_example_reproduces_vertices():
    models, (b, d) = worked_example_models()
    poly = build_polytope(models, 2)
    assert poly.num_vertices == 4
    assert set(poly.varied_entries) == {("A", 0, 0), ("A", 1, 0)}
    a_max, a_min = 1.1, 0.5
    c_max, c_min = 0.25, -0.2
    expected = {
        (a_max, c_max), (a_max, c_min), (a_min, c_min), (a_min, c_max)
    }
    got = {(v[0][0, 0], v[0][1, 0]) for v in poly.vertices}
    assert got == expected
    # frozen entries stay at their (common) values in every vertex
    for A, _, _ in poly.vertices:
        assert A[0, 1] == pytest.approx(b)
        assert A[1, 1] == pytest.approx(d)


def test_vertex_count_and_distinctness():
    rng = np.random.default_rng(1)
    models = [model(rng.standard_normal((3, 3))) for _ in range(5)]
    for h in (0, 1, 2, 3):
        poly = build_polytope(models, h)
        assert poly.num_vertices == 2**h
        seen = {tuple(v[0].ravel()) for v in poly.vertices}
        assert len(seen) == 2**h  # all spreads strictly positive here


def test_varied_entries_take_extremes_others_mean():
    rng = np.random.default_rng(2)
    models = [model(rng.standard_normal((4, 4)), rng.standard_normal((4, 2)))
              for _ in range(6)]
    poly = build_polytope(models, 3)
    stats = entry_stats(models)
    varied = set(poly.varied_entries)
    for A, B, Bw in poly.vertices:
        for (i, j), v in np.ndenumerate(A):
            if ("A", i, j) in varied:
                assert v in (stats["A"][0][i, j], stats["A"][1][i, j])
            else:
                assert v == pytest.approx(stats["A"][2][i, j])
        # non-selected blocks are frozen at their means
        assert np.allclose(B, stats["B"][2])
        assert np.allclose(Bw, stats["B_w"][2])


def test_source_models_inside_bounding_box():
    rng = np.random.default_rng(3)
    models = [model(rng.standard_normal((3, 3))) for _ in range(4)]
    poly = build_polytope(models, 2)
    for name, i, j in poly.varied_entries:
        vals = [v[0][i, j] for v in poly.vertices]
        for m in models:
            assert min(vals) - 1e-12 <= m.A[i, j] <= max(vals) + 1e-12


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    models = [model(rng.standard_normal((3, 3))) for _ in range(5)]
    poly1 = build_polytope(models, 2)
    poly2 = build_polytope(models[::-1], 2)
    assert poly1.varied_entries == poly2.varied_entries
    for v1, v2 in zip(poly1.vertices, poly2.vertices):
        assert np.allclose(v1[0], v2[0])


def test_h_out_of_range():
    models, _ = worked_example_models()
    with pytest.raises(ValueError):
        build_polytope(models, 5)  # only 4 entries in the A block
    with pytest.raises(ValueError):
        build_polytope(models, -1)


def test_tie_break_row_major():
    # equal spreads everywhere: ranking must follow row-major order
    m1 = model(np.zeros((2, 2)))
    m2 = model(np.ones((2, 2)))
    table = spread_table([m1, m2])
    assert [(r[1], r[2]) for r in table] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    poly = build_polytope([m1, m2], 2)
    assert poly.varied_entries == [("A", 0, 0), ("A", 0, 1)]


def test_blocks_selection_b():
    rng = np.random.default_rng(5)
    models = [model(np.eye(2), rng.standard_normal((2, 1))) for _ in range(3)]
    poly = build_polytope(models, 1, blocks=("B",))
    assert poly.varied_entries[0][0] == "B"
    for A, _, _ in poly.vertices:
        assert np.allclose(A, np.eye(2))


def test_convex_combine_one_hot_and_midpoint():
    models, _ = worked_example_models()
    poly = build_polytope(models, 2)
    one_hot = np.zeros(4)
    one_hot[2] = 1.0
    m = convex_combine(one_hot, poly)
    assert np.allclose(m.A, poly.vertices[2][0])
    mid = convex_combine(np.full(4, 0.25), poly)
    stats = entry_stats(models)["A"]
    for name, i, j in poly.varied_entries:
        assert mid.A[i, j] == pytest.approx((stats[0][i, j] + stats[1][i, j]) / 2)


def test_convex_combine_recovers_source_model():
    # with h = 2 the two varied coordinates interpolate independently
    models, _ = worked_example_models()
    poly = build_polytope(models, 2)
    stats = entry_stats(models)["A"]
    target = models[2]
    betas = {}
    for name, i, j in poly.varied_entries:
        lo, hi = stats[1][i, j], stats[0][i, j]
        betas[(i, j)] = (target.A[i, j] - lo) / (hi - lo)
    alphas = []
    for A, _, _ in poly.vertices:
        w = 1.0
        for (i, j), beta in betas.items():
            hi = stats[0][i, j]
            w *= beta if A[i, j] == hi else 1.0 - beta
        alphas.append(w)
    combo = convex_combine(np.array(alphas), poly)
    for name, i, j in poly.varied_entries:
        assert combo.A[i, j] == pytest.approx(target.A[i, j])


def test_convex_combine_validates_weights():
    models, _ = worked_example_models()
    poly = build_polytope(models, 1)
    with pytest.raises(ValueError):
        convex_combine([0.5, 0.6], poly)
    with pytest.raises(ValueError):
        convex_combine([-0.1, 1.1], poly)
    with pytest.raises(ValueError):
        convex_combine([1.0], poly)


def test_polytope_serialization_round_trip(tmp_path):
    models, _ = worked_example_models()
    poly = build_polytope(models, 2)
    path = tmp_path / "poly.json"
    save_polytope(poly, path)
    back = load_polytope(path)
    assert back.h == poly.h
    assert back.varied_entries == poly.varied_entries
    for (A1, B1, W1), (A2, B2, W2) in zip(poly.vertices, back.vertices):
        assert np.array_equal(A1, A2)
        assert np.array_equal(B1, B2)
        assert np.array_equal(W1, W2)
