import numpy as np
import pytest

from kooph2.sdp import (
    LMIConstraint,
    MatrixVariable,
    SDPError,
    dump_problem,
    min_eig,
    solve,
)


def scalar_var(name="x"):
    return MatrixVariable(name, (1, 1))


def box_constraints(variables, bound):
    """|y| <= bound per scalar coordinate, as 1x1 blocks."""
    cons = []
    for v in variables:
        for k in range(v.packed_size):
            def lo(vals, v=v, k=k):
                return np.array([[bound + v.pack(vals[v.name])[k]]])

            def hi(vals, v=v, k=k):
                return np.array([[bound - v.pack(vals[v.name])[k]]])

            cons.append(LMIConstraint(f"{v.name}_{k}_lo", (v,), lo))
            cons.append(LMIConstraint(f"{v.name}_{k}_hi", (v,), hi))
    return cons


def jacobi_eigvals(M, sweeps=60):
    """Independent symmetric eigensolver: classical Jacobi rotations."""
    A = np.array(M, dtype=float)
    n = A.shape[0]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(A[p, q]))
        if off < 1e-14:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-30:
                    continue
                theta = 0.5 * np.arctan2(2 * A[p, q], A[q, q] - A[p, p])
                c, s = np.cos(theta), np.sin(theta)
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
    return np.sort(np.diag(A))


# ---------------------------------------------------------------------------
# min_eig
# ---------------------------------------------------------------------------


def test_min_eig_basics():
    assert min_eig(np.eye(3)) == pytest.approx(1.0)
    assert min_eig(np.diag([3.0, -2.0])) == pytest.approx(-2.0)


def test_min_eig_matches_jacobi_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        M = rng.standard_normal((10, 10))
        M = 0.5 * (M + M.T)
        lam = jacobi_eigvals(M)[0]
        assert min_eig(M) == pytest.approx(lam, rel=1e-10, abs=1e-10)


def test_min_eig_rejects_skew():
    M = np.array([[1.0, 2.0], [1.0, 1.0]])
    with pytest.raises(SDPError):
        min_eig(M)


# ---------------------------------------------------------------------------
# solve: pinned instances
# ---------------------------------------------------------------------------


def test_scalar_lower_bound():
    x = scalar_var()
    con = LMIConstraint("c", (x,), lambda v: np.array([[v["x"][0, 0] - 1.0]]))
    sol = solve({"x": np.array([[1.0]])}, [con])
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert sol.values["x"][0, 0] >= 1.0  # margin keeps it feasible


def test_schur_scalar_instance():
    w = scalar_var("w")
    con = LMIConstraint(
        "schur", (w,), lambda v: np.array([[v["w"][0, 0], 3.0], [3.0, 1.0]])
    )
    sol = solve({"w": np.array([[1.0]])}, [con])
    assert sol.status == "optimal"
    assert abs(sol.objective - 9.0) <= 1e-6


def test_infeasible_pair():
    x = scalar_var()
    c1 = LMIConstraint("ge1", (x,), lambda v: np.array([[v["x"][0, 0] - 1.0]]))
    c2 = LMIConstraint("le0", (x,), lambda v: np.array([[-v["x"][0, 0]]]))
    sol = solve({"x": np.array([[1.0]])}, [c1, c2])
    assert sol.status == "infeasible"
    assert sol.certificate is not None
    assert sol.certificate["value"] < 0  # witnesses tr(F0 Xhat) < 0


def test_unbounded_reported():
    x = scalar_var()
    con = LMIConstraint("pos", (x,), lambda v: np.array([[v["x"][0, 0]]]))
    sol = solve({"x": np.array([[-1.0]])}, [con])
    assert sol.status == "unbounded"


def test_symmetric_variable_returned_symmetric():
    P = MatrixVariable("P", (3, 3), "symmetric")
    con = LMIConstraint("PgeI", (P,), lambda v: v["P"] - np.eye(3))
    sol = solve({"P": np.eye(3)}, [con])
    assert sol.status == "optimal"
    V = sol.values["P"]
    assert np.max(np.abs(V - V.T)) <= 1e-12
    assert sol.objective == pytest.approx(3.0, rel=1e-6)


def test_optimal_point_satisfies_margin():
    # status optimal implies every block at least eps - tol in min-eig
    w = scalar_var("w")
    eps = 1e-6
    con = LMIConstraint(
        "schur", (w,), lambda v: np.array([[v["w"][0, 0], 2.0], [2.0, 1.0]])
    )
    sol = solve({"w": np.array([[1.0]])}, [con], eps=eps, tol=1e-9)
    block = np.array([[sol.values["w"][0, 0], 2.0], [2.0, 1.0]])
    assert min_eig(block) >= eps - 1e-9


def test_non_affine_constraint_rejected():
    x = scalar_var()
    con = LMIConstraint("sq", (x,), lambda v: np.array([[v["x"][0, 0] ** 2 + 1.0]]))
    with pytest.raises(SDPError):
        solve({"x": np.array([[1.0]])}, [con])


def test_asymmetric_block_rejected():
    x = scalar_var()
    con = LMIConstraint(
        "bad", (x,), lambda v: np.array([[1.0, v["x"][0, 0]], [0.0, 1.0]])
    )
    with pytest.raises(SDPError):
        solve({"x": np.array([[1.0]])}, [con])


def test_deterministic_resolve():
    w = scalar_var("w")
    con = LMIConstraint(
        "schur", (w,), lambda v: np.array([[v["w"][0, 0], 3.0], [3.0, 1.0]])
    )
    a = solve({"w": np.array([[1.0]])}, [con])
    b = solve({"w": np.array([[1.0]])}, [con])
    assert a.objective == b.objective
    assert np.array_equal(a.values["w"], b.values["w"])


# ---------------------------------------------------------------------------
# solve: randomized instances vs a refined grid oracle
# ---------------------------------------------------------------------------


def grid_oracle(c, F0, F1, F2, bound, eps, levels=5, pts=81):
    """Projection/grid search over the 2-variable feasible set."""
    lo = np.array([-bound, -bound], dtype=float)
    hi = np.array([bound, bound], dtype=float)
    best, best_y = np.inf, None
    for _ in range(levels):
        ys1 = np.linspace(lo[0], hi[0], pts)
        ys2 = np.linspace(lo[1], hi[1], pts)
        Y1, Y2 = np.meshgrid(ys1, ys2, indexing="ij")
        blocks = (
            F0[None, None]
            + Y1[..., None, None] * F1[None, None]
            + Y2[..., None, None] * F2[None, None]
        )
        lam = np.linalg.eigvalsh(blocks)[..., 0]
        feas = (lam >= eps) & (np.abs(Y1) <= bound) & (np.abs(Y2) <= bound)
        vals = c[0] * Y1 + c[1] * Y2
        vals = np.where(feas, vals, np.inf)
        k = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[k] < best:
            best = vals[k]
            best_y = np.array([Y1[k], Y2[k]])
        span = (hi - lo) / (pts - 1) * 4.0
        lo = np.maximum(best_y - span, -bound)
        hi = np.minimum(best_y + span, bound)
    return best


def test_randomized_sdps_match_grid_oracle():
    rng = np.random.default_rng(2024)
    bound = 2.0
    eps = 1e-8
    for trial in range(20):
        F1 = rng.standard_normal((3, 3))
        F1 = 0.5 * (F1 + F1.T)
        F2 = rng.standard_normal((3, 3))
        F2 = 0.5 * (F2 + F2.T)
        F0 = np.eye(3)  # strictly feasible at y = 0
        c = rng.standard_normal(2)

        y1 = scalar_var("y1")
        y2 = scalar_var("y2")

        def block(vals):
            return F0 + vals["y1"][0, 0] * F1 + vals["y2"][0, 0] * F2

        cons = [LMIConstraint("main", (y1, y2), block)]
        cons += box_constraints([y1, y2], bound)
        sol = solve(
            {"y1": np.array([[c[0]]]), "y2": np.array([[c[1]]])}, cons, eps=eps
        )
        assert sol.status == "optimal", f"trial {trial}: {sol.status}"
        oracle = grid_oracle(c, F0 - eps * np.eye(3), F1, F2, bound, 0.0)
        denom = max(abs(oracle), 1.0)
        assert abs(sol.objective - oracle) / denom <= 1e-4, (
            f"trial {trial}: solver {sol.objective} vs oracle {oracle}"
        )


def test_monotone_in_added_constraints():
    # appending a constraint can only increase the minimum
    rng = np.random.default_rng(5)
    for _ in range(5):
        F1 = rng.standard_normal((2, 2))
        F1 = 0.5 * (F1 + F1.T)
        y = scalar_var("y")
        base = [
            LMIConstraint("m", (y,), lambda v, F1=F1: np.eye(2) + v["y"][0, 0] * F1)
        ]
        base += box_constraints([y], 3.0)
        extra = base + [
            LMIConstraint("cut", (y,), lambda v: np.array([[v["y"][0, 0] + 1.0]]))
        ]
        a = solve({"y": np.array([[1.0]])}, base)
        b = solve({"y": np.array([[1.0]])}, extra)
        assert a.status == "optimal" and b.status == "optimal"
        assert b.objective >= a.objective - 1e-7 * (1 + abs(a.objective))


def test_feasibility_scale_invariance():
    # scaling a constraint block (and eps with it) must not change status
    x = scalar_var()
    for gamma in (1e-3, 1.0, 1e3):
        con = LMIConstraint(
            "s", (x,), lambda v, g=gamma: g * np.array([[v["x"][0, 0] - 1.0]])
        )
        sol = solve({"x": np.array([[1.0]])}, [con], eps=1e-8 * gamma)
        assert sol.status == "optimal"
        assert sol.values["x"][0, 0] == pytest.approx(1.0, abs=1e-5)


def test_unused_variable_with_zero_objective_is_dropped():
    x = scalar_var("x")
    z = MatrixVariable("z", (2, 2), "symmetric")
    con = LMIConstraint("c", (x, z), lambda v: np.array([[v["x"][0, 0] - 1.0]]))
    sol = solve({"x": np.array([[1.0]])}, [con])
    assert sol.status == "optimal"
    assert np.allclose(sol.values["z"], 0.0)


def test_problem_dump_is_plain_text(tmp_path):
    w = scalar_var("w")
    con = LMIConstraint(
        "schur", (w,), lambda v: np.array([[v["w"][0, 0], 3.0], [3.0, 1.0]])
    )
    path = tmp_path / "dump.txt"
    dump_problem({"w": np.array([[1.0]])}, [con], path)
    text = path.read_text()
    assert "variables:" in text
    assert "constraint schur" in text
    assert "F[y_0]" in text
