import numpy as np
import pytest

from kooph2.edmd import (
    LinearPredictor,
    SnapshotDataset,
    SnapshotMatrices,
    assemble,
    fit_dataset,
    fit_predictor,
    load_predictor,
    predictor_from_dict,
    predictor_to_dict,
    residual_norm,
    save_predictor,
)
from kooph2.observables import identity_dictionary, monomials_deg2


def random_stable(rng, n, radius=0.9):
    A = rng.standard_normal((n, n))
    return A * (radius / max(abs(np.linalg.eigvals(A))))


def make_linear_data(rng, A, B, m):
    n, p = B.shape
    G = rng.standard_normal((n, m))
    U = rng.standard_normal((p, m))
    return SnapshotMatrices(G=G, Ghat=A @ G + B @ U, U=U)


def test_assemble_single_triple():
    ds = SnapshotDataset(
        states=[[0.1, 0.2]], inputs=[[0.5]], next_states=[[0.3, 0.4]], dt=0.1
    )
    mats = assemble(ds, monomials_deg2())
    assert mats.G.shape == (5, 1)
    assert mats.Ghat.shape == (5, 1)
    assert mats.U.shape == (1, 1)
    assert np.allclose(mats.G[:, 0], monomials_deg2()([0.1, 0.2]))


def test_assemble_column_order():
    rng = np.random.default_rng(0)
    xs = rng.uniform(-1, 1, (10, 2))
    us = rng.uniform(-1, 1, (10, 1))
    ys = rng.uniform(-1, 1, (10, 2))
    ds = SnapshotDataset(states=xs, inputs=us, next_states=ys, dt=0.1)
    mats = assemble(ds, monomials_deg2())
    d = monomials_deg2()
    for k in range(10):
        assert np.array_equal(mats.G[:, k], d(xs[k]))
        assert np.array_equal(mats.Ghat[:, k], d(ys[k]))
        assert np.array_equal(mats.U[:, k], us[k])


def test_exact_recovery_from_linear_system():
    rng = np.random.default_rng(42)
    A0 = random_stable(rng, 5)
    B0 = rng.standard_normal((5, 1))
    mats = make_linear_data(rng, A0, B0, 200)
    pred = fit_predictor(mats)
    assert np.max(np.abs(pred.A - A0)) <= 1e-8
    assert np.max(np.abs(pred.B - B0)) <= 1e-8
    assert pred.residual <= 1e-10
    assert pred.B_w.shape == (5, 1)
    assert np.allclose(pred.B_w, 1.0)  # default disturbance column


def test_identity_dynamics_minimum_norm():
    rng = np.random.default_rng(1)
    G = rng.standard_normal((4, 30))
    mats = SnapshotMatrices(G=G, Ghat=G, U=np.zeros((1, 30)))
    pred = fit_predictor(mats)
    assert np.max(np.abs(pred.A - np.eye(4))) <= 1e-10
    assert np.max(np.abs(pred.B)) <= 1e-10  # minimum-norm picks B = 0


def test_noisy_fit_matches_normal_equations():
    # oracle: K = (Ghat Z^T)(Z Z^T)^{-1} for well-conditioned Z = [G; U]
    rng = np.random.default_rng(7)
    A0 = random_stable(rng, 5)
    B0 = rng.standard_normal((5, 1))
    mats = make_linear_data(rng, A0, B0, 150)
    noisy = SnapshotMatrices(
        G=mats.G, Ghat=mats.Ghat + 0.01 * rng.standard_normal(mats.Ghat.shape), U=mats.U
    )
    pred = fit_predictor(noisy)
    Z = np.vstack([noisy.G, noisy.U])
    K = (noisy.Ghat @ Z.T) @ np.linalg.inv(Z @ Z.T)
    assert pred.residual > 0
    assert np.max(np.abs(np.hstack([pred.A, pred.B]) - K)) <= 1e-8


def test_all_zero_data_is_degenerate_not_fatal():
    mats = SnapshotMatrices(G=np.zeros((3, 5)), Ghat=np.ones((3, 5)), U=np.zeros((1, 5)))
    pred = fit_predictor(mats)
    assert np.allclose(pred.A, 0.0)
    assert np.allclose(pred.B, 0.0)
    assert pred.residual == pytest.approx(np.linalg.norm(np.ones((3, 5))))
    assert "degenerate" in pred.provenance


def test_rank_deficient_minimum_norm_matches_pinv():
    rng = np.random.default_rng(3)
    base = rng.standard_normal((4, 3))
    G = np.hstack([base, base])  # rank-deficient data matrix
    U = np.zeros((1, 6))
    Ghat = rng.standard_normal((4, 6))
    pred = fit_predictor(SnapshotMatrices(G=G, Ghat=Ghat, U=U))
    K_oracle = Ghat @ np.linalg.pinv(np.vstack([G, U]))
    assert np.max(np.abs(np.hstack([pred.A, pred.B]) - K_oracle)) <= 1e-9


def test_residual_norm_cases():
    rng = np.random.default_rng(5)
    A0 = random_stable(rng, 3)
    B0 = rng.standard_normal((3, 1))
    mats = make_linear_data(rng, A0, B0, 40)
    exact = LinearPredictor(A=A0, B=B0, B_w=np.ones((3, 1)))
    assert residual_norm(exact, mats) <= 1e-10
    zero = LinearPredictor(A=np.zeros((3, 3)), B=np.zeros((3, 1)), B_w=np.ones((3, 1)))
    assert residual_norm(zero, mats) == pytest.approx(np.linalg.norm(mats.Ghat))


def test_fit_is_least_squares_optimal():
    # perturbing the fit in random directions never lowers the residual
    rng = np.random.default_rng(11)
    A0 = random_stable(rng, 4)
    B0 = rng.standard_normal((4, 2))
    mats = make_linear_data(rng, A0, B0, 60)
    noisy = SnapshotMatrices(
        G=mats.G, Ghat=mats.Ghat + 0.05 * rng.standard_normal(mats.Ghat.shape), U=mats.U
    )
    pred = fit_predictor(noisy)
    best = residual_norm(pred, noisy)
    for _ in range(100):
        dA = rng.standard_normal(pred.A.shape) * 10.0 ** rng.uniform(-6, 0)
        dB = rng.standard_normal(pred.B.shape) * 10.0 ** rng.uniform(-6, 0)
        worse = LinearPredictor(A=pred.A + dA, B=pred.B + dB, B_w=pred.B_w)
        assert residual_norm(worse, noisy) >= best - 1e-12


def test_fit_shapes():
    rng = np.random.default_rng(13)
    for n, p, m in ((2, 1, 10), (5, 1, 150), (7, 3, 40)):
        A0 = random_stable(rng, n)
        B0 = rng.standard_normal((n, p))
        pred = fit_predictor(make_linear_data(rng, A0, B0, m))
        assert pred.A.shape == (n, n)
        assert pred.B.shape == (n, p)


def test_dataset_validation():
    with pytest.raises(ValueError):
        SnapshotDataset(states=np.zeros((0, 2)), inputs=np.zeros((0, 1)),
                        next_states=np.zeros((0, 2)), dt=0.1)
    with pytest.raises(ValueError):
        SnapshotDataset(states=np.zeros((3, 2)), inputs=np.zeros((2, 1)),
                        next_states=np.zeros((3, 2)), dt=0.1)
    with pytest.raises(ValueError):
        SnapshotDataset(states=np.zeros((3, 2)), inputs=np.zeros((3, 1)),
                        next_states=np.zeros((3, 3)), dt=0.1)


def test_dataset_hash_reflects_content():
    ds1 = SnapshotDataset(states=[[1.0]], inputs=[[0.0]], next_states=[[2.0]], dt=0.1)
    ds2 = SnapshotDataset(states=[[1.0]], inputs=[[0.0]], next_states=[[2.0]], dt=0.1)
    ds3 = SnapshotDataset(states=[[1.0]], inputs=[[0.0]], next_states=[[2.1]], dt=0.1)
    assert ds1.content_hash() == ds2.content_hash()
    assert ds1.content_hash() != ds3.content_hash()


def test_predictor_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(17)
    ds = SnapshotDataset(
        states=rng.uniform(-1, 1, (20, 3)),
        inputs=rng.uniform(-1, 1, (20, 2)),
        next_states=rng.uniform(-1, 1, (20, 3)),
        dt=0.05,
        sampler="test",
        seed=4,
    )
    pred = fit_dataset(ds, identity_dictionary(3))
    path = tmp_path / "pred.json"
    save_predictor(pred, path)
    back = load_predictor(path)
    assert np.array_equal(back.A, pred.A)
    assert np.array_equal(back.B, pred.B)
    assert np.array_equal(back.B_w, pred.B_w)
    assert back.residual == pred.residual
    assert back.dictionary == {"name": "identity", "params": {"dim": 3}}
    assert back.provenance["dataset_hash"] == ds.content_hash()


def test_predictor_dict_rejects_wrong_kind():
    with pytest.raises(ValueError):
        predictor_from_dict({"kind": "other"})
    rec = predictor_to_dict(LinearPredictor(A=[[0.0]], B=[[0.0]], B_w=[[1.0]]))
    assert rec["kind"] == "linear_predictor"
    assert rec["A"]["shape"] == [1, 1]
