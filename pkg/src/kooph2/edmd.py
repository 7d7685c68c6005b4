"""Snapshot matrices and the lifted least-squares fit of linear predictors.

Given snapshot triples (x_k, u_k, x_{k+1}) and an observable dictionary,
the fit solves

    min_{[A B]} || Ghat - [A B] [G; U] ||_F

via an SVD pseudoinverse, returning the minimum-norm solution when the
data matrix is rank deficient.  The disturbance input matrix B_w is
configuration, not estimated; the default is a ones column.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SnapshotDataset",
    "SnapshotMatrices",
    "LinearPredictor",
    "assemble",
    "fit_predictor",
    "residual_norm",
    "save_predictor",
    "load_predictor",
]

SVD_RCOND = 1e-12  # relative singular value cutoff for the pseudoinverse


@dataclass
class SnapshotDataset:
    """M snapshot triples (x_k, u_k, x_{k+1}) plus collection metadata."""

    states: np.ndarray  # (M, n)
    inputs: np.ndarray  # (M, p)
    next_states: np.ndarray  # (M, n)
    dt: float
    sampler: str = ""
    seed: int = 0

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.next_states = np.atleast_2d(np.asarray(self.next_states, dtype=float))
        m = self.states.shape[0]
        if m < 1:
            raise ValueError("dataset must contain at least one triple")
        if self.inputs.shape[0] != m or self.next_states.shape[0] != m:
            raise ValueError("states, inputs and next_states must align")
        if self.next_states.shape[1] != self.states.shape[1]:
            raise ValueError("state dimension mismatch across triples")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def num_samples(self):
        return self.states.shape[0]

    def content_hash(self):
        """sha256 over the raw sample bytes; used for provenance."""
        h = hashlib.sha256()
        for arr in (self.states, self.inputs, self.next_states):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(float(self.dt)).encode())
        return h.hexdigest()

    def dataset_id(self):
        return f"{self.sampler or 'dataset'}-seed{self.seed}-{self.content_hash()[:12]}"


@dataclass
class SnapshotMatrices:
    """Lifted data matrices G, Ghat (N x M) and input matrix U (p x M)."""

    G: np.ndarray
    Ghat: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.Ghat = np.atleast_2d(np.asarray(self.Ghat, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        if self.G.shape != self.Ghat.shape:
            raise ValueError("G and Ghat must have identical shapes")
        if self.U.shape[1] != self.G.shape[1]:
            raise ValueError("U must have one column per snapshot")


@dataclass
class LinearPredictor:
    """One fitted lifted model g(x_{k+1}) = A g(x_k) + B u_k + B_w w_k."""

    A: np.ndarray
    B: np.ndarray
    B_w: np.ndarray
    residual: float = 0.0
    dictionary: dict | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.B_w = np.atleast_2d(np.asarray(self.B_w, dtype=float))
        n = self.A.shape[0]
        if self.A.shape[1] != n:
            raise ValueError("A must be square")
        if self.B.shape[0] != n or self.B_w.shape[0] != n:
            raise ValueError("B and B_w must have as many rows as A")
        for name, m in (("A", self.A), ("B", self.B), ("B_w", self.B_w)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def n_features(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_disturbances(self):
        return self.B_w.shape[1]


def assemble(dataset: SnapshotDataset, dictionary) -> SnapshotMatrices:
    """Lift a dataset into snapshot matrices, columns ordered by sample."""
    G = dictionary(dataset.states).T
    Ghat = dictionary(dataset.next_states).T
    U = dataset.inputs.T
    return SnapshotMatrices(G=G, Ghat=Ghat, U=U)


def _pinv_svd(Z, rcond):
    # explicit SVD pseudoinverse so the cutoff rule is ours to state
    u, s, vt = np.linalg.svd(Z, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((Z.shape[1], Z.shape[0])), 0
    keep = s > rcond * s[0]
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T, int(np.count_nonzero(keep))


def fit_predictor(
    matrices: SnapshotMatrices,
    b_w=None,
    rcond=SVD_RCOND,
    dictionary=None,
    provenance=None,
) -> LinearPredictor:
    """Least-squares fit [A B] = Ghat pinv([G; U]).

    Singular values below ``rcond`` times the largest are treated as
    zero, which makes the fit the minimum-norm minimizer under rank
    deficiency.  An all-zero data matrix yields the all-zero predictor
    with residual ||Ghat||_F, flagged in provenance.
    """
    G, Ghat, U = matrices.G, matrices.Ghat, matrices.U
    n = G.shape[0]
    p = U.shape[0]
    Z = np.vstack([G, U])
    Zp, rank = _pinv_svd(Z, rcond)
    K = Ghat @ Zp
    A = K[:, :n]
    B = K[:, n:]
    if b_w is None:
        b_w = np.ones((n, 1))
    b_w = np.atleast_2d(np.asarray(b_w, dtype=float))
    if b_w.shape[0] != n:
        raise ValueError("B_w must have one row per feature")
    res = float(np.linalg.norm(Ghat - A @ G - B @ U))
    prov = dict(provenance or {})
    prov["rank"] = rank
    prov["num_samples"] = G.shape[1]
    if rank == 0:
        prov["degenerate"] = "all-zero data matrix"
    return LinearPredictor(
        A=A,
        B=B,
        B_w=b_w,
        residual=res,
        dictionary=dict(dictionary) if dictionary else None,
        provenance=prov,
    )


def fit_dataset(dataset: SnapshotDataset, dict_obj, b_w=None, rcond=SVD_RCOND):
    """Convenience: assemble and fit in one call, with full provenance."""
    mats = assemble(dataset, dict_obj)
    return fit_predictor(
        mats,
        b_w=b_w,
        rcond=rcond,
        dictionary=dict_obj.descriptor(),
        provenance={"dataset_id": dataset.dataset_id(), "dataset_hash": dataset.content_hash()},
    )


def residual_norm(predictor: LinearPredictor, matrices: SnapshotMatrices) -> float:
    """Frobenius norm of Ghat - A G - B U for the given predictor."""
    r = matrices.Ghat - predictor.A @ matrices.G - predictor.B @ matrices.U
    return float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# Structured-text serialization: explicit dimensions, row-major payloads
# ---------------------------------------------------------------------------


def _mat_to_json(m):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return {"shape": [int(m.shape[0]), int(m.shape[1])], "data": m.ravel().tolist()}


def _mat_from_json(d):
    return np.array(d["data"], dtype=float).reshape(d["shape"])


def predictor_to_dict(p: LinearPredictor):
    return {
        "kind": "linear_predictor",
        "n_features": p.n_features,
        "n_inputs": p.n_inputs,
        "n_disturbances": p.n_disturbances,
        "A": _mat_to_json(p.A),
        "B": _mat_to_json(p.B),
        "B_w": _mat_to_json(p.B_w),
        "residual": p.residual,
        "dictionary": p.dictionary,
        "provenance": p.provenance,
    }


def predictor_from_dict(d):
    if d.get("kind") != "linear_predictor":
        raise ValueError("not a linear predictor record")
    return LinearPredictor(
        A=_mat_from_json(d["A"]),
        B=_mat_from_json(d["B"]),
        B_w=_mat_from_json(d["B_w"]),
        residual=float(d.get("residual", 0.0)),
        dictionary=d.get("dictionary"),
        provenance=d.get("provenance", {}),
    )


def save_predictor(p: LinearPredictor, path):
    with open(path, "w") as f:
        json.dump(predictor_to_dict(p), f, indent=1)


def load_predictor(path) -> LinearPredictor:
    with open(path) as f:
        return predictor_from_dict(json.load(f))
