"""Feedback-gain synthesis via the slack-variable H2 LMI characterization.

Three optimization problems are implemented on top of the dense LMI
solver:

* ``robust_synthesis``: one gain for every vertex of a polytopic model
  set, minimizing the worst-vertex certified H2-squared bound.  The gain
  parameterization (X, L) is shared across vertices while the Lyapunov
  certificate (P_i, W_i) is vertex-dependent; an epigraph scalar turns
  the max of the traces into a linear objective.
* ``nominal_synthesis``: the single-model specialization.
* ``evaluate_h2_bound``: for a fixed gain and fixed model, the certified
  H2-squared bound (lossless for a fixed plant).

Independent cross-checks live alongside: a doubling-iteration Lyapunov
H2 norm, and an LQR baseline gain from a structured doubling solution of
the discrete Riccati equation.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .edmd import LinearPredictor, _mat_from_json, _mat_to_json
from .polytope import PolytopeModel

__all__ = [
    "GeneralizedPlant",
    "SynthesisOptions",
    "SynthesisResult",
    "H2Certificate",
    "SynthesisError",
    "SynthesisInfeasibleError",
    "ClosedLoopUnstableError",
    "build_M1",
    "build_M2",
    "robust_synthesis",
    "nominal_synthesis",
    "evaluate_h2_bound",
    "h2_lyapunov",
    "lqr_gain",
    "spectral_radius",
    "save_synthesis",
    "load_synthesis",
]


class SynthesisError(RuntimeError):
    """Synthesis failed for a reason other than proven infeasibility."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SynthesisInfeasibleError(SynthesisError):
    """The synthesis LMIs admit no solution (e.g. an unstabilizable vertex)."""


class ClosedLoopUnstableError(SynthesisError):
    """H2 evaluation rejected: the fixed closed loop is not stable."""


@dataclass(frozen=True)
class GeneralizedPlant:
    """Controlled-output weights: z_k = C_z g_k + D_zu u_k."""

    C_z: np.ndarray
    D_zu: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C_z, dtype=float))
        D = np.atleast_2d(np.asarray(self.D_zu, dtype=float))
        if C.shape[0] != D.shape[0]:
            raise ValueError("C_z and D_zu must have the same number of rows")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(D))):
            raise ValueError("non-finite weight matrices")
        object.__setattr__(self, "C_z", C)
        object.__setattr__(self, "D_zu", D)

    @property
    def n_outputs(self):
        return self.C_z.shape[0]


@dataclass(frozen=True)
class SynthesisOptions:
    eps: float = 1e-8  # strictness margin: every LMI holds >= eps*I
    tol: float = 1e-7  # relative duality-gap tolerance of the solver
    max_iter: int = 200
    shared_p: bool = False  # one Lyapunov certificate across vertices


@dataclass
class SynthesisResult:
    """Gain, certified bound and the certificates behind it."""

    S: np.ndarray
    J_syn: float
    X: np.ndarray
    L: np.ndarray
    vertex_P: list
    vertex_W: list
    diagnostics: dict = field(default_factory=dict)


@dataclass
class H2Certificate:
    J: float
    P: np.ndarray
    W: np.ndarray
    X: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def spectral_radius(A):
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(A)))))


def _check_sym(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or np.max(np.abs(M - M.T)) > 1e-9 * max(
        1.0, np.max(np.abs(M))
    ):
        raise ValueError(f"{name} must be symmetric")
    return M


def build_M1(W, X, L, P, C_z, D_zu):
    """[[W, C_z X + D_zu L], [*, X + X^T - P]] as one symmetric block."""
    W = _check_sym(W, "W")
    P = _check_sym(P, "P")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    C_z = np.atleast_2d(np.asarray(C_z, dtype=float))
    D_zu = np.atleast_2d(np.asarray(D_zu, dtype=float))
    n = X.shape[0]
    d = C_z.shape[0]
    if X.shape != (n, n) or P.shape != (n, n) or W.shape != (d, d):
        raise ValueError("inconsistent M1 block shapes")
    if C_z.shape[1] != n or D_zu.shape != (d, L.shape[0]) or L.shape[1] != n:
        raise ValueError("inconsistent M1 block shapes")
    top = C_z @ X + D_zu @ L
    return np.block([[W, top], [top.T, X + X.T - P]])


def build_M2(P, X, L, A, B, B_w):
    """[[P, A X + B L, B_w], [*, X + X^T - P, 0], [*, *, I]]."""
    P = _check_sym(P, "P")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    B_w = np.atleast_2d(np.asarray(B_w, dtype=float))
    n = A.shape[0]
    q = B_w.shape[1]
    if A.shape != (n, n) or X.shape != (n, n) or P.shape != (n, n):
        raise ValueError("inconsistent M2 block shapes")
    if B.shape[0] != n or L.shape != (B.shape[1], n) or B_w.shape[0] != n:
        raise ValueError("inconsistent M2 block shapes")
    mid = A @ X + B @ L
    z = np.zeros((n, q))
    return np.block(
        [[P, mid, B_w], [mid.T, X + X.T - P, z], [B_w.T, z.T, np.eye(q)]]
    )


def _vertices_of(model_set):
    if isinstance(model_set, PolytopeModel):
        return list(model_set.vertices)
    if isinstance(model_set, LinearPredictor):
        return [(model_set.A, model_set.B, model_set.B_w)]
    return list(model_set)


def _synth_problem(vertices, plant, opts, epigraph):
    """Assemble variables/constraints shared by Problems with a free gain."""
    A0, B0, Bw0 = vertices[0]
    n = A0.shape[0]
    p = B0.shape[1]
    d = plant.n_outputs
    if plant.C_z.shape[1] != n or plant.D_zu.shape[1] != p:
        raise ValueError("plant weights do not match the model dimensions")

    X = sdp.MatrixVariable("X", (n, n), "rectangular")
    L = sdp.MatrixVariable("L", (p, n), "rectangular")
    cons = []
    w_names = []
    p_names = []
    for i, (A, B, Bw) in enumerate(vertices):
        p_name = "P" if opts.shared_p else f"P{i}"
        w_name = f"W{i}" if epigraph else "W"
        Pv = sdp.MatrixVariable(p_name, (n, n), "symmetric")
        Wv = sdp.MatrixVariable(w_name, (d, d), "symmetric")
        p_names.append(p_name)
        w_names.append(w_name)

        def m1(v, wn=w_name, pn=p_name):
            return build_M1(v[wn], v["X"], v["L"], v[pn], plant.C_z, plant.D_zu)

        def m2(v, pn=p_name, A=A, B=B, Bw=Bw):
            return build_M2(v[pn], v["X"], v["L"], A, B, Bw)

        cons.append(sdp.LMIConstraint(f"M1_{i}", (Wv, X, L, Pv), m1))
        cons.append(sdp.LMIConstraint(f"M2_{i}", (Pv, X, L), m2))
        if epigraph:
            mu = sdp.MatrixVariable("mu", (1, 1), "rectangular")

            def cap(v, wn=w_name):
                return np.array([[v["mu"][0, 0] - np.trace(v[wn])]])

            cons.append(sdp.LMIConstraint(f"cap_{i}", (mu, Wv), cap))
    return cons, w_names, p_names


def _run_sdp(objective, constraints, opts, what):
    sol = sdp.solve(
        objective,
        constraints,
        eps=opts.eps,
        tol=opts.tol,
        max_iter=opts.max_iter,
    )
    if sol.status == "infeasible":
        raise SynthesisInfeasibleError(
            f"{what}: LMI constraints are infeasible", sol.diagnostics
        )
    if sol.status != "optimal":
        raise SynthesisError(f"{what}: solver returned {sol.status}", sol.diagnostics)
    return sol


def _extract_gain(sol, what):
    X = sol.values["X"]
    L = sol.values["L"]
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise SynthesisError(f"{what}: slack variable X is numerically singular")
    S = np.atleast_2d(L @ np.linalg.inv(X))
    return S, X, L


def robust_synthesis(polytope, plant: GeneralizedPlant, opts=None) -> SynthesisResult:
    """One static gain certified on every vertex of the model set.

    Solves one program with shared (X, L), per-vertex (P_i, W_i) and an
    epigraph scalar bounding every tr(W_i); the reported bound is
    J_syn = max_i tr(W_i).  Every vertex closed loop is re-checked for
    spectral radius < 1 before returning.
    """
    opts = opts or SynthesisOptions()
    vertices = _vertices_of(polytope)
    if not vertices:
        raise ValueError("empty model set")
    cons, w_names, _ = _synth_problem(vertices, plant, opts, epigraph=True)
    sol = _run_sdp({"mu": np.array([[1.0]])}, cons, opts, "robust synthesis")
    S, X, L = _extract_gain(sol, "robust synthesis")
    vertex_W = [sol.values[w] for w in w_names]
    vertex_P = [
        sol.values["P" if opts.shared_p else f"P{i}"] for i in range(len(vertices))
    ]
    radii = [spectral_radius(A + B @ S) for A, B, _ in vertices]
    if max(radii) >= 1.0:
        raise SynthesisError(
            "robust synthesis: a vertex closed loop failed the stability check",
            {"spectral_radii": radii},
        )
    J_syn = max(float(np.trace(W)) for W in vertex_W)
    diag = dict(sol.diagnostics)
    diag["vertex_spectral_radii"] = radii
    return SynthesisResult(
        S=S, J_syn=J_syn, X=X, L=L, vertex_P=vertex_P, vertex_W=vertex_W,
        diagnostics=diag,
    )


def nominal_synthesis(model, plant: GeneralizedPlant, opts=None) -> SynthesisResult:
    """Single-model H2 design: minimize tr(W) subject to M1, M2."""
    opts = opts or SynthesisOptions()
    vertices = _vertices_of(model)
    if len(vertices) != 1:
        raise ValueError("nominal synthesis expects a single model")
    cons, w_names, _ = _synth_problem(vertices, plant, opts, epigraph=False)
    d = plant.n_outputs
    sol = _run_sdp({"W": np.eye(d)}, cons, opts, "nominal synthesis")
    S, X, L = _extract_gain(sol, "nominal synthesis")
    A, B, _ = vertices[0]
    rho = spectral_radius(A + B @ S)
    if rho >= 1.0:
        raise SynthesisError(
            "nominal synthesis: closed loop failed the stability check",
            {"spectral_radius": rho},
        )
    W = sol.values["W"]
    diag = dict(sol.diagnostics)
    diag["spectral_radius"] = rho
    return SynthesisResult(
        S=S, J_syn=float(np.trace(W)), X=X, L=L,
        vertex_P=[sol.values["P0"]], vertex_W=[W], diagnostics=diag,
    )


def evaluate_h2_bound(model, plant: GeneralizedPlant, S, opts=None) -> H2Certificate:
    """Certified H2-squared bound for the fixed gain on a fixed model.

    Minimizes tr(W) over (P, W, X) with the closed-loop matrices folded
    in; lossless for a fixed plant.  An unstable closed loop is rejected
    with a dedicated error, distinct from solver failure.
    """
    opts = opts or SynthesisOptions()
    (A, B, Bw), = _vertices_of(model)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    A_cl = A + B @ S
    C_cl = plant.C_z + plant.D_zu @ S
    rho = spectral_radius(A_cl)
    if rho >= 1.0:
        raise ClosedLoopUnstableError(
            f"closed loop is not stable (spectral radius {rho:.6g})"
        )
    n = A.shape[0]
    d = C_cl.shape[0]
    P = sdp.MatrixVariable("P", (n, n), "symmetric")
    W = sdp.MatrixVariable("W", (d, d), "symmetric")
    X = sdp.MatrixVariable("X", (n, n), "rectangular")
    zero_l = np.zeros((1, n))

    def m3(v):
        return build_M1(v["W"], v["X"], zero_l, v["P"], C_cl, np.zeros((d, 1)))

    def m4(v):
        return build_M2(v["P"], v["X"], zero_l, A_cl, np.zeros((n, 1)), Bw)

    cons = [
        sdp.LMIConstraint("M3", (W, X, P), m3),
        sdp.LMIConstraint("M4", (P, X), m4),
    ]
    try:
        sol = _run_sdp({"W": np.eye(d)}, cons, opts, "H2 evaluation")
    except SynthesisInfeasibleError as err:
        if rho >= 1.0 - 1e-9:
            raise ClosedLoopUnstableError(
                f"closed loop is marginally stable (spectral radius {rho:.6g})"
            ) from err
        raise
    # certificates must survive an independent recheck at half the margin
    margins = {
        "M3": sdp.min_eig(m3(sol.values)),
        "M4": sdp.min_eig(m4(sol.values)),
    }
    if min(margins.values()) < opts.eps / 2.0:
        raise SynthesisError("H2 evaluation: certificate recheck failed", margins)
    diag = dict(sol.diagnostics)
    diag["recheck_margins"] = margins
    return H2Certificate(
        J=float(sol.objective), P=sol.values["P"], W=sol.values["W"],
        X=sol.values["X"], diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# Independent oracles / baselines
# ---------------------------------------------------------------------------


def h2_lyapunov(A_cl, B_w, C_cl, tol=1e-12, max_doublings=200):
    """H2 norm from w to z of (A_cl, B_w, C_cl) via the Lyapunov equation.

    Solves P = A P A^T + B_w B_w^T by fixed-point doubling and returns
    sqrt(tr(C P C^T)).  Requires spectral radius < 1.
    """
    A = np.atleast_2d(np.asarray(A_cl, dtype=float))
    Bw = np.atleast_2d(np.asarray(B_w, dtype=float))
    C = np.atleast_2d(np.asarray(C_cl, dtype=float))
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise ValueError(f"spectral radius {rho:.6g} >= 1; H2 norm undefined")
    P = Bw @ Bw.T
    M = A.copy()
    for _ in range(max_doublings):
        P = P + M @ P @ M.T
        M = M @ M
        if np.max(np.abs(M)) ** 2 * np.max(np.abs(P)) < tol * max(np.max(np.abs(P)), 1e-300):
            break
    resid = np.linalg.norm(P - A @ P @ A.T - Bw @ Bw.T)
    if resid > tol * (1.0 + np.linalg.norm(P)):
        raise RuntimeError(f"Lyapunov doubling stalled at residual {resid:.3e}")
    return float(np.sqrt(max(np.trace(C @ P @ C.T), 0.0)))


def lqr_gain(A, B, Q, R, tol=1e-12, max_iter=200):
    """Infinite-horizon LQR gain in the ``u = S g`` sign convention.

    The discrete Riccati equation is solved by the structured doubling
    iteration; the result satisfies the fixed-point residual to ``tol``.
    Non-stabilizable problems surface as an iteration-divergence error.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = _check_sym(np.asarray(Q, dtype=float), "Q")
    R = _check_sym(np.asarray(R, dtype=float), "R")
    if np.any(np.linalg.eigvalsh(R) <= 0):
        raise ValueError("R must be positive definite")
    if np.any(np.linalg.eigvalsh(Q) < -1e-12 * max(1.0, np.max(np.abs(Q)))):
        raise ValueError("Q must be positive semidefinite")
    n = A.shape[0]
    E = A.copy()
    G = B @ np.linalg.solve(R, B.T)
    H = Q.copy()
    converged = False
    for _ in range(max_iter):
        try:
            IGH = np.linalg.inv(np.eye(n) + G @ H)
        except np.linalg.LinAlgError as err:
            raise SynthesisError("Riccati doubling hit a singular update") from err
        E_next = E @ IGH @ E
        G_next = G + E @ G @ IGH.T @ E.T
        H_next = H + E.T @ H @ IGH @ E
        if not np.all(np.isfinite(H_next)):
            raise SynthesisError("Riccati doubling diverged")
        delta = np.max(np.abs(H_next - H))
        E, G, H = E_next, _sym2(G_next), _sym2(H_next)
        if delta <= tol * (1.0 + np.max(np.abs(H))):
            converged = True
            break
    if not converged:
        raise SynthesisError("Riccati doubling did not converge")
    X = H
    resid = np.max(
        np.abs(
            A.T @ X @ A
            - X
            - (A.T @ X @ B) @ np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)
            + Q
        )
    )
    if resid > 1e-8 * (1.0 + np.max(np.abs(X))):
        raise SynthesisError(f"Riccati residual too large: {resid:.3e}")
    S = -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)
    return np.atleast_2d(S)


def _sym2(M):
    return 0.5 * (M + M.T)


# ---------------------------------------------------------------------------
# Serialization (same structured-text container as predictors)
# ---------------------------------------------------------------------------


def synthesis_to_dict(res: SynthesisResult):
    return {
        "kind": "synthesis_result",
        "S": _mat_to_json(res.S),
        "J_syn": res.J_syn,
        "X": _mat_to_json(res.X),
        "L": _mat_to_json(res.L),
        "vertex_P": [_mat_to_json(P) for P in res.vertex_P],
        "vertex_W": [_mat_to_json(W) for W in res.vertex_W],
        "diagnostics": _jsonable(res.diagnostics),
    }


def synthesis_from_dict(d):
    if d.get("kind") != "synthesis_result":
        raise ValueError("not a synthesis result record")
    return SynthesisResult(
        S=_mat_from_json(d["S"]),
        J_syn=float(d["J_syn"]),
        X=_mat_from_json(d["X"]),
        L=_mat_from_json(d["L"]),
        vertex_P=[_mat_from_json(x) for x in d["vertex_P"]],
        vertex_W=[_mat_from_json(x) for x in d["vertex_W"]],
        diagnostics=d.get("diagnostics", {}),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def save_synthesis(res: SynthesisResult, path):
    with open(path, "w") as f:
        json.dump(synthesis_to_dict(res), f, indent=1)


def load_synthesis(path) -> SynthesisResult:
    with open(path) as f:
        return synthesis_from_dict(json.load(f))
