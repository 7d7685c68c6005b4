"""A small dense LMI solver: linear objective over matrix variables.

Problems are stated as named matrix variables plus affine constraints

    M(vars) >= eps * I    (one block per constraint),

and a linear objective to minimize.  Internally the variables pack into a
vector y and each constraint compiles to F0 + sum_i y_i F_i >= 0 with the
eps margin folded into F0; coefficient matrices are extracted numerically
by probing the constraint's assemble callback on basis vectors, which
keeps the modeling surface tiny.

The solver is a primal-dual path-following interior-point method with
Nesterov-Todd scaling.  A phase-1 embedding (minimize s subject to
F(y) + s I >= 0, s >= -1) produces a strictly feasible start or an
infeasibility certificate; phase 2 then follows the central path from the
dual-feasible point.  Dense linear algebra throughout; problem sizes here
are at most a few hundred scalar unknowns.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "MatrixVariable",
    "LMIConstraint",
    "SDPSolution",
    "SDPError",
    "solve",
    "min_eig",
    "dump_problem",
]

DEFAULT_EPS = 1e-8
DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200
STEP_FRACTION = 0.98
UNBOUNDED_THRESHOLD = 1e12


class SDPError(ValueError):
    """Malformed problem data (shape mismatch, non-affine constraint, ...)."""


@dataclass(frozen=True)
class MatrixVariable:
    """A named matrix decision variable.

    ``structure`` is ``"symmetric"`` (packed upper triangle; values are
    returned exactly symmetric) or ``"rectangular"`` (all entries free).
    Scalars are 1x1 rectangular variables.
    """

    name: str
    shape: tuple
    structure: str = "rectangular"

    def __post_init__(self):
        r, c = self.shape
        if self.structure not in ("symmetric", "rectangular"):
            raise SDPError(f"unknown structure '{self.structure}'")
        if self.structure == "symmetric" and r != c:
            raise SDPError("symmetric variables must be square")

    @property
    def packed_size(self):
        r, c = self.shape
        return r * (r + 1) // 2 if self.structure == "symmetric" else r * c

    def zero(self):
        return np.zeros(self.shape)

    def unpack(self, vec):
        """Packed coordinates -> full matrix (symmetric filled both sides)."""
        r, c = self.shape
        if self.structure == "rectangular":
            return np.asarray(vec, dtype=float).reshape(r, c)
        m = np.zeros((r, r))
        iu = np.triu_indices(r)
        m[iu] = vec
        m.T[iu] = vec
        return m

    def pack(self, mat):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != tuple(self.shape):
            raise SDPError(f"value for {self.name} has shape {mat.shape}")
        if self.structure == "rectangular":
            return mat.ravel().copy()
        return mat[np.triu_indices(self.shape[0])].copy()


@dataclass(frozen=True)
class LMIConstraint:
    """An affine-in-the-variables symmetric block required >= eps*I."""

    name: str
    variables: tuple
    assemble: Callable[[dict], np.ndarray]


@dataclass
class SDPSolution:
    values: dict
    objective: float
    status: str  # optimal | infeasible | max-iterations | unbounded
    diagnostics: dict = field(default_factory=dict)
    certificate: dict | None = None


def _sym(m):
    return 0.5 * (m + m.T)


def _check_symmetric(m, where, tol=1e-9):
    skew = np.max(np.abs(m - m.T)) if m.size else 0.0
    if skew > tol * max(1.0, np.max(np.abs(m)) if m.size else 0.0):
        raise SDPError(f"{where}: block is not symmetric (skew {skew:.2e})")


def min_eig(matrix):
    """Smallest eigenvalue of a symmetric matrix."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise SDPError("min_eig expects a square matrix")
    _check_symmetric(m, "min_eig")
    return float(np.linalg.eigvalsh(_sym(m))[0])


# ---------------------------------------------------------------------------
# Problem compilation
# ---------------------------------------------------------------------------


class _Block:
    """One compiled constraint: F0 + sum_i y[idx[i]] * T[i] >= 0."""

    __slots__ = ("name", "n", "F0", "T", "idx")

    def __init__(self, name, n, F0, T, idx):
        self.name = name
        self.n = n
        self.F0 = F0
        self.T = T  # (m_b, n, n) symmetric coefficient matrices
        self.idx = idx  # (m_b,) global variable coordinates

    def value(self, y):
        if self.idx.size:
            return self.F0 + np.einsum("i,ijk->jk", y[self.idx], self.T)
        return self.F0.copy()


def _variable_index(constraints, objective):
    order = []
    seen = {}
    for con in constraints:
        for v in con.variables:
            prev = seen.get(v.name)
            if prev is None:
                seen[v.name] = v
                order.append(v)
            elif prev.shape != v.shape or prev.structure != v.structure:
                raise SDPError(f"conflicting declarations of variable '{v.name}'")
    for name in objective:
        if name not in seen:
            raise SDPError(f"objective references unknown variable '{name}'")
    offsets = {}
    total = 0
    for v in order:
        offsets[v.name] = total
        total += v.packed_size
    return order, offsets, total


def _pack_objective(objective, order, offsets, total):
    c = np.zeros(total)
    for v in order:
        if v.name not in objective:
            continue
        coeff = np.asarray(objective[v.name], dtype=float)
        if coeff.shape == () and v.shape == (1, 1):
            coeff = coeff.reshape(1, 1)
        if coeff.shape != tuple(v.shape):
            raise SDPError(
                f"objective coefficient for '{v.name}' has shape {coeff.shape}, "
                f"expected {v.shape}"
            )
        base = offsets[v.name]
        for k in range(v.packed_size):
            e = np.zeros(v.packed_size)
            e[k] = 1.0
            c[base + k] = float(np.sum(coeff * v.unpack(e)))
    return c


def _compile_blocks(constraints, offsets, eps, scale):
    rng = np.random.default_rng(0)
    blocks = []
    for con in constraints:
        zeros = {v.name: v.zero() for v in con.variables}
        base = np.atleast_2d(np.asarray(con.assemble(zeros), dtype=float))
        if base.shape[0] != base.shape[1]:
            raise SDPError(f"constraint '{con.name}': block is not square")
        _check_symmetric(base, f"constraint '{con.name}'")
        n = base.shape[0]
        base = _sym(base)
        mats, idx = [], []
        for v in con.variables:
            off = offsets[v.name]
            for k in range(v.packed_size):
                e = np.zeros(v.packed_size)
                e[k] = 1.0
                vals = {w.name: w.zero() for w in con.variables}
                vals[v.name] = v.unpack(e)
                Fk = np.atleast_2d(np.asarray(con.assemble(vals), dtype=float))
                if Fk.shape != base.shape:
                    raise SDPError(f"constraint '{con.name}': inconsistent block shape")
                _check_symmetric(Fk, f"constraint '{con.name}' ({v.name})")
                Fk = _sym(Fk) - base
                if np.any(Fk != 0.0):
                    mats.append(Fk)
                    idx.append(off + k)
        T = np.stack(mats) if mats else np.zeros((0, n, n))
        idx = np.array(idx, dtype=int)

        # affinity spot-check: a random point must match F0 + sum y_i F_i
        probe = {
            v.name: v.unpack(rng.standard_normal(v.packed_size)) for v in con.variables
        }
        span = max((offsets[v.name] + v.packed_size for v in con.variables), default=0)
        yfull = np.zeros(span)
        for v in con.variables:
            yfull[offsets[v.name] : offsets[v.name] + v.packed_size] = v.pack(
                probe[v.name]
            )
        got = _sym(np.atleast_2d(np.asarray(con.assemble(probe), dtype=float)))
        want = base + (np.einsum("i,ijk->jk", yfull[idx], T) if idx.size else 0.0)
        err = np.max(np.abs(got - want)) if got.size else 0.0
        if err > 1e-8 * max(1.0, np.max(np.abs(got))):
            raise SDPError(f"constraint '{con.name}' is not affine in its variables")

        F0 = base - eps * np.eye(n)
        gamma = 1.0
        if scale:
            peak = max([np.max(np.abs(F0))] + ([np.max(np.abs(T))] if mats else []))
            if peak > 0:
                gamma = 1.0 / max(1.0, peak)
        blocks.append(_Block(con.name, n, gamma * F0, gamma * T, idx))
    return blocks


# ---------------------------------------------------------------------------
# Core interior-point iteration (requires a strictly feasible y0)
# ---------------------------------------------------------------------------


def _eig_factors(S):
    w, Q = np.linalg.eigh(_sym(S))
    # relative floor: keeps the scaling finite when a slack block hits its
    # boundary at convergence (an active constraint makes Z singular)
    w = np.maximum(w, 1e-16 * max(float(w[-1]), 1e-200))
    return w, Q


def _max_step(S, dS):
    """sup {a : S + a dS >= 0} given S > 0, via the scaled eigenproblem."""
    w, Q = _eig_factors(S)
    inv_sqrt = Q * (1.0 / np.sqrt(w))
    G = inv_sqrt.T @ dS @ inv_sqrt
    lam = np.linalg.eigvalsh(_sym(G))[0]
    if lam >= -1e-16:
        return np.inf
    return -1.0 / lam


def _nt_scaling(X, Z):
    """NT scaling point W (symmetric, W Z W = X) plus Z^{-1}."""
    wz, Qz = _eig_factors(Z)
    z_half = (Qz * np.sqrt(wz)) @ Qz.T
    z_inv_half = (Qz * (1.0 / np.sqrt(wz))) @ Qz.T
    z_inv = (Qz * (1.0 / wz)) @ Qz.T
    wt, Qt = _eig_factors(z_half @ X @ z_half)
    t_half = (Qt * np.sqrt(wt)) @ Qt.T
    W = z_inv_half @ t_half @ z_inv_half
    return _sym(W), _sym(z_inv)


def _ipm(blocks, c, y0, tol, feas_tol, max_iter, stop_early=None):
    """Path-following from a strictly dual-feasible start y0.

    Returns (y, X_blocks, info) where info["status"] is "optimal",
    "max-iterations", "unbounded" or "early" (stop_early fired).
    """
    m = c.size
    nu = sum(b.n for b in blocks)
    y = y0.copy()
    Z = [b.value(y) for b in blocks]
    tau = max(1.0, float(np.linalg.norm(c)) / max(1.0, np.sqrt(m)))
    X = [tau * np.eye(b.n) for b in blocks]

    info = {"iterations": 0, "status": "max-iterations"}
    for it in range(max_iter):
        obj = float(c @ y)
        gap = sum(float(np.sum(Xb * Zb)) for Xb, Zb in zip(X, Z))
        ax = np.zeros(m)
        for b, Xb in zip(blocks, X):
            if b.idx.size:
                ax[b.idx] += np.einsum("ijk,jk->i", b.T, Xb)
        rp = c - ax
        lower = -sum(float(np.sum(b.F0 * Xb)) for b, Xb in zip(blocks, X))
        rel_gap = gap / (1.0 + abs(obj) + abs(lower))
        rp_rel = float(np.linalg.norm(rp)) / (1.0 + float(np.linalg.norm(c)))
        info.update(
            iterations=it,
            objective=obj,
            gap=gap,
            rel_gap=rel_gap,
            primal_residual=rp_rel,
            lower_bound=lower,
        )
        if stop_early is not None and stop_early(obj, y):
            info["status"] = "early"
            return y, X, info
        if rel_gap <= tol and rp_rel <= feas_tol:
            info["status"] = "optimal"
            return y, X, info
        if obj < -UNBOUNDED_THRESHOLD:
            info["status"] = "unbounded"
            return y, X, info

        mu = gap / nu
        scal = [_nt_scaling(Xb, Zb) for Xb, Zb in zip(X, Z)]

        M = np.zeros((m, m))
        a_zinv = np.zeros(m)
        for b, (W, z_inv) in zip(blocks, scal):
            if b.idx.size == 0:
                continue
            wtw = W @ b.T @ W  # (m_b, n, n)
            Mb = b.T.reshape(b.idx.size, -1) @ wtw.reshape(b.idx.size, -1).T
            M[np.ix_(b.idx, b.idx)] += Mb
            a_zinv[b.idx] += np.einsum("ijk,jk->i", b.T, z_inv)

        jitter = 0.0
        trace_scale = max(np.trace(M) / max(m, 1), 1e-20)
        L = None
        for attempt in range(8):
            try:
                L = np.linalg.cholesky(M + jitter * np.eye(m))
                break
            except np.linalg.LinAlgError:
                jitter = trace_scale * 10.0 ** (attempt - 13)
        if L is None:
            info["status"] = "max-iterations"
            info["note"] = "schur factorization failed"
            return y, X, info

        def newton(sigma_mu):
            """Directions for the target sigma*mu; returns (dy, dZ, dX)."""
            rhs = sigma_mu * a_zinv - c
            dy = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
            dZ, dX = [], []
            for b, (W, z_inv), Xb in zip(blocks, scal, X):
                dZb = (
                    _sym(np.einsum("i,ijk->jk", dy[b.idx], b.T))
                    if b.idx.size
                    else np.zeros((b.n, b.n))
                )
                dZ.append(dZb)
                dX.append(_sym(sigma_mu * z_inv - W @ dZb @ W) - Xb)
            return dy, dZ, dX

        # predictor (affine direction) picks the centering parameter
        _, dZ_a, dX_a = newton(0.0)
        ap = min(1.0, min(_max_step(Xb, dXb) for Xb, dXb in zip(X, dX_a)))
        ad = min(1.0, min(_max_step(Zb, dZb) for Zb, dZb in zip(Z, dZ_a)))
        gap_aff = sum(
            float(np.sum((Xb + ap * dXb) * (Zb + ad * dZb)))
            for Xb, Zb, dXb, dZb in zip(X, Z, dX_a, dZ_a)
        )
        sigma = min(0.999, max(1e-6, (max(gap_aff, 0.0) / gap) ** 3))
        if rp_rel > 10.0 * rel_gap:
            # stay centered until primal feasibility catches up with the gap
            sigma = max(sigma, 0.5)

        dy, dZ, dX = newton(sigma * mu)
        ap = min(1.0, STEP_FRACTION * min(_max_step(Xb, dXb) for Xb, dXb in zip(X, dX)))
        ad = min(1.0, STEP_FRACTION * min(_max_step(Zb, dZb) for Zb, dZb in zip(Z, dZ)))

        X = [_sym(Xb + ap * dXb) for Xb, dXb in zip(X, dX)]
        y_new = y + ad * dy
        # recompute the slack from y so dual feasibility stays exact; back
        # off if roundoff pushed a block to the boundary
        for _ in range(30):
            Z_new = [b.value(y_new) for b in blocks]
            if all(np.linalg.eigvalsh(Zb)[0] > 0 for Zb in Z_new):
                break
            ad *= 0.5
            y_new = y + ad * dy
        else:
            info["status"] = "max-iterations"
            info["note"] = "no interior step available"
            return y, X, info
        y, Z = y_new, Z_new

    return y, X, info


# ---------------------------------------------------------------------------
# Public entry point: phase-1 feasibility, then phase-2 optimization
# ---------------------------------------------------------------------------


def solve(
    objective,
    constraints,
    eps=DEFAULT_EPS,
    tol=DEFAULT_TOL,
    feas_tol=None,
    max_iter=DEFAULT_MAX_ITER,
    scale=True,
):
    """Minimize a linear functional subject to LMI constraints.

    Parameters
    ----------
    objective : dict
        Maps variable names to coefficient arrays; the objective is
        ``sum_v sum(coeff_v * value_v)``.  An empty dict solves a pure
        feasibility problem.
    constraints : sequence of LMIConstraint
        Each block must be affine in its declared variables and is
        required to satisfy ``block >= eps * I``.
    eps, tol, max_iter :
        Strictness margin, relative duality-gap tolerance, iteration cap.

    Returns an SDPSolution; statuses are "optimal", "infeasible",
    "max-iterations" or "unbounded".  Deterministic for identical inputs.
    """
    if not constraints:
        raise SDPError("need at least one constraint")
    feas_tol = tol if feas_tol is None else feas_tol
    order, offsets, total = _variable_index(constraints, objective)
    if total == 0:
        raise SDPError("need at least one variable")
    blocks = _compile_blocks(constraints, offsets, eps, scale)
    c = _pack_objective(objective, order, offsets, total)

    touched = np.zeros(total, dtype=bool)
    for b in blocks:
        touched[b.idx] = True
    if np.any(~touched & (c != 0.0)):
        bad = int(np.argmax(~touched & (c != 0.0)))
        return _finish(
            None, np.nan, blocks, order, offsets,
            status="unbounded",
            diagnostics={"note": f"objective coordinate {bad} is unconstrained"},
        )
    keep = np.flatnonzero(touched)
    if keep.size == 0:
        y = np.zeros(total)
        return _finish(y, 0.0, blocks, order, offsets,
                       status="optimal", diagnostics={"note": "no active variables"})
    remap = -np.ones(total, dtype=int)
    remap[keep] = np.arange(keep.size)
    red_blocks = [_Block(b.name, b.n, b.F0, b.T, remap[b.idx]) for b in blocks]
    red_c = c[keep]

    diagnostics = {}
    y_feas, feas_info = _phase1(red_blocks, keep.size, tol, max_iter)
    diagnostics["phase1"] = feas_info
    if y_feas is None:
        return _finish(
            None, np.nan, blocks, order, offsets,
            status="infeasible",
            diagnostics=diagnostics,
            certificate=feas_info.get("certificate"),
        )

    y_red, X, info = _ipm(red_blocks, red_c, y_feas, tol, feas_tol, max_iter)
    diagnostics.update(
        iterations=info.get("iterations"),
        gap=info.get("gap"),
        rel_gap=info.get("rel_gap"),
        primal_residual=info.get("primal_residual"),
        lower_bound=info.get("lower_bound"),
    )
    if "note" in info:
        diagnostics["note"] = info["note"]
    y = np.zeros(total)
    y[keep] = y_red
    return _finish(y, float(red_c @ y_red), blocks, order, offsets,
                   status=info["status"], diagnostics=diagnostics)


def _phase1(blocks, m, tol, max_iter):
    """Find strictly feasible y (or None) for F(y) >= 0.

    Embedding: minimize s subject to F(y) + s I >= 0 and s >= -1, which
    always admits the interior start y = 0, s = margin(F(0)) + pad.
    """
    lam0 = min(np.linalg.eigvalsh(_sym(b.F0))[0] for b in blocks)
    scale0 = max(max(np.max(np.abs(b.F0)) for b in blocks), 1.0)
    if lam0 > 1e-10 * scale0:
        return np.zeros(m), {"status": "interior-at-zero", "margin": float(lam0)}

    ext = []
    for b in blocks:
        T = np.concatenate([b.T, np.eye(b.n)[None]], axis=0)
        idx = np.concatenate([b.idx, [m]])
        ext.append(_Block(b.name, b.n, b.F0, T, idx))
    ext.append(
        _Block("_phase1_bound", 1, np.array([[1.0]]), np.ones((1, 1, 1)), np.array([m]))
    )
    c = np.zeros(m + 1)
    c[m] = 1.0
    y0 = np.zeros(m + 1)
    y0[m] = -lam0 + 0.1 * scale0 + 1.0

    target = -1e-4 * max(1.0, abs(lam0))  # deep enough interior to hand off

    y, X, info = _ipm(ext, c, y0, tol, tol, max_iter,
                      stop_early=lambda obj, _y: obj < target)
    s = float(y[m])
    out = {"status": info["status"], "s": s, "iterations": info.get("iterations")}
    if s < -1e-12 * scale0:
        return y[:m], out
    # no strictly feasible point: report a separating certificate built
    # from the phase-1 multipliers (tr(F_i Xhat) ~ 0, tr(F0 Xhat) < 0)
    cert = {"s_optimal": s}
    ax = np.zeros(m)
    tr_sum = 0.0
    f0x = 0.0
    for b, Xb in zip(ext[:-1], X[:-1]):
        live = b.idx[:-1]
        if live.size:
            ax[live] += np.einsum("ijk,jk->i", b.T[:-1], Xb)
        tr_sum += float(np.trace(Xb))
        f0x += float(np.sum(b.F0 * Xb))
    if tr_sum > 0:
        cert["value"] = f0x / tr_sum  # < 0 witnesses infeasibility
        cert["orthogonality_residual"] = float(np.linalg.norm(ax)) / tr_sum
    out["certificate"] = cert
    return None, out


def _finish(y, objective, blocks, order, offsets, status, diagnostics, certificate=None):
    values = {}
    diagnostics = dict(diagnostics)
    if y is not None:
        for v in order:
            values[v.name] = v.unpack(y[offsets[v.name] : offsets[v.name] + v.packed_size])
        diagnostics["constraint_margins"] = {
            b.name: float(np.linalg.eigvalsh(_sym(b.value(y)))[0]) for b in blocks
        }
    return SDPSolution(
        values=values,
        objective=float(objective),
        status=status,
        diagnostics=diagnostics,
        certificate=certificate,
    )


def dump_problem(objective, constraints, path, eps=DEFAULT_EPS):
    """Write the assembled problem as documented plain text.

    Layout: a variable table (name, shape, structure, offset), the packed
    objective vector's nonzeros, then per constraint the base matrix F0
    (eps already subtracted) and each coefficient matrix labeled by its
    global variable coordinate.
    """
    order, offsets, total = _variable_index(constraints, objective)
    blocks = _compile_blocks(constraints, offsets, eps, scale=False)
    c = _pack_objective(objective, order, offsets, total)

    def fmt(mat):
        return "\n".join(
            "  " + " ".join(f"{v: .17g}" for v in row) for row in np.atleast_2d(mat)
        )

    lines = [
        "# kooph2 LMI problem dump",
        f"# variables: {total} scalar coordinates",
        "",
        "variables:",
    ]
    for v in order:
        lines.append(
            f"  {v.name} shape={v.shape[0]}x{v.shape[1]} {v.structure} "
            f"offset={offsets[v.name]} size={v.packed_size}"
        )
    lines += ["", "objective (minimize), nonzero coordinates:"]
    for i in np.flatnonzero(c):
        lines.append(f"  c[{i}] = {c[i]:.17g}")
    for b in blocks:
        lines += [
            "",
            f"constraint {b.name}: dim {b.n}, margin eps={eps:g} folded into F0",
            "F0:",
            fmt(b.F0),
        ]
        for local, g in enumerate(b.idx):
            lines.append(f"F[y_{g}]:")
            lines.append(fmt(b.T[local]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
