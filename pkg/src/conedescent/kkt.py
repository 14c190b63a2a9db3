"""Assembly and solution of the reduced Newton system.

The full primal-dual Newton system couples (dx, dy, ds, dkappa, dtau) through
an unsymmetric 5-block operator.  It is solved here by splitting off a rank-2
term carrying b, c, and the kappa/tau row, leaving a symmetric quasi-saddle
matrix

    B = [ 0   A'  Ihat' ]
        [ A   0   0     ]
        [ Ihat 0  Dhat  ]

whose scaling block stores every second-order cone of dimension >= 4 as an
(n_i+1) arrow block (3 n_i + 1 nonzeros) instead of a dense n_i^2 block, at
the price of one auxiliary unknown per such cone.  One LDL' factorization per
interior-point iteration serves every right-hand side; the rank-2 part is
recombined through a 2x2 system (two of the three correction columns reduce
to closed forms).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cones
from .cones import ConeLayout, NtScaling
from .sparse import (
    NumericFactorization,
    RegularizationSettings,
    SparseMat,
    amd_order,
    numeric_ldl,
    solve_refined,
    symbolic_ldl,
)
from .sparse import kernels

__all__ = [
    "KktSystem",
    "RhsBundle",
    "NewtonDirection",
    "KktSolveError",
    "SPARSIFY_MIN_DIM",
    "build_normal_equations_baseline",
]

# arrow form wins once 3 n + 1 < n^2
SPARSIFY_MIN_DIM = 4


class KktSolveError(RuntimeError):
    """Newton system could not be solved to acceptable accuracy."""


@dataclass
class NewtonDirection:
    dx: np.ndarray
    dy: np.ndarray
    ds: np.ndarray
    dkappa: float
    dtau: float


@dataclass
class RhsBundle:
    """Right-hand-side data for one Newton solve at a fixed iterate."""

    w1: np.ndarray
    w2: np.ndarray
    w3: float
    w4: np.ndarray
    w5: float
    w4_hat: np.ndarray
    w0: np.ndarray            # ordered (-w2, w1, w4_hat, w5/tau, w3)
    kappa_over_tau: float
    mu: float


@dataclass
class KktStats:
    factorizations: int = 0
    solves: int = 0
    assemblies: int = 0
    max_newton_residual: float = 0.0


class KktSystem:
    """Fixed-pattern reduced Newton system for one problem structure.

    The sparsity pattern, fill-reducing ordering, and symbolic factorization
    are computed once; per-iteration work is a value scatter plus the numeric
    program replay.  Problems sharing the structure (successive linearization
    steps) reuse everything through :meth:`update_problem`.
    """

    def __init__(self, A: SparseMat, b: np.ndarray, c: np.ndarray, layout: ConeLayout,
                 delta_reg: float = 1e-8, max_refine: int = 3,
                 symbolic=None):
        self.layout = layout
        self.n = layout.n
        self.p = A.n_rows
        if A.n_cols != self.n:
            raise ValueError("constraint matrix width disagrees with cone layout")
        if self.n == 0 or layout.cone_count == 0:
            raise ValueError("empty cone layout")
        self.delta_reg = delta_reg
        self.max_refine = max_refine
        self.stats = KktStats()

        self._build_sblock_maps()
        self.dim = self.n + self.p + self.n + self.n_aux
        self._build_pattern(A)

        if symbolic is None:
            self.symbolic = symbolic_ldl(self.B, amd_order(self.B))
        else:
            if not symbolic.matches(self.B):
                raise ValueError("supplied symbolic factorization does not match this pattern")
            self.symbolic = symbolic
        self._reg = RegularizationSettings(delta=delta_reg, signs=None)
        self._fact: NumericFactorization | None = None

        d = self.dim
        self._wt = np.empty(d)
        self._wt2 = np.empty(d)
        self._hat1 = np.empty(d)
        self._hat2 = np.empty(d)
        self._solve_work = np.empty(3 * d)
        nu = self.n + self.p + self.n + 2
        self._u0 = np.empty(nu)
        self._u1 = np.empty(nu)
        self._scal: NtScaling | None = None

        self.update_problem(A, b, c)

    # ---------------- pattern construction ----------------

    def _build_sblock_maps(self):
        layout = self.layout
        self.sparsified = [d >= SPARSIFY_MIN_DIM for d in layout.soc_dims]
        self.n_aux = sum(self.sparsified)
        srow = np.empty(self.n, dtype=np.int64)
        aux_rows = np.empty(self.n_aux, dtype=np.int64)
        srow[: layout.l] = np.arange(layout.l)
        nxt = layout.l
        a = 0
        for i, d in enumerate(layout.soc_dims):
            off = layout.soc_offset(i)
            srow[off: off + d] = np.arange(nxt, nxt + d)
            nxt += d
            if self.sparsified[i]:
                aux_rows[a] = nxt
                nxt += 1
                a += 1
        assert nxt == self.n + self.n_aux
        self.srow = srow            # cone slot -> local row inside the s block
        self.aux_rows_local = aux_rows

    def _build_pattern(self, A: SparseMat):
        layout = self.layout
        n, p = self.n, self.p
        base = n + p
        rows, cols = [], []

        a_cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(A.indptr))
        rows.append(a_cols)                  # entry (iy, jx) of A -> B[jx, n + iy]
        cols.append(A.indices + n)
        n_a_entries = A.nnz

        rows.append(np.arange(n, dtype=np.int64))
        cols.append(base + self.srow)

        lin_rows = base + self.srow[: layout.l]
        rows.append(lin_rows)
        cols.append(lin_rows)

        self._group_maps = []
        for g in layout._groups:
            locs = base + self.srow[g.slots]            # (count, dim)
            if g.dim < SPARSIFY_MIN_DIM:
                iu, ju = np.triu_indices(g.dim)
                rows.append(locs[:, iu].ravel())
                cols.append(locs[:, ju].ravel())
            else:
                aux_of_soc = np.full(layout.m, -1, dtype=np.int64)
                aux_of_soc[[i for i, s in enumerate(self.sparsified) if s]] = self.aux_rows_local
                aux = base + aux_of_soc[g.soc_index]    # (count,)
                rows.append(locs.ravel())
                cols.append(locs.ravel())               # block diagonal of -Q / theta^2
                rows.append(locs.ravel())
                cols.append(np.repeat(aux, g.dim))      # sqrt(2) p column
                rows.append(aux)
                cols.append(aux)                        # -1 / theta^2

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.zeros(rows.size)
        self.B, pos = SparseMat.from_triplets_with_map(self.dim, self.dim, rows, cols, vals, upper=True)

        # carve the position map back apart in construction order
        off = 0
        self._a_pos = pos[off: off + n_a_entries]; off += n_a_entries
        ihat_pos = pos[off: off + n]; off += n
        self._lin_pos = pos[off: off + layout.l]; off += layout.l
        for g in layout._groups:
            count = g.soc_index.size
            if g.dim < SPARSIFY_MIN_DIM:
                sz = count * (g.dim * (g.dim + 1)) // 2
                self._group_maps.append(("dense", pos[off: off + sz].reshape(count, -1)))
                off += sz
            else:
                diag = pos[off: off + count * g.dim].reshape(count, g.dim); off += count * g.dim
                col = pos[off: off + count * g.dim].reshape(count, g.dim); off += count * g.dim
                aux = pos[off: off + count]; off += count
                self._group_maps.append(("arrow", diag, col, aux))
        assert off == pos.size
        self.B.data[ihat_pos] = 1.0

    # ---------------- per-problem / per-iteration updates ----------------

    def update_problem(self, A: SparseMat, b: np.ndarray, c: np.ndarray) -> None:
        """Swap in new values for a problem with the identical structure."""
        if A.n_rows != self.p or A.n_cols != self.n or A.nnz != self._a_pos.size:
            raise ValueError("problem structure changed; build a new KktSystem")
        self.A = A
        self.b = np.asarray(b, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        self.B.data[self._a_pos] = A.data
        # right-hand side (-c, -b, 0) for the constant correction column
        self._wt2[: self.n] = -self.c
        self._wt2[self.n: self.n + self.p] = -self.b
        self._wt2[self.n + self.p:] = 0.0

    def assemble(self, scal: NtScaling) -> None:
        """Write the scaling block values and refactor."""
        layout = self.layout
        self._scal = scal
        if self._reg.delta != self.delta_reg:
            self._reg = RegularizationSettings(delta=self.delta_reg, signs=None)
        data = self.B.data
        if layout.l:
            data[self._lin_pos] = scal.lin_theta ** -2
        for g, th, q, pvec, gmap in zip(layout._groups, scal.group_theta,
                                        scal.group_q, scal.group_p, self._group_maps):
            inv_t2 = th ** -2.0
            if gmap[0] == "dense":
                d = g.dim
                qdiag = np.full(d, -1.0); qdiag[0] = 1.0
                blocks = 2.0 * pvec[:, :, None] * pvec[:, None, :]
                blocks -= np.diag(qdiag)[None, :, :]     # -Q + 2 p p'
                blocks *= inv_t2[:, None, None]
                iu, ju = np.triu_indices(d)
                data[gmap[1]] = blocks[:, iu, ju]
            else:
                d = g.dim
                qdiag = np.full(d, 1.0); qdiag[0] = -1.0  # diagonal of -Q
                data[gmap[1]] = qdiag[None, :] * inv_t2[:, None]
                data[gmap[2]] = np.sqrt(2.0) * pvec * inv_t2[:, None]
                data[gmap[3]] = -inv_t2
        self._fact = numeric_ldl(self.B, self.symbolic, self._reg,
                                 out=self._fact, check_pattern=False)
        self.stats.assemblies += 1
        self.stats.factorizations += 1

    # ---------------- right-hand sides ----------------

    def compute_rhs(self, x, y, s, kappa, tau, scal: NtScaling,
                    e_xs: np.ndarray | None = None, e_kappatau: float = 0.0,
                    nu: float = 0.0) -> RhsBundle:
        layout = self.layout
        n, p = self.n, self.p
        mu = (float(x @ s) + tau * kappa) / (layout.cone_count + 1)

        ax = np.empty(p); kernels.csc_matvec(p, n, self.A.indptr, self.A.indices, self.A.data, x, ax)
        aty = np.empty(n); kernels.csc_t_matvec(p, n, self.A.indptr, self.A.indices, self.A.data, y, aty)
        shrink = -(1.0 - nu)
        w1 = shrink * (ax - self.b * tau)
        w2 = shrink * (-aty + self.c * tau - s)
        w3 = shrink * (float(self.b @ y) - float(self.c @ x) - kappa)

        xbar = cones.apply_scaling(scal, x, "D_inverse")
        sbar = cones.apply_scaling(scal, s, "D")
        w4 = mu * nu * cones.unit_vector(layout) - cones.arrowhead_apply(xbar, sbar, layout)
        if e_xs is not None:
            w4 -= e_xs
        w5 = mu * nu - kappa * tau - e_kappatau
        w4_hat = cones.apply_scaling(scal, cones.arrowhead_solve(xbar, w4, layout), "D")

        w0 = np.concatenate([-w2, w1, w4_hat, [w5 / tau, w3]])
        return RhsBundle(w1=w1, w2=w2, w3=w3, w4=w4, w5=w5, w4_hat=w4_hat,
                         w0=w0, kappa_over_tau=kappa / tau, mu=mu)

    # ---------------- Newton solve ----------------

    def _embed(self, head: np.ndarray, out: np.ndarray) -> None:
        """Spread (x, y, s) rows into B's frame, zeroing auxiliary rows."""
        np_ = self.n + self.p
        out[:np_] = head[:np_]
        out[np_:] = 0.0
        out[np_ + self.srow] = head[np_:]

    def _strip(self, full: np.ndarray, tail0: float, tail1: float, out: np.ndarray) -> None:
        np_ = self.n + self.p
        out[:np_] = full[:np_]
        out[np_: np_ + self.n] = full[np_ + self.srow]
        out[-2] = tail0
        out[-1] = tail1

    def _solve_b(self, rhs: np.ndarray, out: np.ndarray) -> None:
        # best-effort: direction quality is enforced by refinement against the
        # full unsymmetric operator in solve_newton
        solve_refined(self._fact, self.B, rhs, max_refine=self.max_refine,
                      out=out, work=self._solve_work, raise_on_divergence=False)
        self.stats.solves += 1

    def _combine(self, w0_vec: np.ndarray, truncate: bool = False) -> np.ndarray:
        """Solve the rank-2-corrected system for one right-hand side.

        The correction columns (u1 and the closed-form unit vector) are already
        in place, so each extra right-hand side costs a single factored solve.
        """
        n, p = self.n, self.p
        self._embed(w0_vec[:-2], self._wt)
        self._solve_b(self._wt, self._hat1)
        self._strip(self._hat1, float(w0_vec[-2]), float(w0_vec[-1]), self._u0)
        u0, u1 = self._u0, self._u1
        g0, g1 = self._solve_2x2(*self._r2t(u0), truncate)
        u = u0 - g0 * u1
        u[-1] -= g1
        return u

    def _solve_2x2(self, r0: float, r1: float, truncate: bool) -> tuple[float, float]:
        """Combination coefficients from the 2x2 system.

        The truncated variant drops singular values below 1e-6 of the largest.
        Near a singular Newton operator the direct coefficients blow up along
        the operator's null space without improving the residual (which is
        R1 (M g - r) in exact arithmetic), so the caller retries with
        truncation when the direct direction cannot be refined to tolerance.
        """
        if not truncate:
            g0 = (self._m22 * r0 - self._m12 * r1) / self._det
            g1 = (self._m11 * r1 - self._m21 * r0) / self._det
            return g0, g1
        m = np.array([[self._m11, self._m12], [self._m21, self._m22]])
        u_svd, sig, vt = np.linalg.svd(m)
        keep = sig > 1e-6 * sig[0]
        coef = (u_svd.T @ np.array([r0, r1]))[keep] / sig[keep]
        g = vt[keep].T @ coef
        return float(g[0]), float(g[1])

    def _r2t(self, v):
        n, p = self.n, self.p
        return (
            float(v[-1]),
            -float(self.c @ v[:n]) + float(self.b @ v[n: n + p])
            - float(v[-2]) - 0.5 * float(v[-1]),
        )

    def solve_newton(self, rhs: RhsBundle, _retried: bool = False) -> NewtonDirection:
        """Direction solving the original unsymmetric 5-block system.

        After the rank-2 recombination, up to two refinement passes run
        against the full unsymmetric operator; they reuse the factorization
        and the correction columns, so each pass is one triangular solve.
        """
        if self._fact is None:
            raise KktSolveError("assemble() must run before solve_newton()")
        n, p = self.n, self.p
        w0 = rhs.w0
        self._solve_b(self._wt2, self._hat2)
        self._strip(self._hat2, rhs.kappa_over_tau, -0.5, self._u1)

        a1, a2 = self._r2t(self._u1)
        # third column is exactly the last unit vector: R2' u2 = (1, -1/2)
        self._m11, self._m12 = 1.0 + a1, 1.0
        self._m21, self._m22 = a2, 0.5
        self._det = self._m11 * self._m22 - self._m12 * self._m21
        scale = max(abs(self._m11), abs(self._m21), 1.0)
        if abs(self._det) < 1e-14 * scale:
            if _retried:
                raise KktSolveError("singular rank-2 combination matrix")
            self._reg = RegularizationSettings(delta=2.0 * self._reg.delta, signs=None)
            self._fact = numeric_ldl(self.B, self.symbolic, self._reg,
                                     out=self._fact, check_pattern=False)
            self.stats.factorizations += 1
            return self.solve_newton(rhs, _retried=True)

        direction, res = self._combined_refined(rhs, truncate=False)
        # a relative residual stuck above tolerance with the direct combination
        # points at a (near-)singular Newton operator: retry along the stable
        # truncated combination and keep whichever direction checks out better
        if res > 1e-9:
            alt, alt_res = self._combined_refined(rhs, truncate=True)
            if alt_res < res:
                direction = alt
        return direction

    def _combined_refined(self, rhs: RhsBundle, truncate: bool):
        """Combine, then refine against the full unsymmetric operator.

        Each pass contracts the residual by roughly the relative accuracy of
        the factored path, so ill-conditioned moments take several passes.
        """
        n, p = self.n, self.p
        w0 = rhs.w0
        u = self._combine(w0, truncate)
        direction = NewtonDirection(
            dx=u[:n].copy(), dy=u[n: n + p].copy(), ds=u[n + p: 2 * n + p].copy(),
            dkappa=float(u[-2]), dtau=float(u[-1]),
        )
        tol = 1e-10 * (1.0 + float(np.max(np.abs(w0))))
        prev = np.inf
        res = np.inf
        for _ in range(8):
            r = self._b0_residual_vector(direction, rhs)
            res = float(np.max(np.abs(r)))
            if res <= tol or res >= 0.5 * prev:
                break
            prev = res
            du = self._combine(r, truncate)
            direction.dx += du[:n]
            direction.dy += du[n: n + p]
            direction.ds += du[n + p: 2 * n + p]
            direction.dkappa += float(du[-2])
            direction.dtau += float(du[-1])
        return direction, res / (1.0 + float(np.max(np.abs(w0))))

    def _b0_residual_vector(self, d: NewtonDirection, rhs: RhsBundle) -> np.ndarray:
        """w0 - B0 u for the original unsymmetric 5-block operator."""
        n, p = self.n, self.p
        ax = np.empty(p); kernels.csc_matvec(p, n, self.A.indptr, self.A.indices, self.A.data, d.dx, ax)
        aty = np.empty(n); kernels.csc_t_matvec(p, n, self.A.indptr, self.A.indices, self.A.data, d.dy, aty)
        scal = self._scal
        d2ds = cones.apply_scaling(scal, cones.apply_scaling(scal, d.ds, "D"), "D")
        return np.concatenate([
            rhs.w0[:n] - (aty + d.ds - self.c * d.dtau),
            rhs.w0[n: n + p] - (ax - self.b * d.dtau),
            rhs.w4_hat - (d.dx + d2ds),
            [rhs.w0[-2] - (d.dkappa + rhs.kappa_over_tau * d.dtau),
             rhs.w0[-1] - (-float(self.c @ d.dx) + float(self.b @ d.dy) - d.dkappa)],
        ])

    def newton_residual(self, d: NewtonDirection, rhs: RhsBundle) -> float:
        """Residual of the direction in the original 5-block system,
        normalized by (1 + |w0|_inf)."""
        r = self._b0_residual_vector(d, rhs)
        res = float(np.max(np.abs(r))) / (1.0 + float(np.max(np.abs(rhs.w0))))
        self.stats.max_newton_residual = max(self.stats.max_newton_residual, res)
        return res


def build_normal_equations_baseline(A: SparseMat, layout: ConeLayout,
                                    scal: NtScaling) -> SparseMat:
    """Explicit A D^2 A' with dense per-cone scaling blocks (comparison only)."""
    import scipy.sparse as sp

    rows, cols, vals = [], [], []
    lin = np.arange(layout.l)
    rows.append(lin); cols.append(lin); vals.append(scal.lin_theta ** -2.0)
    for g, th, pvec in zip(layout._groups, scal.group_theta, scal.group_p):
        d = g.dim
        qdiag = np.full(d, -1.0); qdiag[0] = 1.0
        blocks = 2.0 * pvec[:, :, None] * pvec[:, None, :] - np.diag(qdiag)[None, :, :]
        blocks *= (th ** -2.0)[:, None, None]
        rr = np.repeat(g.slots, d, axis=1)
        cc = np.tile(g.slots, (1, d))
        rows.append(rr.ravel()); cols.append(cc.ravel()); vals.append(blocks.ravel())
    d2 = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(layout.n, layout.n),
    )
    a_sp = sp.csc_matrix((A.data, A.indices, A.indptr), shape=A.shape)
    m = (a_sp @ d2 @ a_sp.T).tocoo()
    return SparseMat.from_triplets(A.n_rows, A.n_rows, m.row, m.col, m.data, upper=False)
