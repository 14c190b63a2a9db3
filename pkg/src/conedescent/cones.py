"""Cone layout bookkeeping and O(n) per-cone algebra.

Every solver vector of length ``n`` is interpreted against a :class:`ConeLayout`:
``l`` one-dimensional nonnegative slots first, followed by ``m`` second-order
(Lorentz) cone blocks.  All operations here (memberships, arrowhead products,
Nesterov-Todd scalings, boundary step sizes) run in O(n) by grouping the
second-order cones by dimension and using rank-1 identities instead of
materialized matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConeLayout",
    "NtScaling",
    "SingularArrowheadError",
    "NotInteriorError",
    "unit_vector",
    "membership",
    "arrowhead_apply",
    "arrowhead_solve",
    "compute_nt_scaling",
    "apply_scaling",
    "max_step",
]


class SingularArrowheadError(ValueError):
    """Arrowhead operator is singular; the iterate has left the cone interior."""


class NotInteriorError(ValueError):
    """A point required to be strictly interior is on or outside the cone."""


@dataclass(frozen=True)
class _DimGroup:
    """All second-order cones of one dimension, for vectorized block algebra."""

    dim: int
    soc_index: np.ndarray  # indices into layout.soc_dims, shape (count,)
    slots: np.ndarray      # slot index matrix, shape (count, dim)


@dataclass(frozen=True)
class ConeLayout:
    """Cartesian product of ``l`` linear cones and second-order cones.

    One-dimensional second-order cones are folded into the linear block at
    construction, provided they appear before any higher-dimensional cone
    (folding later ones would silently permute the variable order).
    """

    l: int
    soc_dims: tuple[int, ...] = ()
    _groups: tuple[_DimGroup, ...] = field(init=False, repr=False, compare=False)
    _soc_offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.l < 0:
            raise ValueError("linear cone count must be nonnegative")
        dims = tuple(int(d) for d in self.soc_dims)
        if any(d < 1 for d in dims):
            raise ValueError("cone dimensions must be positive")
        n_ones = sum(1 for d in dims if d == 1)
        if n_ones:
            if any(d == 1 for d in dims[n_ones:]):
                raise ValueError(
                    "1-dimensional second-order cones can only be folded into the "
                    "linear block when they precede every higher-dimensional cone"
                )
            object.__setattr__(self, "l", self.l + n_ones)
            dims = dims[n_ones:]
        object.__setattr__(self, "soc_dims", dims)

        offsets = self.l + np.concatenate(([0], np.cumsum(dims))).astype(np.int64)
        object.__setattr__(self, "_soc_offsets", offsets)

        groups = []
        dims_arr = np.asarray(dims, dtype=np.int64)
        for d in sorted(set(dims)):
            idx = np.flatnonzero(dims_arr == d)
            starts = offsets[idx]
            slots = starts[:, None] + np.arange(d, dtype=np.int64)[None, :]
            groups.append(_DimGroup(dim=d, soc_index=idx, slots=slots))
        object.__setattr__(self, "_groups", tuple(groups))

    @property
    def m(self) -> int:
        return len(self.soc_dims)

    @property
    def n(self) -> int:
        return int(self._soc_offsets[-1]) if self.m else self.l

    @property
    def cone_count(self) -> int:
        return self.l + self.m

    def soc_offset(self, i: int) -> int:
        """Start slot of the i-th second-order cone."""
        return int(self._soc_offsets[i])

    def soc_slice(self, i: int) -> slice:
        return slice(int(self._soc_offsets[i]), int(self._soc_offsets[i + 1]))

    def check_vector(self, v: np.ndarray) -> np.ndarray:
        v = np.ascontiguousarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"vector has shape {v.shape}, layout needs ({self.n},)")
        return v


def unit_vector(layout: ConeLayout) -> np.ndarray:
    """Identity element of the cone algebra: 1 per linear slot, (1,0,...,0) per SOC."""
    e = np.zeros(layout.n)
    e[: layout.l] = 1.0
    e[layout._soc_offsets[:-1]] = 1.0
    return e


def _soc_gather(v: np.ndarray, g: _DimGroup) -> np.ndarray:
    return v[g.slots]


def membership(v: np.ndarray, layout: ConeLayout, strict: bool = False) -> bool:
    """Whether ``v`` lies in the cone (strictly interior if ``strict``).

    Strict membership requires a margin above ``1e-13 * (1 + |block|)`` per cone
    block, guarding downstream square roots against roundoff.
    """
    v = layout.check_vector(v)
    lin = v[: layout.l]
    if strict:
        tol = 1e-13 * (1.0 + np.abs(lin))
        if not np.all(lin > tol):
            return False
    else:
        if not np.all(lin >= 0.0):
            return False
    for g in layout._groups:
        blk = _soc_gather(v, g)
        margin = blk[:, 0] - np.linalg.norm(blk[:, 1:], axis=1)
        if strict:
            tol = 1e-13 * (1.0 + np.linalg.norm(blk, axis=1))
            if not np.all(margin > tol):
                return False
        else:
            if not np.all(margin >= 0.0):
                return False
    return True


def arrowhead_apply(h: np.ndarray, v: np.ndarray, layout: ConeLayout) -> np.ndarray:
    """mat(h) @ v without materializing the block arrowhead matrix."""
    h = layout.check_vector(h)
    v = layout.check_vector(v)
    out = np.empty_like(v)
    out[: layout.l] = h[: layout.l] * v[: layout.l]
    for g in layout._groups:
        hb = _soc_gather(h, g)
        vb = _soc_gather(v, g)
        res = np.empty_like(vb)
        res[:, 0] = np.einsum("ij,ij->i", hb, vb)
        res[:, 1:] = hb[:, :1] * vb[:, 1:] + vb[:, :1] * hb[:, 1:]
        out[g.slots.ravel()] = res.ravel()
    return out


def arrowhead_solve(h: np.ndarray, v: np.ndarray, layout: ConeLayout) -> np.ndarray:
    """mat(h)^{-1} @ v, per cone in closed form.

    For a SOC block (a, b) the arrowhead inverse applied to (v1, v2) is
    y1 = (a v1 - b.v2) / (a^2 - |b|^2) and y2 = (v2 - y1 b) / a, which fails
    exactly when the block is singular (a = 0 or a^2 = |b|^2).
    """
    h = layout.check_vector(h)
    v = layout.check_vector(v)
    out = np.empty_like(v)
    hl = h[: layout.l]
    if np.any(hl == 0.0):
        raise SingularArrowheadError("zero linear component in arrowhead operator")
    out[: layout.l] = v[: layout.l] / hl
    for g in layout._groups:
        hb = _soc_gather(h, g)
        vb = _soc_gather(v, g)
        a = hb[:, 0]
        det = a * a - np.einsum("ij,ij->i", hb[:, 1:], hb[:, 1:])
        if np.any(a == 0.0) or np.any(det == 0.0):
            raise SingularArrowheadError("singular SOC arrowhead block")
        y1 = (a * vb[:, 0] - np.einsum("ij,ij->i", hb[:, 1:], vb[:, 1:])) / det
        res = np.empty_like(vb)
        res[:, 0] = y1
        res[:, 1:] = (vb[:, 1:] - y1[:, None] * hb[:, 1:]) / a[:, None]
        out[g.slots.ravel()] = res.ravel()
    return out


@dataclass
class NtScaling:
    """Nesterov-Todd scaling of a strictly interior primal-dual pair.

    Holds per-cone scalars theta, and for every SOC the point ``q`` on the unit
    hyperbolic sheet (q' Q q = 1) plus the cached product ``p = Q q``.  The
    scaling matrices D = (Theta G)^{-1} are never formed; they are applied
    through rank-1 updates.
    """

    layout: ConeLayout
    lin_theta: np.ndarray                 # shape (l,)
    group_theta: list[np.ndarray]         # per dim group, shape (count,)
    group_q: list[np.ndarray]             # per dim group, shape (count, dim)
    group_p: list[np.ndarray]             # per dim group, Q q

    def theta_of(self, cone_index: int) -> float:
        """theta of the cone at position ``cone_index`` (linear cones first)."""
        if cone_index < self.layout.l:
            return float(self.lin_theta[cone_index])
        soc = cone_index - self.layout.l
        for g, th in zip(self.layout._groups, self.group_theta):
            pos = np.flatnonzero(g.soc_index == soc)
            if pos.size:
                return float(th[pos[0]])
        raise IndexError(cone_index)

    def q_of(self, soc_index: int) -> np.ndarray:
        for g, q in zip(self.layout._groups, self.group_q):
            pos = np.flatnonzero(g.soc_index == soc_index)
            if pos.size:
                return q[pos[0]].copy()
        raise IndexError(soc_index)

    def d2_block(self, soc_index: int) -> np.ndarray:
        """Dense (D^2) block of one SOC: theta^{-2} (-Q + 2 p p')."""
        for g, th, p in zip(self.layout._groups, self.group_theta, self.group_p):
            pos = np.flatnonzero(g.soc_index == soc_index)
            if pos.size:
                i = pos[0]
                Q = np.eye(g.dim)
                Q[1:, 1:] *= -1.0
                return (-Q + 2.0 * np.outer(p[i], p[i])) / th[i] ** 2
        raise IndexError(soc_index)


def compute_nt_scaling(x: np.ndarray, s: np.ndarray, layout: ConeLayout) -> NtScaling:
    """Nesterov-Todd scaling point for strictly interior ``x``, ``s``.

    Interiority is enforced through the quantities the formulas actually
    need (positive linear slots, positive hyperbolic forms per SOC), so the
    scaling stays computable for nearly converged iterates whose boundary
    margins are tiny but genuinely positive.
    """
    x = layout.check_vector(x)
    s = layout.check_vector(s)
    if layout.l and (np.any(x[: layout.l] <= 0.0) or np.any(s[: layout.l] <= 0.0)):
        raise NotInteriorError("NT scaling needs strictly interior x and s")

    lin_theta = np.sqrt(s[: layout.l] / x[: layout.l]) if layout.l else np.empty(0)

    group_theta, group_q, group_p = [], [], []
    for g in layout._groups:
        xb = _soc_gather(x, g)
        sb = _soc_gather(s, g)
        # v' Q v = v1^2 - |v_2:|^2, positive in the interior
        xqx = xb[:, 0] ** 2 - np.einsum("ij,ij->i", xb[:, 1:], xb[:, 1:])
        sqs = sb[:, 0] ** 2 - np.einsum("ij,ij->i", sb[:, 1:], sb[:, 1:])
        if (np.any(xqx <= 0.0) or np.any(sqs <= 0.0)
                or np.any(xb[:, 0] <= 0.0) or np.any(sb[:, 0] <= 0.0)):
            raise NotInteriorError("nonpositive quadratic form under the NT square root")
        theta = (sqs / xqx) ** 0.25
        qx = np.empty_like(xb)
        qx[:, 0] = xb[:, 0]
        qx[:, 1:] = -xb[:, 1:]
        xs = np.einsum("ij,ij->i", xb, sb)
        denom = 2.0 * (xs + np.sqrt(xqx * sqs))
        if np.any(denom <= 0.0):
            raise NotInteriorError("degenerate pair in NT scaling")
        q = (sb / theta[:, None] + theta[:, None] * qx) / np.sqrt(denom)[:, None]
        p = np.empty_like(q)
        p[:, 0] = q[:, 0]
        p[:, 1:] = -q[:, 1:]
        group_theta.append(theta)
        group_q.append(q)
        group_p.append(p)
    return NtScaling(layout, lin_theta, group_theta, group_q, group_p)


def apply_scaling(scal: NtScaling, v: np.ndarray, mode: str = "D") -> np.ndarray:
    """Apply D (mode="D") or D^{-1} (mode="D_inverse") to ``v`` in O(n).

    Per SOC, with q on the unit hyperbolic sheet and p = Q q:
      D v      = theta^{-1} (-Q v + (e + p) ((e + p)' v) / (1 + q1))
      D^{-1} v = theta      (-Q v + (e + q) ((e + q)' v) / (1 + q1))
    """
    if mode not in ("D", "D_inverse"):
        raise ValueError(f"unknown scaling mode {mode!r}")
    layout = scal.layout
    v = layout.check_vector(v)
    out = np.empty_like(v)
    if mode == "D":
        out[: layout.l] = v[: layout.l] / scal.lin_theta
    else:
        out[: layout.l] = v[: layout.l] * scal.lin_theta
    for g, theta, q, p in zip(layout._groups, scal.group_theta, scal.group_q, scal.group_p):
        vb = _soc_gather(v, g)
        w = p if mode == "D" else q
        ew = w.copy()
        ew[:, 0] += 1.0
        coef = np.einsum("ij,ij->i", ew, vb) / (1.0 + q[:, 0])
        res = np.empty_like(vb)
        res[:, 0] = -vb[:, 0] + coef * ew[:, 0]
        res[:, 1:] = vb[:, 1:] + coef[:, None] * ew[:, 1:]
        if mode == "D":
            res /= theta[:, None]
        else:
            res *= theta[:, None]
        out[g.slots.ravel()] = res.ravel()
    return out


def _pos_roots_smallest(a, b, c):
    """Smallest positive root of a x^2 + b x + c = 0 with c > 0, else +inf.

    Uses the citardauq form 2c / (-b -+ sqrt(b^2 - 4ac)) so small roots do not
    cancel.  Vectorized over equal-length coefficient arrays.
    """
    out = np.full(a.shape, np.inf)
    disc = b * b - 4.0 * a * c
    has = disc >= 0.0
    if not np.any(has):
        return out
    sq = np.sqrt(np.where(has, disc, 0.0))
    for sign in (+1.0, -1.0):
        den = -b + sign * sq
        ok = has & (den != 0.0)
        r = np.where(ok, 2.0 * c / np.where(ok, den, 1.0), np.inf)
        good = ok & (r > 0.0)
        out = np.where(good & (r < out), r, out)
    return out


def max_step(v: np.ndarray, dv: np.ndarray, layout: ConeLayout) -> float:
    """sup{alpha >= 0 : v + alpha dv in K} for strictly interior ``v``."""
    v = layout.check_vector(v)
    dv = layout.check_vector(dv)
    step = np.inf
    lin_v = v[: layout.l]
    lin_d = dv[: layout.l]
    neg = lin_d < 0.0
    if np.any(neg):
        step = float(np.min(lin_v[neg] / -lin_d[neg]))
    for g in layout._groups:
        vb = _soc_gather(v, g)
        db = _soc_gather(dv, g)
        # boundary of v1 >= |v_2:| along the ray: quadratic in alpha
        a = db[:, 0] ** 2 - np.einsum("ij,ij->i", db[:, 1:], db[:, 1:])
        b = 2.0 * (vb[:, 0] * db[:, 0] - np.einsum("ij,ij->i", vb[:, 1:], db[:, 1:]))
        c = vb[:, 0] ** 2 - np.einsum("ij,ij->i", vb[:, 1:], vb[:, 1:])
        roots = _pos_roots_smallest(a, b, c)
        if roots.size:
            step = min(step, float(np.min(roots)))
    return step
