import numpy as np
import pytest

from conedescent.cones import ConeLayout
from conedescent.ipm import SocpProblem
from conedescent.sparse import SparseMat


def random_layout(rng, max_lin=4, max_socs=3, max_dim=6, min_lin=0):
    l = int(rng.integers(min_lin, max_lin + 1))
    m = int(rng.integers(0 if l else 1, max_socs + 1))
    dims = tuple(int(d) for d in rng.integers(2, max_dim + 1, size=m))
    return ConeLayout(l=l, soc_dims=dims)


def random_interior(rng, layout, margin=0.5):
    """Strictly interior point with at least ``margin`` to every boundary."""
    v = rng.normal(size=layout.n)
    v[: layout.l] = np.abs(v[: layout.l]) + margin
    for i in range(layout.m):
        sl = layout.soc_slice(i)
        v[sl.start] = np.linalg.norm(v[sl.start + 1: sl.stop]) + margin + rng.random()
    return v


def random_feasible_socp(rng, max_n=30):
    """Problem with a known strictly feasible primal-dual pair (thus solvable)."""
    while True:
        layout = random_layout(rng)
        if layout.n <= max_n and layout.n >= 2:
            break
    n = layout.n
    p = int(rng.integers(1, n))
    a_dense = rng.normal(size=(p, n))
    rows, cols = np.nonzero(a_dense)
    A = SparseMat.from_triplets(p, n, rows, cols, a_dense[rows, cols])
    x0 = random_interior(rng, layout)
    s0 = random_interior(rng, layout)
    y0 = rng.normal(size=p)
    b = a_dense @ x0
    c = a_dense.T @ y0 + s0
    return SocpProblem(A=A, b=b, c=c, layout=layout), a_dense


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
