import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conedescent.sparse import (
    NumericFactorization,
    RefinementDivergence,
    RegularizationSettings,
    SerializationError,
    SparseMat,
    amd_order,
    deserialize_symbolic,
    numeric_ldl,
    read_coordinate,
    serialize_symbolic,
    solve_refined,
    symbolic_ldl,
    write_coordinate,
)


def random_sym_upper(rng, n, density=0.3, diag_shift=1.0):
    mask = np.triu(rng.random((n, n)) < density, 1)
    dense = np.where(mask, rng.normal(size=(n, n)), 0.0)
    dense = dense + dense.T
    mag = np.abs(dense).sum(axis=1) + diag_shift
    sign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    np.fill_diagonal(dense, sign * mag)
    rr, cc = np.nonzero(np.triu(dense != 0.0))
    mat = SparseMat.from_triplets(n, n, rr, cc, dense[rr, cc], upper=True)
    return mat, dense


def arrow_pattern(n):
    rows = list(range(n)) + [0] * (n - 1)
    cols = list(range(n)) + list(range(1, n))
    vals = [4.0] * n + [1.0] * (n - 1)
    return SparseMat.from_triplets(n, n, rows, cols, vals, upper=True)


def symbolic_fill_oracle(dense_pattern, perm):
    """Count nnz(L) by boolean elimination on the permuted pattern."""
    n = dense_pattern.shape[0]
    work = dense_pattern[np.ix_(perm, perm)].astype(bool)
    work |= work.T
    count = 0
    for k in range(n):
        below = np.flatnonzero(work[k + 1:, k]) + k + 1
        count += 1 + below.size
        work[np.ix_(below, below)] = True
    return count


def reconstruct(fact):
    sym = fact.symbolic
    n = sym.n
    low = np.eye(n)
    for j in range(n):
        low[sym.Li[sym.Lp[j]: sym.Lp[j + 1]], j] = fact.Lx[sym.Lp[j]: sym.Lp[j + 1]]
    return low @ np.diag(fact.D) @ low.T


class TestSparseMat:
    def test_duplicate_summing_and_position_map(self):
        mat, pos = SparseMat.from_triplets_with_map(
            2, 2, [0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0])
        assert mat.nnz == 2
        assert mat.data[pos[0]] == 3.0 and pos[0] == pos[1]
        assert mat.to_dense()[1, 1] == 5.0

    def test_upper_flag_validation(self):
        with pytest.raises(ValueError):
            SparseMat.from_triplets(2, 2, [1], [0], [1.0], upper=True)

    def test_full_nnz_counts_mirror(self):
        mat = SparseMat.from_triplets(2, 2, [0, 0, 1], [0, 1, 1], [1.0, 2.0, 3.0], upper=True)
        assert mat.full_nnz() == 4

    def test_coordinate_roundtrip(self, tmp_path, rng):
        mat, _ = random_sym_upper(rng, 8)
        path = tmp_path / "m.coord"
        write_coordinate(mat, path)
        back = read_coordinate(path, upper=True)
        assert back.same_pattern(mat)
        np.testing.assert_array_equal(back.data, mat.data)

    def test_coordinate_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.coord"
        path.write_text("2 3\n0 0 1.0\n")
        with pytest.raises(ValueError):
            read_coordinate(path)


class TestAmd:
    def test_trivial_sizes(self):
        one = SparseMat.from_triplets(1, 1, [0], [0], [1.0], upper=True)
        np.testing.assert_array_equal(amd_order(one), [0])
        diag = SparseMat.from_triplets(4, 4, range(4), range(4), np.ones(4), upper=True)
        assert sorted(amd_order(diag)) == [0, 1, 2, 3]

    def test_arrow_hub_ordered_late(self):
        pattern = arrow_pattern(10)
        perm = amd_order(pattern)
        assert sorted(perm) == list(range(10))
        # nnz(L) = 19 requires the hub after every spoke it still touches
        assert symbolic_ldl(pattern, perm).nnz_l == 19
        assert symbolic_ldl(pattern, np.arange(10)).nnz_l == 55

    def test_matches_fill_oracle(self, rng):
        for _ in range(10):
            mat, dense = random_sym_upper(rng, 25, density=0.2)
            perm = amd_order(mat)
            sym = symbolic_ldl(mat, perm)
            assert sym.nnz_l == symbolic_fill_oracle(dense != 0.0, perm)

    def test_fill_reduction_statistical(self, rng):
        wins = 0
        total = 20
        for _ in range(total):
            mat, _ = random_sym_upper(rng, 40, density=0.08)
            amd_fill = symbolic_ldl(mat, amd_order(mat)).nnz_l
            nat_fill = symbolic_ldl(mat, np.arange(40)).nnz_l
            wins += amd_fill <= nat_fill
        assert wins >= int(0.8 * total)

    def test_deterministic(self, rng):
        mat, _ = random_sym_upper(rng, 30, density=0.15)
        np.testing.assert_array_equal(amd_order(mat), amd_order(mat))

    def test_nonsquare_rejected(self):
        mat = SparseMat.from_triplets(2, 3, [0], [0], [1.0])
        with pytest.raises(ValueError):
            amd_order(mat)


class TestSymbolic:
    def test_tridiagonal_no_fill(self):
        n = 6
        r = list(range(n)) + list(range(n - 1))
        c = list(range(n)) + list(range(1, n))
        tri = SparseMat.from_triplets(n, n, r, c, [2.0] * n + [-1.0] * (n - 1), upper=True)
        sym = symbolic_ldl(tri, np.arange(n))
        assert sym.nnz_l == 2 * n - 1
        np.testing.assert_array_equal(sym.parent[:-1], np.arange(1, n))

    def test_serialization_roundtrip(self, rng):
        mat, _ = random_sym_upper(rng, 20, density=0.2)
        sym = symbolic_ldl(mat, amd_order(mat))
        blob = serialize_symbolic(sym)
        back = deserialize_symbolic(blob)
        assert back == sym
        assert serialize_symbolic(back) == blob

    def test_serialization_empty(self):
        empty = SparseMat.from_triplets(0, 0, [], [], [], upper=True)
        sym = symbolic_ldl(empty, np.zeros(0, dtype=np.int64))
        assert deserialize_symbolic(serialize_symbolic(sym)) == sym

    def test_corruption_detected(self, rng):
        mat, _ = random_sym_upper(rng, 10)
        blob = bytearray(serialize_symbolic(symbolic_ldl(mat, amd_order(mat))))
        blob[41] ^= 0x5A
        with pytest.raises(SerializationError):
            deserialize_symbolic(bytes(blob))
        with pytest.raises(SerializationError):
            deserialize_symbolic(blob[: len(blob) // 2])
        with pytest.raises(SerializationError):
            deserialize_symbolic(b"NOPE" + bytes(blob[4:]))

    def test_replayed_program_factorizes_same(self, rng):
        mat, dense = random_sym_upper(rng, 18)
        sym = symbolic_ldl(mat, amd_order(mat))
        replay = deserialize_symbolic(serialize_symbolic(sym))
        f1 = numeric_ldl(mat, sym)
        f2 = numeric_ldl(mat, replay)
        np.testing.assert_array_equal(f1.Lx, f2.Lx)
        np.testing.assert_array_equal(f1.D, f2.D)


class TestNumeric:
    def test_identity(self):
        eye = SparseMat.from_triplets(3, 3, range(3), range(3), np.ones(3), upper=True)
        fact = numeric_ldl(eye, symbolic_ldl(eye, np.arange(3)))
        np.testing.assert_array_equal(fact.D, np.ones(3))
        assert fact.total_regularization == 0.0

    def test_zero_pivot_regularized_by_sign(self):
        mat = SparseMat.from_triplets(2, 2, [0, 0, 1], [0, 1, 1], [0.0, 1.0, 0.0], upper=True)
        sym = symbolic_ldl(mat, np.arange(2))
        fact = numeric_ldl(mat, sym, RegularizationSettings(
            delta=1e-7, signs=np.array([1, -1], dtype=np.int8)))
        assert fact.D[0] == pytest.approx(1e-7)
        assert fact.reg[0] == pytest.approx(1e-7)
        x = solve_refined(fact, mat, np.array([1.0, 1.0]))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_reconstruction_bound(self, seed):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(2, 30))
        mat, dense = random_sym_upper(gen, n, density=0.3)
        sym = symbolic_ldl(mat, amd_order(mat))
        fact = numeric_ldl(mat, sym, RegularizationSettings(delta=1e-8))
        perm = sym.perm
        target = dense[np.ix_(perm, perm)]
        err = np.linalg.norm(reconstruct(fact) - target, "fro")
        bound = np.abs(fact.reg).sum() + 1e-12 * np.linalg.norm(dense, "fro")
        assert err <= bound + 1e-13

    def test_every_pivot_at_least_delta(self, rng):
        mat, _ = random_sym_upper(rng, 25, diag_shift=0.0)
        mat.data[mat.data != 0] *= 1e-6
        fact = numeric_ldl(mat, symbolic_ldl(mat, amd_order(mat)),
                           RegularizationSettings(delta=1e-8))
        assert np.all(np.abs(fact.D) >= 1e-8 * (1 - 1e-15))

    def test_refined_solve_residual(self, rng):
        for _ in range(10):
            n = int(rng.integers(3, 40))
            mat, dense = random_sym_upper(rng, n)
            fact = numeric_ldl(mat, symbolic_ldl(mat, amd_order(mat)))
            rhs = rng.normal(size=n)
            x = solve_refined(fact, mat, rhs)
            assert np.max(np.abs(dense @ x - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))

    def test_pattern_mismatch_rejected(self, rng):
        mat, _ = random_sym_upper(rng, 10)
        other, _ = random_sym_upper(rng, 10)
        sym = symbolic_ldl(mat, amd_order(mat))
        if not sym.matches(other):
            with pytest.raises(ValueError):
                numeric_ldl(other, sym)

    def test_divergence_signalled(self, rng):
        # a wildly wrong factorization cannot polish a generic rhs
        mat, _ = random_sym_upper(rng, 12)
        sym = symbolic_ldl(mat, amd_order(mat))
        fact = numeric_ldl(mat, sym)
        fact.Lx[:] = -3.5 * fact.Lx + 1.0
        fact.D[:] = 1e-4
        with pytest.raises(RefinementDivergence):
            solve_refined(fact, mat, rng.normal(size=12), max_refine=5)

    def test_buffers_reused_no_pattern_queries(self, rng, monkeypatch):
        mat, dense = random_sym_upper(rng, 30, density=0.25)
        sym = symbolic_ldl(mat, amd_order(mat))
        fact = numeric_ldl(mat, sym)
        lx_id, d_id = id(fact.Lx), id(fact.D)

        def boom(*a, **k):
            raise AssertionError("pattern query during numeric factorization")

        monkeypatch.setattr(SparseMat, "position_of", boom)
        monkeypatch.setattr(SparseMat, "same_pattern", boom)
        monkeypatch.setattr(type(sym), "matches", boom)

        mat.data[:] *= 1.5
        tracemalloc.start()
        out = numeric_ldl(mat, sym, out=fact, check_pattern=False)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        assert out is fact and id(out.Lx) == lx_id and id(out.D) == d_id
        assert peak < 16_384  # replay allocates no pattern-sized buffers
        err = np.linalg.norm(reconstruct(out) - 1.5 * dense[np.ix_(sym.perm, sym.perm)])
        assert err <= 1e-9
