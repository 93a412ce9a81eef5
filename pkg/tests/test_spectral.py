import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from stabgibbs.analysis import syndrome_sector_gap
from stabgibbs.davies import davies_lindbladian, gibbs_model, master_hamiltonian, sqrt_gibbs_vector
from stabgibbs.models import build_model
from stabgibbs.spectral import (ConvergenceError, block_spectral_gap, kernel_threshold, loglog_slope,
                                min_eigenvalue, perturbed_laplacian, restarted_lanczos, spectral_gap,
                                stair_graph, stair_test_vector)


def random_psd(dim, seed, rank_deficit=0, sparse=True):
    rng = np.random.default_rng(seed)
    A = sp.random(dim, dim, density=min(1.0, 6 / dim), random_state=rng)
    A = (A + A.T) * 0.5
    lap = sp.diags(np.asarray(abs(A).sum(axis=1)).ravel()) - A  # diagonally dominant => PSD
    M = lap + sp.diags(rng.uniform(0.1, 1.0, dim))
    return M.tocsr() if sparse else M.toarray()


# -- stair graph -------------------------------------------------------------------------
def test_stair_n1():
    g = stair_graph(1)
    assert g.hamiltonian.toarray().tolist() == [[2.0]]
    assert min_eigenvalue(g.hamiltonian).min_eigenvalue == 2


def test_stair_n2_spectrum():
    assert np.allclose(np.linalg.eigvalsh(stair_graph(2).hamiltonian.toarray()), [1, 3, 4])


def test_stair_n8_counts():
    g = stair_graph(8)
    assert len(g.vertices) == 36 and len(g.edges) == 56


@given(st.integers(1, 14))
def test_stair_structure(n):
    g = stair_graph(n)
    assert len(g.vertices) == n * (n + 1) // 2
    assert len(g.edges) == n * (n - 1)
    ev = np.linalg.eigvalsh(g.laplacian.toarray())
    assert ev[0] >= -1e-12 and int(np.sum(np.abs(ev) < 1e-10)) == 1
    assert np.array_equal(g.hamiltonian.toarray(), oracles.stair_hamiltonian(n))
    for k, (i, j) in enumerate(g.vertices):
        assert g.index(i, j) == k


def test_stair_errors():
    with pytest.raises(ValueError):
        stair_graph(0)
    with pytest.raises(KeyError):
        stair_graph(3).index(2, 2)


@given(st.integers(2, 30))
def test_test_vector_identities(n):
    v, rq = stair_test_vector(n)
    H = stair_graph(n).hamiltonian
    assert v @ (H @ v) == pytest.approx(n * (n - 1))
    assert v @ v == pytest.approx(n * n * (n * n - 1) / 12)
    assert rq == pytest.approx(12 / (n * (n + 1)), rel=1e-12)


def test_test_vector_n2_bounds_min():
    _, rq = stair_test_vector(2)
    assert rq == pytest.approx(2) and rq >= min_eigenvalue(stair_graph(2).hamiltonian).min_eigenvalue


def test_perturbed_laplacian():
    n = 6
    M0 = perturbed_laplacian(n, 0.0)
    r = min_eigenvalue(M0)
    assert abs(r.min_eigenvalue) <= 1e-12
    v = r.eigenvector / r.eigenvector[0]
    assert np.allclose(v, 1, atol=1e-9)
    assert (perturbed_laplacian(n, 1.0) != stair_graph(n).hamiltonian).nnz == 0
    with pytest.raises(ValueError):
        perturbed_laplacian(n, -1)


def test_perturbed_weight_scaling_n16():
    lam1 = min_eigenvalue(perturbed_laplacian(16, 1.0)).min_eigenvalue
    lam4 = min_eigenvalue(perturbed_laplacian(16, 0.25)).min_eigenvalue
    assert 0.25 <= lam4 / lam1 <= 4


# -- min_eigenvalue ----------------------------------------------------------------------
def test_min_eig_examples():
    assert min_eigenvalue(sp.identity(100)).min_eigenvalue == pytest.approx(1)
    assert min_eigenvalue(stair_graph(2).hamiltonian).min_eigenvalue == pytest.approx(1)
    r = min_eigenvalue(np.diag([0.0, 5.0, 9.0]))
    assert r.min_eigenvalue == 0 and r.kernel_dim == 1


def test_rejects_non_hermitian():
    with pytest.raises(ValueError):
        min_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=15)
@given(st.integers(20, 300), st.integers(0, 10 ** 6), st.sampled_from(["plain", "shift_invert"]))
def test_iterative_agrees_with_dense(dim, seed, mode):
    M = random_psd(dim, seed)
    d = min_eigenvalue(M, method="dense")
    it = min_eigenvalue(M, method="iterative", iterative_mode=mode)
    assert it.min_eigenvalue == pytest.approx(d.min_eigenvalue, rel=1e-8)
    assert it.method == f"iterative-{mode}" and d.method == "dense"


def test_iterative_gap_with_deflation_agrees():
    M = stair_graph(20).laplacian
    ones = np.ones(M.shape[0])
    dense = spectral_gap(M, kernel_basis=ones, method="dense")
    for mode in ("plain", "shift_invert"):
        it = spectral_gap(M, kernel_basis=ones, method="iterative", iterative_mode=mode)
        assert it.gap == pytest.approx(dense.gap, rel=1e-8)
        assert it.kernel_dim == 1


def test_lanczos_budget_failure():
    M = stair_graph(40).hamiltonian
    with pytest.raises(ConvergenceError) as info:
        restarted_lanczos(lambda v: M @ v, M.shape[0], tol=1e-14, max_matvecs=5, basis_size=4)
    assert info.value.best_residual > 0


def test_residuals_certified():
    M = random_psd(200, 7)
    r = min_eigenvalue(M, method="iterative")
    bound = float(np.max(np.asarray(abs(M).sum(axis=1))))
    assert r.residual <= 1e-8 * bound


# -- spectral_gap ------------------------------------------------------------------------
def test_path_laplacian_gap():
    r = spectral_gap(oracles.path_laplacian(3))
    assert r.gap == pytest.approx(1) and r.kernel_dim == 1


def test_master_hamiltonian_gap_ising3():
    m = build_model("ising", 3)
    g = gibbs_model(m, 0.0)
    M = master_hamiltonian(davies_lindbladian(g, m.coupling_set("local_full")), g)
    r = spectral_gap(-M.matrix, kernel_basis=sqrt_gibbs_vector(g))
    assert r.gap > 0 and r.kernel_dim == 1 and not r.ambiguous_kernel
    detected = spectral_gap(-M.matrix)
    assert detected.kernel_dim == 1 and detected.gap == pytest.approx(r.gap, rel=1e-10)


def test_block_diagonal_gap():
    a, b = oracles.path_laplacian(4), np.diag([0.3, 3.0])
    full = spectral_gap(np.block([[a, np.zeros((4, 2))], [np.zeros((2, 4)), b]]))
    blk = block_spectral_gap([("a", a), ("b", b)], {"a": np.ones(4)})
    assert full.gap == pytest.approx(0.3) and blk.gap == pytest.approx(0.3)
    assert full.kernel_dim == blk.kernel_dim == 1
    assert blk.method == "dense-blocks"


@given(st.floats(0.5, 50.0))
def test_deflated_gap_invariant_under_kernel_shift(c):
    M = stair_graph(5).laplacian.toarray()
    u = np.ones(M.shape[0]) / np.sqrt(M.shape[0])
    base = spectral_gap(M, kernel_basis=u).gap
    shifted = spectral_gap(M + c * np.outer(u, u), kernel_basis=u).gap
    assert shifted == pytest.approx(base, rel=1e-10)


def test_ambiguous_kernel_flag():
    vals = np.array([0.0, 0.0, 1.0, 2.0, 3.0])
    thr = kernel_threshold(np.diag(vals))
    vals[1] = 2 * thr  # neither clearly zero nor clearly separated
    r = spectral_gap(np.diag(vals))
    assert r.ambiguous_kernel


def test_result_json_keys():
    r = spectral_gap(oracles.path_laplacian(3))
    data = json.loads(r.to_json())
    assert set(data) == {"min_eig", "gap", "kernel_dim", "residual", "method", "wall_time_ms"}


def test_loglog_slope_exact():
    xs = np.array([2.0, 4.0, 8.0, 16.0])
    assert loglog_slope(xs, 3 * xs ** -2) == pytest.approx(-2)


@pytest.mark.slow
def test_toric_syndrome_sector_routes_agree():
    it = syndrome_sector_gap("toric", 2, 3.0)
    dense = syndrome_sector_gap("toric", 2, 3.0, method="dense")
    assert it.method.startswith("iterative") and dense.method == "dense"
    assert it.gap == pytest.approx(dense.gap, rel=1e-9)
    assert it.kernel_dim == dense.kernel_dim == 1
