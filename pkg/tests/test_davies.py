import json

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

import oracles
from stabgibbs.davies import (BohrClusteringError, DetailedBalanceError, Superoperator, bohr_decompose_generic,
                              bohr_decompose_stabilizer, davies_lindbladian, davies_lindbladian_generic,
                              dephasing_lindbladian, gibbs_model, gibbs_state, glauber_rate, gns_inner,
                              master_hamiltonian, pauli_basis_matrix, sqrt_gibbs_vector)
from stabgibbs.dynamics import channel_matrix, choi_matrix
from stabgibbs.models import build_model
from stabgibbs.pauli import PauliString
from stabgibbs.sectors import local_block_matrix, local_rates


@pytest.fixture(scope="module")
def toric2():
    return build_model("toric", 2)


def ising_generator(n, beta, couplings="local_full"):
    m = build_model("ising", n)
    g = gibbs_model(m, beta)
    return m, g, davies_lindbladian(g, m.coupling_set(couplings))


# -- Gibbs states --------------------------------------------------------------------
def test_gibbs_infinite_temperature():
    g = gibbs_model(build_model("ising", 4), 0.0)
    assert np.allclose(g.weights, 1 / 16)


def test_gibbs_two_level():
    beta = 0.8
    g = gibbs_state(-PauliString.from_label("Z").to_sparse(), beta)
    ref = np.array([np.exp(beta), np.exp(-beta)]) / (np.exp(beta) + np.exp(-beta))
    assert np.allclose(g.weights, ref, atol=1e-15)


def test_gibbs_ising_matches_expm():
    g = gibbs_model(build_model("ising", 3), 1.0)
    ref = oracles.gibbs(oracles.ising_hamiltonian(3), 1.0)
    assert np.trace(g.state()).real == pytest.approx(1, abs=1e-12)
    assert np.allclose(g.state_computational(), ref, atol=1e-14)


def test_gibbs_large_beta_is_stable():
    g = gibbs_model(build_model("ising", 6), 400.0)
    assert np.isfinite(g.log_partition)
    assert g.weights.sum() == pytest.approx(1, abs=1e-12)
    assert g.weights[0] == pytest.approx(0.5)


def test_gibbs_rejects_non_hermitian_and_negative_beta():
    with pytest.raises(ValueError):
        gibbs_state(np.array([[0, 1], [0, 0]]), 1.0)
    with pytest.raises(ValueError):
        gibbs_state(np.eye(2), -1.0)


def test_gibbs_generic_hamiltonian_uses_eigenbasis():
    H = oracles.X + 0.3 * oracles.Z
    g = gibbs_state(H, 1.3)
    assert np.allclose(g.state_computational(), oracles.gibbs(H, 1.3), atol=1e-14)


def test_gibbs_json():
    data = json.loads(gibbs_model(build_model("ising", 3, 0.5), 2.0).to_json())
    assert data["beta"] == 2.0 and data["J"] == 0.5 and data["model"] == "ising"
    assert data["log_partition"] == pytest.approx(np.log(2 * np.exp(3.0) + 6 * np.exp(-1.0)))


# -- rates -------------------------------------------------------------------------
def test_glauber_values():
    assert glauber_rate(0.0, 5.0) == 1.0
    assert glauber_rate(4.0, 0.0) == 1.0
    assert glauber_rate(4.0, np.log(3) / 4) == pytest.approx(0.5, abs=1e-15)
    assert glauber_rate(0.0, np.inf) == 1.0
    assert glauber_rate(4.0, np.inf) == 0.0
    assert glauber_rate(-4.0, np.inf) == 2.0


@given(st.floats(-20, 20), st.floats(0, 10))
def test_kms(omega, beta):
    lhs = glauber_rate(-omega, beta)
    rhs = np.exp(beta * omega) * glauber_rate(omega, beta)
    assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-300)


@given(st.floats(-20, 20), st.floats(0, 10))
def test_glauber_matches_formula(omega, beta):
    assert glauber_rate(omega, beta) == pytest.approx(oracles.glauber(omega, beta), rel=1e-13)


@pytest.mark.parametrize("beta", np.arange(0, 10.5, 0.5))
def test_rates_sum_to_two(beta):
    hp, hm = local_rates(beta)
    assert abs(hp + hm - 2) <= 1e-14


# -- Bohr decompositions ---------------------------------------------------------
def test_generic_two_level():
    comps = bohr_decompose_generic(-oracles.Z, oracles.X)
    assert sorted(c.omega for c in comps) == [-2.0, 2.0]


def test_generic_commuting_coupling():
    H = oracles.ising_hamiltonian(3)
    S = oracles.site_op(3, {0: "Z"})
    comps = bohr_decompose_generic(H, S)
    assert len(comps) == 1 and comps[0].omega == 0.0
    assert np.allclose(comps[0].jump.toarray(), S)


def test_generic_completeness_and_adjoint_pairs():
    H = oracles.ising_hamiltonian(4)
    S = oracles.site_op(4, {1: "X"}) + 0.5 * oracles.site_op(4, {2: "Y"})
    comps = {c.omega: c.jump.toarray() for c in bohr_decompose_generic(H, S)}
    assert np.allclose(sum(comps.values()), S, atol=1e-12)
    for w, J in comps.items():
        assert np.allclose(J.conj().T, comps[-w], atol=1e-12)


def test_generic_clustering_failure_reported():
    H = np.diag([0.0, 3e-9, 6e-9, 5.0])  # tolerance 5e-9 chains all three levels
    with pytest.raises(BohrClusteringError):
        bohr_decompose_generic(H, np.ones((4, 4)))


def test_generic_matches_projector_oracle():
    H = oracles.ising_hamiltonian(3)
    S = oracles.site_op(3, {1: "Y"})
    ref = oracles.bohr_components(H, S)
    got = {c.omega: c.jump.toarray() for c in bohr_decompose_generic(H, S)}
    assert set(got) == set(ref)
    for w in ref:
        assert np.allclose(got[w], ref[w], atol=1e-12)


def test_toric_snake_frequencies(toric2):
    q = toric2.lattice.snake_spins[0]
    comps = bohr_decompose_generic(toric2.hamiltonian(), PauliString.single(8, q, "X").to_sparse())
    assert {round(c.omega, 9) for c in comps} <= {-4.0, 0.0, 4.0}


def test_stabilizer_snake_component_is_projected_flip(toric2):
    lat = toric2.lattice
    q, (p1, p2) = lat.snake_order[0]
    from stabgibbs.models import plaquette_operator
    I = np.eye(256)
    Zp, Zq = plaquette_operator(lat, p1).to_dense(), plaquette_operator(lat, p2).to_dense()
    plus = (I + Zp) @ (I + Zq) / 4
    minus = (I - Zp) @ (I - Zq) / 4
    sx = PauliString.single(8, q, "X").to_dense()
    comps = {c.omega: c.jump.toarray() for c in bohr_decompose_stabilizer(toric2, PauliString.single(8, q, "X"))}
    # energy-raising component: both plaquettes go from +1 to -1
    assert np.allclose(comps[4.0], minus @ sx @ plus, atol=1e-14)
    assert np.allclose(comps[-4.0], plus @ sx @ minus, atol=1e-14)
    assert np.allclose(comps[0.0], (I - Zp @ Zq) / 2 @ sx, atol=1e-14)


def test_stabilizer_logical_single_component(toric2):
    comps = bohr_decompose_stabilizer(toric2, toric2.logicals["X1"])
    assert len(comps) == 1 and comps[0].omega == 0.0


@pytest.mark.parametrize("kind, size", [("ising", 2), ("ising", 4), ("ising", 6), ("toric", 2)])
def test_stabilizer_matches_generic(kind, size):
    m = build_model(kind, size)
    H = m.hamiltonian()
    rng = np.random.default_rng(size)
    pool = m.coupling_set("with_global")
    for k in rng.choice(len(pool), size=min(5, len(pool)), replace=False):
        p = pool[k]
        stab = {c.omega: c.jump.toarray() for c in bohr_decompose_stabilizer(m, p)}
        gen = {round(c.omega, 9) + 0.0: c.jump.toarray() for c in bohr_decompose_generic(H, p.to_sparse())}
        assert set(stab) == set(gen)
        for w in stab:
            assert np.max(np.abs(stab[w] - gen[w])) <= 1e-11
        assert np.allclose(sum(stab.values()), p.to_dense(), atol=1e-14)


def test_stabilizer_frame_basis_matches_rotation(toric2):
    U = toric2.frame.unitary
    p = PauliString.single(8, toric2.lattice.comb_spins[1], "Z")
    comp = {c.omega: c.jump.toarray() for c in bohr_decompose_stabilizer(toric2, p)}
    frame = {c.omega: c.jump.toarray() for c in bohr_decompose_stabilizer(toric2, p, basis="frame")}
    for w in comp:
        assert np.allclose(U.conj().T @ comp[w] @ U, frame[w], atol=1e-12)


def test_stabilizer_rejects_non_pauli(toric2):
    with pytest.raises(TypeError):
        bohr_decompose_stabilizer(toric2, np.eye(256))


# -- Davies generators -----------------------------------------------------------
@pytest.mark.parametrize("n, beta", [(2, 0.0), (3, 1.0), (4, 2.5)])
def test_unital_and_stationary(n, beta):
    _, g, L = ising_generator(n, beta)
    d = g.dim
    assert np.max(np.abs(L.matrix @ np.eye(d).reshape(-1))) <= 1e-12
    sig = g.state().reshape(-1)
    assert np.linalg.norm(L.schrodinger().matrix @ sig) / np.linalg.norm(sig) <= 1e-11


def test_toric_stationary(toric2):
    g = gibbs_model(toric2, 1.5)
    L = davies_lindbladian(g, toric2.coupling_set("with_global"))
    sig = g.state().reshape(-1)
    assert np.linalg.norm(L.schrodinger().matrix @ sig) / np.linalg.norm(sig) <= 1e-11


def test_ising3_matches_generic_and_matrix_unit_oracle():
    m, g, L = ising_generator(3, 1.0)
    H = m.hamiltonian()
    gen = davies_lindbladian_generic(H, m.coupling_set("local_full"), 1.0)
    assert np.max(np.abs((L.matrix - gen.matrix).toarray())) <= 1e-10
    ref = oracles.davies_heisenberg(H.toarray(), [p.to_dense() for p in m.coupling_set("local_full")], 1.0)
    assert np.max(np.abs(L.matrix.toarray() - ref)) <= 1e-10


def test_trace_preservation():
    _, g, L = ising_generator(4, 1.7, "with_global")
    d = g.dim
    Ls = L.schrodinger().matrix.toarray()
    diag_rows = np.arange(d) * d + np.arange(d)
    assert np.max(np.abs(Ls[diag_rows].sum(axis=0))) <= 1e-12


@pytest.mark.parametrize("n", [2, 3])
def test_choi_positive(n):
    _, g, L = ising_generator(n, 1.2, "with_global")
    choi = choi_matrix(channel_matrix(L.schrodinger(), 0.1), g.dim)
    assert np.linalg.eigvalsh(0.5 * (choi + choi.conj().T))[0] >= -1e-9


@given(st.integers(0, 2 ** 20))
def test_gns_detailed_balance(seed):
    _, g, L = ising_generator(3, 1.3, "with_global")
    rng = np.random.default_rng(seed)
    Xm = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    Ym = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    lhs = gns_inner(Ym, L.apply(Xm), g)
    rhs = gns_inner(L.apply(Ym), Xm, g)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_coupling_validation():
    m = build_model("ising", 3)
    g = gibbs_model(m, 1.0)
    with pytest.raises(ValueError):
        davies_lindbladian(g, [PauliString.from_label("XII", phase=1)])
    with pytest.raises(TypeError):
        davies_lindbladian(g, [np.eye(8)])


def test_gauges():
    m = build_model("ising", 3)
    g = gibbs_model(m, 0.7)
    c = m.coupling_set("local_full")
    assert davies_lindbladian(g, c, gauge="lindblad_schrodinger").gauge == "lindblad_schrodinger"
    assert davies_lindbladian(g, c, gauge="master_hamiltonian").gauge == "master_hamiltonian"
    with pytest.raises(ValueError):
        davies_lindbladian(g, c, gauge="interaction")


# -- dephasing ---------------------------------------------------------------------------
def test_dephasing_on_logicals(toric2):
    g = gibbs_model(toric2, 1.0)
    frame = toric2.frame
    x1, z1 = toric2.logicals["X1"], toric2.logicals["Z1"]
    D = dephasing_lindbladian(x1, g)
    A = frame.to_frame(x1.to_dense())
    assert np.max(np.abs(D.apply(A))) <= 1e-12
    B = frame.to_frame(z1.to_dense())
    assert np.allclose(D.apply(B), -2 * B, atol=1e-12)


@given(st.text(alphabet="IXYZ", min_size=8, max_size=8))
def test_dephasing_random_pauli(label):
    m = build_model("toric", 2)
    g = gibbs_model(m, 1.0)
    O = m.logicals["Z2"]
    D = dephasing_lindbladian(O, g)
    P = PauliString.from_label(label)
    A = m.frame.to_frame(P.to_dense())
    out = D.apply(A)
    expect = np.zeros_like(A) if P.commutes_with(O) else -2 * A
    assert np.allclose(out, expect, atol=1e-12)


def test_dephasing_rejects_noncommuting(toric2):
    g = gibbs_model(toric2, 1.0)
    with pytest.raises(ValueError):
        dephasing_lindbladian(PauliString.single(8, 0, "X"), g)


# -- GNS and master Hamiltonian ---------------------------------------------------
def test_gns_examples():
    g = gibbs_model(build_model("ising", 2), 1.0)
    assert gns_inner(np.eye(4), np.eye(4), g) == pytest.approx(1)
    z1 = PauliString.single(2, 1, "Z").to_dense()
    assert gns_inner(z1, z1, g) == pytest.approx(1)
    g0 = gibbs_model(build_model("ising", 2), 0.0)
    rng = np.random.default_rng(1)
    Xm, Ym = rng.standard_normal((4, 4)), rng.standard_normal((4, 4)) * 1j
    assert gns_inner(Xm, Ym, g0) == pytest.approx(np.trace(Xm.conj().T @ Ym) / 4)


def test_master_hamiltonian_beta_zero_equals_generator():
    _, g, L = ising_generator(3, 0.0)
    M = master_hamiltonian(L, g)
    assert np.max(np.abs((M.matrix - L.matrix).toarray())) <= 1e-15


@pytest.mark.parametrize("beta", [0.5, 3.0])
def test_master_hamiltonian_properties(beta):
    _, g, L = ising_generator(3, beta, "with_global")
    M = master_hamiltonian(L, g)
    Md = M.matrix.toarray()
    assert np.linalg.norm(Md - Md.conj().T) <= 1e-10 * np.linalg.norm(Md)
    ev = np.linalg.eigvalsh(Md)
    assert ev[-1] <= 1e-10
    assert np.linalg.norm(Md @ sqrt_gibbs_vector(g)) <= 1e-12
    evL = np.sort(np.linalg.eigvals(L.matrix.toarray()).real)
    assert np.allclose(np.sort(ev), evL, atol=1e-9)


def test_master_hamiltonian_rejects_broken_detailed_balance():
    m = build_model("ising", 3)
    g = gibbs_model(m, 1.0)
    wrong = davies_lindbladian_generic(m.hamiltonian(), m.coupling_set("local_full"), 2.0)
    with pytest.raises(DetailedBalanceError):
        master_hamiltonian(wrong, g)


def test_master_hamiltonian_rejects_infinite_beta():
    m = build_model("ising", 3)
    g = gibbs_model(m, np.inf)
    L = davies_lindbladian(g, m.coupling_set("local_full"))
    with pytest.raises(ValueError):
        master_hamiltonian(L, g)


def test_flip_block_spectrum():
    for beta in (0.0, 1.0, 4.0):
        ev = np.linalg.eigvalsh(local_block_matrix("flip", beta))
        assert np.allclose(ev, [-2, -1, -1, 0], atol=1e-14)


# -- export and diagnostics ----------------------------------------------------------
def test_superoperator_io_round_trip(tmp_path):
    _, g, L = ising_generator(2, 1.0)
    L.write_binary(tmp_path / "gen.npy")
    back = Superoperator.read_binary(tmp_path / "gen.npy", L.gauge, L.hilbert_dim)
    assert (back.matrix != L.matrix).nnz == 0
    L.write_csv(tmp_path / "gen.csv")
    lines = (tmp_path / "gen.csv").read_text().splitlines()
    assert lines[0] == "row,col,re,im" and len(lines) == L.matrix.nnz + 1


def test_superoperator_add_and_shape_checks():
    _, g, L = ising_generator(2, 1.0)
    assert np.allclose((L + L).matrix.toarray(), 2 * L.matrix.toarray())
    with pytest.raises(ValueError):
        L + L.schrodinger()
    with pytest.raises(ValueError):
        Superoperator(L.matrix, "lindblad_heisenberg", 3)


def test_pauli_basis_is_similar():
    _, g, L = ising_generator(2, 1.0)
    P = pauli_basis_matrix(L)
    assert np.allclose(np.sort(np.linalg.eigvals(P).real), np.sort(np.linalg.eigvals(L.matrix.toarray()).real))
    assert np.allclose(P[:, 0], 0, atol=1e-14)  # the identity is annihilated
