import json

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from stabgibbs.analysis import master_gap
from stabgibbs.davies import davies_lindbladian, gibbs_model
from stabgibbs.dynamics import (DensityState, MixingBoundViolation, chi2_divergence, evolve, fit_decay_rate,
                                frame_ground_state, gibbs_density, haar_pure, haar_vector, initial_state_library,
                                krylov_expm_action, maximally_mixed, measured_mixing_time, mixing_time_bound,
                                mixing_trace, pair_excitation_state, perturbed_mixed, pure_state, random_mixed,
                                trace_distance, worst_case_chi2)
from stabgibbs.models import GROUND_LABELS, build_model


def setup(n, beta, couplings="local_full"):
    m = build_model("ising", n)
    g = gibbs_model(m, beta)
    L = davies_lindbladian(g, m.coupling_set(couplings))
    return m, g, L


@pytest.fixture(scope="module")
def toric_gibbs():
    return gibbs_model(build_model("toric", 2), 1.0)


# -- states ----------------------------------------------------------------------------------
def test_library_states_valid(toric_gibbs):
    rng = np.random.default_rng(0)
    states = initial_state_library(toric_gibbs, rng, n_random=2)
    assert len(states) == 2 + 2 + 4 + 1
    for s in states:
        s.validate()


def test_density_state_validation():
    with pytest.raises(ValueError):
        DensityState(np.diag([0.7, 0.7])).validate()
    with pytest.raises(ValueError):
        DensityState(np.array([[0.5, 1.0], [0.0, 0.5]])).validate()
    with pytest.raises(ValueError):
        DensityState(np.diag([1.5, -0.5])).validate()
    with pytest.raises(ValueError):
        DensityState(np.ones((2, 3)))


def test_haar_first_moment():
    rng = np.random.default_rng(11)
    d = 8
    w = np.array([abs(haar_vector(d, rng)[0]) ** 2 for _ in range(4000)])
    assert w.mean() == pytest.approx(1 / d, abs=0.01)
    assert np.linalg.norm(haar_vector(d, rng)) == pytest.approx(1)


def test_frame_ground_states(toric_gibbs):
    e = toric_gibbs.frame.energies
    for lab in GROUND_LABELS:
        rho = frame_ground_state(toric_gibbs, lab).matrix
        assert np.real(np.trace(rho @ np.diag(e))) == pytest.approx(-8)
    with pytest.raises(ValueError):
        frame_ground_state(toric_gibbs, "x")


def test_pair_excitation_energy(toric_gibbs):
    lat = toric_gibbs.model.lattice
    rho = pair_excitation_state(toric_gibbs, "electric", lat.leaf_path_spins[0]).matrix
    assert np.real(np.trace(rho @ np.diag(toric_gibbs.frame.energies))) == pytest.approx(-4)


def test_ground_state_matches_lattice_construction(toric_gibbs):
    from stabgibbs.models import ground_state
    frame = toric_gibbs.frame
    for lab in GROUND_LABELS:
        psi = ground_state(toric_gibbs.model.lattice, lab)
        rho = frame.from_frame(frame_ground_state(toric_gibbs, lab).matrix)
        assert np.allclose(rho, np.outer(psi, psi.conj()), atol=1e-12)


# -- evolution ----------------------------------------------------------------------------------
def test_zero_time_identity():
    _, g, L = setup(3, 1.0)
    rho = random_mixed(8, np.random.default_rng(2))
    assert np.array_equal(evolve(L.schrodinger(), rho, 0.0).matrix, rho.matrix)


@pytest.mark.parametrize("method", ["dense", "krylov", "sectors"])
def test_gibbs_state_stationary(method):
    _, g, L = setup(3, 1.5)
    sig = gibbs_density(g)
    for t in (0.3, 4.0):
        assert np.allclose(evolve(L.schrodinger(), sig, t, method).matrix, sig.matrix, atol=1e-10)


def test_ising2_matches_dense_oracle():
    m, g, L = setup(2, 1.0)
    H = oracles.ising_hamiltonian(2)
    gen = oracles.heisenberg_to_schrodinger(
        oracles.davies_heisenberg(H, [p.to_dense() for p in m.coupling_set("local_full")], 1.0), 4)
    rho = random_mixed(4, np.random.default_rng(5))
    ref = (sla.expm(0.7 * gen) @ rho.vec()).reshape(4, 4)
    for method in ("dense", "krylov", "sectors"):
        assert np.max(np.abs(evolve(L.schrodinger(), rho, 0.7, method).matrix - ref)) <= 1e-8


def test_evolve_rejects_bad_input():
    _, g, L = setup(2, 1.0)
    rho = maximally_mixed(4)
    with pytest.raises(ValueError):
        evolve(L, rho, 1.0)
    with pytest.raises(ValueError):
        evolve(L.schrodinger(), rho, -1.0)
    with pytest.raises(ValueError):
        evolve(L.schrodinger(), maximally_mixed(8), 1.0)
    with pytest.raises(ValueError):
        evolve(L.schrodinger(), rho, 1.0, "euler")


@settings(max_examples=20)
@given(st.floats(0, 2), st.floats(0, 2), st.integers(2, 3), st.integers(0, 10 ** 6))
def test_semigroup_and_positivity(s, t, n, seed):
    _, g, L = setup(n, 1.0, "with_global")
    Ls = L.schrodinger()
    rho = haar_pure(2 ** n, np.random.default_rng(seed))
    a = evolve(Ls, evolve(Ls, rho, s, "krylov"), t, "krylov")
    b = evolve(Ls, rho, s + t, "dense")
    assert np.max(np.abs(a.matrix - b.matrix)) <= 1e-8
    assert a.min_eigenvalue() >= -1e-8
    assert np.trace(a.matrix).real == pytest.approx(1, abs=1e-9)
    assert np.max(np.abs(a.matrix - a.matrix.conj().T)) <= 1e-9


def test_krylov_on_random_matrix():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((60, 60)) / 8
    v = rng.standard_normal(60)
    assert np.allclose(krylov_expm_action(A, v, 2.5), sla.expm(2.5 * A) @ v, atol=1e-8)


# -- divergences ------------------------------------------------------------------------------
def test_chi2_examples():
    _, g, _ = setup(3, 1.0)
    assert chi2_divergence(gibbs_density(g), g) == pytest.approx(0, abs=1e-15)
    _, g0, _ = setup(2, 0.0)
    rho = random_mixed(4, np.random.default_rng(1))
    assert chi2_divergence(rho, g0) == pytest.approx(4 * np.trace(rho.matrix @ rho.matrix).real - 1)
    assert chi2_divergence(haar_pure(4, np.random.default_rng(2)), g0) == pytest.approx(3)


def test_chi2_matches_sqrtm_oracle():
    _, g, _ = setup(3, 1.0)
    rho = random_mixed(8, np.random.default_rng(3))
    assert chi2_divergence(rho, g) == pytest.approx(oracles.chi2(rho.matrix, g.state()), rel=1e-10)


def test_chi2_rejects_infinite_beta():
    _, g, _ = setup(3, np.inf)
    with pytest.raises(ValueError):
        chi2_divergence(maximally_mixed(8), g)


def test_trace_distance_examples():
    a, b = pure_state([1, 0]), pure_state([0, 1])
    assert trace_distance(a, a) == 0
    assert trace_distance(a, b) == pytest.approx(1)


@given(st.integers(0, 10 ** 6))
def test_trace_distance_below_sqrt_chi2(seed):
    _, g, _ = setup(3, 1.0)
    rho = random_mixed(8, np.random.default_rng(seed), rank=int(seed % 8) + 1)
    td = trace_distance(rho, g.state())
    assert td == pytest.approx(oracles.trace_norm_half(rho.matrix, g.state()), abs=1e-12)
    assert td <= np.sqrt(chi2_divergence(rho, g)) + 1e-12
    assert chi2_divergence(rho, g) <= worst_case_chi2(g)


# -- mixing traces ------------------------------------------------------------------------------
def test_gibbs_trace_flat():
    _, g, L = setup(3, 1.0)
    tr = mixing_trace(L.schrodinger(), gibbs_density(g), g, np.linspace(0, 5, 11), 0.5)
    assert np.max(tr.chi2) <= 1e-14 and np.max(tr.trace_dist) <= 1e-7


def test_fitted_rate_with_global_jumps():
    _, g, L = setup(4, 2.0, "with_global")
    gap = master_gap(g, L).gap
    rng = np.random.default_rng(9)
    tr = mixing_trace(L.schrodinger(), perturbed_mixed(16, rng), g, np.linspace(0, 10 / gap, 50), gap)
    assert tr.fitted_rate >= 2 * gap * 0.95
    assert tr.is_monotone()


def test_bound_violation_raises():
    _, g, L = setup(3, 1.0)
    gap = master_gap(g, L).gap
    rho = haar_pure(8, np.random.default_rng(1))
    with pytest.raises(MixingBoundViolation):
        mixing_trace(L.schrodinger(), rho, g, np.linspace(0, 40, 20), 3 * gap)
    with pytest.raises(ValueError):
        mixing_trace(L.schrodinger(), rho, g, [0.0, 1.0, 0.5], gap)


def test_mixing_time_consistency():
    _, g, L = setup(3, 1.0, "local_full")
    gap = master_gap(g, L).gap
    rng = np.random.default_rng(21)
    for rho in (haar_pure(8, rng), perturbed_mixed(8, rng)):
        tr = mixing_trace(L.schrodinger(), rho, g, np.linspace(0, 12 / gap, 200), gap)
        eps = 1e-3
        bound = mixing_time_bound(tr.metadata["chi2_0"], gap, eps)
        assert measured_mixing_time(tr, eps) <= bound * 1.05


@pytest.mark.slow
def test_toric_local_only_decay_collapses():
    m = build_model("toric", 2)
    rates = []
    for beta in (1.0, 3.0):
        g = gibbs_model(m, beta)
        L = davies_lindbladian(g, m.coupling_set("local_only"))
        rho = frame_ground_state(g, "o")
        gap = master_gap(g, L).gap
        tr = mixing_trace(L.schrodinger(), rho, g, np.linspace(0, 6, 13), gap)
        rates.append(fit_decay_rate(tr.times, tr.chi2))
    assert rates[1] < 0.5 * rates[0]


def test_trace_files(tmp_path):
    _, g, L = setup(2, 1.0)
    tr = mixing_trace(L.schrodinger(), haar_pure(4, np.random.default_rng(0)), g, np.linspace(0, 3, 7), 0.5,
                      metadata={"seed": 0})
    csv_path, js = tr.write(tmp_path / "t.csv")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "t,chi2,trace_dist" and len(lines) == 8
    meta = json.loads(js.read_text())
    assert meta["seed"] == 0 and meta["gap"] == 0.5 and meta["schema"] == "stabgibbs/1"


def test_fit_decay_rate_exact():
    t = np.linspace(0, 3, 10)
    assert fit_decay_rate(t, 5 * np.exp(-1.7 * t)) == pytest.approx(1.7)
    assert np.isnan(fit_decay_rate(t, np.zeros(10)))


def test_worst_case_prefactor():
    _, g, _ = setup(3, 2.0)
    assert worst_case_chi2(g) == pytest.approx(8 * np.exp(2.0 * 3))
