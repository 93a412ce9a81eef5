"""Gibbs states, Bohr decompositions and Davies generators.

Superoperators act on row-major vectorized operators: the matrix unit
``|i><j|`` of a frame has index ``i*d + j``, so ``vec(A X B) = kron(A, B.T) vec(X)``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm
from scipy.special import expit, logsumexp

from .models import Frame, StabilizerModel
from .pauli import PauliString

GAUGES = ("lindblad_heisenberg", "lindblad_schrodinger", "master_hamiltonian")
GENERIC_MAX_DIM = 1 << 8


class DetailedBalanceError(ValueError):
    """Raised when a generator is not self-adjoint for the GNS inner product."""


class BohrClusteringError(ValueError):
    """Raised when eigenvalue differences cannot be grouped unambiguously."""


# ---------------------------------------------------------------------------
# Gibbs states
# ---------------------------------------------------------------------------
@dataclass
class GibbsModel:
    """Thermal state data in a basis where the Hamiltonian is diagonal.

    ``energies[k]`` is the energy of basis vector ``k`` of ``frame`` (or of the
    eigenvector ``basis[:, k]`` for a generic Hamiltonian).
    """

    hamiltonian: sp.spmatrix | None
    beta: float
    log_partition: float
    energies: np.ndarray
    coupling_J: float = 1.0
    frame: Frame | None = None
    basis: np.ndarray | None = None
    model: StabilizerModel | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.energies.size

    @property
    def log_weights(self) -> np.ndarray:
        if np.isinf(self.beta):
            e0 = self.energies.min()
            ground = np.isclose(self.energies, e0, atol=1e-9)
            return np.where(ground, -np.log(ground.sum()), -np.inf)
        return -self.beta * self.energies - self.log_partition

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def state(self) -> np.ndarray:
        """sigma_beta as a dense matrix in the diagonalizing basis."""
        return np.diag(self.weights).astype(np.complex128)

    def state_computational(self) -> np.ndarray:
        rho = self.state()
        if self.frame is not None:
            return self.frame.from_frame(rho)
        if self.basis is not None:
            return self.basis @ rho @ self.basis.conj().T
        return rho

    def to_json_dict(self) -> dict:
        out = {"beta": _jnum(self.beta), "J": self.coupling_J,
               "log_partition": _jnum(self.log_partition), "dim": self.dim}
        if self.model is not None:
            out["model"] = self.model.kind
            out["size"] = self.model.size
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def _jnum(x: float):
    return x if np.isfinite(x) else str(x)


def _log_partition(energies: np.ndarray, beta: float) -> float:
    if np.isinf(beta):
        return np.inf
    return float(logsumexp(-beta * energies))


def _check_hermitian(H) -> None:
    diff = H - H.conj().T
    size = abs(diff).max() if sp.issparse(diff) else np.abs(diff).max()
    if size > 1e-12 * max(1.0, abs(H).max()):
        raise ValueError("Hamiltonian is not hermitian")


def gibbs_state(H, beta: float, coupling_J: float = 1.0) -> GibbsModel:
    """Thermal state of a hermitian ``H`` (dense eigensolve unless ``H`` is diagonal)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    _check_hermitian(H)
    Hs = sp.csr_matrix(H)
    off = Hs - sp.diags(Hs.diagonal())
    basis = None
    if off.count_nonzero() == 0:
        energies = Hs.diagonal().real.copy()
    else:
        energies, basis = np.linalg.eigh(Hs.toarray())
    return GibbsModel(Hs, float(beta), _log_partition(energies, beta), energies, coupling_J, basis=basis)


def gibbs_from_frame(frame: Frame, beta: float, model: StabilizerModel | None = None,
                     hamiltonian=None) -> GibbsModel:
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    e = frame.energies
    J = model.coupling_J if model is not None else 1.0
    return GibbsModel(hamiltonian, float(beta), _log_partition(e, beta), e, J, frame=frame, model=model)


def gibbs_model(model: StabilizerModel, beta: float) -> GibbsModel:
    """Thermal state of a stabilizer model, diagonal in the model's frame."""
    return gibbs_from_frame(model.frame, beta, model, hamiltonian=None)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------
def glauber_rate(omega, beta: float):
    """``2 / (exp(beta*omega) + 1)``, evaluated without overflow."""
    omega = np.asarray(omega, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        x = np.where(omega == 0, 0.0, beta * omega)
    out = 2.0 * expit(-x)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Bohr decompositions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BohrComponent:
    omega: float
    jump: sp.csr_matrix


def _cluster(values: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Group sorted-adjacent values closer than ``tol``; returns (centers, labels)."""
    order = np.argsort(values, kind="stable")
    sv = values[order]
    starts = np.concatenate([[0], np.nonzero(np.diff(sv) > tol)[0] + 1])
    ends = np.concatenate([starts[1:], [sv.size]])
    labels = np.empty(values.size, dtype=np.int64)
    centers = []
    for g, (a, b) in enumerate(zip(starts, ends)):
        if sv[b - 1] - sv[a] > tol:
            raise BohrClusteringError(
                f"values between {sv[a]:.3e} and {sv[b - 1]:.3e} chain together within tolerance {tol:.1e}")
        labels[order[a:b]] = g
        centers.append(sv[a:b].mean())
    return np.array(centers), labels


def _sparse_clean(a: np.ndarray, cutoff: float = 1e-13) -> sp.csr_matrix:
    a = np.where(np.abs(a) > cutoff, a, 0)
    out = sp.csr_matrix(a)
    out.eliminate_zeros()
    return out


def bohr_decompose_generic(H, S, tol: float | None = None) -> list[BohrComponent]:
    """Bohr components of ``S`` from a dense eigendecomposition of ``H``."""
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    Sd = S.toarray() if sp.issparse(S) else np.asarray(S)
    if Hd.shape[0] > GENERIC_MAX_DIM:
        raise ValueError(f"generic decomposition limited to dim {GENERIC_MAX_DIM}")
    norm = np.abs(np.linalg.eigvalsh(Hd)).max() if Hd.size else 0.0
    tol = 1e-9 * max(1.0, norm) if tol is None else tol
    evals, vecs = np.linalg.eigh(Hd)
    level_e, level = _cluster(evals, tol)
    # snap eigenvalues to their level so equal-frequency pairs coincide exactly
    snapped = level_e[level]
    diffs = snapped[:, None] - snapped[None, :]
    freqs, labels = _cluster(diffs.ravel(), tol)
    labels = labels.reshape(diffs.shape)
    S_eig = vecs.conj().T @ Sd @ vecs
    out = []
    for g, w in enumerate(freqs):
        block = np.where(labels == g, S_eig, 0)
        if not np.any(np.abs(block) > 1e-13):
            continue
        out.append(BohrComponent(float(w), _sparse_clean(vecs @ block @ vecs.conj().T)))
    return out


def _stabilizer_terms(model) -> list[tuple[float, PauliString]]:
    if isinstance(model, GibbsModel):
        if model.frame is None:
            raise ValueError("model has no stabilizer frame")
        return model.frame.terms
    if isinstance(model, StabilizerModel):
        return model.terms
    return model.terms  # a Frame


def _frequency_key(w: float) -> float:
    return float(np.round(w, 9)) + 0.0


def bohr_decompose_stabilizer(model, coupling: PauliString, basis: str = "computational") -> list[BohrComponent]:
    """Bohr components of a Pauli coupling built from stabilizer projections.

    For ``H = sum_t c_t S_t`` with commuting stabilizers, the coupling ``P``
    picks up frequency ``-2 sum_{t in A} c_t s_t`` on the joint eigenspace
    where the anticommuting terms ``A`` take values ``s``.  ``basis`` selects
    computational-basis matrices (projectors as Pauli sums) or frame matrices.
    """
    if not isinstance(coupling, PauliString):
        raise TypeError("coupling must be a PauliString")
    if not coupling.is_hermitian:
        raise ValueError("coupling must be hermitian")
    terms = _stabilizer_terms(model)
    if terms and coupling.n_qubits != terms[0][1].n_qubits:
        raise ValueError("coupling acts on a different number of qubits")
    anti = [t for t, (_, s) in enumerate(terms) if not coupling.commutes_with(s)]
    if basis == "frame":
        frame = model.frame if not isinstance(model, Frame) else model
        return _stabilizer_components_frame(frame, coupling, terms)
    if basis != "computational":
        raise ValueError("basis must be 'computational' or 'frame'")
    n = coupling.n_qubits
    dim = 1 << n
    eye = sp.identity(dim, dtype=np.complex128, format="csr")
    groups: dict[float, sp.csr_matrix] = {}
    for signs in itertools.product((1, -1), repeat=len(anti)):
        w = -2.0 * sum(terms[t][0] * s for t, s in zip(anti, signs))
        proj = eye
        for t, s in zip(anti, signs):
            proj = proj @ ((eye + s * terms[t][1].to_sparse()) * 0.5)
        key = _frequency_key(w)
        groups[key] = groups[key] + proj if key in groups else proj
    P = coupling.to_sparse()
    out = []
    for w in sorted(groups):
        jump = (P @ groups[w]).tocsr()
        jump.data[np.abs(jump.data) < 1e-14] = 0
        jump.eliminate_zeros()
        if jump.nnz:
            out.append(BohrComponent(w, jump))
    return out


def _coupling_frequencies(frame: Frame, anti) -> np.ndarray:
    coefs = np.array([frame.terms[t][0] for t in anti])
    if len(anti) == 0:
        return np.zeros(frame.dim)
    return np.round(-2.0 * coefs @ frame.term_values[list(anti)], 9) + 0.0


def _stabilizer_components_frame(frame: Frame, coupling: PauliString, terms) -> list[BohrComponent]:
    act = frame.action(coupling)
    omega = _coupling_frequencies(frame, act.anticommuting)
    cols = np.arange(frame.dim)
    rows = cols ^ act.flip
    out = []
    for w in np.unique(omega):
        sel = omega == w
        jump = sp.csr_matrix((act.phases[sel], (rows[sel], cols[sel])), shape=(frame.dim, frame.dim))
        out.append(BohrComponent(float(w), jump))
    return out


# ---------------------------------------------------------------------------
# superoperators
# ---------------------------------------------------------------------------
@dataclass
class Superoperator:
    matrix: sp.csr_matrix
    gauge: str
    hilbert_dim: int
    basis: str = "computational"

    def __post_init__(self):
        if self.gauge not in GAUGES:
            raise ValueError(f"gauge must be one of {GAUGES}")
        if self.matrix.shape != (self.op_dim, self.op_dim):
            raise ValueError("matrix shape does not match hilbert_dim**2")

    @property
    def op_dim(self) -> int:
        return self.hilbert_dim ** 2

    def apply(self, X) -> np.ndarray:
        X = X.toarray() if sp.issparse(X) else np.asarray(X)
        d = self.hilbert_dim
        return (self.matrix @ X.reshape(-1)).reshape(d, d)

    def __add__(self, other: "Superoperator") -> "Superoperator":
        if other.gauge != self.gauge or other.hilbert_dim != self.hilbert_dim:
            raise ValueError("cannot add superoperators in different gauges or dimensions")
        return Superoperator((self.matrix + other.matrix).tocsr(), self.gauge, self.hilbert_dim, self.basis)

    def schrodinger(self) -> "Superoperator":
        """Hilbert-Schmidt adjoint of a Heisenberg-picture generator."""
        if self.gauge != "lindblad_heisenberg":
            raise ValueError("expected a Heisenberg-picture generator")
        return Superoperator(self.matrix.conj().T.tocsr(), "lindblad_schrodinger", self.hilbert_dim, self.basis)

    def coo_triples(self) -> np.ndarray:
        m = self.matrix.tocoo()
        out = np.empty(m.nnz, dtype=[("row", "<i8"), ("col", "<i8"), ("re", "<f8"), ("im", "<f8")])
        out["row"], out["col"] = m.row, m.col
        out["re"], out["im"] = m.data.real, m.data.imag
        return out

    def write_csv(self, path) -> None:
        t = self.coo_triples()
        with open(path, "w") as fh:
            fh.write("row,col,re,im\n")
            for r in t:
                fh.write(f"{r['row']},{r['col']},{r['re']:.17g},{r['im']:.17g}\n")

    def write_binary(self, path) -> None:
        np.save(path, self.coo_triples(), allow_pickle=False)

    @classmethod
    def read_binary(cls, path, gauge: str, hilbert_dim: int, basis: str = "computational") -> "Superoperator":
        t = np.load(path, allow_pickle=False)
        n = hilbert_dim ** 2
        m = sp.csr_matrix((t["re"] + 1j * t["im"], (t["row"], t["col"])), shape=(n, n))
        return cls(m, gauge, hilbert_dim, basis)


def _basis_name(model: GibbsModel) -> str:
    if model.model is not None:
        return f"frame:{model.model.kind}:{model.model.size}"
    if model.frame is not None:
        return f"frame:{type(model.frame).__name__}"
    return "computational" if model.basis is None else "eigenbasis"


def coupling_generator(model: GibbsModel, coupling: PauliString) -> sp.csr_matrix:
    """Heisenberg generator of a single Pauli coupling in the frame matrix-unit basis."""
    frame = model.frame
    if frame is None:
        raise ValueError("Davies assembly needs a stabilizer frame")
    act = frame.action(coupling)
    d = frame.dim
    omega = _coupling_frequencies(frame, act.anticommuting)
    rate = glauber_rate(omega, model.beta)
    i, j = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    i, j = i.ravel(), j.ravel()
    keep = omega[i] == omega[j]
    rows = (i * d + j)[keep]
    cols = ((i ^ act.flip) * d + (j ^ act.flip))[keep]
    vals = (rate[i] * act.phases[i].conj() * act.phases[j])[keep]
    diag = -0.5 * (rate[i] + rate[j])
    r = np.concatenate([rows, np.arange(d * d)])
    c = np.concatenate([cols, np.arange(d * d)])
    v = np.concatenate([vals, diag])
    out = sp.csr_matrix((v, (r, c)), shape=(d * d, d * d))
    out.eliminate_zeros()
    return out


def davies_lindbladian(model: GibbsModel, couplings, gauge: str = "lindblad_heisenberg") -> Superoperator:
    """Davies generator ``sum_a L_{S_a}`` with the Glauber profile shared by all couplings."""
    couplings = list(couplings)
    if model.frame is None:
        raise ValueError("Davies assembly needs a stabilizer frame")
    d = model.frame.dim
    for p in couplings:
        if not isinstance(p, PauliString):
            raise TypeError("couplings must be PauliStrings")
        if not p.is_hermitian:
            raise ValueError("couplings must be hermitian so the set is closed under adjoints")
    mat = sp.csr_matrix((d * d, d * d), dtype=np.complex128)
    for p in couplings:
        mat = mat + coupling_generator(model, p)
    L = Superoperator(mat.tocsr(), "lindblad_heisenberg", d, _basis_name(model))
    if gauge == "lindblad_heisenberg":
        return L
    if gauge == "lindblad_schrodinger":
        return L.schrodinger()
    if gauge == "master_hamiltonian":
        return master_hamiltonian(L, model)
    raise ValueError(f"gauge must be one of {GAUGES}")


def _lm(A: sp.spmatrix, d: int) -> sp.csr_matrix:
    return sp.kron(A, sp.identity(d), format="csr")


def _rm(B: sp.spmatrix, d: int) -> sp.csr_matrix:
    return sp.kron(sp.identity(d), B.T, format="csr")


def davies_lindbladian_generic(H, couplings, beta: float, frame_unitary: np.ndarray | None = None,
                               basis: str = "computational") -> Superoperator:
    """Reference assembly from dense eigendecomposition, term by term.

    Uses ``L(X) = 1/2 sum_w g(w) (S_w^dag [X, S_w] + [S_w^dag, X] S_w)`` built from
    left and right multiplication maps.  With ``frame_unitary`` the jumps are
    rotated into that basis before assembly.
    """
    d = H.shape[0]
    mat = sp.csr_matrix((d * d, d * d), dtype=np.complex128)
    for p in couplings:
        S = p.to_sparse() if isinstance(p, PauliString) else sp.csr_matrix(p)
        for comp in bohr_decompose_generic(H, S):
            J = comp.jump
            if frame_unitary is not None:
                J = _sparse_clean(frame_unitary.conj().T @ J.toarray() @ frame_unitary)
            Jd = J.conj().T.tocsr()
            g = glauber_rate(comp.omega, beta)
            both = _lm(Jd, d) @ _rm(J, d)
            JdJ = (Jd @ J).tocsr()
            term = 0.5 * ((both - _lm(JdJ, d)) + (both - _rm(JdJ, d)))
            mat = mat + g * term
    mat.eliminate_zeros()
    return Superoperator(mat.tocsr(), "lindblad_heisenberg", d, basis)


def dephasing_lindbladian(O: PauliString, model: GibbsModel) -> Superoperator:
    """``A -> -1/2 [O, [O, A]]`` for a hermitian Pauli ``O`` commuting with the Hamiltonian."""
    if not O.is_hermitian:
        raise ValueError("dephasing operator must be hermitian")
    frame = model.frame
    act = frame.action(O)
    if act.anticommuting:
        raise ValueError("operator does not commute with the Hamiltonian")
    d = frame.dim
    i, j = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    i, j = i.ravel(), j.ravel()
    # O A O with O|k> = phi_k |k^f>: (OAO)_ij = phi_{i^f} phi_j A_{i^f, j^f}
    vals = act.phases[i ^ act.flip] * act.phases[j]
    m = sp.csr_matrix((vals, (i * d + j, (i ^ act.flip) * d + (j ^ act.flip))), shape=(d * d, d * d))
    m = (m - sp.identity(d * d, format="csr")).tocsr()
    m.eliminate_zeros()
    return Superoperator(m, "lindblad_heisenberg", d, _basis_name(model))


# ---------------------------------------------------------------------------
# GNS geometry
# ---------------------------------------------------------------------------
def gns_inner(X, Y, model: GibbsModel) -> complex:
    """``Tr(X^dag Y sigma)`` with ``X, Y`` in the basis where ``sigma`` is diagonal."""
    X = X.toarray() if sp.issparse(X) else np.asarray(X)
    Y = Y.toarray() if sp.issparse(Y) else np.asarray(Y)
    if X.shape != Y.shape:
        raise ValueError("shape mismatch")
    return complex(np.sum(X.conj() * Y * model.weights[None, :]))


def _column_state(d: int) -> np.ndarray:
    return np.tile(np.arange(d), d)


def master_hamiltonian(L: Superoperator, model: GibbsModel, tol: float = 1e-10) -> Superoperator:
    """Similarity transform ``X -> X sigma^{1/2}`` applied to a Heisenberg generator."""
    if L.gauge != "lindblad_heisenberg":
        raise ValueError("master Hamiltonian needs a Heisenberg-picture generator")
    if not np.isfinite(model.beta):
        raise ValueError("master Hamiltonian undefined at infinite beta")
    d = L.hilbert_dim
    col_state = _column_state(d)
    half_log = 0.5 * model.log_weights
    m = L.matrix.tocoo()
    scale = np.exp(half_log[col_state[m.row]] - half_log[col_state[m.col]])
    M = sp.csr_matrix((m.data * scale, (m.row, m.col)), shape=m.shape)
    asym = sparse_norm(M - M.conj().T)
    size = sparse_norm(M)
    if asym > tol * max(size, 1e-300):
        raise DetailedBalanceError(f"generator violates GNS detailed balance: |M - M^dag| = {asym:.3e}")
    return Superoperator(M, "master_hamiltonian", d, L.basis)


def sqrt_gibbs_vector(model: GibbsModel) -> np.ndarray:
    """``vec(sigma^{1/2})``: the zero mode of a master Hamiltonian."""
    d = model.dim
    v = np.zeros(d * d)
    idx = np.arange(d)
    v[idx * d + idx] = np.exp(0.5 * model.log_weights)
    return v


def pauli_basis_matrix(L: Superoperator, max_qubits: int = 4) -> np.ndarray:
    """Dense matrix of ``L`` in the normalized Pauli basis (diagnostics only).

    Columns are ``vec(P) / sqrt(d)`` for all Pauli strings in label order
    ``I, X, Y, Z`` per qubit, so the result is unitarily similar to ``L``.
    """
    d = L.hilbert_dim
    n = d.bit_length() - 1
    if n > max_qubits:
        raise ValueError(f"Pauli-basis view limited to {max_qubits} qubits")
    labels = ["".join(t) for t in itertools.product("IXYZ", repeat=n)]
    B = np.column_stack([PauliString.from_label(lab).to_dense().reshape(-1) for lab in labels]) / np.sqrt(d)
    return B.conj().T @ (L.matrix @ B)
