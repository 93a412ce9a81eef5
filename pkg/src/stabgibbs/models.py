"""Stabilizer Hamiltonians for the Ising ring and the toric code.

Besides the Hamiltonians themselves this module provides *frames*: orthonormal
bases in which the Hamiltonian is diagonal and every Pauli coupling acts as a
phased bit flip ``P|k> = phase[k] |k ^ flip>``.  All superoperators of the
package are written in the matrix-unit basis of such a frame.

* Ising ring: the computational basis.  Qubit 0 is the logical bit, bond ``j``
  reads ``Z_j Z_{j+1}``.
* Toric code: basis vectors ``Z_comb^b X_snake^a X1^g1 X2^g2 |psi_o>``.  Bits
  0 and 1 of the frame index are ``g1, g2``, then one bit per snake spin in
  snake order, then one bit per comb spin in comb order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .lattice import RingLattice, TorusLattice
from .pauli import PauliString

COUPLING_SETS = ("local_full", "local_only", "gapped", "with_global", "syndrome_local")

_PHASES = np.array([1, 1j, -1, -1j])


# ---------------------------------------------------------------------------
# Hamiltonians and named operators
# ---------------------------------------------------------------------------
def ising_terms(lattice: RingLattice) -> list[tuple[float, PauliString]]:
    n = lattice.n_sites
    return [(-lattice.coupling, PauliString.product_of(n, bond, "Z")) for bond in lattice.bonds]


def star_operator(lattice: TorusLattice, s: int) -> PauliString:
    return PauliString.product_of(lattice.n_qubits, lattice.star_supports[s], "X")


def plaquette_operator(lattice: TorusLattice, p: int) -> PauliString:
    return PauliString.product_of(lattice.n_qubits, lattice.plaquette_supports[p], "Z")


def toric_terms(lattice: TorusLattice) -> list[tuple[float, PauliString]]:
    stars = [(-1.0, star_operator(lattice, s)) for s in range(lattice.n_cells)]
    plaqs = [(-1.0, plaquette_operator(lattice, p)) for p in range(lattice.n_cells)]
    return stars + plaqs


def stabilizer_parity_products(lattice: TorusLattice) -> tuple[PauliString, PauliString]:
    """Products of all stars and of all plaquettes (both should be the identity)."""
    n = lattice.n_qubits
    xs = zs = PauliString.identity(n)
    for s in range(lattice.n_cells):
        xs = xs * star_operator(lattice, s)
    for p in range(lattice.n_cells):
        zs = zs * plaquette_operator(lattice, p)
    return xs, zs


def _sum_terms(terms, n_qubits: int) -> sp.csr_matrix:
    dim = 1 << n_qubits
    out = sp.csr_matrix((dim, dim), dtype=np.complex128)
    for coef, p in terms:
        out = out + coef * p.to_sparse()
    out.eliminate_zeros()
    return out.tocsr()


def build_ising_hamiltonian(lattice: RingLattice) -> sp.csr_matrix:
    if lattice.n_sites < 2:
        raise ValueError("Ising ring needs N >= 2")
    n = lattice.n_sites
    idx = np.arange(1 << n, dtype=np.int64)
    diag = np.zeros(1 << n)
    for a, b in lattice.bonds:
        diag -= lattice.coupling * (1 - 2 * (((idx >> a) ^ (idx >> b)) & 1))
    return sp.diags(diag.astype(np.complex128)).tocsr()


def build_toric_hamiltonian(lattice: TorusLattice) -> sp.csr_matrix:
    if lattice.side < 2:
        raise ValueError("toric code needs L >= 2")
    return _sum_terms(toric_terms(lattice), lattice.n_qubits)


def logical_operators(lattice: TorusLattice) -> tuple[PauliString, PauliString, PauliString, PauliString]:
    """``(X1, Z1, X2, Z2)`` as Pauli strings along the loops chosen by the lattice."""
    n = lattice.n_qubits
    sup = lattice.logical_supports
    return (
        PauliString.product_of(n, sup["X1"], "X"),
        PauliString.product_of(n, sup["Z1"], "Z"),
        PauliString.product_of(n, sup["X2"], "X"),
        PauliString.product_of(n, sup["Z2"], "Z"),
    )


def logical_y(x: PauliString, z: PauliString) -> PauliString:
    """Hermitian logical Y built as ``-i Z X``."""
    return (z * x).scaled(3)


def excitation_path_operator(lattice: TorusLattice, kind: str, path) -> PauliString:
    """Product of ``X`` (magnetic, snake edges) or ``Z`` (electric, comb edges) along a path."""
    path = list(path)
    if kind == "magnetic":
        allowed, letter = set(lattice.snake_spins), "X"
    elif kind == "electric":
        allowed, letter = set(lattice.comb_spins), "Z"
    else:
        raise ValueError(f"unknown excitation kind {kind!r}")
    bad = [e for e in path if e not in allowed]
    if bad:
        raise ValueError(f"edges {bad} are not on the {'snake' if letter == 'X' else 'comb'}")
    return PauliString.product_of(lattice.n_qubits, path, letter)


def comb_leaf_paths(lattice: TorusLattice) -> list[list[int]]:
    return [list(p) for p in lattice.leaf_paths]


# ---------------------------------------------------------------------------
# ground states
# ---------------------------------------------------------------------------
GROUND_LABELS = ("o", "|", "-", "+")


def _seed(lattice: TorusLattice, label: str) -> np.ndarray:
    x1, _, x2, _ = logical_operators(lattice)
    phi = np.zeros(1 << lattice.n_qubits, dtype=np.complex128)
    phi[0] = 1.0
    if label in ("|", "+"):
        phi = x1.apply(phi)
    if label in ("-", "+"):
        phi = x2.apply(phi)
    return phi


def _star_subset_sum(lattice: TorusLattice, phi: np.ndarray) -> np.ndarray:
    stars = [star_operator(lattice, s) for s in range(lattice.n_cells)]
    out = np.zeros_like(phi)
    for r in range(len(stars) + 1):
        for subset in itertools.combinations(stars, r):
            op = PauliString.identity(lattice.n_qubits)
            for s in subset:
                op = op * s
            out += op.apply(phi)
    return out


def ground_state(lattice: TorusLattice, label: str) -> np.ndarray:
    """Normalized ``prod_s (I + X_s)`` applied to the seed named by ``label``."""
    label = {"−": "-"}.get(label, label)
    if label not in GROUND_LABELS:
        raise ValueError(f"label must be one of {GROUND_LABELS}")
    phi = _seed(lattice, label)
    if lattice.side == 2:
        psi = _star_subset_sum(lattice, phi)
    else:
        psi = phi
        for s in range(lattice.n_cells):
            psi = psi + star_operator(lattice, s).apply(psi)
    return psi / np.linalg.norm(psi)


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FrameAction:
    """``P|k> = phases[k] |k ^ flip>``; ``anticommuting`` lists Hamiltonian terms."""

    flip: int
    phases: np.ndarray
    anticommuting: tuple[int, ...]


class Frame:
    """Diagonalizing basis of a commuting stabilizer Hamiltonian ``sum_t coef_t S_t``."""

    n_bits: int
    terms: list[tuple[float, PauliString]]
    term_values: np.ndarray  # (n_terms, dim) of +-1
    logical_bits: int
    factor_sites: dict[str, list[int]]  # factor name -> term indices in site order

    @property
    def dim(self) -> int:
        return 1 << self.n_bits

    @cached_property
    def energies(self) -> np.ndarray:
        coefs = np.array([c for c, _ in self.terms])
        return coefs @ self.term_values

    def action(self, pauli: PauliString) -> FrameAction:
        raise NotImplementedError

    def anticommuting_terms(self, pauli: PauliString) -> tuple[int, ...]:
        return tuple(t for t, (_, s) in enumerate(self.terms) if not pauli.commutes_with(s))

    def factor_configs(self, name: str) -> np.ndarray:
        """Integer config per frame index; site ``p`` is bit ``n-1-p`` (1 means a -1 value)."""
        sites = self.factor_sites[name]
        n = len(sites)
        out = np.zeros(self.dim, dtype=np.int64)
        for pos, t in enumerate(sites):
            out |= (self.term_values[t] < 0).astype(np.int64) << (n - 1 - pos)
        return out

    def logical_index(self) -> np.ndarray:
        return np.arange(self.dim, dtype=np.int64) & ((1 << self.logical_bits) - 1)

    def to_frame(self, op):
        return op

    def from_frame(self, op):
        return op


class ComputationalFrame(Frame):
    """The computational basis; valid whenever every term is Z-type (Ising ring)."""

    def __init__(self, n_qubits: int, terms, logical_bits: int, factor_sites):
        if any(s.x_mask for _, s in terms):
            raise ValueError("computational frame needs diagonal terms")
        self.n_bits = n_qubits
        self.terms = list(terms)
        self.logical_bits = logical_bits
        self.factor_sites = factor_sites
        idx = np.arange(1 << n_qubits, dtype=np.int64)
        vals = []
        for _, s in self.terms:
            rows, v = s.column_action(idx)
            vals.append(v.real)
        self.term_values = np.array(vals)

    def action(self, pauli: PauliString) -> FrameAction:
        _, phases = pauli.column_action()
        return FrameAction(pauli.x_mask, phases, self.anticommuting_terms(pauli))


class UnitaryFrame(Frame):
    """Frame given by explicit orthonormal columns (dense; intended for 2^N <= 4096)."""

    def __init__(self, unitary: np.ndarray, terms, logical_bits: int, factor_sites, n_qubits: int):
        self.unitary = unitary
        self.n_bits = n_qubits
        self.terms = list(terms)
        self.logical_bits = logical_bits
        self.factor_sites = factor_sites
        self._cache: dict = {}
        vals = []
        for _, s in self.terms:
            d = np.einsum("ij,ij->j", unitary.conj(), s.apply(unitary))
            if np.max(np.abs(np.abs(d.real) - 1)) > 1e-9 or np.max(np.abs(d.imag)) > 1e-9:
                raise ValueError("frame does not diagonalize a stabilizer term")
            vals.append(np.sign(d.real))
        self.term_values = np.array(vals)

    def action(self, pauli: PauliString) -> FrameAction:
        key = (pauli.x_mask, pauli.z_mask, pauli.phase)
        if key in self._cache:
            return self._cache[key]
        m = self.unitary.conj().T @ pauli.apply(self.unitary)
        rows = np.argmax(np.abs(m), axis=0)
        cols = np.arange(self.dim)
        vals = m[rows, cols]
        flips = np.unique(rows ^ cols)
        if flips.size != 1 or np.max(np.abs(np.abs(vals) - 1)) > 1e-9:
            raise ValueError("Pauli does not act as a phased bit flip in this frame")
        quarter = np.rint(np.angle(vals) / (np.pi / 2)).astype(int) % 4
        exact = _PHASES[quarter]
        if np.max(np.abs(exact - vals)) > 1e-9:
            raise ValueError("non-quarter phase in frame action")
        out = FrameAction(int(flips[0]), exact, self.anticommuting_terms(pauli))
        self._cache[key] = out
        return out

    def to_frame(self, op):
        u = self.unitary
        if op.ndim == 1:
            return u.conj().T @ op
        return u.conj().T @ (op @ u)

    def from_frame(self, op):
        u = self.unitary
        if op.ndim == 1:
            return u @ op
        return u @ op @ u.conj().T


class FactorFrame(Frame):
    """One syndrome factor of the toric code on its own.

    Basis index bits are flips of the generating spins (snake spins for the
    plaquette factor, comb spins for the star factor) applied to the
    all-satisfied configuration.  Only products of those flips are accepted as
    couplings.  There are no logical bits.
    """

    def __init__(self, lattice: TorusLattice, factor: str):
        n = lattice.n_qubits
        if factor == "m":
            spins, letter = lattice.snake_spins, "X"
            sites = lattice.snake_plaquettes
            terms = [(-1.0, plaquette_operator(lattice, p)) for p in sites]
        elif factor == "e":
            spins, letter = lattice.comb_spins, "Z"
            terms = [(-1.0, star_operator(lattice, s)) for s in range(lattice.n_cells)]
        else:
            raise ValueError("factor must be 'm' or 'e'")
        self.lattice = lattice
        self.factor = factor
        self.spins = list(spins)
        self.letter = letter
        self.n_bits = len(spins)
        self.terms = terms
        self.logical_bits = 0
        self.factor_sites = {factor: list(range(len(terms)))}
        gens = [PauliString.single(n, q, letter) for q in spins]
        idx = np.arange(1 << self.n_bits, dtype=np.int64)
        vals = np.ones((len(terms), idx.size))
        for t, (_, s) in enumerate(terms):
            for b, g in enumerate(gens):
                if not g.commutes_with(s):
                    vals[t] *= 1 - 2 * ((idx >> b) & 1)
        self.term_values = vals
        self._bit = {q: b for b, q in enumerate(spins)}

    def action(self, pauli: PauliString) -> FrameAction:
        other = "Z" if self.letter == "X" else "X"
        mask = pauli.x_mask if self.letter == "X" else pauli.z_mask
        stray = pauli.z_mask if self.letter == "X" else pauli.x_mask
        qubits = [q for q in range(pauli.n_qubits) if mask >> q & 1]
        if stray or any(q not in self._bit for q in qubits):
            raise ValueError(f"coupling is not a product of {self.letter} flips on this factor "
                             f"(found {other} part or foreign spin)")
        flip = 0
        for q in qubits:
            flip |= 1 << self._bit[q]
        phases = np.full(self.dim, pauli.coefficient, dtype=np.complex128)
        return FrameAction(flip, phases, self.anticommuting_terms(pauli))


# ---------------------------------------------------------------------------
# model bundles
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class StabilizerModel:
    """A stabilizer Hamiltonian with its lattice, logicals and coupling sets."""

    kind: str
    lattice: RingLattice | TorusLattice
    terms: list[tuple[float, PauliString]]
    logicals: dict[str, PauliString]
    local_couplings: list[PauliString]
    _frame: Frame | None = field(default=None, repr=False)

    @property
    def n_qubits(self) -> int:
        return self.lattice.n_qubits

    @property
    def size(self) -> int:
        return self.lattice.n_sites if self.kind == "ising" else self.lattice.side

    @property
    def coupling_J(self) -> float:
        return self.lattice.coupling if self.kind == "ising" else 1.0

    def hamiltonian(self) -> sp.csr_matrix:
        if self.kind == "ising":
            return build_ising_hamiltonian(self.lattice)
        return build_toric_hamiltonian(self.lattice)

    @property
    def frame(self) -> Frame:
        if self._frame is None:
            self._frame = _build_frame(self)
        return self._frame

    def single_site_paulis(self) -> list[PauliString]:
        n = self.n_qubits
        return [PauliString.single(n, q, a) for q in range(n) for a in "XYZ"]

    def global_couplings(self) -> list[PauliString]:
        return list(self.logicals.values())

    def coupling_set(self, name: str) -> list[PauliString]:
        """Named coupling sets.

        ``local_full`` and ``local_only``: every single-site Pauli, no global jump.
        ``syndrome_local``: the snake/comb flips (Ising: ``X_j`` for ``j >= 1``).
        ``gapped``: ``syndrome_local`` plus the global logical jumps.
        ``with_global``: every single-site Pauli plus the global logical jumps.
        """
        if name in ("local_full", "local_only"):
            out = self.single_site_paulis()
        elif name == "syndrome_local":
            out = list(self.local_couplings)
        elif name == "gapped":
            out = list(self.local_couplings) + self.global_couplings()
        elif name == "with_global":
            out = self.single_site_paulis() + self.global_couplings()
        else:
            raise ValueError(f"unknown coupling set {name!r}; expected one of {COUPLING_SETS}")
        seen, uniq = set(), []
        for p in out:
            key = (p.x_mask, p.z_mask)
            if key not in seen:
                seen.add(key)
                uniq.append(p)
        return uniq


def ising_model(n_sites: int, coupling: float = 1.0) -> StabilizerModel:
    lat = RingLattice(n_sites, coupling)
    n = lat.n_sites
    logicals = {
        "X": PauliString.product_of(n, range(n), "X"),
        "Z": PauliString.single(n, 0, "Z"),
    }
    local = [PauliString.single(n, j, "X") for j in range(1, n)]
    return StabilizerModel("ising", lat, ising_terms(lat), logicals, local)


def toric_model(side: int) -> StabilizerModel:
    lat = TorusLattice(side)
    x1, z1, x2, z2 = logical_operators(lat)
    logicals = {"X1": x1, "Z1": z1, "X2": x2, "Z2": z2}
    n = lat.n_qubits
    local = [PauliString.single(n, q, "X") for q in lat.snake_spins]
    local += [PauliString.single(n, q, "Z") for q in lat.comb_spins]
    return StabilizerModel("toric", lat, toric_terms(lat), logicals, local)


def build_model(kind: str, size: int, coupling: float = 1.0) -> StabilizerModel:
    if kind == "ising":
        return ising_model(size, coupling)
    if kind == "toric":
        return toric_model(size)
    raise ValueError(f"unknown model {kind!r}")


FULL_FRAME_MAX_QUBITS = 12


def _build_frame(model: StabilizerModel) -> Frame:
    if model.kind == "ising":
        n = model.n_qubits
        return ComputationalFrame(n, model.terms, 1, {"b": list(range(n))})
    lat = model.lattice
    if lat.n_qubits > FULL_FRAME_MAX_QUBITS:
        raise ValueError(
            f"full toric frame limited to {FULL_FRAME_MAX_QUBITS} qubits (L = 2); "
            "use FactorFrame for larger lattices")
    x1, x2 = model.logicals["X1"], model.logicals["X2"]
    n = lat.n_qubits
    gens = [x1, x2]
    gens += [PauliString.single(n, q, "X") for q in lat.snake_spins]
    gens += [PauliString.single(n, q, "Z") for q in lat.comb_spins]
    psi = ground_state(lat, "o")
    dim = 1 << n
    cols = np.empty((dim, dim), dtype=np.complex128)
    for k in range(dim):
        v = psi
        for b, g in enumerate(gens):  # lowest bit applied first
            if k >> b & 1:
                v = g.apply(v)
        cols[:, k] = v
    n_cells = lat.n_cells
    plaq_sites = [n_cells + p for p in lat.snake_plaquettes]
    star_sites = list(range(n_cells))
    return UnitaryFrame(cols, model.terms, 2, {"m": plaq_sites, "e": star_sites}, n)
