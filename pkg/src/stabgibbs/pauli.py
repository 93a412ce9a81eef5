"""Pauli strings stored as a phase exponent plus X/Z bit masks.

Qubit ``q`` corresponds to bit ``q`` of both masks and to the ``q``-th least
significant bit of a computational basis index.  The operator represented is
``1j**phase`` times the tensor product of single-qubit Paulis, where a qubit
with both bits set carries a ``Y`` (not ``XZ``).  With that normalization a
string is hermitian exactly when ``phase`` is even.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

_LETTERS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


def _popcount(x: int) -> int:
    return int(x).bit_count()


@dataclass(frozen=True)
class PauliString:
    n_qubits: int
    x_mask: int = 0
    z_mask: int = 0
    phase: int = 0

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        full = (1 << self.n_qubits) - 1
        if self.x_mask & ~full or self.z_mask & ~full:
            raise ValueError("mask has bits beyond n_qubits")
        object.__setattr__(self, "phase", self.phase % 4)

    # -- construction -------------------------------------------------
    @classmethod
    def identity(cls, n_qubits: int) -> "PauliString":
        return cls(n_qubits)

    @classmethod
    def single(cls, n_qubits: int, qubit: int, letter: str) -> "PauliString":
        x, z = _LETTERS[letter.upper()]
        return cls(n_qubits, x << qubit, z << qubit)

    @classmethod
    def from_label(cls, label: str, phase: int = 0) -> "PauliString":
        """``label[q]`` is the letter on qubit ``q``."""
        x = z = 0
        for q, ch in enumerate(label):
            bx, bz = _LETTERS[ch.upper()]
            x |= bx << q
            z |= bz << q
        return cls(len(label), x, z, phase)

    @classmethod
    def product_of(cls, n_qubits: int, qubits: Iterable[int], letter: str) -> "PauliString":
        """Same letter on every listed qubit (listing a qubit twice cancels it)."""
        out = cls.identity(n_qubits)
        for q in qubits:
            out = out * cls.single(n_qubits, q, letter)
        return out

    # -- algebra --------------------------------------------------------
    @property
    def y_count(self) -> int:
        return _popcount(self.x_mask & self.z_mask)

    def __mul__(self, other: "PauliString") -> "PauliString":
        if not isinstance(other, PauliString):
            return NotImplemented
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit count mismatch")
        x = self.x_mask ^ other.x_mask
        z = self.z_mask ^ other.z_mask
        # i^{p+y} X^x Z^z form; moving Z^{z1} past X^{x2} costs (-1)^{|z1 & x2|}.
        phase = (
            self.phase + other.phase + self.y_count + other.y_count
            - _popcount(x & z) + 2 * _popcount(self.z_mask & other.x_mask)
        )
        return PauliString(self.n_qubits, x, z, phase)

    def commutes_with(self, other: "PauliString") -> bool:
        sym = _popcount(self.x_mask & other.z_mask) + _popcount(self.z_mask & other.x_mask)
        return sym % 2 == 0

    def adjoint(self) -> "PauliString":
        return PauliString(self.n_qubits, self.x_mask, self.z_mask, -self.phase)

    def scaled(self, phase: int) -> "PauliString":
        return PauliString(self.n_qubits, self.x_mask, self.z_mask, self.phase + phase)

    def unsigned(self) -> "PauliString":
        return PauliString(self.n_qubits, self.x_mask, self.z_mask, 0)

    @property
    def is_hermitian(self) -> bool:
        return self.phase % 2 == 0

    @property
    def is_identity(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0

    @property
    def support(self) -> tuple[int, ...]:
        m = self.x_mask | self.z_mask
        return tuple(q for q in range(self.n_qubits) if m >> q & 1)

    @property
    def weight(self) -> int:
        return _popcount(self.x_mask | self.z_mask)

    @property
    def coefficient(self) -> complex:
        return 1j ** self.phase

    def label(self) -> str:
        out = []
        for q in range(self.n_qubits):
            out.append("IZXY"[(self.x_mask >> q & 1) * 2 + (self.z_mask >> q & 1)])
        return "".join(out)

    def __repr__(self) -> str:
        sign = ["+", "+i", "-", "-i"][self.phase]
        return f"PauliString({sign}{self.label()})"

    # -- matrices ---------------------------------------------------------
    def column_action(self, indices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Rows and values such that ``P|k> = values[k] |rows[k]>``."""
        if indices is None:
            indices = np.arange(1 << self.n_qubits, dtype=np.int64)
        signs = np.bitwise_count(indices & self.z_mask) & 1
        base = 1j ** ((self.phase + self.y_count) % 4)
        values = base * (1 - 2 * signs.astype(np.float64))
        return indices ^ self.x_mask, values.astype(np.complex128)

    def to_sparse(self) -> sp.csr_matrix:
        dim = 1 << self.n_qubits
        cols = np.arange(dim, dtype=np.int64)
        rows, vals = self.column_action(cols)
        return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def apply(self, state: np.ndarray) -> np.ndarray:
        """Apply to a state vector (or to the columns of a 2D array)."""
        dim = 1 << self.n_qubits
        if state.shape[0] != dim:
            raise ValueError("state dimension mismatch")
        rows, vals = self.column_action()
        out = np.empty_like(state, dtype=np.complex128)
        if state.ndim == 1:
            out[rows] = vals * state
        else:
            out[rows] = vals[:, None] * state
        return out
