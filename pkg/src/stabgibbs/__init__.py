"""Davies Gibbs samplers for stabilizer Hamiltonians (1D Ising ring, 2D toric code).

Modules, bottom up: ``pauli`` and ``lattice`` (operator core), ``models``
(Hamiltonians, logicals, frames), ``davies`` (Gibbs states and generators),
``sectors`` (invariant blocks and chain matrices), ``spectral`` (gaps and the
stair graph), ``dynamics`` (evolution and mixing), ``cli`` (batch jobs).
"""
from .davies import (GibbsModel, Superoperator, davies_lindbladian, gibbs_model, gibbs_state, glauber_rate,
                     master_hamiltonian)
from .lattice import RingLattice, TorusLattice
from .models import build_model, ising_model, toric_model
from .pauli import PauliString
from .spectral import SpectralResult, min_eigenvalue, spectral_gap, stair_graph

__version__ = "0.1.0"

__all__ = [
    "GibbsModel", "PauliString", "RingLattice", "SpectralResult", "Superoperator", "TorusLattice",
    "build_model", "davies_lindbladian", "gibbs_model", "gibbs_state", "glauber_rate", "ising_model",
    "master_hamiltonian", "min_eigenvalue", "spectral_gap", "stair_graph", "toric_model",
]
