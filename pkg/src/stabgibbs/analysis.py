"""Composite computations shared by the command line and the acceptance suite."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .davies import (GibbsModel, Superoperator, davies_lindbladian, gibbs_from_frame, gibbs_model,
                     master_hamiltonian, sqrt_gibbs_vector)
from .lattice import TorusLattice
from .models import COUPLING_SETS, FactorFrame, StabilizerModel, build_model
from .pauli import PauliString
from .sectors import (LambdaSector, SectorLabel, block_matrices, build_chain_K, build_comb_K, even_configs,
                      flip_sector_blocks, lambda_sector_basis, local_block_matrix, operator_sector_basis,
                      restrict_superoperator, tensor_assembly)
from .spectral import SpectralResult, block_spectral_gap, spectral_gap

ISING_MAX_FULL = 8
TORIC_MAX_FULL = 2
TORIC_MAX_SECTOR = 3
ISING_MAX_BLOCKS = 6
SPECTRAL_DENSE_OP = 1024


class DeskLimitError(ValueError):
    """Requested size is outside what the package computes exactly."""


def check_desk_limits(kind: str, size: int, couplings: str, sector_route: bool = False) -> str:
    """Return ``'full'`` or ``'sector'``, or raise with the limit that was exceeded."""
    if couplings not in COUPLING_SETS:
        raise ValueError(f"unknown coupling set {couplings!r}")
    if kind == "ising":
        if size > ISING_MAX_FULL:
            raise DeskLimitError(f"Ising ring limited to N <= {ISING_MAX_FULL} (full superoperator dim 4^8)")
        return "full"
    if kind == "toric":
        if size <= TORIC_MAX_FULL:
            return "full"
        if size <= TORIC_MAX_SECTOR and (couplings == "syndrome_local" or sector_route):
            return "sector"
        raise DeskLimitError(
            f"toric code: full generator only for L <= {TORIC_MAX_FULL}; L = {TORIC_MAX_SECTOR} "
            "only through the syndrome factors with coupling set 'syndrome_local'")
    raise ValueError(f"unknown model {kind!r}")


def build_generator(model: StabilizerModel, beta: float, couplings: str) -> tuple[GibbsModel, Superoperator]:
    g = gibbs_model(model, beta)
    return g, davies_lindbladian(g, model.coupling_set(couplings))


def master_gap(g: GibbsModel, L: Superoperator) -> SpectralResult:
    """Gap of ``-M`` with ``sqrt(sigma)`` deflated; block-wise above the dense limit."""
    M = master_hamiltonian(L, g)
    kern = sqrt_gibbs_vector(g)
    if M.op_dim <= SPECTRAL_DENSE_OP:
        return spectral_gap(-M.matrix, kernel_basis=kern)
    blocks = ((k, -b) for k, b in block_matrices(M, g.dim))
    idx0 = flip_sector_blocks(g.dim)[0]
    return block_spectral_gap(blocks, {0: kern[idx0]})


def factor_gap(lattice: TorusLattice, factor: str, beta: float) -> SpectralResult:
    """Gap of the syndrome-local generator on one toric syndrome factor."""
    frame = FactorFrame(lattice, factor)
    g = gibbs_from_frame(frame, beta)
    n = lattice.n_qubits
    spins = lattice.snake_spins if factor == "m" else lattice.comb_spins
    letter = "X" if factor == "m" else "Z"
    L = davies_lindbladian(g, [PauliString.single(n, q, letter) for q in spins])
    return master_gap(g, L)


def gap_point(kind: str, size: int, beta: float, couplings: str, J: float = 1.0) -> SpectralResult:
    route = check_desk_limits(kind, size, couplings)
    if not np.isfinite(beta):
        raise ValueError("gap scans need finite beta")
    if route == "sector":
        lat = TorusLattice(size)
        rm, re = factor_gap(lat, "m", beta), factor_gap(lat, "e", beta)
        # the syndrome generator is a sum over independent factors
        best = rm if rm.gap <= re.gap else re
        best.kernel_dim = rm.kernel_dim * re.kernel_dim
        best.method = f"factors:{best.method}"
        return best
    model = build_model(kind, size, J)
    g, L = build_generator(model, beta, couplings)
    return master_gap(g, L)


def syndrome_sector_gap(kind: str, size: int, beta: float, method: str = "auto") -> SpectralResult:
    """Gap of the syndrome-local generator restricted to the logical-identity syndrome sector."""
    model = build_model(kind, size)
    g, L = build_generator(model, beta, "syndrome_local")
    M = master_hamiltonian(L, g)
    if kind == "ising":
        basis = operator_sector_basis(g, {"b": "all"}, "I")
    else:
        basis = operator_sector_basis(g, {"m": "all", "e": "all"}, ("I", "I"))
    B = restrict_superoperator(M, basis).matrix
    kern = basis.vectors.conj().T @ sqrt_gibbs_vector(g)
    if method == "auto" and B.shape[0] > SPECTRAL_DENSE_OP:
        # sparse block: Lanczos with the Gibbs vector deflated
        return spectral_gap(-sp.csr_matrix(B), kernel_basis=np.asarray(kern).ravel(), method="iterative")
    return spectral_gap(-B, kernel_basis=np.asarray(kern).ravel(), method=method)


# ---------------------------------------------------------------------------
# block verification
# ---------------------------------------------------------------------------
def _block_floor_checks(sector: LambdaSector, T: np.ndarray) -> dict:
    ev = np.linalg.eigvalsh(-T)
    out = {"min_eig": float(ev[0])}
    split = sector.gamma_split
    out["has_int"] = bool(split["int"])
    out["all_flip"] = not sector.lam
    return out


def ising_block_report(n: int, beta: float, tol: float = 1e-11, leak_tol: float = 1e-12) -> dict:
    if n > ISING_MAX_BLOCKS:
        raise DeskLimitError(f"block verification limited to Ising N <= {ISING_MAX_BLOCKS}")
    model = build_model("ising", n)
    g, L = build_generator(model, beta, "syndrome_local")
    M = master_hamiltonian(L, g)
    sectors, failures = [], []
    for sec in LambdaSector.all_sectors(n):
        T = tensor_assembly(sec, beta)
        floors = _block_floor_checks(sec, T)
        mats = {}
        for lg in "IXYZ":
            r = restrict_superoperator(M, lambda_sector_basis(sec, g, "b", lg), invariant=False)
            mats[lg] = r.matrix
            dev = float(np.max(np.abs(r.matrix - T)))
            entry = {"lambda": sorted(sec.lam), "logical": lg, "leakage": r.leakage, "assembly_dev": dev}
            entry.update(floors)
            sectors.append(entry)
            name = f"Lambda={sorted(sec.lam)} logical={lg}"
            if r.leakage > leak_tol:
                failures.append(f"{name}: leakage {r.leakage:.3e} (sector invariance)")
            if dev > tol:
                failures.append(f"{name}: local-block deviation {dev:.3e} (tensor assembly)")
        if floors["has_int"] and floors["min_eig"] < 0.5 - 1e-10:
            failures.append(f"Lambda={sorted(sec.lam)}: interface floor {floors['min_eig']:.6g} < 1/2")
        if floors["all_flip"] and floors["min_eig"] < 0.5 - 1e-10:
            failures.append(f"Lambda=[]: full-flip gap {floors['min_eig']:.6g} < 1/2")
        spread = max(float(np.max(np.abs(mats[a] - mats["I"]))) for a in "XYZ")
        if spread > tol:
            failures.append(f"Lambda={sorted(sec.lam)}: logical sectors differ by {spread:.3e}")
    blocks = {c: local_block_matrix(c, beta).tolist() for c in ("ab", "flip", "int")}
    return {"model": "ising", "N": n, "beta": beta, "sectors": sectors, "local_blocks": blocks,
            "failures": failures, "ok": not failures}


def toric_block_report(beta: float, tol: float = 1e-11, leak_tol: float = 1e-12) -> dict:
    model = build_model("toric", 2)
    lat = model.lattice
    g, L = build_generator(model, beta, "syndrome_local")
    M = master_hamiltonian(L, g)
    failures, logical = [], []
    ref = None
    for lab in SectorLabel.all():
        b = operator_sector_basis(g, {"m": "all", "e": "all"}, lab)
        r = restrict_superoperator(M, b, invariant=False)
        mat = r.matrix
        dev = 0.0 if ref is None else float(abs(mat - ref).max())
        if ref is None:
            ref = mat
        logical.append({"sector": f"{lab.b1},{lab.b2}", "leakage": r.leakage, "dev_from_identity_sector": dev})
        if r.leakage > leak_tol:
            failures.append(f"B_{lab.b1},{lab.b2}: leakage {r.leakage:.3e} (sector invariance)")
        if dev > tol:
            failures.append(f"B_{lab.b1},{lab.b2}: differs from B_I,I by {dev:.3e} (logical independence)")
    factors = []
    snake_pairs = tuple((p, p + 1) for p in range(lat.n_cells - 1))
    comb_pairs = tuple(tuple(pr) for _, pr in lat.comb_order)
    for fac, pairs in (("m", snake_pairs), ("e", comb_pairs)):
        for sec in LambdaSector.all_sectors(lat.n_cells, pairs):
            r = restrict_superoperator(M, lambda_sector_basis(sec, g, fac), invariant=False)
            T = tensor_assembly(sec, beta)
            dev = float(np.max(np.abs(r.matrix - T)))
            floors = _block_floor_checks(sec, T)
            factors.append({"factor": fac, "lambda": sorted(sec.lam), "leakage": r.leakage,
                            "assembly_dev": dev, **floors})
            name = f"factor {fac} Lambda={sorted(sec.lam)}"
            if r.leakage > leak_tol:
                failures.append(f"{name}: leakage {r.leakage:.3e} (sector invariance)")
            if dev > tol:
                failures.append(f"{name}: local-block deviation {dev:.3e} (tensor assembly)")
            if floors["has_int"] and floors["min_eig"] < 0.5 - 1e-10:
                failures.append(f"{name}: interface floor {floors['min_eig']:.6g} < 1/2")
    ev = even_configs(lat.n_cells)
    Kc = build_comb_K(lat, beta).K.toarray()[np.ix_(ev, ev)]
    Ks = build_chain_K(lat.n_cells, beta).K.toarray()[np.ix_(ev, ev)]
    ab = LambdaSector(lat.n_cells, frozenset(range(lat.n_cells)))
    dev_e = float(np.max(np.abs(restrict_superoperator(M, lambda_sector_basis(ab, g, "e")).matrix + Kc)))
    dev_m = float(np.max(np.abs(restrict_superoperator(M, lambda_sector_basis(ab, g, "m")).matrix + Ks)))
    if max(dev_e, dev_m) > tol:
        failures.append(f"abelian sector differs from chain/comb matrix by {max(dev_e, dev_m):.3e}")
    return {"model": "toric", "L": 2, "beta": beta, "logical_sectors": logical, "factor_sectors": factors,
            "abelian_comb_dev": dev_e, "abelian_snake_dev": dev_m, "failures": failures, "ok": not failures}
