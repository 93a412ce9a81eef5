"""Schrodinger-picture evolution, divergences and mixing-time estimates.

States live in the basis of the generator they are evolved with: the
computational basis for the Ising ring and the stabilizer frame for the
toric code.  Vectorization is row-major, as everywhere in the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .davies import GibbsModel, Superoperator
from .models import GROUND_LABELS, excitation_path_operator
from .sectors import flip_sector_blocks
from .serialize import SCHEMA, atomic_write, csv_text, dumps

DENSE_OP_LIMIT = 256
KRYLOV_TOL = 1e-9


class KrylovConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (achieved error estimate {residual:.3e})")
        self.residual = residual


class MixingBoundViolation(AssertionError):
    """chi^2 rose above the exponential bound set by the gap."""


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------
@dataclass
class DensityState:
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.complex128)
        d = self.matrix.shape[0]
        if self.matrix.shape != (d, d):
            raise ValueError("density matrix must be square")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def validate(self, tol: float = 1e-10, psd_tol: float = 1e-9) -> None:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise ValueError("state is not hermitian")
        if abs(np.trace(m) - 1) > tol:
            raise ValueError(f"trace {np.trace(m).real:.3e} != 1")
        if self.min_eigenvalue() < -psd_tol:
            raise ValueError("state has a negative eigenvalue")

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))[0])

    def vec(self) -> np.ndarray:
        return self.matrix.reshape(-1)

    @classmethod
    def from_vec(cls, v: np.ndarray, label: str = "") -> "DensityState":
        d = int(round(np.sqrt(v.size)))
        return cls(v.reshape(d, d), label)


def maximally_mixed(dim: int) -> DensityState:
    return DensityState(np.eye(dim) / dim, "maximally_mixed")


def pure_state(psi: np.ndarray, label: str = "pure") -> DensityState:
    psi = np.asarray(psi, dtype=np.complex128)
    psi = psi / np.linalg.norm(psi)
    return DensityState(np.outer(psi, psi.conj()), label)


def haar_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    """First column of a Haar unitary (QR of a complex Gaussian, phases fixed)."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return q[:, 0]


def haar_pure(dim: int, rng: np.random.Generator) -> DensityState:
    return pure_state(haar_vector(dim, rng), "haar_pure")


def random_mixed(dim: int, rng: np.random.Generator, rank: int | None = None) -> DensityState:
    rank = rank or dim
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    m = g @ g.conj().T
    return DensityState(m / np.trace(m).real, f"random_mixed_rank{rank}")


def perturbed_mixed(dim: int, rng: np.random.Generator, strength: float = 0.5) -> DensityState:
    """Convex mix of the maximally mixed state with a Haar pure state."""
    psi = haar_vector(dim, rng)
    m = (1 - strength) * np.eye(dim) / dim + strength * np.outer(psi, psi.conj())
    return DensityState(m, "perturbed_mixed")


def frame_ground_state(model: GibbsModel, label: str = "o") -> DensityState:
    """Toric ground state in the frame basis (frame index of the logical bits)."""
    if label not in GROUND_LABELS:
        raise ValueError(f"ground label must be one of {GROUND_LABELS}")
    frame = model.frame
    if model.model is None or model.model.kind != "toric":
        raise ValueError("labelled ground states are defined for the toric code")
    k = GROUND_LABELS.index(label)
    # frame bit 0 applies X1 and bit 1 applies X2 to |psi_o>
    idx = {0: 0, 1: 0b01, 2: 0b10, 3: 0b11}[k]
    psi = np.zeros(frame.dim, dtype=np.complex128)
    psi[idx] = 1.0
    e0 = frame.energies.min()
    if frame.energies[idx] != e0:
        raise RuntimeError("frame index is not a ground state")
    return pure_state(psi, f"ground_{label}")


def pair_excitation_state(model: GibbsModel, kind: str, path) -> DensityState:
    """Path operator applied to the reference ground state, in the frame basis."""
    frame = model.frame
    op = excitation_path_operator(model.model.lattice, kind, path)
    act = frame.action(op)
    psi = np.zeros(frame.dim, dtype=np.complex128)
    psi[act.flip] = act.phases[0]
    return pure_state(psi, f"pair_{kind}")


def gibbs_density(model: GibbsModel) -> DensityState:
    return DensityState(model.state(), "gibbs")


def initial_state_library(model: GibbsModel, rng: np.random.Generator, n_random: int = 1) -> list[DensityState]:
    d = model.dim
    out = [maximally_mixed(d), perturbed_mixed(d, rng)]
    out += [haar_pure(d, rng) for _ in range(n_random)]
    if model.model is not None and model.model.kind == "toric":
        out += [frame_ground_state(model, lab) for lab in GROUND_LABELS]
        lat = model.model.lattice
        out.append(pair_excitation_state(model, "electric", lat.leaf_path_spins[0]))
    return out


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------
def krylov_expm_action(A, v: np.ndarray, t: float, tol: float = KRYLOV_TOL, m: int = 30,
                       max_steps: int = 10_000) -> np.ndarray:
    """``exp(t A) v`` by Arnoldi projection with adaptive substeps.

    Each substep builds an ``m``-dimensional Krylov space, exponentiates the
    small Hessenberg matrix, and accepts the step when the standard a
    posteriori estimate ``beta * h_{m+1,m} * |e_m^T exp(tau H) e_1|`` is below
    ``tol * |v| * tau / t``.
    """
    w = np.asarray(v, dtype=np.complex128).copy()
    if t == 0 or not np.any(w):
        return w
    n = w.size
    m = min(m, n)
    anorm = float(abs(A).sum(axis=1).max()) if sp.issparse(A) else float(np.abs(A).sum(axis=1).max())
    if anorm == 0:
        return w
    vnorm = np.linalg.norm(w)
    done = 0.0
    tau = min(t, m / (2.0 * anorm))
    steps = 0
    while done < t:
        tau = min(tau, t - done)
        beta = np.linalg.norm(w)
        if beta == 0:
            return w
        V = np.zeros((n, m + 1), dtype=np.complex128)
        H = np.zeros((m + 1, m + 1), dtype=np.complex128)
        V[:, 0] = w / beta
        k_end, h_next = m, 0.0
        for j in range(m):
            x = A @ V[:, j]
            for _ in range(2):
                c = V[:, : j + 1].conj().T @ x
                x = x - V[:, : j + 1] @ c
                H[: j + 1, j] += c
            h_next = np.linalg.norm(x)
            if h_next < 1e-14 * anorm:
                k_end = j + 1
                h_next = 0.0
                break
            H[j + 1, j] = h_next
            V[:, j + 1] = x / h_next
        while True:
            E = sla.expm(tau * H[:k_end, :k_end])
            err = beta * h_next * abs(E[k_end - 1, 0]) * tau if h_next else 0.0
            if err <= tol * vnorm * max(tau / t, 1e-3) or tau < 1e-14 * t:
                break
            tau *= 0.5
        steps += 1
        if steps > max_steps:
            raise KrylovConvergenceError("Krylov exponential exceeded its step budget", err)
        w = beta * (V[:, :k_end] @ E[:, 0])
        done += tau
        if err < 0.1 * tol * vnorm * max(tau / t, 1e-3):
            tau *= 1.5
    return w


def _generator_matrix(L: Superoperator):
    if L.gauge != "lindblad_schrodinger":
        raise ValueError("evolution expects a Schrodinger-picture generator")
    return L.matrix


def evolve(L: Superoperator, rho0: DensityState, t: float, method: str = "auto",
           tol: float = KRYLOV_TOL) -> DensityState:
    """``exp(t L^dag) rho0``.

    ``method``: ``dense`` (full matrix exponential, small generators only),
    ``krylov`` (whole vector), ``sectors`` (Krylov per flip sector, since the
    generator never mixes matrix units with different ``i ^ j``).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    A = _generator_matrix(L)
    if rho0.dim != L.hilbert_dim:
        raise ValueError("state and generator dimensions differ")
    if method == "auto":
        method = "dense" if L.op_dim <= DENSE_OP_LIMIT else "sectors"
    v = rho0.vec()
    if t == 0:
        return DensityState(rho0.matrix.copy(), rho0.label)
    if method == "dense":
        if L.op_dim > 4 * DENSE_OP_LIMIT:
            raise ValueError("dense exponential limited to small generators")
        out = sla.expm(t * A.toarray()) @ v
    elif method == "krylov":
        out = krylov_expm_action(A.tocsr(), v, t, tol)
    elif method == "sectors":
        out = np.zeros_like(v)
        Acsr = A.tocsr()
        for _, idx in flip_sector_blocks(L.hilbert_dim).items():
            part = v[idx]
            if not np.any(np.abs(part) > 0):
                continue
            blk = Acsr[idx][:, idx]
            out[idx] = krylov_expm_action(blk, part, t, tol)
    else:
        raise ValueError("method must be auto, dense, krylov or sectors")
    return DensityState.from_vec(out, rho0.label)


# ---------------------------------------------------------------------------
# divergences
# ---------------------------------------------------------------------------
def chi2_divergence(rho, model: GibbsModel) -> float:
    """``Tr[(rho - sigma) sigma^{-1/2} (rho - sigma) sigma^{-1/2}]`` for diagonal sigma."""
    if not np.isfinite(model.beta):
        raise ValueError("chi^2 needs a full-rank Gibbs state (finite beta)")
    m = rho.matrix if isinstance(rho, DensityState) else np.asarray(rho)
    lw = model.log_weights
    delta = m - np.diag(np.exp(lw))
    scale = np.exp(-0.5 * (lw[:, None] + lw[None, :]))
    return float(np.sum(np.abs(delta) ** 2 * scale))


def trace_distance(rho, sigma) -> float:
    a = rho.matrix if isinstance(rho, DensityState) else np.asarray(rho)
    b = sigma.matrix if isinstance(sigma, DensityState) else np.asarray(sigma)
    diff = a - b
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))


# ---------------------------------------------------------------------------
# mixing traces
# ---------------------------------------------------------------------------
@dataclass
class EvolutionTrace:
    times: np.ndarray
    chi2: np.ndarray
    trace_dist: np.ndarray
    fitted_rate: float
    metadata: dict = field(default_factory=dict)
    min_state_eigenvalue: float = float("nan")

    def is_monotone(self, slack: float = 1e-9) -> bool:
        ok_c = np.all(np.diff(self.chi2) <= slack * max(1.0, self.chi2[0]))
        ok_t = np.all(np.diff(self.trace_dist) <= slack)
        return bool(ok_c and ok_t)

    def write(self, csv_path) -> tuple[Path, Path]:
        """CSV with ``t, chi2, trace_dist`` plus a sibling JSON of metadata, both atomic."""
        csv_path = Path(csv_path)
        rows = zip(self.times, self.chi2, self.trace_dist)
        atomic_write(csv_path, csv_text(["t", "chi2", "trace_dist"], rows))
        meta = dict(self.metadata, fitted_rate=self.fitted_rate, schema=SCHEMA)
        js = atomic_write(csv_path.with_suffix(".json"), dumps(meta))
        return csv_path, js


def fit_decay_rate(times, chi2, floor: float = 1e-12) -> float:
    """Negative slope of ``log chi^2`` over the points above ``floor * chi2[0]``."""
    times, chi2 = np.asarray(times), np.asarray(chi2)
    if chi2[0] <= 0:
        return float("nan")
    keep = chi2 > floor * chi2[0]
    if keep.sum() < 2:
        return float("nan")
    return float(-np.polyfit(times[keep], np.log(chi2[keep]), 1)[0])


def mixing_trace(L: Superoperator, rho0: DensityState, model: GibbsModel, time_grid, gap: float,
                 method: str = "auto", rel_slack: float = 1e-6, abs_slack: float = 1e-14,
                 metadata: dict | None = None) -> EvolutionTrace:
    """Evaluate chi^2 and trace distance on ``time_grid`` and enforce the gap bound.

    Raises :class:`MixingBoundViolation` if ``chi2(t) > chi2(0) exp(-2 gap t)
    (1 + rel_slack) + abs_slack`` anywhere; ``abs_slack`` only absorbs
    round-off when ``rho0`` already is the Gibbs state.
    """
    times = np.asarray(time_grid, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("time grid must be increasing and nonnegative")
    sigma = model.state()
    dense = method == "dense" or (method == "auto" and L.op_dim <= DENSE_OP_LIMIT)
    states, rho, t_prev = [], rho0, 0.0
    step, step_dt = None, -1.0
    for t in times:
        dt = t - t_prev
        if dense and dt > 0:
            # uniform grids reuse one propagator; ulp-level spacing differences are ignored
            if abs(dt - step_dt) > 1e-12 * dt:
                step, step_dt = channel_matrix(L, dt), dt
            rho = DensityState.from_vec(step @ rho.vec(), rho.label)
        else:
            rho = evolve(L, rho, dt, method)
        t_prev = t
        states.append(rho)
    chi2 = np.array([chi2_divergence(s, model) for s in states])
    tdist = np.array([trace_distance(s, sigma) for s in states])
    c0 = chi2_divergence(rho0, model)
    bound = c0 * np.exp(-2 * gap * (times - 0.0)) * (1 + rel_slack) + abs_slack
    bad = np.nonzero(chi2 > bound)[0]
    if bad.size:
        k = bad[0]
        raise MixingBoundViolation(
            f"chi2({times[k]:.4g}) = {chi2[k]:.6e} exceeds bound {bound[k]:.6e} (gap {gap:.6g})")
    meta = {"beta": model.beta, "gap": gap, "initial_state": rho0.label, "chi2_0": c0}
    meta.update(metadata or {})
    trace = EvolutionTrace(times, chi2, tdist, fit_decay_rate(times, chi2), meta,
                           min(s.min_eigenvalue() for s in states))
    if not trace.is_monotone():
        raise MixingBoundViolation("chi2 or trace distance increased along the trace")
    return trace


def mixing_time_bound(chi2_0: float, gap: float, eps: float) -> float:
    """Time after which the gap bound guarantees trace distance at most ``eps``."""
    return float(np.log(chi2_0 / eps ** 2) / (2 * gap))


def worst_case_chi2(model: GibbsModel) -> float:
    """``2^N exp(beta |H|)``, the state-independent chi^2 prefactor."""
    hnorm = float(np.max(np.abs(model.energies)))
    return float(model.dim * np.exp(model.beta * hnorm))


def measured_mixing_time(trace: EvolutionTrace, eps: float) -> float:
    """First grid time from which the trace distance stays at or below ``eps``."""
    above = np.nonzero(trace.trace_dist > eps)[0]
    if above.size == 0:
        return float(trace.times[0])
    if above[-1] + 1 >= trace.times.size:
        return float("inf")
    return float(trace.times[above[-1] + 1])


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------
def channel_matrix(L: Superoperator, t: float) -> np.ndarray:
    return sla.expm(t * _generator_matrix(L).toarray())


def choi_matrix(channel: np.ndarray, hilbert_dim: int) -> np.ndarray:
    """``sum_ij |i><j| (x) E(|i><j|)`` for a row-major superoperator matrix."""
    d = hilbert_dim
    C = channel.reshape(d, d, d, d)  # [a, b, i, j]: <a|E(|i><j|)|b>
    return C.transpose(2, 0, 3, 1).reshape(d * d, d * d)


def is_completely_positive(choi: np.ndarray, tol: float = 1e-10) -> bool:
    h = 0.5 * (choi + choi.conj().T)
    return bool(np.linalg.eigvalsh(h)[0] >= -tol)
