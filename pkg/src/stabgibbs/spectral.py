"""Smallest eigenvalues and gaps of hermitian PSD matrices, and the stair graph.

Two independent routes: a dense ``eigh`` path and an iterative restarted
Lanczos path with explicit deflation.  The iterative path works either on the
matrix itself or, when a sparse LU factorization is affordable, on the
shifted inverse.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

DENSE_LIMIT = 4096
RESIDUAL_TOL = 1e-8
KERNEL_REL = 1e-9
SEPARATION = 10.0


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


# ---------------------------------------------------------------------------
# stair graph
# ---------------------------------------------------------------------------
@dataclass
class StairGraph:
    n: int
    vertices: list[tuple[int, int]]
    laplacian: sp.csr_matrix
    diagonal_weight: sp.csr_matrix

    @property
    def edges(self) -> list[tuple[int, int]]:
        lap = sp.triu(self.laplacian, k=1).tocoo()
        return sorted(zip(lap.row.tolist(), lap.col.tolist()))

    @property
    def hamiltonian(self) -> sp.csr_matrix:
        return (self.laplacian + self.diagonal_weight).tocsr()

    def index(self, i: int, j: int) -> int:
        # rows before i hold sum_{r<i} (n + 1 - r) vertices
        if not (1 <= i <= self.n and i + 1 <= j <= self.n + 1):
            raise KeyError((i, j))
        before = (i - 1) * self.n - (i - 1) * (i - 2) // 2
        return before + (j - i - 1)


def stair_graph(n: int) -> StairGraph:
    """Folded ``n`` by ``n`` grid: vertices ``(i, j)``, ``1 <= i < j <= n + 1``."""
    if n < 1:
        raise ValueError("stair graph needs n >= 1")
    verts = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 2)]
    pos = {v: k for k, v in enumerate(verts)}
    rows, cols = [], []
    for (i, j), k in pos.items():
        for nb in ((i, j + 1), (i + 1, j)):
            if nb in pos:
                rows += [k, pos[nb]]
                cols += [pos[nb], k]
    dim = len(verts)
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(dim, dim))
    lap = (sp.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()
    diag = np.array([2.0 if j == i + 1 else 0.0 for i, j in verts])
    return StairGraph(n, verts, lap, sp.diags(diag).tocsr())


def stair_test_vector(n: int) -> tuple[np.ndarray, float]:
    """Distance-to-diagonal test vector and its Rayleigh quotient on ``H_n``."""
    if n < 2:
        raise ValueError("test vector needs n >= 2")
    g = stair_graph(n)
    v = np.array([j - i - 1 for i, j in g.vertices], dtype=float)
    return v, float(v @ (g.hamiltonian @ v) / (v @ v))


def perturbed_laplacian(n: int, a: float) -> sp.csr_matrix:
    if a < 0:
        raise ValueError("weight a must be nonnegative")
    g = stair_graph(n)
    return (g.laplacian + a * g.diagonal_weight).tocsr()


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------
@dataclass
class SpectralResult:
    min_eigenvalue: float
    gap: float | None
    kernel_dim: int
    residuals: list[float]
    method: str
    wall_time_ms: float = 0.0
    ambiguous_kernel: bool = False
    eigenvector: np.ndarray | None = field(default=None, repr=False)

    @property
    def residual(self) -> float:
        return max(self.residuals) if self.residuals else 0.0

    def to_json_dict(self) -> dict:
        return {
            "min_eig": self.min_eigenvalue,
            "gap": self.gap,
            "kernel_dim": self.kernel_dim,
            "residual": self.residual,
            "method": self.method,
            "wall_time_ms": self.wall_time_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def norm_bound(M) -> float:
    """Max absolute row sum, an upper bound on the spectral norm."""
    if sp.issparse(M):
        return float(np.max(np.asarray(abs(M).sum(axis=1)))) if M.nnz else 0.0
    M = np.asarray(M)
    return float(np.max(np.abs(M).sum(axis=1))) if M.size else 0.0


def _check_hermitian(M, tol: float = 1e-10) -> float:
    scale = norm_bound(M)
    diff = M - M.conj().T
    asym = float(abs(diff).max()) if sp.issparse(diff) else float(np.max(np.abs(diff)))
    if asym > tol * max(1.0, scale):
        raise ValueError(f"matrix not hermitian: max |M - M^dag| = {asym:.3e}")
    return scale


def _orthonormal(vectors, dim: int) -> np.ndarray:
    if vectors is None:
        return np.zeros((dim, 0))
    Q = np.asarray(vectors)
    if Q.ndim == 1:
        Q = Q[:, None]
    if Q.shape[0] != dim:
        raise ValueError("kernel vectors have the wrong length")
    if Q.shape[1] == 0:
        return Q
    Q, r = np.linalg.qr(Q)
    keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())
    return Q[:, keep]


def kernel_threshold(M) -> float:
    dim = M.shape[0]
    tr = float(np.real(M.diagonal().sum()))
    return KERNEL_REL * abs(tr) / dim if dim else 0.0


# ---------------------------------------------------------------------------
# restarted Lanczos
# ---------------------------------------------------------------------------
def _project_out(x: np.ndarray, Q: np.ndarray) -> np.ndarray:
    if Q.shape[1]:
        x = x - Q @ (Q.conj().T @ x)
        x = x - Q @ (Q.conj().T @ x)
    return x


def restarted_lanczos(apply, dim: int, nev: int = 1, deflate: np.ndarray | None = None,
                      tol: float = 1e-10, scale: float | None = 1.0, max_matvecs: int | None = None,
                      basis_size: int | None = None, seed: int = 0,
                      dtype=np.float64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smallest ``nev`` eigenpairs of a hermitian operator on the complement of ``deflate``.

    Full reorthogonalization; after each sweep the ``nev`` lowest Ritz vectors
    are kept and the sweep restarts from the residual of the lowest
    unconverged one.  Residuals are measured against ``tol * scale``; with
    ``scale=None`` against the largest Ritz value magnitude.  Returns
    ``(values, vectors, residual norms)``.
    """
    Q = np.zeros((dim, 0), dtype=dtype) if deflate is None else deflate.astype(np.result_type(deflate, dtype))
    avail = dim - Q.shape[1]
    if avail <= 0:
        raise ValueError("deflation space fills the whole space")
    nev = min(nev, avail)
    m = min(avail, basis_size or max(2 * nev + 20, 40))
    max_matvecs = max_matvecs or 10 * int(np.ceil(np.sqrt(dim))) + 10 * m
    rng = np.random.default_rng(seed)
    dt = np.result_type(dtype, Q.dtype)
    x = rng.standard_normal(dim).astype(dt)
    x = _project_out(x, Q)
    V = np.zeros((dim, 0), dtype=dt)
    W = np.zeros((dim, 0), dtype=dt)
    matvecs = 0
    best = np.inf
    while True:
        while V.shape[1] < m:
            x = _project_out(x, Q)
            if V.shape[1]:
                x = x - V @ (V.conj().T @ x)
                x = x - V @ (V.conj().T @ x)
            nx = np.linalg.norm(x)
            if nx < 1e-13:
                if V.shape[1] >= nev and V.shape[1] == avail:
                    break
                x = _project_out(rng.standard_normal(dim).astype(dt), Q)
                continue
            v = x / nx
            w = np.asarray(apply(v)).astype(dt, copy=False)
            matvecs += 1
            V = np.column_stack([V, v])
            W = np.column_stack([W, w])
            x = w
            if V.shape[1] >= avail:
                break
        T = V.conj().T @ W
        T = 0.5 * (T + T.conj().T)
        theta, Y = np.linalg.eigh(T)
        X = V @ Y[:, :nev]
        R = W @ Y[:, :nev] - X * theta[:nev]
        res = np.linalg.norm(R, axis=0)
        best = min(best, float(res.max()))
        bound = tol * (scale if scale is not None else max(float(np.abs(theta).max()), 1e-300))
        if np.all(res <= bound) or V.shape[1] >= avail:
            return theta[:nev], X, res
        if matvecs >= max_matvecs:
            raise ConvergenceError(f"Lanczos did not converge in {matvecs} matrix-vector products", best)
        keep = min(V.shape[1] - 1, max(nev + 5, m // 2))
        Vk = V @ Y[:, :keep]
        Wk = W @ Y[:, :keep]
        bad = int(np.argmax(res > bound))
        x = R[:, bad].copy()
        V, W = Vk, Wk


def _as_operator(M):
    if sp.issparse(M):
        M = M.tocsr()
    return M


def _shift_invert_solver(M, shift: float):
    A = (M - shift * sp.identity(M.shape[0], format="csc", dtype=M.dtype)).tocsc()
    lu = splu(A)
    return lu.solve


def _iterative_lowest(M, nev: int, deflate: np.ndarray, scale: float, mode: str, tol: float,
                      seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dim = M.shape[0]
    dtype = np.complex128 if np.iscomplexobj(M.data if sp.issparse(M) else M) else np.float64
    if mode == "shift_invert":
        if not sp.issparse(M):
            M = sp.csr_matrix(M)
        shift = -1e-6 * max(scale, 1e-300)
        solve = _shift_invert_solver(M, shift)

        def apply(v):
            return -_project_out(solve(_project_out(v, deflate)), deflate)

        mu, X, _ = restarted_lanczos(apply, dim, nev, deflate, tol=1e-12, scale=None,
                                     seed=seed, dtype=dtype, max_matvecs=40 * (nev + 20))
        X, _ = np.linalg.qr(X)
    elif mode == "plain":
        def apply(v):
            return M @ v

        _, X, _ = restarted_lanczos(apply, dim, nev, deflate, tol=tol, scale=scale, seed=seed, dtype=dtype)
    else:
        raise ValueError("mode must be 'plain' or 'shift_invert'")
    # Rayleigh-Ritz against M itself to certify
    MX = np.column_stack([M @ X[:, k] for k in range(X.shape[1])])
    T = X.conj().T @ MX
    vals, Y = np.linalg.eigh(0.5 * (T + T.conj().T))
    X = X @ Y
    res = np.linalg.norm(MX @ Y - X * vals, axis=0)
    return vals, X, res


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------
def _choose(M, method: str, dense_limit: int) -> str:
    if method == "auto":
        return "dense" if M.shape[0] <= dense_limit else "iterative"
    if method not in ("dense", "iterative"):
        raise ValueError("method must be 'auto', 'dense' or 'iterative'")
    return method


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def _dense_lowest(A: np.ndarray, count: int) -> tuple[np.ndarray, np.ndarray]:
    dim = A.shape[0]
    count = min(count, dim)
    if count == dim or dim <= 512:
        vals, vecs = np.linalg.eigh(A)
        return vals[:count], vecs[:, :count]
    return sla.eigh(A, subset_by_index=[0, count - 1], driver="evr")


def min_eigenvalue(M, method: str = "auto", dense_limit: int = DENSE_LIMIT,
                   iterative_mode: str = "auto", seed: int = 0) -> SpectralResult:
    """Smallest eigenvalue of a hermitian PSD matrix with a certified residual."""
    t0 = time.perf_counter()
    M = _as_operator(M)
    scale = _check_hermitian(M)
    thr = kernel_threshold(M)
    route = _choose(M, method, dense_limit)
    if route == "dense":
        A = _dense(M)
        vals = np.linalg.eigvalsh(A)
        _, vec = _dense_lowest(A, 1)
        lam = float(vals[0])
        kdim = int(np.sum(vals < thr))
        tag = "dense"
    else:
        mode = _iter_mode(M, iterative_mode)
        vals, X, _ = _iterative_lowest(M, 1, np.zeros((M.shape[0], 0)), scale, mode, 1e-10, seed)
        lam, vec = float(vals[0]), X[:, :1]
        kdim = int(lam < thr)
        tag = f"iterative-{mode}"
    res = float(np.linalg.norm(M @ vec[:, 0] - lam * vec[:, 0]))
    _certify([res], scale)
    ms = (time.perf_counter() - t0) * 1e3
    return SpectralResult(lam, None, kdim, [res], tag, ms, eigenvector=vec[:, 0])


def _iter_mode(M, requested: str) -> str:
    if requested != "auto":
        return requested
    return "shift_invert" if sp.issparse(M) and M.shape[0] <= 200_000 else "plain"


def _certify(residuals, scale: float) -> None:
    worst = max(residuals) if residuals else 0.0
    if worst > RESIDUAL_TOL * max(scale, 1e-300):
        raise ConvergenceError("eigenpair residual above certification bound", worst)


def spectral_gap(M, kernel_basis=None, method: str = "auto", dense_limit: int = DENSE_LIMIT,
                 iterative_mode: str = "auto", max_kernel: int = 64, seed: int = 0) -> SpectralResult:
    """Smallest eigenvalue of a PSD matrix on the complement of its kernel.

    Supplied kernel vectors are deflated exactly.  Any further eigenvalues
    below ``1e-9 * trace / dim`` are counted into the kernel; the result is
    flagged ambiguous when the spectrum is not separated from that threshold
    by a factor ``10`` on both sides.
    """
    t0 = time.perf_counter()
    M = _as_operator(M)
    dim = M.shape[0]
    scale = _check_hermitian(M)
    thr = kernel_threshold(M)
    Q = _orthonormal(kernel_basis, dim)
    route = _choose(M, method, dense_limit)
    supplied = Q.shape[1]
    if route == "dense":
        A = _dense(M)
        if supplied:
            # P A P with P = 1 - QQ^dag, as low-rank corrections
            AQ = A @ Q
            Qh = Q.conj().T
            A = A - AQ @ Qh - Q @ AQ.conj().T + Q @ (Qh @ AQ) @ Qh
            # park the supplied kernel far above the spectrum
            A = A + (2 * scale + 1) * (Q @ Qh)
            A = 0.5 * (A + A.conj().T)
        vals = np.linalg.eigvalsh(A)[: dim - supplied]
        extra = int(np.sum(vals < thr))
        if extra >= vals.size:
            raise ValueError("no eigenvalue above the kernel threshold")
        lo, vecs = _dense_lowest(A, extra + 1)
        gap, gvec = float(lo[extra]), vecs[:, extra]
        Mfull = M
        res = [float(np.linalg.norm(Mfull @ gvec - gap * gvec))]
        below = vals[:extra]
        tag = "dense"
    else:
        mode = _iter_mode(M, iterative_mode)
        extra = 0
        below = []
        while True:
            if Q.shape[1] >= dim:
                raise ValueError("no eigenvalue above the kernel threshold")
            vals, X, r = _iterative_lowest(M, 1, Q, scale, mode, 1e-10, seed)
            if vals[0] < thr and extra < max_kernel:
                below.append(float(vals[0]))
                Q = np.column_stack([Q, X[:, 0]])
                extra += 1
                continue
            gap, gvec, res = float(vals[0]), X[:, 0], [float(r[0])]
            break
        below = np.array(below)
        tag = f"iterative-{mode}"
    _certify(res, scale)
    ambiguous = gap < SEPARATION * thr or (len(below) and float(np.max(np.abs(below))) > thr / SEPARATION)
    # supplied kernel vectors are exact zero modes by contract
    min_eig = float(min(list(below) + [0.0])) if supplied + extra else gap
    ms = (time.perf_counter() - t0) * 1e3
    return SpectralResult(min_eig, gap, supplied + extra, res, tag, ms, bool(ambiguous), gvec)


def block_spectral_gap(blocks, kernel_blocks=None) -> SpectralResult:
    """Gap of a block-diagonal PSD matrix from its dense blocks.

    ``kernel_blocks`` maps a block key to supplied kernel vectors restricted to
    that block.  The spectrum is the union of the block spectra, so the kernel
    dimensions add and the gap is the smallest gap over all blocks.
    """
    t0 = time.perf_counter()
    kernel_blocks = kernel_blocks or {}
    allvals, trace, dim = [], 0.0, 0
    scale = 0.0
    best = None
    supplied = 0
    for key, B in blocks:
        B = _dense(B)
        scale = max(scale, _check_hermitian(B))
        trace += float(np.real(np.trace(B)))
        dim += B.shape[0]
        Q = _orthonormal(kernel_blocks.get(key), B.shape[0])
        supplied += Q.shape[1]
        A = B
        if Q.shape[1]:
            P = np.eye(B.shape[0]) - Q @ Q.conj().T
            A = P @ B @ P
            A = A + (2 * norm_bound(B) + 1) * (Q @ Q.conj().T)
            A = 0.5 * (A + A.conj().T)
        vals, vecs = np.linalg.eigh(A)
        keep = B.shape[0] - Q.shape[1]
        allvals.append((key, vals[:keep], vecs[:, :keep], B))
    thr = KERNEL_REL * abs(trace) / max(dim, 1)
    extra, below = 0, []
    for key, vals, vecs, B in allvals:
        mask = vals < thr
        extra += int(mask.sum())
        below.extend(vals[mask].tolist())
        above = np.nonzero(~mask)[0]
        if above.size and (best is None or vals[above[0]] < best[0]):
            k = above[0]
            best = (float(vals[k]), float(np.linalg.norm(B @ vecs[:, k] - vals[k] * vecs[:, k])))
    if best is None:
        raise ValueError("no eigenvalue above the kernel threshold")
    gap, r = best
    _certify([r], scale)
    ambiguous = gap < SEPARATION * thr or (len(below) and max(abs(x) for x in below) > thr / SEPARATION)
    min_eig = float(min(below + [0.0])) if supplied + extra else gap
    ms = (time.perf_counter() - t0) * 1e3
    return SpectralResult(min_eig, gap, supplied + extra, [r], "dense-blocks", ms, bool(ambiguous))


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])
