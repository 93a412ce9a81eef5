"""Logical/syndrome sectors, Lambda sectors and the effective chain matrices.

Sign configurations of ``n`` bond (or star) sites are stored as integers with
site ``p`` at bit ``n-1-p`` and a set bit meaning the stabilizer reads ``-1``.
With that convention ``kron`` ordering matches site order, and the local
two-site basis is ``(++, +-, -+, --)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from .davies import GibbsModel, Superoperator, glauber_rate
from .lattice import TorusLattice
from .models import logical_operators, logical_y, plaquette_operator, star_operator
from .pauli import PauliString

LOGICAL_LABELS = ("I", "X", "Y", "Z")
CASES = ("ab", "flip", "int")


class SectorLeakageError(ValueError):
    """A basis claimed invariant is not invariant under the generator."""


# ---------------------------------------------------------------------------
# logical / syndrome split
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SectorLabel:
    b1: str = "I"
    b2: str = "I"

    def __post_init__(self):
        if self.b1 not in LOGICAL_LABELS or self.b2 not in LOGICAL_LABELS:
            raise ValueError(f"logical labels must be among {LOGICAL_LABELS}")

    @property
    def is_syndrome(self) -> bool:
        return self.b1 == "I" and self.b2 == "I"

    @classmethod
    def all(cls) -> list["SectorLabel"]:
        return [cls(a, b) for a in LOGICAL_LABELS for b in LOGICAL_LABELS]


@dataclass
class SyndromeSplit:
    lattice: TorusLattice
    magnetic: list[PauliString]
    electric: list[PauliString]
    logical_1: list[PauliString]
    logical_2: list[PauliString]

    @property
    def syndrome_dim(self) -> int:
        return 1 << (self.lattice.n_qubits - 2)

    def groups(self) -> dict[str, list[PauliString]]:
        return {"m": self.magnetic, "e": self.electric, "q1": self.logical_1, "q2": self.logical_2}

    def check_commutation(self, rng: np.random.Generator | None = None, samples: int | None = None) -> bool:
        """True when generators of distinct subalgebras commute (all pairs, or ``samples`` random ones)."""
        g = self.groups()
        pairs = []
        for a, b in itertools.combinations(g, 2):
            pairs.extend(itertools.product(g[a], g[b]))
        if samples is not None:
            rng = np.random.default_rng() if rng is None else rng
            pairs = [pairs[i] for i in rng.integers(0, len(pairs), samples)]
        return all(p.commutes_with(q) for p, q in pairs)


def logic_syndrome_split(lattice: TorusLattice) -> SyndromeSplit:
    n = lattice.n_qubits
    mag = [plaquette_operator(lattice, p) for p in range(lattice.n_cells)]
    mag += [PauliString.single(n, q, "X") for q in lattice.snake_spins]
    ele = [star_operator(lattice, s) for s in range(lattice.n_cells)]
    ele += [PauliString.single(n, q, "Z") for q in lattice.comb_spins]
    x1, z1, x2, z2 = logical_operators(lattice)
    return SyndromeSplit(lattice, mag, ele, [x1, z1], [x2, z2])


# ---------------------------------------------------------------------------
# Lambda sectors
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LambdaSector:
    """Sites in ``lam`` keep their sign between ket and bra; the others flip."""

    n_bonds: int
    lam: frozenset
    pairs: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        lam = frozenset(int(x) for x in self.lam)
        if any(x < 0 or x >= self.n_bonds for x in lam):
            raise ValueError("Lambda contains an index outside the bond range")
        if (self.n_bonds - len(lam)) % 2:
            raise ValueError("complement of Lambda must have even size (parity constraint)")
        object.__setattr__(self, "lam", lam)
        if not self.pairs:
            object.__setattr__(self, "pairs", tuple((i, i + 1) for i in range(self.n_bonds - 1)))

    @property
    def complement(self) -> frozenset:
        return frozenset(range(self.n_bonds)) - self.lam

    @property
    def flip_mask(self) -> int:
        n = self.n_bonds
        return sum(1 << (n - 1 - p) for p in self.complement)

    def classify(self, pair: tuple[int, int]) -> str:
        a, b = (x in self.lam for x in pair)
        if a and b:
            return "ab"
        if not a and not b:
            return "flip"
        return "int"

    @property
    def gamma_split(self) -> dict[str, list[tuple[int, int]]]:
        out = {c: [] for c in CASES}
        for pr in self.pairs:
            out[self.classify(pr)].append(pr)
        return out

    def to_json_dict(self) -> dict:
        return {"n_bonds": self.n_bonds, "lambda": sorted(self.lam)}

    @classmethod
    def all_sectors(cls, n_bonds: int, pairs=()) -> list["LambdaSector"]:
        out = []
        for r in range(n_bonds, -1, -1):
            if (n_bonds - r) % 2:
                continue
            for lam in itertools.combinations(range(n_bonds), r):
                out.append(cls(n_bonds, frozenset(lam), tuple(pairs)))
        return out


def even_configs(n: int) -> np.ndarray:
    c = np.arange(1 << n, dtype=np.int64)
    return c[np.bitwise_count(c) % 2 == 0]


# ---------------------------------------------------------------------------
# operator sector bases
# ---------------------------------------------------------------------------
@dataclass
class SectorBasis:
    """Columns are Hilbert-Schmidt orthonormal vectors ``vec(A sigma^{1/2}) / |A|_sigma``.

    These are the images of GNS-normalized operators ``A`` under the
    similarity map, so restricting a master Hamiltonian to their span gives the
    generator's matrix in the GNS-orthonormal basis ``{A}``.
    """

    vectors: sp.csr_matrix
    labels: list
    description: str = ""

    @property
    def size(self) -> int:
        return self.vectors.shape[1]


def _logical_action(model: GibbsModel, label) -> tuple[int, np.ndarray] | None:
    frame = model.frame
    if model.model is None:
        raise ValueError("sector bases need a model with logical operators")
    lg = model.model.logicals
    if model.model.kind == "ising":
        names = [("X", "Z")]
        label = (label,) if isinstance(label, str) else tuple(label)
    else:
        names = [("X1", "Z1"), ("X2", "Z2")]
        label = tuple(label) if not isinstance(label, SectorLabel) else (label.b1, label.b2)
    op = None
    for (xn, zn), b in zip(names, label):
        x, z = lg[xn], lg[zn]
        pick = {"I": None, "X": x, "Z": z, "Y": logical_y(x, z)}[b]
        if pick is not None:
            op = pick if op is None else op * pick
    if op is None:
        return None
    act = frame.action(op)
    return act.flip, act.phases


def operator_sector_basis(model: GibbsModel, factors: dict | None = None, logical="I") -> SectorBasis:
    """GNS-orthonormal basis of ``B (x) prod_f A_f`` embedded in the full space.

    ``factors`` maps a factor name of the frame (``'b'`` for the Ising ring,
    ``'m'``/``'e'`` for the toric code) to a :class:`LambdaSector`, to ``'all'``
    (the whole factor algebra), or is omitted for the identity on that factor.
    ``logical`` is a Pauli label (Ising) or a pair / :class:`SectorLabel` (toric).
    """
    frame = model.frame
    factors = dict(factors or {})
    d = frame.dim
    names = list(frame.factor_sites)
    for nm in factors:
        if nm not in names:
            raise ValueError(f"unknown factor {nm!r}; frame has {names}")
    configs = {nm: frame.factor_configs(nm) for nm in names}
    lg_bits = frame.logical_bits
    key = frame.logical_index().copy()
    shifts, shift = {}, lg_bits
    for nm in names:
        shifts[nm] = shift
        key |= configs[nm] << shift
        shift += len(frame.factor_sites[nm])
    lookup = np.full(1 << shift, -1, dtype=np.int64)
    lookup[key] = np.arange(d)

    per_factor = []
    for nm, choice in factors.items():
        n = len(frame.factor_sites[nm])
        present = np.unique(configs[nm])
        if isinstance(choice, LambdaSector):
            if choice.n_bonds != n:
                raise ValueError(f"sector has {choice.n_bonds} sites but factor {nm!r} has {n}")
            units = [(int(c), int(c ^ choice.flip_mask)) for c in present]
        elif choice == "all":
            units = [(int(a), int(b)) for a in present for b in present]
        else:
            raise ValueError("factor choice must be a LambdaSector or 'all'")
        per_factor.append((nm, units))

    log_act = _logical_action(model, logical)
    sq = np.exp(0.5 * model.log_weights)
    rows, cols, vals, labels = [], [], [], []
    col = 0
    for combo in itertools.product(*[u for _, u in per_factor]):
        sel = np.ones(d, dtype=bool)
        ket_key = key.copy()
        for (nm, _), (ket, bra) in zip(per_factor, combo):
            sel &= configs[nm] == bra
            ket_key ^= (bra ^ ket) << shifts[nm]
        js = np.nonzero(sel)[0]
        if js.size == 0:
            continue
        ks = lookup[ket_key[js]]
        v = sq[js].astype(np.complex128)
        if log_act is not None:
            flip, ph = log_act
            v = v * ph[ks]
            ks = ks ^ flip
        nrm = np.linalg.norm(v)
        if nrm == 0:
            continue
        rows.append(ks * d + js)
        cols.append(np.full(js.size, col))
        vals.append(v / nrm)
        labels.append(tuple(ket for ket, _ in combo))
        col += 1
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(d * d, col))
    desc = f"logical={logical} factors={ {k: (v.to_json_dict() if isinstance(v, LambdaSector) else v) for k, v in factors.items()} }"
    return SectorBasis(W, labels, desc)


def lambda_sector_basis(sector: LambdaSector, model: GibbsModel, factor: str | None = None,
                        logical="I") -> SectorBasis:
    """Basis ``|m'><m|`` of one Lambda sector, ordered by ket configuration."""
    if factor is None:
        factor = next(iter(model.frame.factor_sites))
    if (sector.n_bonds - len(sector.lam)) % 2:
        raise ValueError("parity violation")
    basis = operator_sector_basis(model, {factor: sector}, logical)
    order = np.argsort([lab[0] for lab in basis.labels], kind="stable")
    return SectorBasis(basis.vectors[:, order], [basis.labels[i][0] for i in order], basis.description)


@dataclass
class SectorRestriction:
    matrix: np.ndarray | sp.csr_matrix
    leakage: float


def restrict_superoperator(L: Superoperator, basis: SectorBasis, invariant: bool = True,
                           tol: float = 1e-10, dense_limit: int = 1024) -> SectorRestriction:
    """Matrix of a master Hamiltonian on the span of ``basis``, plus the off-span leakage."""
    if L.gauge != "master_hamiltonian":
        raise ValueError("restriction expects the master-Hamiltonian gauge (orthonormal picture)")
    W = basis.vectors
    MW = (L.matrix @ W).tocsr()
    B = (W.conj().T @ MW).tocsr()
    leak = float(sparse_norm(MW - W @ B)) if MW.nnz else 0.0
    if invariant and leak > tol * max(1.0, float(sparse_norm(B)) if B.nnz else 1.0):
        raise SectorLeakageError(f"basis {basis.description} leaks: {leak:.3e}")
    mat = B.toarray() if basis.size <= dense_limit else B
    return SectorRestriction(mat, leak)


def flip_sector_blocks(hilbert_dim: int) -> dict[int, np.ndarray]:
    """Matrix-unit indices grouped by ``i ^ j``.

    Every Pauli coupling acts on frame indices by a fixed bit flip, so Davies
    generators never mix matrix units with different ``i ^ j``.
    """
    d = hilbert_dim
    i, j = np.divmod(np.arange(d * d), d)
    delta = i ^ j
    order = np.argsort(delta, kind="stable")
    return {int(k): order[k * d:(k + 1) * d] for k in range(d)}


def block_matrices(M, hilbert_dim: int, dense: bool = True):
    """Yield ``(delta, block)`` for each flip sector of a frame superoperator."""
    mat = M.matrix if isinstance(M, Superoperator) else M
    mat = mat.tocsr()
    for delta, idx in flip_sector_blocks(hilbert_dim).items():
        blk = mat[idx][:, idx]
        yield delta, (blk.toarray() if dense else blk)


# ---------------------------------------------------------------------------
# local blocks and chain matrices
# ---------------------------------------------------------------------------
def _eta(beta: float, J: float = 1.0) -> float:
    return float(np.exp(-2.0 * beta * J)) if np.isfinite(beta) else 0.0


def local_rates(beta: float, J: float = 1.0) -> tuple[float, float]:
    """``(h_plus, h_minus)``: Glauber rates of the down and up transitions between ``++`` and ``--``."""
    if np.isinf(beta):
        return 2.0, 0.0
    return glauber_rate(-4.0 * J, beta), glauber_rate(4.0 * J, beta)


def local_block_matrix(case: str, beta: float, orientation: str = "second", J: float = 1.0) -> np.ndarray:
    """4x4 master-Hamiltonian block of one two-site flip term (negative semidefinite).

    ``orientation`` only matters for ``int``: ``'second'`` means the site that
    keeps its sign is the second one of the pair.
    """
    hp, hm = local_rates(beta, J)
    if case == "ab":
        eta = _eta(beta, J)
        off = 2 * eta / (eta ** 2 + 1)
        return np.array([
            [-2 * eta ** 2 / (eta ** 2 + 1), 0, 0, off],
            [0, -1, 1, 0],
            [0, 1, -1, 0],
            [off, 0, 0, -2 / (eta ** 2 + 1)],
        ])
    if case == "flip":
        c = -(hp + hm) / 2
        return np.array([[c, 0, 0, 0], [0, -1, 1, 0], [0, 1, -1, 0], [0, 0, 0, c]])
    if case == "int":
        a, b = -(hm + 1) / 2, -(hp + 1) / 2
        if orientation == "second":
            return np.diag([a, b, a, b])
        if orientation == "first":
            return np.diag([a, a, b, b])
        raise ValueError("orientation must be 'first' or 'second'")
    raise ValueError(f"case must be one of {CASES}")


K_T = np.array([[0, 0, 0, 0], [0, 1, -1, 0], [0, -1, 1, 0], [0, 0, 0, 0]], dtype=float)
K_D = np.diag([0.0, 0.0, 0.0, 2.0])


def embed_two_site(block: np.ndarray, n: int, u: int, v: int) -> sp.csr_matrix:
    """Place a 4x4 block on sites ``(u, v)`` of an ``n``-site sign register."""
    dim = 1 << n
    bu, bv = n - 1 - u, n - 1 - v
    c = np.arange(dim, dtype=np.int64)
    loc = ((c >> bu) & 1) * 2 + ((c >> bv) & 1)
    base = c & ~((1 << bu) | (1 << bv))
    rows, cols, vals = [], [], []
    for r_loc, c_loc in zip(*np.nonzero(block)):
        sel = loc == c_loc
        tgt = base[sel] | ((r_loc >> 1) << bu) | ((r_loc & 1) << bv)
        rows.append(tgt)
        cols.append(c[sel])
        vals.append(np.full(sel.sum(), block[r_loc, c_loc]))
    if not rows:
        return sp.csr_matrix((dim, dim))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(dim, dim))


@dataclass
class ChainMatrices:
    n: int
    beta: float
    k_T: np.ndarray
    k_D: np.ndarray
    K: sp.csr_matrix
    pairs: list[tuple[int, int]] = field(default_factory=list)


def transition_block(beta: float, J: float = 1.0) -> np.ndarray:
    """Negated ``ab`` block; equals ``k_T + k_D`` at infinite beta."""
    return -local_block_matrix("ab", beta, J=J)


def _assemble_K(n: int, pairs, beta: float) -> sp.csr_matrix:
    blk = transition_block(beta)
    K = sp.csr_matrix((1 << n, 1 << n))
    for u, v in pairs:
        K = K + embed_two_site(blk, n, u, v)
    return K.tocsr()


def build_chain_K(n: int, beta: float) -> ChainMatrices:
    if n < 2:
        raise ValueError("chain needs n >= 2")
    pairs = [(i, i + 1) for i in range(n - 1)]
    return ChainMatrices(n, beta, K_T.copy(), K_D.copy(), _assemble_K(n, pairs, beta), pairs)


def build_comb_K(lattice: TorusLattice, beta: float) -> ChainMatrices:
    """Same local blocks on the star pairs joined by comb spins (stars in index order)."""
    pairs = [tuple(pr) for _, pr in lattice.comb_order]
    n = lattice.n_cells
    return ChainMatrices(n, beta, K_T.copy(), K_D.copy(), _assemble_K(n, pairs, beta), pairs)


def path_K(n: int, pairs, beta: float) -> sp.csr_matrix:
    return _assemble_K(n, pairs, beta)


def tensor_assembly(sector: LambdaSector, beta: float, J: float = 1.0) -> np.ndarray:
    """Sum of local blocks per the sector's pair classification, on even ket configurations."""
    n = sector.n_bonds
    M = sp.csr_matrix((1 << n, 1 << n))
    for u, v in sector.pairs:
        case = sector.classify((u, v))
        orient = "second" if (v in sector.lam) else "first"
        M = M + embed_two_site(local_block_matrix(case, beta, orient, J), n, u, v)
    keep = even_configs(n)
    return M.toarray()[np.ix_(keep, keep)]


# ---------------------------------------------------------------------------
# spin-number sectors
# ---------------------------------------------------------------------------
@dataclass
class SpinSectorBasis:
    n: int
    k: int
    basis: list[int]

    @property
    def dim(self) -> int:
        return len(self.basis)

    def sign_strings(self) -> list[str]:
        return [format(c, f"0{self.n}b").replace("0", "+").replace("1", "-") for c in self.basis]


def spin_sector_basis(n: int, k: int) -> SpinSectorBasis:
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    cfgs = [sum(1 << (n - 1 - p) for p in pos) for pos in itertools.combinations(range(n), k)]
    out = SpinSectorBasis(n, k, sorted(cfgs))
    assert out.dim == comb(n, k)
    return out


def restrict_to_spin_sector(K: sp.spmatrix, basis: SpinSectorBasis) -> np.ndarray:
    idx = np.array(basis.basis, dtype=np.int64)
    return K.tocsr()[idx][:, idx].toarray()


def spin_sector_minima(K: sp.spmatrix, n: int, even_only: bool = False) -> dict[int, float]:
    """Smallest eigenvalue of ``K`` on each sector with ``k`` minus signs."""
    out = {}
    for k in range(n + 1):
        if even_only and k % 2:
            continue
        blk = restrict_to_spin_sector(K, spin_sector_basis(n, k))
        out[k] = float(np.linalg.eigvalsh(blk)[0])
    return out


def stair_index_map(n: int) -> list[tuple[int, tuple[int, int]]]:
    """Two-minus configurations of an ``n`` chain paired with stair vertices of side ``n-1``.

    Minus signs at 1-based positions ``i < j`` map to vertex ``(i, j)``; the list
    is ordered lexicographically in ``(i, j)``.
    """
    out = []
    for i in range(1, n):
        for j in range(i + 1, n + 1):
            cfg = (1 << (n - i)) | (1 << (n - j))
            out.append((cfg, (i, j)))
    return out


@dataclass
class AbelianIndexMap:
    """Identification ``|m><m| <-> |m>`` between abelian-sector operators and sign states."""

    n: int
    even_only: bool = True

    def __post_init__(self):
        cfgs = even_configs(self.n) if self.even_only else np.arange(1 << self.n)
        self.configs = [int(c) for c in cfgs]
        self._pos = {c: i for i, c in enumerate(self.configs)}

    def to_index(self, config: int) -> int:
        if config not in self._pos:
            raise KeyError(f"configuration {config} not in the abelian sector")
        return self._pos[config]

    def to_config(self, index: int) -> int:
        return self.configs[index]

    def operator(self, config: int) -> np.ndarray:
        """Projector ``|m><m|`` on the sign register."""
        out = np.zeros((1 << self.n, 1 << self.n))
        out[config, config] = 1.0
        return out

    def state(self, op: np.ndarray) -> np.ndarray:
        """Vector of diagonal weights in sector order."""
        return np.array([op[c, c] for c in self.configs])


def path_restricted_K(lattice: TorusLattice, stars: list[int], beta: float) -> np.ndarray:
    """Comb blocks on the edges of a star path, on configurations with every other star ``+``.

    Rows and columns are relabelled so that path position ``p`` is chain site
    ``p``; the result is the chain matrix of the same length.
    """
    g = lattice.comb_graph
    for a, b in zip(stars, stars[1:]):
        if not g.has_edge(a, b):
            raise ValueError(f"stars {a}, {b} are not joined by a comb spin")
    n = lattice.n_cells
    K = _assemble_K(n, list(zip(stars, stars[1:])), beta)
    m = len(stars)
    sub = np.arange(1 << m, dtype=np.int64)
    full = np.zeros_like(sub)
    for p, s in enumerate(stars):
        full |= ((sub >> (m - 1 - p)) & 1) << (n - 1 - s)
    return K.tocsr()[full][:, full].toarray()


def write_block_csv(matrix, path) -> None:
    """Dense row-major CSV (real parts; imaginary parts appended as ``re+imj`` when present)."""
    arr = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    with open(path, "w") as fh:
        for row in arr:
            if np.iscomplexobj(row) and np.any(row.imag):
                fh.write(",".join(f"{complex(v)!r}".strip("()") for v in row) + "\n")
            else:
                fh.write(",".join(f"{float(np.real(v)):.17g}" for v in row) + "\n")


def write_block_coo(matrix, path) -> None:
    """Coordinate CSV with columns ``row, col, re, im``."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write("row,col,re,im\n")
        for r, c, v in zip(m.row, m.col, m.data):
            fh.write(f"{r},{c},{np.real(v):.17g},{np.imag(v):.17g}\n")
