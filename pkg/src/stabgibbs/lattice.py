"""Ring and torus geometry, including the snake and comb used by the toric sampler.

Torus coordinates: vertex (star) ``(r, c)`` has index ``r*L + c``; plaquette
``(r, c)`` is the cell whose top-left corner is vertex ``(r, c)`` and has the
same index.  Edges are enumerated row-major per cell with the horizontal edge
first: ``h(r, c) = 2*(r*L + c)`` joins vertices ``(r, c)``-``(r, c+1)`` and
``v(r, c) = 2*(r*L + c) + 1`` joins ``(r, c)``-``(r+1, c)``.

Layout rule for the snake and comb
----------------------------------
* The snake visits plaquettes row by row, left to right on even rows and right
  to left on odd rows.  Snake spin ``t`` (``t = 1 .. L*L-1``) is the edge shared
  by the ``t-1``-th and ``t``-th plaquette on that route.
* Two edges are left out: ``h(0, L-1)`` and ``v(L-1, 0)``.
* Every remaining edge belongs to the comb.  The comb is a spanning tree of the
  stars: a spine down column 0 with one tooth along each row, hence ``L``
  leaves at the tooth tips.
* Z logicals are primal loops that avoid the snake: row 0 of horizontal edges
  and column 0 of vertical edges.  X logicals are dual loops through the two
  left-out edges that otherwise run along the snake.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property

import networkx as nx


@dataclass(frozen=True)
class RingLattice:
    n_sites: int
    coupling: float = 1.0

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError("ring needs at least 2 sites")
        if self.coupling <= 0:
            raise ValueError("coupling J must be positive")

    @property
    def n_qubits(self) -> int:
        return self.n_sites

    @property
    def bonds(self) -> list[tuple[int, int]]:
        n = self.n_sites
        return [(j, (j + 1) % n) for j in range(n)]

    def to_json_dict(self) -> dict:
        return {"type": "ring", "N": self.n_sites, "J": self.coupling, "bonds": self.bonds}


@dataclass(frozen=True)
class TorusLattice:
    side: int

    def __post_init__(self):
        if self.side < 2:
            raise ValueError("torus side L must be at least 2")

    # -- indexing -----------------------------------------------------------
    @property
    def L(self) -> int:
        return self.side

    @property
    def n_qubits(self) -> int:
        return 2 * self.side ** 2

    @property
    def n_cells(self) -> int:
        return self.side ** 2

    def h(self, r: int, c: int) -> int:
        L = self.side
        return 2 * ((r % L) * L + c % L)

    def v(self, r: int, c: int) -> int:
        L = self.side
        return 2 * ((r % L) * L + c % L) + 1

    def cell(self, r: int, c: int) -> int:
        L = self.side
        return (r % L) * L + c % L

    def coords(self, index: int) -> tuple[int, int]:
        return divmod(index, self.side)

    def edge_vertices(self, e: int) -> tuple[int, int]:
        r, c = self.coords(e // 2)
        if e % 2 == 0:
            return self.cell(r, c), self.cell(r, c + 1)
        return self.cell(r, c), self.cell(r + 1, c)

    def edge_plaquettes(self, e: int) -> tuple[int, int]:
        r, c = self.coords(e // 2)
        if e % 2 == 0:
            return self.cell(r - 1, c), self.cell(r, c)
        return self.cell(r, c - 1), self.cell(r, c)

    @cached_property
    def star_supports(self) -> list[tuple[int, int, int, int]]:
        L = self.side
        return [
            (self.h(r, c), self.h(r, c - 1), self.v(r, c), self.v(r - 1, c))
            for r in range(L) for c in range(L)
        ]

    @cached_property
    def plaquette_supports(self) -> list[tuple[int, int, int, int]]:
        L = self.side
        return [
            (self.h(r, c), self.h(r + 1, c), self.v(r, c), self.v(r, c + 1))
            for r in range(L) for c in range(L)
        ]

    # -- snake and comb -----------------------------------------------------
    @cached_property
    def snake_plaquettes(self) -> list[int]:
        """Plaquettes in snake order."""
        L = self.side
        out = []
        for r in range(L):
            cols = range(L) if r % 2 == 0 else range(L - 1, -1, -1)
            out.extend(self.cell(r, c) for c in cols)
        return out

    def shared_edge(self, p: int, q: int) -> int:
        common = set(self.plaquette_supports[p]) & set(self.plaquette_supports[q])
        if len(common) != 1:
            raise ValueError(f"plaquettes {p}, {q} do not share exactly one edge")
        return common.pop()

    @cached_property
    def snake_order(self) -> list[tuple[int, tuple[int, int]]]:
        """``(spin, (plaquette before, plaquette after))`` along the snake."""
        route = self.snake_plaquettes
        if self.side == 2:
            # neighbouring plaquettes share two edges at L = 2; pick the one off the Z loops
            return [(self._snake_edge_l2(a, b), (a, b)) for a, b in zip(route, route[1:])]
        return [(self.shared_edge(a, b), (a, b)) for a, b in zip(route, route[1:])]

    def _snake_edge_l2(self, a: int, b: int) -> int:
        ra, ca = self.coords(a)
        rb, cb = self.coords(b)
        if ra == rb:
            return self.v(ra, max(ca, cb))
        return self.h(max(ra, rb), ca)

    @property
    def snake_spins(self) -> list[int]:
        return [s for s, _ in self.snake_order]

    @property
    def leftover_spins(self) -> tuple[int, int]:
        L = self.side
        return (self.h(0, L - 1), self.v(L - 1, 0))

    @cached_property
    def comb_order(self) -> list[tuple[int, tuple[int, int]]]:
        """``(spin, (star, star))`` for each comb spin, sorted by spin index."""
        taken = set(self.snake_spins) | set(self.leftover_spins)
        return [(e, self.edge_vertices(e)) for e in range(self.n_qubits) if e not in taken]

    @property
    def comb_spins(self) -> list[int]:
        return [s for s, _ in self.comb_order]

    @cached_property
    def comb_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_cells))
        for e, (u, w) in self.comb_order:
            g.add_edge(u, w, spin=e)
        return g

    @cached_property
    def comb_leaves(self) -> list[int]:
        return sorted(v for v, d in self.comb_graph.degree() if d == 1)

    @cached_property
    def leaf_paths(self) -> list[list[int]]:
        """Star sequences of the tree paths between every pair of comb leaves."""
        g = self.comb_graph
        return [nx.shortest_path(g, a, b) for a, b in itertools.combinations(self.comb_leaves, 2)]

    def path_spins(self, stars: list[int]) -> list[int]:
        g = self.comb_graph
        return [g.edges[a, b]["spin"] for a, b in zip(stars, stars[1:])]

    @property
    def leaf_path_spins(self) -> list[list[int]]:
        return [self.path_spins(p) for p in self.leaf_paths]

    # -- logical supports ---------------------------------------------------
    @cached_property
    def logical_supports(self) -> dict[str, tuple[int, ...]]:
        L = self.side
        z1 = tuple(self.h(0, c) for c in range(L))
        z2 = tuple(self.v(r, 0) for r in range(L))
        x2 = tuple(self.v(L - 1, c) for c in range(L))
        # dual loop: snake section from plaquette (0, L-1) to (L-1, L-1) closed by h(0, L-1)
        route = self.snake_plaquettes
        i0 = route.index(self.cell(0, L - 1))
        i1 = route.index(self.cell(L - 1, L - 1))
        lo, hi = sorted((i0, i1))
        section = [s for s, _ in self.snake_order[lo:hi]]
        x1 = tuple(sorted(section + [self.h(0, L - 1)]))
        return {"X1": x1, "Z1": z1, "X2": x2, "Z2": z2}

    # -- checks ----------------------------------------------------------------
    def constraint_report(self) -> dict[str, bool]:
        """Each geometric requirement on the layout, evaluated independently."""
        n = self.n_qubits
        counts_s = [0] * n
        counts_p = [0] * n
        for sup in self.star_supports:
            for e in sup:
                counts_s[e] += 1
        for sup in self.plaquette_supports:
            for e in sup:
                counts_p[e] += 1
        snake, comb = set(self.snake_spins), set(self.comb_spins)
        sup = self.logical_supports
        route_ok = len(set(self.snake_plaquettes)) == self.n_cells and all(
            len({a, b}) == 2 and set(self.edge_plaquettes(s)) == {a, b}
            for s, (a, b) in self.snake_order
        )
        return {
            "edges_in_two_stars": all(c == 2 for c in counts_s),
            "edges_in_two_plaquettes": all(c == 2 for c in counts_p),
            "snake_is_path": route_ok and len(snake) == self.n_cells - 1,
            "comb_is_spanning_tree": nx.is_tree(self.comb_graph),
            "snake_comb_disjoint": not (snake & comb),
            "cover_all_but_two": len(snake | comb) == n - 2,
            "snake_avoids_z_logicals": not (snake & (set(sup["Z1"]) | set(sup["Z2"]))),
            "comb_avoids_x_logicals": not (comb & (set(sup["X1"]) | set(sup["X2"]))),
            "comb_has_L_leaves": len(self.comb_leaves) == self.side,
            "comb_degree_at_most_3": max(d for _, d in self.comb_graph.degree()) <= 3,
            "leaf_path_count": len(self.leaf_paths) == self.side * (self.side - 1) // 2,
            "leaf_path_length": max(len(p) for p in self.leaf_paths) <= 3 * self.side - 2,
        }

    def to_json_dict(self) -> dict:
        return {
            "type": "torus",
            "L": self.side,
            "n_qubits": self.n_qubits,
            "edges": [list(self.edge_vertices(e)) for e in range(self.n_qubits)],
            "stars": [list(s) for s in self.star_supports],
            "plaquettes": [list(p) for p in self.plaquette_supports],
            "snake": self.snake_spins,
            "snake_plaquettes": self.snake_plaquettes,
            "comb": self.comb_spins,
            "comb_pairs": [list(pair) for _, pair in self.comb_order],
            "leftover": list(self.leftover_spins),
            "leaf_paths": self.leaf_paths,
            "leaf_path_spins": self.leaf_path_spins,
            "logicals": {k: list(v) for k, v in self.logical_supports.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())
