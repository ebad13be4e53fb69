"""Pauli-string algebra, problem Hamiltonians and exact ground-state oracles.

Qubit ``q`` corresponds to letter ``q`` of a Pauli string and to bit
``n - 1 - q`` of a computational-basis index, so the bitstring ``"01"``
denotes qubit 0 in ``|0>`` and qubit 1 in ``|1>``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import substream

PAULI_LETTERS = frozenset("IXYZ")
MAX_DENSE_QUBITS = 10


class PauliFormatError(ValueError):
    """Raised for malformed Pauli-sum or graph files."""


class SizeError(ValueError):
    """Raised when a dense operation would exceed the configured qubit cap."""


@dataclass(frozen=True)
class PauliString:
    letters: str

    def __post_init__(self):
        if not self.letters:
            raise ValueError("a Pauli string needs at least one qubit")
        bad = set(self.letters) - PAULI_LETTERS
        if bad:
            raise ValueError(f"invalid Pauli letters {sorted(bad)} in {self.letters!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.letters)

    @property
    def is_identity(self) -> bool:
        return set(self.letters) == {"I"}

    @property
    def is_diagonal(self) -> bool:
        return set(self.letters) <= {"I", "Z"}

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q, c in enumerate(self.letters) if c != "I")

    def masks(self) -> tuple[int, int, int]:
        """Return ``(x_mask, z_mask, n_y)`` in basis-index bit order.

        ``P|b> = i**n_y * (-1)**popcount(b & z_mask) |b ^ x_mask>``.
        """
        n = self.n_qubits
        x_mask = z_mask = 0
        n_y = 0
        for q, c in enumerate(self.letters):
            bit = 1 << (n - 1 - q)
            if c in "XY":
                x_mask |= bit
            if c in "ZY":
                z_mask |= bit
            if c == "Y":
                n_y += 1
        return x_mask, z_mask, n_y

    def to_matrix(self) -> np.ndarray:
        n = self.n_qubits
        if n > MAX_DENSE_QUBITS:
            raise SizeError(f"{n} qubits exceeds the dense cap of {MAX_DENSE_QUBITS}")
        x_mask, z_mask, n_y = self.masks()
        dim = 1 << n
        cols = np.arange(dim)
        rows = cols ^ x_mask
        mat = np.zeros((dim, dim), dtype=complex)
        mat[rows, cols] = (1j**n_y) * parity_signs(cols, z_mask)
        return mat

    def __str__(self) -> str:
        return self.letters


def parity_signs(indices: np.ndarray, mask: int) -> np.ndarray:
    """``(-1)**popcount(index & mask)`` for every index."""
    bits = np.bitwise_and(indices, mask)
    parity = np.zeros_like(bits)
    while mask:
        low = mask & -mask
        parity ^= (bits & low) != 0
        mask ^= low
    return 1.0 - 2.0 * parity


@dataclass(frozen=True)
class WeightedPauliSum:
    """``sum_k h_k P_k`` with real coefficients; duplicate strings are merged."""

    n_qubits: int
    terms: tuple[tuple[float, PauliString], ...] = field(default=())

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        merged: dict[str, float] = {}
        for coeff, ps in self.terms:
            if not isinstance(ps, PauliString):
                ps = PauliString(str(ps))
            if ps.n_qubits != self.n_qubits:
                raise ValueError(
                    f"term {ps.letters!r} has {ps.n_qubits} qubits, expected {self.n_qubits}"
                )
            coeff = float(coeff)
            if not math.isfinite(coeff):
                raise ValueError(f"non-finite coefficient for {ps.letters!r}")
            merged[ps.letters] = merged.get(ps.letters, 0.0) + coeff
        object.__setattr__(
            self, "terms", tuple((c, PauliString(s)) for s, c in merged.items())
        )

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[float, str | PauliString]]) -> "WeightedPauliSum":
        terms = [(c, p if isinstance(p, PauliString) else PauliString(p)) for c, p in terms]
        if not terms:
            raise ValueError("cannot infer n_qubits from an empty term list")
        return cls(terms[0][1].n_qubits, tuple(terms))

    @property
    def constant(self) -> float:
        return sum(c for c, p in self.terms if p.is_identity)

    @property
    def non_identity_terms(self) -> tuple[tuple[float, PauliString], ...]:
        return tuple((c, p) for c, p in self.terms if not p.is_identity)

    @property
    def is_diagonal(self) -> bool:
        return all(p.is_diagonal for _, p in self.terms)

    def scaled(self, factor: float) -> "WeightedPauliSum":
        return WeightedPauliSum(self.n_qubits, tuple((factor * c, p) for c, p in self.terms))

    def __add__(self, other: "WeightedPauliSum") -> "WeightedPauliSum":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit-count mismatch")
        return WeightedPauliSum(self.n_qubits, self.terms + other.terms)

    def __neg__(self) -> "WeightedPauliSum":
        return self.scaled(-1.0)

    def diagonal(self) -> np.ndarray:
        """Diagonal of the matrix; only valid for Z/I-only sums."""
        if not self.is_diagonal:
            raise ValueError("sum has off-diagonal terms")
        idx = np.arange(1 << self.n_qubits)
        out = np.zeros(idx.shape, dtype=float)
        for c, p in self.terms:
            out += c * parity_signs(idx, p.masks()[1])
        return out

    def to_matrix(self) -> np.ndarray:
        if self.n_qubits > MAX_DENSE_QUBITS:
            raise SizeError(f"{self.n_qubits} qubits exceeds the dense cap of {MAX_DENSE_QUBITS}")
        dim = 1 << self.n_qubits
        mat = np.zeros((dim, dim), dtype=complex)
        cols = np.arange(dim)
        for c, p in self.terms:
            x_mask, z_mask, n_y = p.masks()
            mat[cols ^ x_mask, cols] += c * (1j**n_y) * parity_signs(cols, z_mask)
        return mat


@dataclass(frozen=True)
class GraphInstance:
    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_vertices < 1:
            raise ValueError("graph needs at least one vertex")
        seen = set()
        norm = []
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n_vertices and 0 <= j < self.n_vertices):
                raise ValueError(f"edge ({i}, {j}) out of range")
            e = (min(i, j), max(i, j))
            if e in seen:
                raise ValueError(f"duplicate edge {e}")
            seen.add(e)
            norm.append(e)
        object.__setattr__(self, "edges", tuple(norm))
        if self.weights is not None:
            if len(self.weights) != len(self.edges):
                raise ValueError("one weight per edge required")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def degrees(self) -> list[int]:
        deg = [0] * self.n_vertices
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


def _two_body(n: int, i: int, j: int, letter: str = "Z") -> PauliString:
    letters = ["I"] * n
    letters[i] = letters[j] = letter
    return PauliString("".join(letters))


def _one_body(n: int, i: int, letter: str) -> PauliString:
    letters = ["I"] * n
    letters[i] = letter
    return PauliString("".join(letters))


def build_maxcut(graph: GraphInstance) -> WeightedPauliSum:
    """``sum_{(i,j)} (I - Z_i Z_j) / 2`` with the identity part kept explicit."""
    if not graph.edges:
        raise ValueError("MaxCut needs at least one edge")
    n = graph.n_vertices
    ident = PauliString("I" * n)
    terms = [(0.5 * len(graph.edges), ident)]
    terms += [(-0.5, _two_body(n, i, j)) for i, j in graph.edges]
    return WeightedPauliSum(n, tuple(terms))


def build_sk(n: int, seed: int) -> WeightedPauliSum:
    """Sherrington-Kirkpatrick couplings ``J_ij ~ N(0, 1)`` for ``i < j``."""
    if n < 2:
        raise ValueError("SK model needs n >= 2")
    rng = substream(seed, "instance", "sk", n)
    pairs = list(itertools.combinations(range(n), 2))
    couplings = rng.standard_normal(len(pairs))
    return WeightedPauliSum(
        n, tuple((float(J), _two_body(n, i, j)) for J, (i, j) in zip(couplings, pairs))
    )


def build_tfim(n: int, J: float, h: float) -> WeightedPauliSum:
    """Open-chain transverse-field Ising model ``-J sum ZZ - h sum X``."""
    if n < 2:
        raise ValueError("TFIM needs n >= 2")
    terms = [(-J, _two_body(n, i, i + 1)) for i in range(n - 1)]
    terms += [(-h, _one_body(n, i, "X")) for i in range(n)]
    return WeightedPauliSum(n, tuple(terms))


def generate_3regular(n: int, seed: int, max_tries: int = 10_000) -> GraphInstance:
    """Random simple 3-regular graph from the configuration model with rejection."""
    if n < 4 or n % 2:
        raise ValueError(f"a 3-regular graph needs an even n >= 4, got {n}")
    rng = substream(seed, "instance", "3regular", n)
    stubs = np.repeat(np.arange(n), 3)
    for _ in range(max_tries):
        perm = rng.permutation(stubs)
        pairs = perm.reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        edges = {(int(min(a, b)), int(max(a, b))) for a, b in pairs}
        if len(edges) != len(pairs):
            continue
        return GraphInstance(n, tuple(sorted(edges)))
    raise RuntimeError(f"no simple 3-regular graph found in {max_tries} tries")


def exact_ground_energy(h: WeightedPauliSum, max_qubits: int = MAX_DENSE_QUBITS) -> float:
    """Smallest eigenvalue of the dense matrix of ``h``."""
    if h.n_qubits > max_qubits:
        raise SizeError(f"{h.n_qubits} qubits exceeds the cap of {max_qubits}")
    if h.is_diagonal:
        return float(h.diagonal().min())
    return float(np.linalg.eigvalsh(h.to_matrix())[0])


def max_cut_value(graph: GraphInstance) -> float:
    """Optimal cut size by enumeration (the MaxCut AR reference)."""
    return float(build_maxcut(graph).diagonal().max())


# --- file formats ------------------------------------------------------------


def parse_pauli_sum(text: str) -> WeightedPauliSum:
    terms: list[tuple[float, PauliString]] = []
    n = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise PauliFormatError(f"line {lineno}: expected '<coefficient> <letters>', got {raw!r}")
        try:
            coeff = float(parts[0])
            ps = PauliString(parts[1])
        except ValueError as exc:
            raise PauliFormatError(f"line {lineno}: {exc}") from None
        if n is None:
            n = ps.n_qubits
        elif ps.n_qubits != n:
            raise PauliFormatError(
                f"line {lineno}: string length {ps.n_qubits} differs from {n} on earlier lines"
            )
        terms.append((coeff, ps))
    if n is None:
        raise PauliFormatError("no terms found")
    return WeightedPauliSum(n, tuple(terms))


def format_pauli_sum(h: WeightedPauliSum, header: Sequence[str] = ()) -> str:
    lines = [f"# {line}" for line in header]
    lines += [f"{c!r} {p.letters}" for c, p in h.terms]
    return "\n".join(lines) + "\n"


def load_hamiltonian(path: str | Path) -> WeightedPauliSum:
    return parse_pauli_sum(Path(path).read_text(encoding="utf-8"))


def save_hamiltonian(h: WeightedPauliSum, path: str | Path, header: Sequence[str] = ()) -> None:
    Path(path).write_text(format_pauli_sum(h, header), encoding="utf-8")


def format_graph(graph: GraphInstance, header: Sequence[str] = ()) -> str:
    lines = [f"# {line}" for line in header]
    lines.append(f"{graph.n_vertices} {len(graph.edges)}")
    for k, (i, j) in enumerate(graph.edges):
        if graph.weights is None:
            lines.append(f"{i} {j}")
        else:
            lines.append(f"{i} {j} {graph.weights[k]!r}")
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> GraphInstance:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            rows.append((lineno, line.split()))
    if not rows:
        raise PauliFormatError("empty graph file")
    lineno, head = rows[0]
    try:
        n, m = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise PauliFormatError(f"line {lineno}: expected 'n m'") from None
    if len(rows) - 1 != m:
        raise PauliFormatError(f"header declares {m} edges, found {len(rows) - 1}")
    edges, weights = [], []
    for lineno, parts in rows[1:]:
        if len(parts) not in (2, 3):
            raise PauliFormatError(f"line {lineno}: expected 'i j [w]'")
        try:
            edges.append((int(parts[0]), int(parts[1])))
            if len(parts) == 3:
                weights.append(float(parts[2]))
        except ValueError:
            raise PauliFormatError(f"line {lineno}: bad number") from None
    if weights and len(weights) != len(edges):
        raise PauliFormatError("either all or no edges carry weights")
    return GraphInstance(n, tuple(edges), tuple(weights) if weights else None)


def load_graph(path: str | Path) -> GraphInstance:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def save_graph(graph: GraphInstance, path: str | Path, header: Sequence[str] = ()) -> None:
    Path(path).write_text(format_graph(graph, header), encoding="utf-8")
