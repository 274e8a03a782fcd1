"""Class-relationship graph with per-node semantic vectors.

Nodes carry a unique name, a role (``known``, ``unknown`` or ``aux``) and an
L2-normalized semantic vector. Edges are undirected and unweighted. Every
neighborhood contains the node itself.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingEmbeddingError, ParseError, UsageError

ROLES = ("known", "unknown", "aux")


@dataclass(frozen=True)
class NodeRoleSplit:
    known: tuple
    unknown: tuple
    aux: tuple

    def __post_init__(self):
        sets = [set(self.known), set(self.unknown), set(self.aux)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise UsageError("role sets overlap")
        if not self.known:
            raise UsageError("at least one known node is required")
        if not self.unknown:
            raise UsageError("at least one unknown node is required")


class KnowledgeGraph:
    """Immutable undirected graph over named nodes.

    ``vectors`` is an ``n x c`` array of unit-norm semantic vectors (rows
    that were zero on input stay zero).
    """

    def __init__(self, names, vectors, edges, roles):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise FormatError("node names must be unique")
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(names):
            raise FormatError(f"expected {len(names)} semantic vectors, got shape {vectors.shape}")
        roles = tuple(roles)
        if len(roles) != len(names) or any(r not in ROLES for r in roles):
            raise FormatError(f"roles must be one of {ROLES} for each node")
        n = len(names)
        adj = [set() for _ in range(n)]
        for a, b in edges:
            if not (0 <= a < n and 0 <= b < n):
                raise UsageError(f"edge ({a}, {b}) out of range for {n} nodes")
            if a != b:
                adj[a].add(b)
                adj[b].add(a)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        # rows already unit length are kept verbatim so save/load round trips exactly
        rescale = (norms > 0.0) & (np.abs(norms - 1.0) > 4 * np.finfo(np.float64).eps)
        vectors = np.where(rescale, vectors / np.where(rescale, norms, 1.0), vectors)
        vectors.setflags(write=False)
        self.names = names
        self.vectors = vectors
        self.roles = roles
        self._adj = tuple(tuple(sorted(s)) for s in adj)
        self._index = {name: i for i, name in enumerate(names)}

    @property
    def n(self):
        return len(self.names)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise UsageError(f"unknown node name {name!r}") from None

    def neighbors(self, i):
        """First-order neighbors of ``i`` without ``i`` itself."""
        self._check(i)
        return self._adj[i]

    def degree(self, i):
        return len(self.neighbors(i))

    def edges(self):
        return [(i, j) for i in range(self.n) for j in self._adj[i] if i < j]

    def split(self):
        by_role = {r: tuple(i for i, x in enumerate(self.roles) if x == r) for r in ROLES}
        return NodeRoleSplit(by_role["known"], by_role["unknown"], by_role["aux"])

    def neighborhood_mask(self):
        """Boolean ``n x n`` matrix of ``A + I``."""
        mask = np.eye(self.n, dtype=bool)
        for i, js in enumerate(self._adj):
            mask[i, list(js)] = True
        return mask

    def permuted(self, perm):
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = [int(p) for p in perm]
        inv = {old: new for new, old in enumerate(perm)}
        return KnowledgeGraph(
            [self.names[p] for p in perm],
            self.vectors[perm],
            [(inv[a], inv[b]) for a, b in self.edges()],
            [self.roles[p] for p in perm],
        )

    def _check(self, i):
        if not 0 <= i < self.n:
            raise UsageError(f"node index {i} out of range [0, {self.n})")

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.names == other.names
            and self.roles == other.roles
            and self._adj == other._adj
            and np.array_equal(self.vectors, other.vectors)
        )

    __hash__ = None

    def __repr__(self):
        return f"KnowledgeGraph(n={self.n}, dim={self.dim}, edges={len(self.edges())})"


def neighborhood(g, i):
    """Neighbors of ``i`` plus ``i`` itself, ascending."""
    return sorted(g.neighbors(i) + (i,))


def validate_reachability(g, split=None):
    """Return ``None`` if every unknown node reaches a known node, else the
    sorted list of names of unknown nodes that do not."""
    split = split or g.split()
    seen = [False] * g.n
    queue = deque(split.known)
    for k in split.known:
        seen[k] = True
    while queue:
        i = queue.popleft()
        for j in g.neighbors(i):
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    missing = sorted(g.names[u] for u in split.unknown if not seen[u])
    return missing or None


# ---------------------------------------------------------------- file formats


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, raw.rstrip("\n")


def read_embeddings(path):
    """Parse a word-vector text dump: ``name v1 ... vc`` per line."""
    vectors = {}
    dim = None
    for lineno, line in _lines(path):
        parts = line.split()
        name, values = parts[0], parts[1:]
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"bad number in embedding for {name!r}: {exc}", lineno) from None
        if dim is None:
            dim = vec.size
        if vec.size != dim or dim == 0:
            raise FormatError(
                f"line {lineno}: embedding for {name!r} has {vec.size} values, expected {dim}")
        if name in vectors:
            raise ParseError(f"duplicate embedding for {name!r}", lineno)
        vectors[name] = vec
    return vectors


def read_roles(path):
    roles = {}
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected 'name<TAB>role'", lineno)
        name, role = parts[0].strip(), parts[1].strip()
        if role not in ROLES:
            raise ParseError(f"role {role!r} not in {ROLES}", lineno)
        roles[name] = role
    return roles


def load_graph(edge_file, embedding_file, roles_file):
    """Load a graph from the edge, embedding and role text files.

    Node order follows the roles file.
    """
    roles = read_roles(roles_file)
    vectors = read_embeddings(embedding_file)
    names = list(roles)
    index = {name: i for i, name in enumerate(names)}
    edges = []
    for lineno, line in _lines(edge_file):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected 'name_a<TAB>name_b'", lineno)
        a, b = parts[0].strip(), parts[1].strip()
        for name in (a, b):
            if name not in index:
                raise ParseError(f"unknown node {name!r}", lineno)
        edges.append((index[a], index[b]))
    missing = [name for name in names if name not in vectors]
    if missing:
        raise MissingEmbeddingError(missing)
    return KnowledgeGraph(names, np.stack([vectors[n] for n in names]), edges,
                          [roles[n] for n in names])


def save_graph(g, edge_file, embedding_file, roles_file):
    with open(edge_file, "w", encoding="utf-8") as fh:
        for a, b in g.edges():
            fh.write(f"{g.names[a]}\t{g.names[b]}\n")
    with open(embedding_file, "w", encoding="utf-8") as fh:
        for name, vec in zip(g.names, g.vectors):
            fh.write(name + " " + " ".join(repr(float(v)) for v in vec) + "\n")
    with open(roles_file, "w", encoding="utf-8") as fh:
        for name, role in zip(g.names, g.roles):
            fh.write(f"{name}\t{role}\n")


def graph_paths(directory):
    d = Path(directory)
    return d / "edges.tsv", d / "embeddings.txt", d / "roles.tsv"
