"""Type hierarchy: a forest of slash-delimited type paths."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ADDITION = "add"
MULTIPLICATION = "mul"


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class TypeHierarchy:
    names: tuple[str, ...]
    parent: tuple[int | None, ...]
    depth: tuple[int, ...]
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise HierarchyError(f"unknown type {name!r}") from None

    @property
    def roots(self) -> list[int]:
        return [i for i, p in enumerate(self.parent) if p is None]

    @property
    def max_depth(self) -> int:
        return max(self.depth)

    def children(self, t: int) -> list[int]:
        return [i for i, p in enumerate(self.parent) if p == t]

    def ancestors(self, t: int) -> list[int]:
        out = []
        p = self.parent[t]
        while p is not None:
            out.append(p)
            p = self.parent[p]
        return out

    def fingerprint(self) -> str:
        """Stable hash of the ordered type list, used to pair models with hierarchies."""
        return hashlib.sha256("\n".join(self.names).encode("utf-8")).hexdigest()[:16]


def _prefixes(line: str) -> list[str]:
    parts = [p for p in line.strip().split("/") if p]
    return ["/" + "/".join(parts[:k]) for k in range(1, len(parts) + 1)]


def load_hierarchy(lines: Iterable[str]) -> TypeHierarchy:
    """Build a hierarchy from lines like ``/person/politician``.

    Missing prefixes are created; indices follow first appearance.  A type
    whose last path segment was already seen under a different parent is
    rejected, since every type must have exactly one path to its root.
    """
    names: list[str] = []
    parent: list[int | None] = []
    depth: list[int] = []
    index: dict[str, int] = {}
    leaf_owner: dict[str, str] = {}
    explicit: set[str] = set()

    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not line.startswith("/"):
            raise HierarchyError(f"line {lineno}: type path must start with '/': {line!r}")
        normalized = _prefixes(line)[-1] if _prefixes(line) else None
        if normalized is None:
            raise HierarchyError(f"line {lineno}: empty type path")
        if normalized in explicit:
            raise HierarchyError(f"line {lineno}: duplicate type {normalized!r}")
        explicit.add(normalized)
        prev = None
        for d, name in enumerate(_prefixes(line), 1):
            if name not in index:
                segment = name.rsplit("/", 1)[1]
                owner = leaf_owner.get(segment)
                if owner is not None and owner.rsplit("/", 1)[0] != name.rsplit("/", 1)[0]:
                    raise HierarchyError(
                        f"type {segment!r} has two parents: {owner!r} and {name!r}")
                leaf_owner[segment] = name
                index[name] = len(names)
                names.append(name)
                parent.append(prev)
                depth.append(d)
            prev = index[name]
    if not names:
        raise HierarchyError("hierarchy is empty")
    return TypeHierarchy(tuple(names), tuple(parent), tuple(depth))


def read_hierarchy(path: str | Path) -> TypeHierarchy:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return load_hierarchy(fh)


def write_hierarchy(h: TypeHierarchy, path: str | Path) -> None:
    Path(path).write_text("\n".join(h.names) + "\n", encoding="utf-8")


def path_of(t: int, h: TypeHierarchy) -> list[int]:
    """Type ids from the coarsest ancestor down to ``t``."""
    if not 0 <= t < len(h):
        raise IndexError(f"type id {t} out of range for {len(h)} types")
    return h.ancestors(t)[::-1] + [t]


def compose_path(path: Sequence[int], embeddings: np.ndarray, op: str = ADDITION) -> np.ndarray:
    if len(path) == 0:
        raise HierarchyError("cannot compose an empty path")
    rows = embeddings[list(path)]
    if op == ADDITION:
        return rows.sum(axis=0)
    if op == MULTIPLICATION:
        return np.prod(rows, axis=0)
    raise HierarchyError(f"unknown composition operator {op!r}")


def close_upward(labels: Iterable[int], h: TypeHierarchy) -> set[int]:
    out = set()
    for t in labels:
        out.add(t)
        out.update(h.ancestors(t))
    return out


def path_matrices(h: TypeHierarchy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Padded path indices, path lengths, and the N x N path-membership matrix.

    ``membership[t, u] == 1`` iff ``u`` lies on the path of ``t``, so
    ``membership @ embeddings`` gives every additive path composition at once.
    """
    N = len(h)
    L = h.max_depth
    idx = np.zeros((N, L), dtype=np.int64)
    lengths = np.zeros(N, dtype=np.int64)
    membership = np.zeros((N, N))
    for t in range(N):
        p = path_of(t, h)
        idx[t, :len(p)] = p
        lengths[t] = len(p)
        membership[t, p] = 1.0
    return idx, lengths, membership
