"""Typed heterogeneous graph data model.

A graph has a schema (object types plus directed relations between them),
one sparse adjacency matrix per relation, a dense feature matrix per type,
and optional integer labels. All containers are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

Relation = tuple[str, str]  # (source type, target type)


@dataclass(frozen=True)
class Schema:
    """Object types and directed relations of a heterogeneous graph.

    Relation and type order is the declaration order; it is the canonical
    iteration order everywhere (attention columns, file naming, reports).
    """

    object_types: tuple[str, ...]
    relations: tuple[Relation, ...]

    def __post_init__(self):
        object.__setattr__(self, "object_types", tuple(self.object_types))
        object.__setattr__(self, "relations", tuple(tuple(r) for r in self.relations))
        if len(set(self.object_types)) != len(self.object_types):
            raise ValueError("duplicate object type names")
        if len(set(self.relations)) != len(self.relations):
            raise ValueError("duplicate relations")
        known = set(self.object_types)
        for src, dst in self.relations:
            if src not in known or dst not in known:
                raise ValueError(f"relation ({src}, {dst}) names an undeclared type")
        if len(self.object_types) + len(self.relations) <= 2:
            raise ValueError("a heterogeneous graph needs |types| + |relations| > 2")

    def neighbor_types(self, omega: str) -> list[str]:
        """Source types with a relation into ``omega``, in declared order."""
        if omega not in self.object_types:
            raise KeyError(f"unknown object type: {omega!r}")
        return [src for src, dst in self.relations if dst == omega]


def neighbor_types(schema: Schema, omega: str) -> list[str]:
    return schema.neighbor_types(omega)


@dataclass(frozen=True)
class SparseAdj:
    """CSR adjacency between target-type rows and source-type columns.

    Column indices are strictly increasing within each row; stored weights
    are strictly positive.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray  # int64, len n_rows + 1
    indices: np.ndarray  # int64, len nnz
    weights: np.ndarray  # float64, len nnz

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.asarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        for problem in self.check():
            raise ValueError(problem)
        # scipy handle for products; built once, the arrays are shared not copied
        csr = sp.csr_matrix(
            (self.weights, self.indices, self.indptr), shape=(self.n_rows, self.n_cols)
        )
        object.__setattr__(self, "_csr", csr)
        object.__setattr__(self, "_csr_t", None)

    def check(self) -> list[str]:
        """Structural problems as human-readable strings (empty if valid)."""
        problems = []
        if len(self.indptr) != self.n_rows + 1 or self.indptr[0] != 0:
            problems.append("malformed row offsets")
            return problems
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != len(self.indices):
            problems.append("row offsets not monotone or inconsistent with indices")
            return problems
        if len(self.indices) != len(self.weights):
            problems.append("indices/weights length mismatch")
            return problems
        if len(self.indices) and (
            self.indices.min() < 0 or self.indices.max() >= self.n_cols
        ):
            problems.append("column index out of range")
        if len(self.indices) > 1:
            rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
            same_row = rows[1:] == rows[:-1]
            bad = same_row & (np.diff(self.indices) <= 0)
            if bad.any():
                problems.append(
                    f"row {rows[1:][bad][0]}: column indices not strictly increasing"
                )
        if not np.all(np.isfinite(self.weights)):
            problems.append("non-finite edge weight")
        elif len(self.weights) and self.weights.min() <= 0:
            problems.append("non-positive edge weight stored")
        return problems

    @property
    def nnz(self) -> int:
        return len(self.weights)

    def row_sums(self) -> np.ndarray:
        csum = np.concatenate(([0.0], np.cumsum(self.weights)))
        return csum[self.indptr[1:]] - csum[self.indptr[:-1]]

    def matmul(self, dense: np.ndarray) -> np.ndarray:
        return self._csr @ dense

    def t_matmul(self, dense: np.ndarray) -> np.ndarray:
        """Transpose product, used by the sparse-product backward pass."""
        if self._csr_t is None:
            object.__setattr__(self, "_csr_t", self._csr.T.tocsr())
        return self._csr_t @ dense

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def pattern(self) -> tuple[np.ndarray, np.ndarray]:
        """Canonical (indptr, indices) of the sparsity pattern."""
        return self.indptr, self.indices

    @staticmethod
    def from_edges(
        n_rows: int,
        n_cols: int,
        rows: np.ndarray,
        cols: np.ndarray,
        weights: np.ndarray | None = None,
    ) -> "SparseAdj":
        """Build from (row, col, weight) triples; parallel edges sum."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if weights is None:
            weights = np.ones(len(rows))
        weights = np.asarray(weights, dtype=np.float64)
        if len(rows) and (rows.min() < 0 or rows.max() >= n_rows):
            raise ValueError("edge row index out of range")
        if len(cols) and (cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("edge column index out of range")
        coo = sp.coo_matrix((weights, (rows, cols)), shape=(n_rows, n_cols))
        csr = coo.tocsr()  # sums duplicates
        csr.sum_duplicates()
        csr.sort_indices()
        return SparseAdj(
            n_rows,
            n_cols,
            csr.indptr.astype(np.int64),
            csr.indices.astype(np.int64),
            csr.data.astype(np.float64),
        )


def row_normalize(a: SparseAdj) -> SparseAdj:
    """Divide each row by its sum so nonzero rows sum to 1.

    Rows without entries stay empty: an object with no neighbors under this
    relation receives no message, which sidesteps the division by zero.
    The sparsity pattern is unchanged.
    """
    sums = a.row_sums()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    new_weights = a.weights * np.repeat(scale, np.diff(a.indptr))
    return SparseAdj(a.n_rows, a.n_cols, a.indptr.copy(), a.indices.copy(), new_weights)


@dataclass(frozen=True)
class HinGraph:
    """A heterogeneous graph instance.

    ``adjacency[(src, dst)]`` has shape |V_dst| x |V_src|: rows index the
    relation's target objects. ``labels[t]`` holds a class id per object,
    -1 where unlabeled. ``splits[t]`` maps "train"/"val"/"test" to index
    arrays over the labeled objects.
    """

    schema: Schema
    adjacency: Mapping[Relation, SparseAdj]
    features: Mapping[str, np.ndarray]
    labels: Mapping[str, np.ndarray] = field(default_factory=dict)
    class_counts: Mapping[str, int] = field(default_factory=dict)
    splits: Mapping[str, Mapping[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "adjacency", dict(self.adjacency))
        feats = {
            t: np.ascontiguousarray(f, dtype=np.float64)
            for t, f in self.features.items()
        }
        object.__setattr__(self, "features", feats)
        labels = {
            t: np.asarray(v, dtype=np.int64) for t, v in (self.labels or {}).items()
        }
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_counts", dict(self.class_counts or {}))
        object.__setattr__(
            self,
            "splits",
            {
                t: {k: np.asarray(v, dtype=np.int64) for k, v in parts.items()}
                for t, parts in (self.splits or {}).items()
            },
        )

    def n_objects(self, t: str) -> int:
        return self.features[t].shape[0]

    def total_objects(self) -> int:
        return sum(f.shape[0] for f in self.features.values())

    def total_links(self) -> int:
        return sum(a.nnz for a in self.adjacency.values())


def validate_graph(g: HinGraph) -> list[str]:
    """Return all invariant violations, empty when the graph is well formed.

    Diagnostic only: never raises, each violation names the offending
    relation or type and the failed check.
    """
    v: list[str] = []
    for t in g.schema.object_types:
        if t not in g.features:
            v.append(f"type {t}: missing feature matrix")
            continue
        f = g.features[t]
        if f.ndim != 2:
            v.append(f"type {t}: features must be 2-D")
        if not np.all(np.isfinite(f)):
            v.append(f"type {t}: non-finite feature value")
    for rel in g.adjacency:
        if rel not in g.schema.relations:
            v.append(f"relation {rel}: not declared in schema")
    for rel in g.schema.relations:
        src, dst = rel
        a = g.adjacency.get(rel)
        if a is None:
            v.append(f"relation {rel}: missing adjacency")
            continue
        v.extend(f"relation {rel}: {p}" for p in a.check())
        if src in g.features and dst in g.features:
            want = (g.n_objects(dst), g.n_objects(src))
            if (a.n_rows, a.n_cols) != want:
                v.append(
                    f"relation {rel}: shape {(a.n_rows, a.n_cols)} != expected {want}"
                )
    for src, dst in g.schema.relations:
        rev = (dst, src)
        # a real self-relation is its own reverse and may be asymmetric
        if src < dst and (src, dst) in g.adjacency and rev in g.adjacency:
            a, b = g.adjacency[(src, dst)], g.adjacency[rev]
            if not _transpose_pattern_equal(a, b):
                v.append(
                    f"relation ({src}, {dst}): sparsity pattern is not the "
                    f"transpose of relation {rev}"
                )
    for t, lab in g.labels.items():
        if t not in g.features:
            v.append(f"labels for unknown type {t}")
            continue
        if len(lab) != g.n_objects(t):
            v.append(f"type {t}: label vector length {len(lab)} != object count")
        n_classes = g.class_counts.get(t)
        if n_classes is None:
            v.append(f"type {t}: labeled but class count missing")
        elif len(lab) and (lab.min() < -1 or lab.max() >= n_classes):
            v.append(f"type {t}: label outside [-1, {n_classes})")
    return v


def _transpose_pattern_equal(a: SparseAdj, b: SparseAdj) -> bool:
    if (a.n_rows, a.n_cols) != (b.n_cols, b.n_rows):
        return False
    bt = b._csr.T.tocsr()
    bt.sort_indices()
    ai, an = a.pattern()
    return np.array_equal(ai, bt.indptr) and np.array_equal(an, bt.indices)


def induced_subgraph(g: HinGraph, keep: Mapping[str, int]) -> HinGraph:
    """Restrict to the first ``keep[t]`` objects of each type.

    Edges with a dropped endpoint are removed. Splits are dropped (their
    indices would no longer be meaningful); labels are truncated.
    """
    counts = {t: min(keep.get(t, g.n_objects(t)), g.n_objects(t)) for t in g.features}
    adjacency = {}
    for (src, dst), a in g.adjacency.items():
        dense_rows = np.repeat(np.arange(a.n_rows), np.diff(a.indptr))
        mask = (dense_rows < counts[dst]) & (a.indices < counts[src])
        adjacency[(src, dst)] = SparseAdj.from_edges(
            counts[dst], counts[src], dense_rows[mask], a.indices[mask], a.weights[mask]
        )
    return HinGraph(
        schema=g.schema,
        adjacency=adjacency,
        features={t: f[: counts[t]] for t, f in g.features.items()},
        labels={t: v[: counts[t]] for t, v in g.labels.items()},
        class_counts=dict(g.class_counts),
    )
