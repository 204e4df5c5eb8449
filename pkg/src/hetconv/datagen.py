"""Synthetic heterogeneous graphs with a planted, meta-path-correlated label.

The generator assigns a class to every object of the planted path's anchor
type (round-robin by index), propagates classes along the planted path, and
wires the final hop so each labeled object's class is the strict majority
class reachable through the path. Relations off the planted path are wired
class-independently. Labels are then flipped for exactly
``floor(noise * n)`` objects, so a majority vote along the planted path
recovers at least a ``1 - noise`` fraction of the labels by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import rng as rng_mod
from .autodiff import xavier_uniform
from .graph import HinGraph, Schema, SparseAdj

DBLP_SCHEMA = Schema(
    object_types=("P", "A", "C", "T"),
    relations=(("C", "P"), ("P", "C"), ("A", "P"), ("P", "A"), ("T", "P"), ("P", "T")),
)


@dataclass(frozen=True)
class DegreeSpec:
    """Out-degree distribution for one wiring direction."""

    dist: str = "powerlaw"  # "powerlaw" or "const"
    exponent: float = 2.5
    min_degree: int = 1
    max_degree: int = 40
    value: int = 1  # degree when dist == "const"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.dist == "const":
            return np.full(n, self.value, dtype=np.int64)
        if self.dist != "powerlaw":
            raise ValueError(f"unknown degree distribution {self.dist!r}")
        if not 1 <= self.min_degree <= self.max_degree:
            raise ValueError("need 1 <= min_degree <= max_degree")
        values = np.arange(self.min_degree, self.max_degree + 1)
        weights = values.astype(np.float64) ** -self.exponent
        return rng.choice(values, size=n, p=weights / weights.sum())


@dataclass(frozen=True)
class EdgeSpec:
    """One wired pair: every ``picker`` object picks ``picked`` partners."""

    picker: str
    picked: str
    degree: DegreeSpec = field(default_factory=DegreeSpec)


DBLP_EDGES = (
    EdgeSpec("P", "C", DegreeSpec(dist="const", value=1)),
    EdgeSpec("A", "P", DegreeSpec(dist="powerlaw", exponent=2.5, min_degree=1, max_degree=40)),
    EdgeSpec("P", "T", DegreeSpec(dist="powerlaw", exponent=2.5, min_degree=1, max_degree=40)),
)


@dataclass(frozen=True)
class GenSpec:
    """Recipe for one synthetic graph."""

    counts: Mapping[str, int]
    schema: Schema = DBLP_SCHEMA
    edges: tuple[EdgeSpec, ...] = DBLP_EDGES
    planted_path: tuple[str, ...] = ("C", "P", "A")
    n_classes: int = 4
    noise: float = 0.0
    feature_dim: int = 128
    informative_features: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "counts", dict(self.counts))
        object.__setattr__(self, "planted_path", tuple(self.planted_path))
        object.__setattr__(self, "edges", tuple(self.edges))
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must be in [0, 1)")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        for t in self.schema.object_types:
            if self.counts.get(t, 0) < 1:
                raise ValueError(f"type {t}: needs a positive object count")
        if len(set(self.planted_path)) != len(self.planted_path):
            raise ValueError("planted path types must be distinct")
        for a, b in zip(self.planted_path, self.planted_path[1:]):
            if (a, b) not in self.schema.relations:
                raise ValueError(f"planted path uses undeclared relation ({a}, {b})")
        wired = {(e.picker, e.picked) for e in self.edges}
        wired |= {(e.picked, e.picker) for e in self.edges}
        for rel in self.schema.relations:
            if rel not in wired:
                raise ValueError(f"relation {rel} has no edge spec")


def dblp_spec(n_authors: int, seed: int = 0, **overrides) -> GenSpec:
    """DBLP-like spec with counts proportioned to the author count."""
    counts = {
        "A": n_authors,
        "P": max(4, round(3.875 * n_authors)),
        "C": 20,
        "T": max(4, round(2.83 * n_authors)),
    }
    return GenSpec(counts=counts, seed=seed, **overrides)


def _windows(pool: np.ndarray, sizes: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    """Consecutive windows of a permuted pool, one per requested size.

    Each window has distinct entries (sizes are clamped to the pool size);
    windows cycle through the permutation so usage stays balanced.
    """
    perm = rng.permutation(pool)
    n = len(perm)
    out = []
    pos = 0
    for size in sizes:
        size = int(min(size, n))
        end = pos + size
        if end <= n:
            out.append(perm[pos:end])
        else:
            out.append(np.concatenate([perm[pos:], perm[: end - n]]))
        pos = end % n
    return out


def generate(spec: GenSpec) -> HinGraph:
    """Build the graph: planted classes, wiring, noise flips, features.

    Planted classes are ``index mod n_classes`` for the anchor and target
    types (a documented convention, so oracles can recover anchor classes
    without extra metadata); intermediate path types inherit the class of
    their primary parent.
    """
    schema = spec.schema
    k = spec.n_classes
    path = spec.planted_path
    anchor, target = path[0], path[-1]
    counts = {t: int(spec.counts[t]) for t in schema.object_types}
    if counts[anchor] < k:
        raise ValueError("counts too small to realize degrees: "
                         f"anchor type {anchor} needs >= {k} objects")
    planted_class: dict[str, np.ndarray] = {
        anchor: np.arange(counts[anchor]) % k,
        target: np.arange(counts[target]) % k,
    }
    planted_hops = {(path[i + 1], path[i]): i for i in range(len(path) - 1)}
    edge_lists: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}

    # wire planted hops from the anchor outward so parent classes exist
    ordered = sorted(
        spec.edges,
        key=lambda e: planted_hops.get((e.picker, e.picked), len(path)),
    )
    for e in ordered:
        n_picker, n_picked = counts[e.picker], counts[e.picked]
        rng = rng_mod.stream(spec.seed, "edges", e.picker, e.picked)
        degrees = e.degree.sample(n_picker, rng)
        if (e.picker, e.picked) in planted_hops:
            parent_classes = planted_class[e.picked]
            pools = [np.nonzero(parent_classes == c)[0] for c in range(k)]
            if any(len(p) == 0 for p in pools):
                raise ValueError(
                    "counts too small to realize degrees: type "
                    f"{e.picked} is missing objects of some class"
                )
            if e.picker == target:
                # last hop: strict majority of same-class parents
                majority = degrees // 2 + 1
                need = int(majority.max())
                if any(len(p) < need for p in pools):
                    raise ValueError(
                        "counts too small to realize degrees: type "
                        f"{e.picked} needs >= {need} objects per class"
                    )
                picker_class = planted_class[target]
                picks: list[np.ndarray] = [np.empty(0, np.int64)] * n_picker
                for c in range(k):
                    members = np.nonzero(picker_class == c)[0]
                    for i, w in zip(
                        members, _windows(pools[c], majority[members], rng)
                    ):
                        picks[i] = w
                rest = _windows(np.arange(n_picked), degrees - majority, rng)
                combined = [
                    np.unique(np.concatenate([a, b])) for a, b in zip(picks, rest)
                ]
                src = np.concatenate(combined)
                rows = np.repeat(np.arange(n_picker), [len(c) for c in combined])
            else:
                # intermediate hop: primary parent defines the class,
                # extra parents stay in the same class so recursive
                # majority voting remains exact
                primary = np.concatenate(_windows(np.arange(n_picked), np.ones(n_picker, np.int64), rng))
                planted_class[e.picker] = parent_classes[primary]
                extra_sizes = degrees - 1
                chosen = [np.array([p]) for p in primary]
                for c in range(k):
                    members = np.nonzero(planted_class[e.picker] == c)[0]
                    extras = _windows(pools[c], extra_sizes[members], rng)
                    for i, w in zip(members, extras):
                        chosen[i] = np.unique(np.concatenate([chosen[i], w]))
                src = np.concatenate(chosen)
                rows = np.repeat(np.arange(n_picker), [len(c) for c in chosen])
        else:
            windows = _windows(np.arange(n_picked), degrees, rng)
            src = np.concatenate(windows)
            rows = np.repeat(np.arange(n_picker), [len(w) for w in windows])
        edge_lists[(e.picker, e.picked)] = (rows, src)

    adjacency: dict[tuple[str, str], SparseAdj] = {}
    for (picker, picked), (picker_idx, picked_idx) in edge_lists.items():
        # relation picked -> picker: rows are picker objects
        adjacency[(picked, picker)] = SparseAdj.from_edges(
            counts[picker], counts[picked], picker_idx, picked_idx
        )
        adjacency[(picker, picked)] = SparseAdj.from_edges(
            counts[picked], counts[picker], picked_idx, picker_idx
        )

    labels = planted_class[target].copy()
    n_flip = int(np.floor(spec.noise * counts[target]))
    if n_flip:
        rng = rng_mod.stream(spec.seed, "noise")
        flipped = rng.choice(counts[target], size=n_flip, replace=False)
        shift = rng.integers(1, k, size=n_flip)
        labels[flipped] = (labels[flipped] + shift) % k

    features = {
        t: random_features(counts[t], spec.feature_dim, spec.seed, t)
        for t in schema.object_types
    }
    if spec.informative_features:
        onehot = np.zeros((counts[target], spec.feature_dim))
        onehot[np.arange(counts[target]), planted_class[target] % spec.feature_dim] = 0.5
        features[target] = features[target] + onehot

    return HinGraph(
        schema=schema,
        adjacency=adjacency,
        features=features,
        labels={target: labels},
        class_counts={target: k},
    )


def planted_majority_vote(g: HinGraph, path: Sequence[str], n_classes: int) -> np.ndarray:
    """Class per target object by weighted majority vote along the path.

    Reads only the planted meta-path's adjacency chain plus the generator's
    anchor-class convention (index mod n_classes). Ties break toward the
    lowest class id.
    """
    anchor = path[0]
    votes = np.zeros((g.n_objects(anchor), n_classes))
    votes[np.arange(g.n_objects(anchor)), np.arange(g.n_objects(anchor)) % n_classes] = 1.0
    for a, b in zip(path, path[1:]):
        votes = g.adjacency[(a, b)].matmul(votes)
    return votes.argmax(axis=1)


def make_splits(
    g: HinGraph, train_fraction: float, seed: int = 0
) -> dict[str, dict[str, np.ndarray]]:
    """Random train/val/test indices per labeled type.

    ``train_fraction`` is a percentage in (0, 100); the remainder is halved
    into validation and test (sizes differ by at most one).
    """
    if not 0 < train_fraction < 100:
        raise ValueError("train_fraction is a percentage in (0, 100)")
    splits = {}
    for t, lab in g.labels.items():
        idx = np.nonzero(lab >= 0)[0]
        if len(idx) < 3:
            raise ValueError(f"type {t}: need at least 3 labeled objects to split")
        rng = rng_mod.stream(seed, "split", t)
        idx = rng.permutation(idx)
        n_train = int(round(train_fraction / 100.0 * len(idx)))
        n_train = min(max(n_train, 1), len(idx) - 2)
        rest = len(idx) - n_train
        n_val = rest // 2
        splits[t] = {
            "train": np.sort(idx[:n_train]),
            "val": np.sort(idx[n_train : n_train + n_val]),
            "test": np.sort(idx[n_train + n_val :]),
        }
    return splits


def with_splits(g: HinGraph, train_fraction: float, seed: int = 0) -> HinGraph:
    return replace(g, splits=make_splits(g, train_fraction, seed))


def random_features(n: int, dim: int, seed: int, label: str = "") -> np.ndarray:
    """Xavier-uniform feature matrix; deterministic per (seed, label)."""
    if n < 1 or dim < 1:
        raise ValueError("need n, dim >= 1")
    return xavier_uniform(n, dim, rng_mod.stream(seed, "features", label))


def spec_from_json(obj: Mapping) -> GenSpec:
    """GenSpec from a JSON object; unknown keys are rejected."""
    known = {
        "counts",
        "schema",
        "edges",
        "planted_path",
        "n_classes",
        "noise",
        "feature_dim",
        "informative_features",
        "seed",
    }
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
    kwargs: dict = {"counts": dict(obj["counts"])}
    if "schema" in obj:
        kwargs["schema"] = Schema(
            tuple(obj["schema"]["types"]),
            tuple(tuple(r) for r in obj["schema"]["relations"]),
        )
    if "edges" in obj:
        kwargs["edges"] = tuple(
            EdgeSpec(
                picker=e["picker"],
                picked=e["picked"],
                degree=DegreeSpec(
                    **{k: v for k, v in e.items() if k not in ("picker", "picked")}
                ),
            )
            for e in obj["edges"]
        )
    for key in ("planted_path", "n_classes", "noise", "feature_dim",
                "informative_features", "seed"):
        if key in obj:
            kwargs[key] = tuple(obj[key]) if key == "planted_path" else obj[key]
    return GenSpec(**kwargs)
