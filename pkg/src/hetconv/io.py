"""On-disk layout for graphs, dense matrices, and run artifacts.

A graph directory holds:
  schema.json            {"types": [...], "relations": [["A","P"], ...]}
  edges_<SRC>_<DST>.tsv  src_index<TAB>dst_index[<TAB>weight], 0-based
  features_<TYPE>.tsv    header "rows cols", then rows lines of floats
  labels_<TYPE>.tsv      object_index<TAB>class_index (absent = unlabeled)
  split_<TYPE>.json      {"train": [...], "val": [...], "test": [...]}

All writes go through a temp file plus rename, so interrupted runs never
leave a corrupt artifact behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .graph import HinGraph, Schema, SparseAdj


def atomic_write_text(path: Path | str, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path | str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def save_dense(path: Path | str, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("dense matrix files are 2-D")
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    lines += [" ".join(format(x, ".17g") for x in row) for row in m]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_dense(path: Path | str) -> np.ndarray:
    path = Path(path)
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: first line must be 'rows cols'")
        rows, cols = int(header[0]), int(header[1])
        if rows == 0:
            data = np.zeros((0, cols))
        else:
            data = np.loadtxt(f, dtype=np.float64, ndmin=2)
    if data.shape != (rows, cols):
        raise ValueError(f"{path}: body shape {data.shape} != header {(rows, cols)}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite value")
    return data


def save_graph(directory: Path | str, g: HinGraph) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_json(
        directory / "schema.json",
        {
            "types": list(g.schema.object_types),
            "relations": [list(r) for r in g.schema.relations],
        },
    )
    for t, f in g.features.items():
        save_dense(directory / f"features_{t}.tsv", f)
    for (src, dst), a in g.adjacency.items():
        rows = np.repeat(np.arange(a.n_rows), np.diff(a.indptr))
        lines = [
            f"{int(c)}\t{int(r)}\t{format(w, '.17g')}"
            for r, c, w in zip(rows, a.indices, a.weights)
        ]
        atomic_write_text(
            directory / f"edges_{src}_{dst}.tsv", "\n".join(lines) + ("\n" if lines else "")
        )
    for t, lab in g.labels.items():
        lines = [f"{i}\t{int(c)}" for i, c in enumerate(lab) if c >= 0]
        if lines:
            atomic_write_text(directory / f"labels_{t}.tsv", "\n".join(lines) + "\n")
    for t, parts in g.splits.items():
        write_json(
            directory / f"split_{t}.json",
            {k: [int(i) for i in v] for k, v in parts.items()},
        )


def load_schema(path: Path | str) -> Schema:
    with open(path) as f:
        raw = json.load(f)
    return Schema(tuple(raw["types"]), tuple(tuple(r) for r in raw["relations"]))


def _load_edges(path: Path, n_rows: int, n_cols: int) -> SparseAdj:
    rows, cols, weights = [], [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 2 or 3 fields")
            src, dst = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
            if not np.isfinite(w):
                raise ValueError(f"{path}:{lineno}: non-finite weight")
            cols.append(src)
            rows.append(dst)
            weights.append(w)
    return SparseAdj.from_edges(
        n_rows, n_cols, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
        np.array(weights),
    )


def load_graph(directory: Path | str) -> HinGraph:
    directory = Path(directory)
    schema = load_schema(directory / "schema.json")
    features = {}
    for t in schema.object_types:
        fpath = directory / f"features_{t}.tsv"
        if not fpath.exists():
            raise FileNotFoundError(f"missing feature file: {fpath}")
        features[t] = load_dense(fpath)
    adjacency = {}
    for src, dst in schema.relations:
        epath = directory / f"edges_{src}_{dst}.tsv"
        if not epath.exists():
            raise FileNotFoundError(f"missing edge file: {epath}")
        adjacency[(src, dst)] = _load_edges(
            epath, features[dst].shape[0], features[src].shape[0]
        )
    labels, class_counts, splits = {}, {}, {}
    for t in schema.object_types:
        lpath = directory / f"labels_{t}.tsv"
        if lpath.exists():
            lab = np.full(features[t].shape[0], -1, dtype=np.int64)
            with open(lpath) as f:
                for lineno, line in enumerate(f, 1):
                    line = line.strip()
                    if not line:
                        continue
                    idx, cls = line.split("\t")
                    lab[int(idx)] = int(cls)
            if (lab >= 0).any():
                labels[t] = lab
                class_counts[t] = int(lab.max()) + 1
        spath = directory / f"split_{t}.json"
        if spath.exists():
            with open(spath) as f:
                raw = json.load(f)
            splits[t] = {k: np.array(v, dtype=np.int64) for k, v in raw.items()}
    return HinGraph(
        schema=schema,
        adjacency=adjacency,
        features=features,
        labels=labels,
        class_counts=class_counts,
        splits=splits,
    )
