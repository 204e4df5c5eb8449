"""Heterogeneous graph convolution with type-level attention.

Each layer contains one block per object type. A block projects the
type's own representation and each neighbor type's representation into a
common space, aggregates neighbor objects through the row-normalized
adjacency, and fuses the per-type results with an attention distribution
computed per target object. Stacking blocks layer by layer makes the final
representation of an object a probability-weighted mixture over all
meta-paths up to the model depth, which is what the interpretation module
reads off.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng as rng_mod
from .autodiff import (
    GradMatrix,
    Tape,
    add,
    concat_cols,
    constant,
    dropout,
    elu,
    matmul,
    mul,
    row_select,
    slice_cols,
    softmax_rows,
    spmm,
    xavier_uniform,
)
from .graph import HinGraph, Relation, Schema, SparseAdj, row_normalize
from .io import load_dense, save_dense, write_json

NORMALIZATION_TOL = 1e-6


@dataclass
class BlockParams:
    """Parameters of one block: projections plus attention weights.

    ``w_rel`` is keyed by neighbor type in schema order; its keys must
    equal the block type's neighbor set.
    """

    w_self: GradMatrix
    w_rel: dict[str, GradMatrix]
    w_q: GradMatrix
    w_k: GradMatrix
    w_a: GradMatrix

    def named(self) -> dict[str, GradMatrix]:
        out = {"self": self.w_self, "q": self.w_q, "k": self.w_k, "a": self.w_a}
        for gamma, w in self.w_rel.items():
            out[f"rel_{gamma}"] = w
        return out


@dataclass
class ModelParams:
    """All layers' blocks plus the width bookkeeping.

    ``layers[i]`` computes layer ``i + 2`` from layer ``i + 1`` (the input
    features are layer 1). ``dims[n]`` maps each type to its width at layer
    ``n + 1``; widths may differ per type.
    """

    layers: list[dict[str, BlockParams]]
    dims: list[dict[str, int]]
    d_a: int
    mean_variant: bool = False

    @property
    def n_layers(self) -> int:
        return len(self.layers) + 1

    def named(self) -> dict[str, GradMatrix]:
        """Flat name -> parameter map; names match checkpoint file names."""
        out: dict[str, GradMatrix] = {}
        for i, blocks in enumerate(self.layers):
            for omega, block in blocks.items():
                for pname, p in block.named().items():
                    out[f"L{i + 2}_{omega}_{pname}"] = p
        return out

    def attach(self, tape: Tape | None) -> None:
        """(Re-)register every parameter as a leaf of ``tape``."""
        for p in self.named().values():
            p.watch(tape)


@dataclass
class BlockOutput:
    """New representations plus the per-object attention distribution.

    Attention column 0 is the block's own (dummy self) contribution, the
    remaining columns follow the neighbor types in schema order.
    """

    h_new: GradMatrix
    attention: np.ndarray

    def __post_init__(self):
        a = self.attention
        if a.ndim != 2 or a.shape[0] != self.h_new.shape[0]:
            raise ValueError("attention shape inconsistent with representations")
        if len(a) and (a.min() < 0 or np.abs(a.sum(axis=1) - 1.0).max() > 1e-6):
            raise ValueError("attention rows must be probability distributions")


def init_params(
    schema: Schema,
    in_dims: Mapping[str, int],
    layer_widths: Sequence[int | Mapping[str, int]],
    d_a: int,
    seed: int,
    mean_variant: bool = False,
) -> ModelParams:
    """Xavier-uniform initialization for an ``len(layer_widths) + 1`` layer model.

    Each entry of ``layer_widths`` is either one width for every type or a
    per-type mapping. Every parameter gets its own derived random stream,
    so initialization does not depend on iteration order.
    """
    dims: list[dict[str, int]] = [{t: int(in_dims[t]) for t in schema.object_types}]
    for w in layer_widths:
        if isinstance(w, Mapping):
            dims.append({t: int(w[t]) for t in schema.object_types})
        else:
            dims.append({t: int(w) for t in schema.object_types})
    layers = []
    for n in range(2, len(dims) + 1):
        blocks: dict[str, BlockParams] = {}
        for omega in schema.object_types:
            d_in = dims[n - 2][omega]
            d_out = dims[n - 1][omega]

            def init(rows, cols, *label):
                return GradMatrix(
                    xavier_uniform(rows, cols, rng_mod.stream(seed, "init", n, omega, *label))
                )

            blocks[omega] = BlockParams(
                w_self=init(d_in, d_out, "self"),
                w_rel={
                    gamma: init(dims[n - 2][gamma], d_out, "rel", gamma)
                    for gamma in schema.neighbor_types(omega)
                },
                w_q=init(d_out, d_a, "q"),
                w_k=init(d_out, d_a, "k"),
                w_a=init(2 * d_a, 1, "a"),
            )
        layers.append(blocks)
    return ModelParams(layers=layers, dims=dims, d_a=d_a, mean_variant=mean_variant)


def project(
    block: BlockParams,
    h_self: GradMatrix,
    h_neigh: Mapping[str, GradMatrix],
) -> tuple[GradMatrix, dict[str, GradMatrix]]:
    """Map the block's own and each neighbor type's representations into
    the block's common space."""
    if h_self.shape[1] != block.w_self.shape[0]:
        raise ValueError(
            f"self projection expects width {block.w_self.shape[0]}, "
            f"got {h_self.shape[1]}"
        )
    y_self = matmul(h_self, block.w_self)
    y_gamma: dict[str, GradMatrix] = {}
    for gamma, w in block.w_rel.items():
        h = h_neigh[gamma]
        if h.shape[1] != w.shape[0]:
            raise ValueError(
                f"projection for relation from {gamma} expects width "
                f"{w.shape[0]}, got {h.shape[1]}"
            )
        y_gamma[gamma] = matmul(h, w)
    return y_self, y_gamma


def hetero_conv(
    y_self: GradMatrix,
    y_gamma: Mapping[str, GradMatrix],
    adj_norm: Mapping[str, SparseAdj],
) -> tuple[GradMatrix, dict[str, GradMatrix]]:
    """Object-level aggregation: average projected neighbors per relation.

    The self term passes through unchanged. Each adjacency must already be
    row-normalized; a nonzero row sum off 1 by more than 1e-6 is an error.
    """
    z_gamma: dict[str, GradMatrix] = {}
    for gamma, y in y_gamma.items():
        a = adj_norm[gamma]
        sums = a.row_sums()
        nonzero = sums > 0
        if nonzero.any() and np.abs(sums[nonzero] - 1.0).max() > NORMALIZATION_TOL:
            raise ValueError(
                f"adjacency for neighbor type {gamma} is not row-normalized"
            )
        z_gamma[gamma] = spmm(a, y)
    return y_self, z_gamma


def type_attention(
    block: BlockParams,
    z_self: GradMatrix,
    z_gamma: Mapping[str, GradMatrix],
    neighbor_order: Sequence[str],
    mean_variant: bool = False,
) -> BlockOutput:
    """Type-level aggregation of the convolved representations.

    The self representation is mapped to the query, every candidate
    (self included) to a key; logits are ELU of the joined key/query
    vector against the attention weights, normalized row-wise by softmax.
    With ``mean_variant`` the distribution is replaced by the uniform one
    and the attention parameters are ignored.
    """
    values = [z_self] + [z_gamma[g] for g in neighbor_order]
    n = z_self.shape[0]
    k = len(values)
    if mean_variant:
        att = constant(np.full((n, k), 1.0 / k))
    else:
        # the logit of [key || query] against w_a splits into two dot
        # products; folding w_a's halves into the key/query maps first
        # keeps every per-object intermediate a single column
        d_a = block.w_q.shape[1]
        key_map = matmul(block.w_k, row_select(block.w_a, np.arange(d_a)))
        query_map = matmul(block.w_q, row_select(block.w_a, np.arange(d_a, 2 * d_a)))
        q_score = matmul(z_self, query_map)
        logits = None
        for z in values:
            e = elu(add(matmul(z, key_map), q_score))
            logits = e if logits is None else concat_cols(logits, e)
        att = softmax_rows(logits)
    mixed = None
    for j, z in enumerate(values):
        term = mul(slice_cols(att, j, j + 1), z)
        mixed = term if mixed is None else add(mixed, term)
    h_new = elu(mixed)
    return BlockOutput(h_new=h_new, attention=att.value.copy())


def normalized_adjacency(g: HinGraph) -> dict[Relation, SparseAdj]:
    """Row-normalize every relation's adjacency once, for reuse across epochs."""
    return {rel: row_normalize(a) for rel, a in g.adjacency.items()}


def forward(
    params: ModelParams,
    g: HinGraph,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.0,
    norm_adj: Mapping[Relation, SparseAdj] | None = None,
) -> tuple[dict[str, GradMatrix], list[dict[str, np.ndarray]]]:
    """Run all layers; return final representations and attention records.

    ``attention_records[i][omega]`` is the attention matrix of block
    ``omega`` at the transition from layer ``i + 1`` to ``i + 2``. In train
    mode, dropout is applied to every hidden layer's output (never the
    last layer's), drawing masks from ``rng`` in schema order.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if training and dropout_rate > 0 and rng is None:
        raise ValueError("train-mode dropout needs an rng stream")
    if norm_adj is None:
        norm_adj = normalized_adjacency(g)
    h = {}
    for t in g.schema.object_types:
        feat = g.features[t]
        if feat.shape[1] != params.dims[0][t]:
            raise ValueError(
                f"layer 1 block {t}: feature width {feat.shape[1]} != "
                f"model input width {params.dims[0][t]}"
            )
        h[t] = constant(feat)
    records: list[dict[str, np.ndarray]] = []
    n_layers = params.n_layers
    for n in range(2, n_layers + 1):
        blocks = params.layers[n - 2]
        new_h: dict[str, GradMatrix] = {}
        layer_att: dict[str, np.ndarray] = {}
        for omega in g.schema.object_types:
            neighbors = g.schema.neighbor_types(omega)
            try:
                y_self, y_gamma = project(blocks[omega], h[omega], h)
                z_self, z_gamma = hetero_conv(
                    y_self,
                    y_gamma,
                    {gm: norm_adj[(gm, omega)] for gm in neighbors},
                )
                out = type_attention(
                    blocks[omega], z_self, z_gamma, neighbors, params.mean_variant
                )
            except ValueError as err:
                raise ValueError(f"layer {n} block {omega}: {err}") from err
            new_h[omega] = out.h_new
            layer_att[omega] = out.attention
        if training and n < n_layers:
            new_h = {
                t: dropout(x, dropout_rate, True, rng) for t, x in new_h.items()
            }
        h = new_h
        records.append(layer_att)
    return h, records


def spectral_equivalence_check(
    omega: str,
    gamma: str,
    h_omega: np.ndarray,
    h_gamma: np.ndarray,
    theta0: np.ndarray,
    theta1: np.ndarray,
    adj_omega_gamma: SparseAdj,
    adj_gamma_omega: SparseAdj,
) -> float:
    """Deviation between the layer's convolution and its spectral form.

    The first-order spectral convolution on the bipartite graph of the two
    types works on the augmented adjacency: stack both directions into one
    square matrix, normalize by its degrees, zero-pad both feature blocks
    to a common width, and apply the shared filters theta0/theta1. The
    block rows of that computation must coincide with the per-relation
    convolution run with ``w_self = theta0`` and ``w_rel = theta1`` for
    both types. Returns the maximum absolute elementwise deviation.
    """
    n_o, d_o = h_omega.shape
    n_g, d_g = h_gamma.shape
    if adj_omega_gamma.n_rows != n_o or adj_omega_gamma.n_cols != n_g:
        raise ValueError(f"adjacency for ({gamma}, {omega}) has the wrong shape")
    if adj_gamma_omega.n_rows != n_g or adj_gamma_omega.n_cols != n_o:
        raise ValueError(f"adjacency for ({omega}, {gamma}) has the wrong shape")
    d = max(d_o, d_g)
    if theta0.shape[0] != d or theta1.shape[0] != d:
        raise ValueError(f"filters must have {d} rows (the padded width)")

    # spectral route: explicit augmented matrices, dense arithmetic
    a_tilde = np.zeros((n_o + n_g, n_o + n_g))
    a_tilde[:n_o, n_o:] = adj_omega_gamma.to_dense()
    a_tilde[n_o:, :n_o] = adj_gamma_omega.to_dense()
    deg = a_tilde.sum(axis=1)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    p_tilde = inv[:, None] * a_tilde
    h_tilde = np.zeros((n_o + n_g, d))
    h_tilde[:n_o, :d_o] = h_omega
    h_tilde[n_o:, :d_g] = h_gamma
    spectral = p_tilde @ h_tilde @ theta1 + h_tilde @ theta0

    # model route: per-relation projection + object-level aggregation
    def conv(h_tgt, h_src, adj):
        y_self, y_gamma = project(
            BlockParams(
                w_self=constant(theta0[: h_tgt.shape[1]]),
                w_rel={"src": constant(theta1[: h_src.shape[1]])},
                w_q=constant(np.zeros((1, 1))),
                w_k=constant(np.zeros((1, 1))),
                w_a=constant(np.zeros((1, 1))),
            ),
            constant(h_tgt),
            {"src": constant(h_src)},
        )
        z_self, z_gamma = hetero_conv(y_self, y_gamma, {"src": row_normalize(adj)})
        return z_self.value + z_gamma["src"].value

    out_omega = conv(h_omega, h_gamma, adj_omega_gamma)
    out_gamma = conv(h_gamma, h_omega, adj_gamma_omega)
    dev_o = np.abs(spectral[:n_o] - out_omega).max() if n_o else 0.0
    dev_g = np.abs(spectral[n_o:] - out_gamma).max() if n_g else 0.0
    return float(max(dev_o, dev_g))


def spectral_equivalence_on_graph(
    g: HinGraph, omega: str, gamma: str, seed: int = 0
) -> float:
    """Run the equivalence check for one relation pair of a graph with
    random shared filters. Errors if the reverse relation is missing."""
    if (gamma, omega) not in g.adjacency:
        raise KeyError(f"graph has no relation ({gamma}, {omega})")
    if (omega, gamma) not in g.adjacency:
        raise KeyError(
            f"missing reverse relation ({omega}, {gamma}) for the equivalence check"
        )
    h_o, h_g = g.features[omega], g.features[gamma]
    d = max(h_o.shape[1], h_g.shape[1])
    d_out = max(2, d // 2)
    theta0 = xavier_uniform(d, d_out, rng_mod.stream(seed, "spectral", omega, gamma, 0))
    theta1 = xavier_uniform(d, d_out, rng_mod.stream(seed, "spectral", omega, gamma, 1))
    return spectral_equivalence_check(
        omega,
        gamma,
        h_o,
        h_g,
        theta0,
        theta1,
        g.adjacency[(gamma, omega)],
        g.adjacency[(omega, gamma)],
    )


def clone_with(params: ModelParams, named: Mapping[str, GradMatrix]) -> ModelParams:
    """A ModelParams view whose blocks reference the given leaves.

    Used by the gradient checker: the taped forward pass must consume the
    exact GradMatrix objects registered as leaves.
    """
    layers = []
    for i, blocks in enumerate(params.layers):
        rebuilt = {}
        for omega, b in blocks.items():
            prefix = f"L{i + 2}_{omega}_"
            rebuilt[omega] = BlockParams(
                w_self=named[prefix + "self"],
                w_rel={gm: named[prefix + f"rel_{gm}"] for gm in b.w_rel},
                w_q=named[prefix + "q"],
                w_k=named[prefix + "k"],
                w_a=named[prefix + "a"],
            )
        layers.append(rebuilt)
    return ModelParams(
        layers=layers, dims=params.dims, d_a=params.d_a, mean_variant=params.mean_variant
    )


def schema_hash(schema: Schema) -> str:
    canon = json.dumps(
        {"types": list(schema.object_types), "relations": [list(r) for r in schema.relations]},
        sort_keys=True,
    )
    return hashlib.sha256(canon.encode()).hexdigest()


def save_model(directory: Path | str, params: ModelParams, schema: Schema) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_json(
        directory / "model.json",
        {
            "n_layers": params.n_layers,
            "dims": params.dims,
            "d_a": params.d_a,
            "mean_variant": params.mean_variant,
            "schema": {
                "types": list(schema.object_types),
                "relations": [list(r) for r in schema.relations],
            },
            "schema_hash": schema_hash(schema),
        },
    )
    for name, p in params.named().items():
        save_dense(directory / f"{name}.tsv", p.value)


def load_model(directory: Path | str) -> tuple[ModelParams, Schema]:
    directory = Path(directory)
    with open(directory / "model.json") as f:
        meta = json.load(f)
    schema = Schema(
        tuple(meta["schema"]["types"]),
        tuple(tuple(r) for r in meta["schema"]["relations"]),
    )
    dims = [{t: int(w) for t, w in layer.items()} for layer in meta["dims"]]
    params = init_params(
        schema,
        dims[0],
        dims[1:],
        d_a=int(meta["d_a"]),
        seed=0,
        mean_variant=bool(meta["mean_variant"]),
    )
    for name, p in params.named().items():
        loaded = load_dense(directory / f"{name}.tsv")
        if loaded.shape != p.value.shape:
            raise ValueError(f"checkpoint parameter {name}: shape mismatch")
        p.value = loaded
    return params, schema
