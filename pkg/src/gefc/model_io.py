"""Versioned text serialization of trained models.

One JSON document holds the schema, the forest structure (tests and
counts), and the circuit parameters, with floats at full repr precision so
every query result survives a round trip bit-for-bit. Unknown format
versions are rejected outright.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .circuit import Cell, GeDT, GeFPlus, LeafConfig, LeafDensity, SumNode
from .dataset import Column, Schema
from .forest import CategoryEquals, Decision, Leaf, RandomForest, Threshold

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class TrainedModel:
    """A forest plus its circuit form and training provenance."""

    forest: RandomForest
    circuit: GeFPlus
    provenance: dict

    @property
    def schema(self) -> Schema:
        return self.circuit.schema

    @property
    def config(self) -> LeafConfig:
        return self.circuit.config


# ---------------------------------------------------------------------------
# encoding


def _encode_test(test) -> dict:
    if isinstance(test, Threshold):
        return {"kind": "threshold", "t": float(test.t)}
    return {"kind": "category", "c": int(test.c)}


def _decode_test(d: dict):
    if d["kind"] == "threshold":
        return Threshold(float(d["t"]))
    if d["kind"] == "category":
        return CategoryEquals(int(d["c"]))
    raise ModelFormatError(f"unknown test kind {d['kind']!r}")


def _encode_node(tree_node, circuit_node) -> dict:
    """Joint encoding of one tree and its circuit mirror (same shape)."""
    if isinstance(tree_node, Leaf):
        leaf: LeafDensity = circuit_node
        return {
            "leaf": True,
            "n": int(tree_node.n),
            "class_counts": [int(c) for c in tree_node.class_counts],
            "mu": [float(v) for v in leaf.mu],
            "sigma": [float(v) for v in leaf.sigma],
            "log_cell_mass": [float(v) for v in leaf.log_cell_mass],
            "cat_probs": [[float(v) for v in p] for p in leaf.cat_probs],
            "class_probs": [float(v) for v in leaf.class_probs],
            "cell_lo": [float(v) for v in leaf.cell.lo],
            "cell_hi": [float(v) for v in leaf.cell.hi],
            "cell_allowed": [[bool(b) for b in a] for a in leaf.cell.allowed],
        }
    sum_node: SumNode = circuit_node
    return {
        "leaf": False,
        "feature": int(tree_node.feature),
        "test": _encode_test(tree_node.test),
        "n_routed": int(tree_node.n_routed),
        "weights": [float(w) for w in sum_node.weights],
        "left": _encode_node(tree_node.left, sum_node.children[0]),
        "right": _encode_node(tree_node.right, sum_node.children[1]),
    }


def _decode_node(d: dict, truncation: bool):
    if d["leaf"]:
        counts = np.array(d["class_counts"], dtype=np.int64)
        tree_leaf = Leaf(counts, int(d["n"]), np.empty(0, dtype=np.intp))
        cell = Cell(np.array(d["cell_lo"], dtype=np.float64),
                    np.array(d["cell_hi"], dtype=np.float64),
                    [np.array(a, dtype=bool) for a in d["cell_allowed"]])
        leaf = LeafDensity(cell,
                           np.array(d["mu"], dtype=np.float64),
                           np.array(d["sigma"], dtype=np.float64),
                           np.array(d["log_cell_mass"], dtype=np.float64),
                           [np.array(p, dtype=np.float64) for p in d["cat_probs"]],
                           np.array(d["class_probs"], dtype=np.float64),
                           truncation)
        return tree_leaf, leaf
    test = _decode_test(d["test"])
    lt, lc = _decode_node(d["left"], truncation)
    rt, rc = _decode_node(d["right"], truncation)
    tree_node = Decision(int(d["feature"]), test, lt, rt, int(d["n_routed"]))
    sum_node = SumNode(int(d["feature"]), test, [lc, rc],
                       np.array(d["weights"], dtype=np.float64))
    return tree_node, sum_node


def _encode_schema(schema: Schema) -> dict:
    return {
        "columns": [
            {"name": c.name, "kind": c.kind, "cardinality": c.cardinality,
             "categories": list(c.categories) if c.categories is not None else None}
            for c in schema.columns
        ],
        "target_index": schema.target_index,
    }


def _decode_schema(d: dict) -> Schema:
    cols = tuple(
        Column(c["name"], c["kind"], c["cardinality"],
               tuple(c["categories"]) if c["categories"] is not None else None)
        for c in d["columns"]
    )
    return Schema(cols, int(d["target_index"]))


def save_model(model: TrainedModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "schema": _encode_schema(model.schema),
        "config": {
            "alpha": model.config.alpha,
            "sigma_min_abs": model.config.sigma_min_abs,
            "sigma_min_rel": model.config.sigma_min_rel,
            "truncation": model.config.truncation,
        },
        "provenance": dict(model.provenance),
        "trees": [_encode_node(t, g.root)
                  for t, g in zip(model.forest.trees, model.circuit.components)],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r}")
    schema = _decode_schema(doc["schema"])
    cfg = doc["config"]
    config = LeafConfig(float(cfg["alpha"]), float(cfg["sigma_min_abs"]),
                        float(cfg["sigma_min_rel"]), bool(cfg["truncation"]))
    trees = []
    gedts = []
    for tree_doc in doc["trees"]:
        t, c = _decode_node(tree_doc, config.truncation)
        trees.append(t)
        gedts.append(GeDT(c, schema, config))
    prov = doc.get("provenance", {})
    forest = RandomForest(trees, [np.empty(0, dtype=np.intp) for _ in trees],
                          int(prov.get("mtry", 1)), int(prov.get("seed", 0)), schema)
    circuit = GeFPlus(gedts, schema, config)
    return TrainedModel(forest, circuit, prov)
