"""Random forest: bagged CART trees with Gini splits over random feature subsets."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateDataset
from ..seeding import sub_seed

HEADER = "RFMODEL v1"


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    max_features: int | None = None  # default: floor(sqrt(n_features))
    min_samples_split: int = 2
    bootstrap: bool = True


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (nodes, classes) normalized class distribution

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r, n = rows[inner], node[inner]
            go_left = x[r, f[inner]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])


@dataclass
class RandomForestModel:
    classes: list
    n_features: int
    trees: list[Tree]
    params: ForestParams

    def predict_proba(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        acc = np.zeros((len(x), len(self.classes)))
        for tree in self.trees:
            acc += tree.value[tree.apply(x)]
        return acc / len(self.trees)

    def predict(self, x) -> list:
        # argmax picks the first maximum, i.e. the lowest class index on ties.
        return [self.classes[i] for i in np.argmax(self.predict_proba(x), axis=1)]

    # -- text serialization ---------------------------------------------
    def dumps(self) -> str:
        out = [HEADER, "classes " + json.dumps(self.classes), f"n_features {self.n_features}",
               "params " + json.dumps(self.params.__dict__), f"trees {len(self.trees)}"]
        for k, t in enumerate(self.trees):
            out.append(f"tree {k} nodes {len(t.feature)}")
            for i in range(len(t.feature)):
                vals = ",".join(repr(float(v)) for v in t.value[i])
                out.append(f"{i} {t.feature[i]} {float(t.threshold[i])!r} {t.left[i]} {t.right[i]} {vals}")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RandomForestModel":
        lines = text.splitlines()
        if not lines or lines[0] != HEADER:
            raise ValueError("not an RFMODEL v1 file")
        classes = json.loads(lines[1].split(" ", 1)[1])
        n_features = int(lines[2].split()[1])
        params = ForestParams(**json.loads(lines[3].split(" ", 1)[1]))
        n_trees = int(lines[4].split()[1])
        pos = 5
        trees = []
        for _ in range(n_trees):
            n_nodes = int(lines[pos].split()[3])
            rows = [lines[pos + 1 + i].split() for i in range(n_nodes)]
            pos += 1 + n_nodes
            trees.append(Tree(
                np.array([int(r[1]) for r in rows], dtype=np.int64),
                np.array([float(r[2]) for r in rows]),
                np.array([int(r[3]) for r in rows], dtype=np.int64),
                np.array([int(r[4]) for r in rows], dtype=np.int64),
                np.array([[float(v) for v in r[5].split(",")] for r in rows]).reshape(n_nodes, len(classes)),
            ))
        return cls(classes, n_features, trees, params)


def _best_split(x: np.ndarray, onehot: np.ndarray, feats: np.ndarray):
    """Best (score, feature, threshold) over ``feats``; score is the Gini
    proxy sum(left^2)/n_l + sum(right^2)/n_r (higher is better)."""
    xs = x[:, feats]
    order = np.argsort(xs, axis=0, kind="stable")
    sx = np.take_along_axis(xs, order, axis=0)
    cum = np.cumsum(onehot[order], axis=0)  # (n, m, classes)
    n = len(x)
    total = cum[-1]
    left = cum[:-1]
    right = total[None] - left
    nl = np.arange(1, n, dtype=float)[:, None]
    score = (left ** 2).sum(-1) / nl + (right ** 2).sum(-1) / (n - nl)
    valid = sx[1:] > sx[:-1]
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    pos, j = np.unravel_index(np.argmax(score.T), score.T.shape)[::-1]
    return score[pos, j], int(feats[j]), 0.5 * (sx[pos, j] + sx[pos + 1, j])


def _grow(x: np.ndarray, y: np.ndarray, n_classes: int, params: ForestParams, mtry: int,
          g: np.random.Generator) -> Tree:
    onehot = np.eye(n_classes)[y]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts = onehot[idx].sum(axis=0)
        value.append(counts / counts.sum())
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    n_feat = x.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        if (params.max_depth is not None and depth >= params.max_depth) or len(idx) < params.min_samples_split:
            continue
        if np.count_nonzero(value[node]) <= 1:
            continue
        perm = g.permutation(n_feat)
        best = None
        # Keep drawing features while no candidate separates the node.
        for k in range(0, n_feat, mtry):
            best = _best_split(x[idx], onehot[idx], perm[k:k + mtry])
            if best is not None:
                break
        if best is None:
            continue
        _, f, thr = best
        mask = x[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value))


def train_forest(x, labels, params: ForestParams | None = None, seed: int = 0) -> RandomForestModel:
    params = params or ForestParams()
    x = np.asarray(x, dtype=float)
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DegenerateDataset("training data holds a single class")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[c] for c in labels], dtype=np.int64)
    mtry = params.max_features or max(1, math.isqrt(x.shape[1]))
    trees = []
    for k in range(params.n_trees):
        g = np.random.default_rng(sub_seed(seed, "tree", k))
        rows = g.integers(0, len(y), len(y)) if params.bootstrap else np.arange(len(y))
        trees.append(_grow(x[rows], y[rows], len(classes), params, mtry, g))
    return RandomForestModel(classes, x.shape[1], trees, params)


def predict(model: RandomForestModel, x) -> tuple[object, np.ndarray]:
    """Label and class probabilities for one feature vector."""
    proba = model.predict_proba(np.asarray(x, dtype=float).reshape(1, -1))[0]
    return model.classes[int(np.argmax(proba))], proba
