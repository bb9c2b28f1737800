"""Multi-output CART regression trees and bootstrap forests.

Splits are found by an exhaustive scan of every midpoint between consecutive
distinct feature values, minimizing the summed squared error over all
target columns. Ties go to the lowest feature index, then the lowest
threshold. Nodes are numbered in preorder (left subtree first).
"""
from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .._backend import njit, select
from .base import Decoder, Normalizer, header_args, register

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# feature subsampling RNG (splitmix64), identical on both backends


@njit
def _splitmix_nb(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


def _splitmix_py(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


@njit
def _choose_features_nb(p, k, state):
    feats = np.arange(p)
    for i in range(k):
        state, r = _splitmix_nb(state)
        j = i + np.int64(r % np.uint64(p - i))
        tmp = feats[i]
        feats[i] = feats[j]
        feats[j] = tmp
    return np.sort(feats[:k]), state


def _choose_features_py(p, k, state):
    feats = list(range(p))
    for i in range(k):
        state, r = _splitmix_py(state)
        j = i + r % (p - i)
        feats[i], feats[j] = feats[j], feats[i]
    return sorted(feats[:k]), state


# ---------------------------------------------------------------------------
# tree construction


@njit
def _is_constant_nb(Y, sample, seg):
    q = Y.shape[1]
    spread = 0.0
    scale = 0.0
    for j in range(q):
        lo = np.inf
        hi = -np.inf
        for pos in seg:
            v = Y[sample[pos], j]
            lo = min(lo, v)
            hi = max(hi, v)
        spread = max(spread, hi - lo)
        scale = max(scale, max(abs(lo), abs(hi)))
    return spread <= 1e-13 * scale


@njit
def _build_tree_nb(X, Y, sample, max_depth, min_leaf, max_features, seed):
    m = len(sample)
    p = X.shape[1]
    q = Y.shape[1]
    order = np.empty((p, m), dtype=np.int64)
    col = np.empty(m)
    for f in range(p):
        for i in range(m):
            col[i] = X[sample[i], f]
        order[f] = np.argsort(col, kind="mergesort")
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    depth_of = np.zeros(cap, dtype=np.int64)
    leaf_id = np.full(cap, -1, dtype=np.int64)
    leaf_start = np.empty(m, dtype=np.int64)
    leaf_end = np.empty(m, dtype=np.int64)
    n_leaves = 0
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    top = 1
    n_nodes = 1
    goes_left = np.zeros(m, dtype=np.bool_)
    buf = np.empty(m, dtype=np.int64)
    mean = np.empty(q)
    cum = np.empty(q)
    state = np.uint64(seed)
    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        cnt = end - start
        depth = depth_of[node]
        seg = order[0, start:end]
        mean[:] = 0.0
        for pos in seg:
            for j in range(q):
                mean[j] += Y[sample[pos], j]
        for j in range(q):
            mean[j] /= cnt
        # provisional leaf; undone below if the node splits
        leaf_id[node] = n_leaves
        leaf_start[n_leaves] = start
        leaf_end[n_leaves] = end
        n_leaves += 1
        if (max_depth >= 0 and depth >= max_depth) or cnt < 2 * min_leaf:
            continue
        if _is_constant_nb(Y, sample, seg):
            continue
        if max_features < p:
            feats, state = _choose_features_nb(p, max_features, state)
        else:
            feats = np.arange(p)
        best_score = 0.0
        best_f = -1
        best_i = -1
        for f in feats:
            cum[:] = 0.0
            for i in range(start, end - 1):
                row = sample[order[f, i]]
                for j in range(q):
                    cum[j] += Y[row, j] - mean[j]
                nl = i - start + 1
                nr = cnt - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                if X[sample[order[f, i + 1]], f] <= X[row, f]:
                    continue
                ss = 0.0
                for j in range(q):
                    ss += cum[j] * cum[j]
                score = ss * (cnt / (nl * nr))
                if score > best_score:
                    best_score = score
                    best_f = f
                    best_i = i
        if best_f < 0:
            continue
        n_leaves -= 1
        leaf_id[node] = -1
        xa = X[sample[order[best_f, best_i]], best_f]
        xb = X[sample[order[best_f, best_i + 1]], best_f]
        thr = 0.5 * (xa + xb)
        if thr >= xb:
            thr = xa
        for i in range(start, end):
            goes_left[order[best_f, i]] = i <= best_i
        nl = best_i - start + 1
        for f in range(p):
            a = 0
            b = nl
            for i in range(start, end):
                pos = order[f, i]
                if goes_left[pos]:
                    buf[a] = pos
                    a += 1
                else:
                    buf[b] = pos
                    b += 1
            for i in range(cnt):
                order[f, start + i] = buf[i]
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = thr
        left[node] = lnode
        right[node] = rnode
        depth_of[lnode] = depth + 1
        depth_of[rnode] = depth + 1
        # right pushed first so the left subtree is numbered first
        st_node[top] = rnode
        st_start[top] = start + nl
        st_end[top] = end
        top += 1
        st_node[top] = lnode
        st_start[top] = start
        st_end[top] = start + nl
        top += 1
    # leaf segments of order[0] are untouched once created
    value = np.zeros((n_leaves, q))
    for lf in range(n_leaves):
        for i in range(leaf_start[lf], leaf_end[lf]):
            row = sample[order[0, i]]
            for j in range(q):
                value[lf, j] += Y[row, j]
        for j in range(q):
            value[lf, j] /= leaf_end[lf] - leaf_start[lf]
    # renumber nodes into preorder; leaves were already visited in that order
    new_id = np.empty(n_nodes, dtype=np.int64)
    k = 0
    st_node[0] = 0
    top = 1
    while top > 0:
        top -= 1
        i = st_node[top]
        new_id[i] = k
        k += 1
        if feature[i] >= 0:
            st_node[top] = right[i]
            st_node[top + 1] = left[i]
            top += 2
    f2 = np.empty(n_nodes, dtype=np.int64)
    t2 = np.empty(n_nodes)
    l2 = np.empty(n_nodes, dtype=np.int64)
    r2 = np.empty(n_nodes, dtype=np.int64)
    id2 = np.empty(n_nodes, dtype=np.int64)
    d2 = np.empty(n_nodes, dtype=np.int64)
    for i in range(n_nodes):
        j = new_id[i]
        f2[j] = feature[i]
        t2[j] = threshold[i]
        l2[j] = new_id[left[i]] if left[i] >= 0 else -1
        r2[j] = new_id[right[i]] if right[i] >= 0 else -1
        id2[j] = leaf_id[i]
        d2[j] = depth_of[i]
    return f2, t2, l2, r2, id2, value, d2


def _build_tree_np(X, Y, sample, max_depth, min_leaf, max_features, seed):
    m, p = len(sample), X.shape[1]
    Xs, Ys = X[sample], Y[sample]
    feature, threshold, left, right, value, depth_of = [], [], [], [], [], []
    state = int(seed) & _MASK64

    def new_node(depth):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(None)
        depth_of.append(depth)
        return len(feature) - 1

    stack = [(new_node(0), np.arange(m))]
    while stack:
        node, pos = stack.pop()
        cnt = len(pos)
        depth = depth_of[node]
        Yn = Ys[pos]
        # sequential sums in feature-0 order, as in the compiled builder
        o0 = np.argsort(Xs[pos, 0], kind="stable")
        mean = np.cumsum(Yn[o0], axis=0)[-1] / cnt
        value[node] = mean
        if (max_depth >= 0 and depth >= max_depth) or cnt < 2 * min_leaf:
            continue
        lo, hi = Yn.min(axis=0), Yn.max(axis=0)
        if (hi - lo).max() <= 1e-13 * max(np.abs(lo).max(), np.abs(hi).max()):
            continue
        if max_features < p:
            feats, state = _choose_features_py(p, max_features, state)
        else:
            feats = range(p)
        best = (0.0, -1, -1, None)
        nl = np.arange(1, cnt)
        nr = cnt - nl
        valid_counts = (nl >= min_leaf) & (nr >= min_leaf)
        for f in feats:
            o = np.argsort(Xs[pos, f], kind="stable")
            xs = Xs[pos[o], f]
            cum = np.cumsum(Yn[o] - mean, axis=0)[:-1]
            ss = cum[:, 0] * cum[:, 0]
            for j in range(1, cum.shape[1]):
                ss = ss + cum[:, j] * cum[:, j]
            score = ss * (cnt / (nl * nr))
            ok = valid_counts & (xs[1:] > xs[:-1])
            if not ok.any():
                continue
            score = np.where(ok, score, -np.inf)
            i = int(np.argmax(score))
            if score[i] > best[0]:
                best = (score[i], f, i, o)
        _, f, i, o = best
        if f < 0:
            continue
        xa, xb = Xs[pos[o[i]], f], Xs[pos[o[i + 1]], f]
        thr = 0.5 * (xa + xb)
        if thr >= xb:
            thr = xa
        in_left = np.zeros(cnt, dtype=bool)
        in_left[o[: i + 1]] = True
        lnode, rnode = new_node(depth + 1), new_node(depth + 1)
        feature[node], threshold[node], left[node], right[node] = f, thr, lnode, rnode
        stack.append((rnode, pos[~in_left]))
        stack.append((lnode, pos[in_left]))
    # renumber into preorder (left subtree first), matching the compiled builder
    order, stack = [], [0]
    while stack:
        i = stack.pop()
        order.append(i)
        if feature[i] >= 0:
            stack.append(right[i])
            stack.append(left[i])
    new_id = {old: k for k, old in enumerate(order)}
    f_arr = np.array([feature[i] for i in order], dtype=np.int64)
    l_arr = np.array([new_id[left[i]] if left[i] >= 0 else -1 for i in order], dtype=np.int64)
    r_arr = np.array([new_id[right[i]] if right[i] >= 0 else -1 for i in order], dtype=np.int64)
    leaves = [i for i in order if feature[i] < 0]
    leaf_id = np.full(len(order), -1, dtype=np.int64)
    leaf_id[f_arr < 0] = np.arange(len(leaves))
    return (
        f_arr,
        np.array([threshold[i] for i in order]),
        l_arr,
        r_arr,
        leaf_id,
        np.array([value[i] for i in leaves]).reshape(len(leaves), Y.shape[1]),
        np.array([depth_of[i] for i in order], dtype=np.int64),
    )


build_tree_arrays = select(_build_tree_nb, _build_tree_np)


@njit
def _predict_tree_nb(feature, threshold, left, right, leaf_id, value, X):
    out = np.empty((X.shape[0], value.shape[1]))
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[leaf_id[node]]
    return out


def _predict_tree_np(feature, threshold, left, right, leaf_id, value, X):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        n = node[active]
        go_left = X[rows[active], feature[n]] <= threshold[n]
        node[active] = np.where(go_left, left[n], right[n])
        active = feature[node] >= 0
    return value[leaf_id[node]]


predict_tree_arrays = select(_predict_tree_nb, _predict_tree_np)


@dataclass(frozen=True, eq=False)
class TreeArrays:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_id: np.ndarray  # leaf number per node, -1 for internal nodes
    value: np.ndarray  # (n_leaves, n_out) leaf means in preorder
    depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return len(self.value)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def predict(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        return predict_tree_arrays(self.feature, self.threshold, self.left, self.right, self.leaf_id, self.value, X)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X), dtype=np.int64)
        for i, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = node
        return out

    def to_nested(self, node=0):
        if self.feature[node] < 0:
            return {"leaf": self.value[self.leaf_id[node]].tolist()}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "left": self.to_nested(int(self.left[node])),
            "right": self.to_nested(int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, root, n_out):
        feature, threshold, left, right, leaf_id, value, depth = [], [], [], [], [], [], []
        stack = [(root, -1, 0, 0)]
        while stack:
            obj, parent, side, d = stack.pop()
            k = len(feature)
            if parent >= 0:
                (left if side == 0 else right)[parent] = k
            depth.append(d)
            left.append(-1)
            right.append(-1)
            if "leaf" in obj:
                feature.append(-1)
                threshold.append(0.0)
                leaf_id.append(len(value))
                value.append(obj["leaf"])
            else:
                feature.append(obj["feature"])
                threshold.append(obj["threshold"])
                leaf_id.append(-1)
                stack.append((obj["right"], k, 1, d + 1))
                stack.append((obj["left"], k, 0, d + 1))
        return cls(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            np.array(leaf_id, dtype=np.int64),
            np.array(value, dtype=np.float64).reshape(-1, n_out),
            np.array(depth, dtype=np.int64),
        )


def build_tree(X, Y, sample=None, max_depth=None, min_samples_leaf=1, max_features=None, seed=0) -> TreeArrays:
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if sample is None:
        sample = np.arange(len(X), dtype=np.int64)
    if len(sample) < 2 * min_samples_leaf:
        raise ValueError(f"need at least {2 * min_samples_leaf} samples, got {len(sample)}")
    p = X.shape[1]
    mf = p if max_features is None else int(min(max(1, max_features), p))
    md = -1 if max_depth is None else int(max_depth)
    arrays = build_tree_arrays(X, Y, np.ascontiguousarray(sample, dtype=np.int64), md, int(min_samples_leaf), mf, int(seed) & _MASK64)
    return TreeArrays(*arrays)


class _NestedJSON:
    """Context manager raising the recursion limit for deep nested trees."""

    def __enter__(self):
        self.old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(self.old, 100000))

    def __exit__(self, *exc):
        sys.setrecursionlimit(self.old)


@register
class TreeDecoder(Decoder):
    variant = "tree"

    def __init__(self, tree: TreeArrays, **kw):
        super().__init__(**kw)
        self.tree = tree

    def _predict(self, X):
        return self.tree.predict(X)

    def predict_cost(self) -> float:
        return float(self.tree.max_depth)

    def _body(self):
        with _NestedJSON():
            return {"tree": self.tree.to_nested()}

    def dumps(self):
        with _NestedJSON():
            return super().dumps()

    @classmethod
    def _from_body(cls, header, body):
        return cls(TreeArrays.from_nested(body["tree"], header["n_out"]), **header_args(header))


@register
class ForestDecoder(Decoder):
    variant = "forest"

    def __init__(self, trees, **kw):
        super().__init__(**kw)
        self.trees = list(trees)

    def _predict(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        acc = self.trees[0].predict(X)
        for t in self.trees[1:]:
            acc = acc + t.predict(X)
        return acc / len(self.trees)

    def predict_cost(self) -> float:
        return float(sum(t.max_depth for t in self.trees))

    def _body(self):
        with _NestedJSON():
            return {"trees": [t.to_nested() for t in self.trees], "seed": self.hyper.get("seed")}

    def dumps(self):
        with _NestedJSON():
            return super().dumps()

    @classmethod
    def _from_body(cls, header, body):
        return cls([TreeArrays.from_nested(t, header["n_out"]) for t in body["trees"]], **header_args(header))


def _box(X):
    return X.min(axis=0), X.max(axis=0)


def fit_tree(dataset, max_depth=None, min_samples_leaf=1, seed=0, max_features=None) -> TreeDecoder:
    X, Y = dataset.inputs, dataset.targets
    tree = build_tree(X, Y, None, max_depth, min_samples_leaf, max_features, seed)
    hyper = {"max_depth": max_depth, "min_samples_leaf": int(min_samples_leaf), "seed": int(seed), "max_features": max_features}
    return TreeDecoder(
        tree,
        n_in=X.shape[1],
        n_out=Y.shape[1],
        hyper=hyper,
        normalizer=Normalizer.fit(X),
        box=_box(X),
        meta=dataset.provenance(),
    )


def bootstrap_sample(m, seed, index) -> np.ndarray:
    return np.random.default_rng([int(seed), int(index)]).integers(0, m, m)


def fit_forest(
    dataset, n_trees=50, max_depth=None, min_samples_leaf=1, seed=0, bootstrap=True, max_features=None, threads=None
) -> ForestDecoder:
    from ..pod import parallel_map

    X, Y = dataset.inputs, dataset.targets
    m = len(X)

    def one(t):
        sample = bootstrap_sample(m, seed, t) if bootstrap else None
        return build_tree(X, Y, sample, max_depth, min_samples_leaf, max_features, seed=(int(seed) << 20) + t)

    trees = parallel_map(one, range(n_trees), threads)
    hyper = {
        "n_trees": int(n_trees),
        "max_depth": max_depth,
        "min_samples_leaf": int(min_samples_leaf),
        "seed": int(seed),
        "bootstrap": bool(bootstrap),
        "max_features": max_features,
    }
    return ForestDecoder(
        trees,
        n_in=X.shape[1],
        n_out=Y.shape[1],
        hyper=hyper,
        normalizer=Normalizer.fit(X),
        box=_box(X),
        meta=dataset.provenance(),
    )
