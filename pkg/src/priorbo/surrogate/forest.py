"""Random-forest regressor and feasibility classifier.

Trees pick the split feature and position by variance reduction, then draw
the actual threshold uniformly between the two neighbouring sorted values.
With bagging off the only randomness is the feature subsample and the
threshold draw, both seeded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-6


@dataclass
class Tree:
    feature: np.ndarray     # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # leaf mean
    variance: np.ndarray    # leaf within-variance

    def leaf_index(self, X):
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            f = self.feature[node[idx]]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return node

    def predict(self, X):
        leaf = self.leaf_index(X)
        return self.value[leaf], self.variance[leaf]


def _best_split(X, y, features):
    """Best (feature, sorted position) by variance reduction, or None."""
    n = len(y)
    best = None
    best_score = 0.0
    total = ((y - y.mean()) ** 2).sum()
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        valid = np.flatnonzero(xs[1:] > xs[:-1])    # split between i and i+1
        if valid.size == 0:
            continue
        csum = np.cumsum(ys)
        csq = np.cumsum(ys**2)
        nl = np.arange(1, n)
        sl, ql = csum[:-1], csq[:-1]
        sr, qr = csum[-1] - sl, csq[-1] - ql
        nr = n - nl
        sse = (ql - sl**2 / nl) + (qr - sr**2 / nr)
        gain = total - sse[valid]
        i = int(np.argmax(gain))
        if gain[i] > best_score + 1e-12 * max(total, 1e-300):
            best_score = gain[i]
            pos = valid[i]
            best = (f, xs[pos], xs[pos + 1])
    return best


def build_tree(X, y, rng, max_features: float = 0.5, min_samples_split: int = 5) -> Tree:
    n, d = X.shape
    n_feat = max(1, int(max_features * d))
    feature, threshold, left, right, value, variance = [], [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1),
                       (value, 0.0), (variance, 0.0)):
            lst.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        ys = y[idx]
        value[node] = float(ys.mean())
        variance[node] = float(ys.var())
        if len(idx) < min_samples_split or np.ptp(ys) == 0:
            continue
        feats = rng.choice(d, size=n_feat, replace=False)
        split = _best_split(X[idx], ys, feats)
        if split is None:
            continue
        f, lo, hi = split
        thr = float(rng.uniform(lo, hi))
        if not lo <= thr < hi:
            thr = float(lo)
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = int(f), thr
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], idx[~mask]))
        stack.append((left[node], idx[mask]))

    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                np.array(value), np.array(variance))


@dataclass
class RfFit:
    trees: list

    def predict(self, U):
        """Ensemble mean and law-of-total-variance standard deviation."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        means, variances = zip(*(t.predict(U) for t in self.trees))
        means = np.array(means)
        variances = np.array(variances)
        mu = means.mean(0)
        var = means.var(0) + variances.mean(0)
        return mu, np.maximum(np.sqrt(var), SIGMA_FLOOR)


def fit_rf(X, y, rng: np.random.Generator, n_trees: int = 10, max_features: float = 0.5,
           min_samples_split: int = 5) -> RfFit:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < 2:
        raise ValueError("random forest needs at least 2 observations")
    seeds = rng.integers(0, 2**63 - 1, size=n_trees)
    trees = [build_tree(X, y, np.random.default_rng(int(s)), max_features, min_samples_split)
             for s in seeds]
    return RfFit(trees)


@dataclass
class FeasibilityFit:
    trees: list
    constant: float | None = None

    def feasible_prob(self, U):
        """Fraction of trees voting feasible."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.constant is not None:
            return np.full(U.shape[0], self.constant)
        votes = np.array([t.predict(U)[0] >= 0.5 for t in self.trees], dtype=float)
        return votes.mean(0)


def fit_feasibility(X, feasible, rng: np.random.Generator, n_trees: int = 10,
                    max_features: float = 0.5) -> FeasibilityFit:
    """Bootstrapped classification forest; constant 1 until both classes are seen."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(feasible, dtype=float).ravel()
    if z.size == 0 or z.min() == z.max():
        return FeasibilityFit([], constant=1.0)
    n = len(z)
    trees = []
    for s in rng.integers(0, 2**63 - 1, size=n_trees):
        trng = np.random.default_rng(int(s))
        idx = trng.integers(0, n, size=n)
        trees.append(build_tree(X[idx], z[idx], trng, max_features, min_samples_split=2))
    return FeasibilityFit(trees)
