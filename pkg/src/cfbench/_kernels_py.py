"""Pure numpy versions of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``CFBENCH_PURE_PYTHON=1`` is set. Signatures match the Cython module.
"""
import numpy as np
from scipy.stats import rankdata


def mlp_input_gradient(W1, b1, W2, b2, x, target):
    """Softmax scores and d(cross-entropy)/dx for a single input vector."""
    pre = x @ W1 + b1
    hidden = np.maximum(pre, 0.0)
    z = hidden @ W2 + b2
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    dz = p.copy()
    dz[target] -= 1.0
    dh = (W2 @ dz) * (pre > 0.0)
    return p, W1 @ dh


def rank_rows(values, eligible, higher_better):
    """Tie-averaged ranks per row; ineligible entries share the worst ranks."""
    values = np.asarray(values, dtype=float)
    eligible = np.asarray(eligible, dtype=bool)
    n_rows, k = values.shape
    out = np.empty((n_rows, k))
    for i in range(n_rows):
        ok = eligible[i]
        n_ok = int(ok.sum())
        if n_ok:
            key = -values[i, ok] if higher_better else values[i, ok]
            out[i, ok] = rankdata(key, method="average")
        if n_ok < k:
            out[i, ~ok] = (n_ok + 1 + k) / 2.0
    return out


TIE_EPS = 1e-12


def _weighted_gini(left, n_left, right, n_right, n_total):
    # n_l*(1 - sum (c/n_l)^2) = n_l - sum c^2 / n_l, with exact integer sums of squares
    sl = np.zeros(left.shape[0])
    sr = np.zeros(left.shape[0])
    for c in range(left.shape[1]):
        sl = sl + left[:, c] * left[:, c]
        sr = sr + right[:, c] * right[:, c]
    return (n_total - sl / n_left - sr / n_right) / n_total


def best_split(X, y, n_classes):
    """Exhaustive midpoint search for the split minimising weighted Gini.

    Returns ``(feature, threshold, weighted_gini)``; feature is -1 when no
    split separates any rows. A candidate must beat the incumbent by more
    than ``TIE_EPS``, so ties keep the lowest feature, then the lowest
    threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.intp)
    n, d = X.shape
    best = (-1, 0.0, np.inf)
    if n < 2:
        return best
    total = np.bincount(y, minlength=n_classes).astype(float)
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        col = X[order, f]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y[order]] = 1.0
        cum = np.cumsum(onehot, axis=0)
        pos = np.nonzero(col[:-1] < col[1:])[0]
        if pos.size == 0:
            continue
        left = cum[pos]
        right = total - left
        n_left = (pos + 1).astype(float)
        n_right = n - n_left
        w = _weighted_gini(left, n_left, right, n_right, float(n))
        for j in range(w.size):
            if w[j] < best[2] - TIE_EPS:
                a, b = col[pos[j]], col[pos[j] + 1]
                thr = (a + b) / 2.0
                if thr >= b:
                    thr = a
                best = (f, float(thr), float(w[j]))
    return best
