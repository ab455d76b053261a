"""Slow, obviously-correct reference implementations used to cross-check the
fast paths. They share no code with the modules they check."""
import itertools
import math

import numpy as np


def naive_matmul(A, B):
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    m, k = A.shape
    n = B.shape[1]
    C = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(A[i, p]) * float(B[p, j])
            C[i, j] = acc
    return C


def linear_scan_row_max(s):
    s = np.asarray(s, dtype=float)
    values, args = [], []
    for row in s:
        best, arg = row[0], 0
        for t in range(1, len(row)):
            if row[t] > best:
                best, arg = row[t], t
        values.append(best)
        args.append(arg)
    return np.array(values).reshape(-1, 1), args


def windowed_scan_pool(X, stride):
    X = np.asarray(X, dtype=float)
    out = []
    for start in range(0, len(X), stride):
        out.append([max(X[start:start + stride, c]) for c in range(X.shape[1])])
    return np.array(out)


def brute_force_average_precision(scores, positives):
    """AP from the definition: ranks by pairwise comparison (earlier index
    wins ties), then the mean over positives of precision at their rank."""
    scores = [float(s) for s in scores]
    positives = [bool(p) for p in positives]
    n = len(scores)
    rank = [1 + sum(1 for j in range(n) if scores[j] > scores[i] or (scores[j] == scores[i] and j < i))
            for i in range(n)]
    precisions = []
    for i in range(n):
        if positives[i]:
            hits = sum(1 for j in range(n) if positives[j] and rank[j] <= rank[i])
            precisions.append(hits / rank[i])
    return sum(precisions) / len(precisions)


def brute_force_map(scores, labels):
    scores, labels = np.asarray(scores), np.asarray(labels)
    aps = [brute_force_average_precision(scores[:, c], labels[:, c])
           for c in range(scores.shape[1]) if labels[:, c].any()]
    return sum(aps) / len(aps)


def all_permutations(T, limit=None, rng=None):
    """Every permutation of ``range(T)``, or ``limit`` sampled ones."""
    if limit is None or math.factorial(T) <= limit:
        return [list(p) for p in itertools.permutations(range(T))]
    rng = np.random.default_rng(0) if rng is None else rng
    return [list(rng.permutation(T)) for _ in range(limit)]
