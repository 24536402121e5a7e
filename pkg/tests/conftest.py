import itertools

import numpy as np
import pytest


def brute_force_assignment(w):
    """Max weight over all n! permutations; lexicographically smallest argmax."""
    w = np.asarray(w)
    n = w.shape[0]
    best, best_perm = None, None
    for perm in itertools.permutations(range(n)):
        total = sum(w[i, perm[i]] for i in range(n))
        if best is None or total > best:
            best, best_perm = total, perm
    return best_perm, best


def brute_force_has_matching(mask):
    """Augmenting-path (Kuhn) bipartite matcher, independent of the assignment solver."""
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[0]
    owner = [-1] * n

    def augment(r, seen):
        for c in range(n):
            if mask[r, c] and not seen[c]:
                seen[c] = True
                if owner[c] == -1 or augment(owner[c], seen):
                    owner[c] = r
                    return True
        return False

    return all(augment(r, [False] * n) for r in range(n))


def sinkhorn_oracle(a, epsilon, tol):
    """Plain-Python alternating normalization, rows then columns."""
    pad = epsilon * max(max(r) for r in a)
    x = [[float(v) + pad for v in row] for row in a]
    n = len(x)
    while True:
        x = [[v / sum(row) for v in row] for row in x]
        cols = [sum(x[i][j] for i in range(n)) for j in range(n)]
        x = [[x[i][j] / cols[j] for j in range(n)] for i in range(n)]
        if max(abs(sum(row) - 1) for row in x) <= tol:
            return np.array(x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
