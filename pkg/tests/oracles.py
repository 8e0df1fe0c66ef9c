"""Independent reference implementations used as test oracles.

Plain-Python loops on purpose: nothing here shares code with the package.
"""

import math


def compose_rows(table, entries, strategy, weights=None):
    """table: list of rows (lists of floats); entries: list of id tuples."""
    d = len(table[0])
    col_mean = [sum(row[c] for row in table) / len(table) for c in range(d)]
    out = []
    for j, ids in enumerate(entries):
        if not ids:
            out.append(list(col_mean))
        elif strategy == "first":
            out.append(list(table[ids[0]]))
        elif strategy == "last":
            out.append(list(table[ids[-1]]))
        elif strategy == "mean":
            out.append([sum(table[i][c] for i in ids) / len(ids) for c in range(d)])
        elif strategy == "weighted":
            w = weights[j]
            out.append([sum(w[m] * table[i][c] for m, i in enumerate(ids)) for c in range(d)])
        else:
            raise ValueError(strategy)
    return out


def pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    den = math.sqrt(sum((a - mx) ** 2 for a in x)) * math.sqrt(sum((b - my) ** 2 for b in y))
    return num / den


def ranks(x):
    """Average ranks by counting: rank = (#less) + (#equal + 1) / 2."""
    out = []
    for v in x:
        less = sum(1 for u in x if u < v)
        equal = sum(1 for u in x if u == v)
        out.append(less + (equal + 1) / 2)
    return out


def spearman(x, y):
    return pearson(ranks(x), ranks(y))


def matvec(M, v):
    return [sum(M[r][c] * v[c] for c in range(len(v))) for r in range(len(M))]


def encode_row(E, Wb, bb, W1, W2, ids, mask, output="final"):
    """One sentence through lookup, residual backbone, masked mean, two projections, L2 norm."""
    d = len(E[0])
    acc = [0.0] * d
    n = 0
    for t, tid in enumerate(ids):
        if not mask[t]:
            continue
        x = E[tid]
        h = list(x)
        if Wb is not None:
            wx = matvec(Wb, x)
            h = [x[c] + wx[c] + bb[c] for c in range(d)]
        acc = [acc[c] + h[c] for c in range(d)]
        n += 1
    p = [a / n for a in acc]
    z = p if output == "pre_dense" else matvec(W2, matvec(W1, p))
    norm = math.sqrt(sum(v * v for v in z))
    return [v / norm for v in z]
