"""Compiled inner loops for nearest-neighbor scans.

The k-smallest selection keeps (distance, reference id) order so results
are identical to a stable brute-force sort, including distance ties.
Distances may arrive without their query-constant term: selection is
invariant to per-query offsets.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def knn_class_counts(D, labels, k, n_classes, out):
    """Per row of D, add label counts of the k nearest references into out."""
    m, n = D.shape
    kk = k if k < n else n
    heap_d = np.empty(kk)
    heap_i = np.empty(kk, dtype=np.int64)
    for q in range(m):
        for t in range(kk):
            heap_d[t] = D[q, t]
            heap_i[t] = t
        wi = 0
        for t in range(1, kk):
            if heap_d[t] > heap_d[wi] or (heap_d[t] == heap_d[wi] and heap_i[t] > heap_i[wi]):
                wi = t
        wd = heap_d[wi]
        for r in range(kk, n):
            d = D[q, r]
            if d >= wd:
                # equal distance loses to the incumbent: its id is smaller
                continue
            heap_d[wi] = d
            heap_i[wi] = r
            wi = 0
            for t in range(1, kk):
                if heap_d[t] > heap_d[wi] or (heap_d[t] == heap_d[wi] and heap_i[t] > heap_i[wi]):
                    wi = t
            wd = heap_d[wi]
        for t in range(kk):
            out[q, labels[heap_i[t]]] += 1.0
    return out


@numba.njit(cache=True)
def knn_label_sums(D, values, k, out):
    """Per row of D, add the sum of the k nearest references' values into out."""
    m, n = D.shape
    kk = k if k < n else n
    heap_d = np.empty(kk)
    heap_i = np.empty(kk, dtype=np.int64)
    for q in range(m):
        for t in range(kk):
            heap_d[t] = D[q, t]
            heap_i[t] = t
        wi = 0
        for t in range(1, kk):
            if heap_d[t] > heap_d[wi] or (heap_d[t] == heap_d[wi] and heap_i[t] > heap_i[wi]):
                wi = t
        wd = heap_d[wi]
        for r in range(kk, n):
            d = D[q, r]
            if d >= wd:
                continue
            heap_d[wi] = d
            heap_i[wi] = r
            wi = 0
            for t in range(1, kk):
                if heap_d[t] > heap_d[wi] or (heap_d[t] == heap_d[wi] and heap_i[t] > heap_i[wi]):
                    wi = t
            wd = heap_d[wi]
        acc = 0.0
        for t in range(kk):
            acc += values[heap_i[t]]
        out[q] = acc
    return out
