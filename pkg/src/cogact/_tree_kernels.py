"""Numba kernels for level-wise exact greedy tree growth.

Layout conventions shared by the kernels:

* ``gh[i, c, 0/1]``: gradient / hessian of sample ``i`` for output ``c``.
* ``pos[i, c]``: frontier slot of sample ``i`` in the tree being grown for
  output ``c``; -1 once the sample sits in a finished leaf.
* Per feature ``f``, ``order[starts[f]:starts[f+1]]`` lists the non-missing
  samples sorted by value (``svals`` holds the matching values) and
  ``miss[mstarts[f]:mstarts[f+1]]`` lists the samples where it is NaN.

All kernels release the GIL so folds can run on threads.
"""
import numba as nb
import numpy as np

TIE_RTOL = 1e-11


@nb.njit(cache=True, nogil=True)
def node_totals(gh, pos, n_slots):
    n, K = pos.shape
    G = np.zeros((K, n_slots))
    H = np.zeros((K, n_slots))
    for i in range(n):
        for c in range(K):
            s = pos[i, c]
            if s >= 0:
                G[c, s] += gh[i, c, 0]
                H[c, s] += gh[i, c, 1]
    return G, H


@nb.njit(cache=True, nogil=True)
def find_splits(svals, order, starts, miss, mstarts, gh, pos, G, H, lam, mcw,
                best_score, best_feat, best_thr, best_left_missing, best_hl, best_has_missing):
    """Best split per (output, slot) over all features.

    A candidate threshold ``v`` sends ``x < v`` left. For nodes with missing
    values both default directions are scored; ties keep the earliest
    candidate (lowest feature, then lowest threshold, missing-right first).
    ``best_score`` must be pre-filled with the score a split has to beat.
    A candidate wins only if it beats the incumbent by a relative margin of
    ``TIE_RTOL``, so splits whose scores differ by rounding alone count as
    ties and keep the earlier one.
    """
    K, S = G.shape
    F = starts.shape[0] - 1
    accg = np.empty((K, S))
    acch = np.empty((K, S))
    last = np.empty((K, S))
    seen = np.empty((K, S), dtype=np.bool_)
    mg = np.empty((K, S))
    mh = np.empty((K, S))
    mc = np.empty((K, S), dtype=np.int64)
    for f in range(F):
        accg[:] = 0.0
        acch[:] = 0.0
        seen[:] = False
        mg[:] = 0.0
        mh[:] = 0.0
        mc[:] = 0
        for k in range(mstarts[f], mstarts[f + 1]):
            i = miss[k]
            for c in range(K):
                s = pos[i, c]
                if s >= 0:
                    mg[c, s] += gh[i, c, 0]
                    mh[c, s] += gh[i, c, 1]
                    mc[c, s] += 1
        for k in range(starts[f], starts[f + 1]):
            i = order[k]
            v = svals[k]
            for c in range(K):
                s = pos[i, c]
                if s < 0:
                    continue
                if seen[c, s] and v != last[c, s]:
                    gl = accg[c, s]
                    hl = acch[c, s]
                    Gt = G[c, s]
                    Ht = H[c, s]
                    hr = Ht - hl
                    if hl >= mcw and hr >= mcw:
                        gr = Gt - gl
                        sc = gl * gl / (hl + lam) + gr * gr / (hr + lam)
                        if sc > best_score[c, s] + TIE_RTOL * abs(best_score[c, s]):
                            best_score[c, s] = sc
                            best_feat[c, s] = f
                            best_thr[c, s] = v
                            best_left_missing[c, s] = False
                            best_hl[c, s] = hl
                            best_has_missing[c, s] = mc[c, s] > 0
                    if mc[c, s] > 0:
                        gl2 = gl + mg[c, s]
                        hl2 = hl + mh[c, s]
                        hr2 = Ht - hl2
                        if hl2 >= mcw and hr2 >= mcw:
                            gr2 = Gt - gl2
                            sc2 = gl2 * gl2 / (hl2 + lam) + gr2 * gr2 / (hr2 + lam)
                            if sc2 > best_score[c, s] + TIE_RTOL * abs(best_score[c, s]):
                                best_score[c, s] = sc2
                                best_feat[c, s] = f
                                best_thr[c, s] = v
                                best_left_missing[c, s] = True
                                best_hl[c, s] = hl2
                                best_has_missing[c, s] = True
                accg[c, s] += gh[i, c, 0]
                acch[c, s] = acch[c, s] + gh[i, c, 1]
                last[c, s] = v
                seen[c, s] = True


@nb.njit(cache=True, nogil=True)
def advance(X, pos, split_feat, split_thr, split_left, child_slot):
    """Move samples one level down; samples reaching a leaf get slot -1."""
    n, K = pos.shape
    for i in range(n):
        for c in range(K):
            s = pos[i, c]
            if s < 0:
                continue
            f = split_feat[c, s]
            if f < 0:
                pos[i, c] = -1
                continue
            x = X[i, f]
            if np.isnan(x):
                go_left = split_left[c, s]
            else:
                go_left = x < split_thr[c, s]
            pos[i, c] = child_slot[c, s] if go_left else child_slot[c, s] + 1


@nb.njit(cache=True, nogil=True)
def predict_trees(X, feat, thr, left_missing, left, right, value, tree_out, out):
    """Add the outputs of packed trees to ``out[i, tree_out[t]]``."""
    n = X.shape[0]
    T = feat.shape[0]
    for i in range(n):
        for t in range(T):
            node = 0
            while feat[t, node] >= 0:
                x = X[i, feat[t, node]]
                if np.isnan(x):
                    go_left = left_missing[t, node]
                else:
                    go_left = x < thr[t, node]
                node = left[t, node] if go_left else right[t, node]
            out[i, tree_out[t]] += value[t, node]
