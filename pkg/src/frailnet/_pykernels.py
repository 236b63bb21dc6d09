"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np

_BLOCK = 512


def risk_logsumexp(eta_sorted, starts):
    """log sum exp(eta) over every suffix ``eta_sorted[starts[k]:]``."""
    eta_sorted = np.asarray(eta_sorted, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size == 0:
        return np.empty(0)
    suffix = np.logaddexp.accumulate(eta_sorted[::-1])[::-1]
    return suffix[starts].copy()


def pair_counts(time, event, score, group, n_groups):
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event, dtype=np.int64)
    score = np.asarray(score, dtype=np.float64)
    group = np.asarray(group, dtype=np.int64)

    wc = np.zeros(n_groups, dtype=np.float64)
    wn = np.zeros(n_groups, dtype=np.int64)
    bc = 0.0
    bn = 0
    rows = np.flatnonzero(event != 0)
    for lo in range(0, rows.size, _BLOCK):
        idx = rows[lo:lo + _BLOCK]
        comp = time[idx, None] < time[None, :]
        conc = np.where(score[idx, None] > score[None, :], 1.0,
                        np.where(score[idx, None] == score[None, :], 0.5, 0.0))
        conc = conc * comp
        same = group[idx, None] == group[None, :]
        gi = group[idx]
        wc += np.bincount(gi, weights=(conc * same).sum(axis=1), minlength=n_groups)
        wn += np.bincount(gi, weights=(comp & same).sum(axis=1), minlength=n_groups).astype(np.int64)
        bc += float((conc * ~same).sum())
        bn += int((comp & ~same).sum())
    return wc, wn, bc, bn
