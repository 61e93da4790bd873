"""Independent brute-force oracles shared by test modules."""

import itertools

import numpy as np


def collapse(path, blank):
    return tuple(k for k, _ in itertools.groupby(path) if k != blank)


def brute_force_ctc_logp(lp, label, blank):
    """Exhaustive sum over all alignments collapsing to the label."""
    t_len = lp.shape[0]
    width = lp.shape[1]
    label = tuple(label)
    total = -np.inf
    for path in itertools.product(range(width), repeat=t_len):
        if collapse(path, blank) == label:
            total = np.logaddexp(total, sum(lp[t, path[t]] for t in range(t_len)))
    return total


def exhaustive_ctc_marginals(lp, blank):
    """Map label sequence -> exact CTC marginal log-probability."""
    t_len, width = lp.shape
    out = {}
    for path in itertools.product(range(width), repeat=t_len):
        label = collapse(path, blank)
        logp = sum(lp[t, path[t]] for t in range(t_len))
        out[label] = np.logaddexp(out.get(label, -np.inf), logp)
    return out


def brute_force_edit_distance(ref_words, hyp_words):
    """Exhaustive recursion, no memoization; for lengths <= 5."""
    if not ref_words:
        return len(hyp_words)
    if not hyp_words:
        return len(ref_words)
    sub = brute_force_edit_distance(ref_words[1:], hyp_words[1:]) + (ref_words[0] != hyp_words[0])
    dele = brute_force_edit_distance(ref_words[1:], hyp_words) + 1
    ins = brute_force_edit_distance(ref_words, hyp_words[1:]) + 1
    return min(sub, dele, ins)
