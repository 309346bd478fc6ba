"""Shared test fixtures: fixed-table emitters and brute-force oracles."""

import itertools
import math

import numpy as np


class TableEmitter:
    """Emitter backed by a fixed (kmax, T) log-density table."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)
        self.calls = 0

    def log_emission_table(self, seq, kmax):
        self.calls += 1
        return self.table[:kmax, : seq.shape[1]]


def compositions(total, kmin, kmax):
    """All orderings of lengths in [kmin, kmax] that sum to total."""
    if total == 0:
        yield ()
        return
    for k in range(kmin, min(kmax, total) + 1):
        for rest in compositions(total - k, kmin, kmax):
            yield (k,) + rest


def enumerate_posterior(tables, params, n_frames):
    """Exact log weight of every (lengths, labels) segmentation.

    ``tables[c][j][t]`` is the log density of frame ``t`` at
    within-segment position ``j + 1`` under class ``c``.  Returns a dict
    keyed by (lengths, labels) plus the log marginal.
    """
    n_classes = params.n_classes
    outcomes = {}
    for lengths in compositions(n_frames, params.kmin, params.kmax):
        for labels in itertools.product(range(n_classes), repeat=len(lengths)):
            lw = 0.0
            start = 0
            prev = None
            for k, c in zip(lengths, labels):
                lw += params.duration_logpmf(k)
                for j in range(k):
                    lw += tables[c][j][start + j]
                if prev is None:
                    lw += -math.log(n_classes)
                else:
                    lw += params.transition_logprob(prev, c)
                prev = c
                start += k
            outcomes[(lengths, labels)] = lw
    peak = max(outcomes.values())
    log_marginal = peak + math.log(
        sum(math.exp(v - peak) for v in outcomes.values()))
    return outcomes, log_marginal


def segmentation_key(segments):
    return (tuple(s.length for s in segments),
            tuple(s.label for s in segments))
