"""Semi-Markov forward filtering and backward sampling over segments.

Conventions used throughout (0-based frame indices):

* a segment of length ``k`` ending at frame ``t`` covers frames
  ``t - k + 1 .. t``; frame ``t - k + tau`` carries within-segment
  position ``tau`` in ``1..k``, which is the regression input;
* segment lengths are restricted to ``[kmin, kmax]`` and weighted by the
  raw (untruncated, unrenormalized) Poisson pmf;
* the first segment of a sequence draws its class uniformly; there is
  no separate initial-state distribution;
* all lattice math is in the log domain with per-frame shift
  normalization, and the cumulative normalizers are stored so the total
  data log-likelihood is the final entry.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InfeasibleSequenceError",
    "HsmmParams",
    "Segment",
    "ForwardLattice",
    "forward_filter",
    "backward_sample",
]


class InfeasibleSequenceError(RuntimeError):
    """No segmentation with lengths in [kmin, kmax] tiles the sequence."""


def logsumexp(a: np.ndarray, axis=None):
    """Shift-stable log-sum-exp that maps all-(-inf) slices to -inf."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis))
    if axis is None:
        return float(out + shift.ravel()[0])
    return out + np.squeeze(shift, axis=axis)


@dataclass(frozen=True)
class Segment:
    """Half-open span [start, stop) carrying one class label."""

    start: int
    stop: int
    label: int

    @property
    def length(self) -> int:
        return self.stop - self.start


@dataclass
class HsmmParams:
    """Duration and transition state of the semi-Markov chain.

    ``transition_counts[c_prev, c]`` are realized segment transitions,
    ``class_counts[c]`` the number of segments currently assigned to
    each class (terminal segments included, hence row sums can fall
    short of the class count).
    """

    n_classes: int
    kmin: int
    kmax: int
    mean_length: float
    alpha: float = 1.0
    transition_counts: np.ndarray = None
    class_counts: np.ndarray = None

    def __post_init__(self):
        c = self.n_classes
        if c < 1:
            raise ValueError(f"n_classes must be >= 1, got {c}")
        if self.kmin < 1 or self.kmax < self.kmin:
            raise ValueError(
                f"need 1 <= kmin <= kmax, got kmin={self.kmin} kmax={self.kmax}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not (self.kmin <= self.mean_length <= self.kmax):
            warnings.warn(
                f"mean segment length {self.mean_length} lies outside "
                f"[kmin, kmax] = [{self.kmin}, {self.kmax}]",
                stacklevel=2)
        if self.transition_counts is None:
            self.transition_counts = np.zeros((c, c), dtype=np.int64)
        else:
            self.transition_counts = np.asarray(self.transition_counts, dtype=np.int64)
        if self.class_counts is None:
            self.class_counts = np.zeros(c, dtype=np.int64)
        else:
            self.class_counts = np.asarray(self.class_counts, dtype=np.int64)

    def duration_logpmf(self, k: int) -> float:
        """Raw Poisson log pmf of a segment length.

        The DP only evaluates lengths inside [kmin, kmax] and never
        renormalizes the truncated weights.
        """
        lam = self.mean_length
        return k * math.log(lam) - lam - math.lgamma(k + 1)

    def transition_logprob(self, c_prev: int, c: int) -> float:
        """Log of the smoothed transition probability c_prev -> c.

        Dirichlet-multinomial form ``(n_{c'c} + alpha) / (sum_c n_{c'c}
        + C alpha)``; rows normalize to one exactly.
        """
        row = self.transition_counts[c_prev]
        return math.log(row[c] + self.alpha) - math.log(
            row.sum() + self.n_classes * self.alpha)

    def log_transition_matrix(self) -> np.ndarray:
        """(C, C) matrix of transition_logprob values, rows = source class."""
        counts = self.transition_counts.astype(np.float64)
        row_tot = counts.sum(axis=1, keepdims=True) + self.n_classes * self.alpha
        return np.log(counts + self.alpha) - np.log(row_tot)

    def absorb_labels(self, labels) -> None:
        """Count one sequence's segment labels into the chain state."""
        labels = list(labels)
        for c in labels:
            self.class_counts[c] += 1
        for c_prev, c in zip(labels[:-1], labels[1:]):
            self.transition_counts[c_prev, c] += 1

    def release_labels(self, labels) -> None:
        """Inverse of :meth:`absorb_labels`."""
        labels = list(labels)
        for c in labels:
            self.class_counts[c] -= 1
        for c_prev, c in zip(labels[:-1], labels[1:]):
            self.transition_counts[c_prev, c] -= 1
        if (self.class_counts < 0).any() or (self.transition_counts < 0).any():
            raise ValueError("segment counts went negative (caller bookkeeping bug)")


@dataclass
class ForwardLattice:
    """Normalized forward log probabilities plus their normalizers.

    ``log_alpha[t, k - kmin, c]`` is the forward probability of a
    segment of length ``k`` with class ``c`` ending at frame ``t``,
    shifted so every reachable frame's slice log-sums to zero.
    ``log_norm[t]`` is the cumulative normalizer; its final entry is the
    total data log-likelihood.
    """

    log_alpha: np.ndarray
    log_norm: np.ndarray
    kmin: int
    kmax: int

    @property
    def n_frames(self) -> int:
        return self.log_alpha.shape[0]

    @property
    def total_loglik(self) -> float:
        return float(self.log_norm[-1])


def tileable(length: int, kmin: int, kmax: int) -> bool:
    """Whether some number of segments in [kmin, kmax] sums to length."""
    if length == 0:
        return True
    if length < kmin:
        return False
    n = -(-length // kmax)  # smallest segment count that can reach length
    return n * kmin <= length


def build_log_emission_tables(seq: np.ndarray, emitters, kmax: int) -> np.ndarray:
    """Stack per-class frame-density tables into a (C, kmax, T) array."""
    return np.stack([em.log_emission_table(seq, kmax) for em in emitters])


def _segment_score_table(emis: np.ndarray) -> np.ndarray:
    """Cumulative segment scores from a (C, kmax, T) frame table.

    Output ``[c, j, s]`` is the summed log density of the segment of
    length ``j + 1`` starting at frame ``s`` under class ``c`` (the
    running diagonal sums of the frame table).
    """
    n_classes, kmax, n_frames = emis.shape
    seg = np.full((n_classes, kmax, n_frames), -np.inf)
    seg[:, 0, :] = emis[:, 0, :]
    for j in range(1, kmax):
        seg[:, j, : n_frames - j] = seg[:, j - 1, : n_frames - j] + emis[:, j, j:]
    return seg


def forward_filter(seq: np.ndarray, emitters, params: HsmmParams,
                   timer=None) -> ForwardLattice:
    """Run the forward pass of the segment lattice for one sequence.

    ``emitters`` is one evaluator per class exposing
    ``log_emission_table(seq, kmax) -> (kmax, T)``.  Each (class,
    position, frame) density is evaluated exactly once; the per-cell
    work is table lookups plus one log-sum-exp over predecessor
    classes, amortized through a per-frame transition aggregate.
    """
    seq = np.asarray(seq, dtype=np.float64)
    n_frames = seq.shape[1]
    n_classes = params.n_classes
    if len(emitters) != n_classes:
        raise ValueError(f"expected {n_classes} emitters, got {len(emitters)}")
    if n_frames < params.kmin:
        raise InfeasibleSequenceError(
            f"sequence of {n_frames} frames is shorter than kmin={params.kmin}")
    kmin = params.kmin
    kmax = min(params.kmax, n_frames)
    n_k = kmax - kmin + 1

    if timer is not None:
        with timer.phase("emission"):
            emis = build_log_emission_tables(seq, emitters, kmax)
    else:
        emis = build_log_emission_tables(seq, emitters, kmax)

    with timer.phase("dp") if timer is not None else _null_context():
        seg = _segment_score_table(emis)
        log_dur = np.array([params.duration_logpmf(k) for k in range(kmin, kmax + 1)])
        log_trans = params.log_transition_matrix()
        log_init = -math.log(n_classes)

        log_alpha = np.full((n_frames, n_k, n_classes), -np.inf)
        log_norm = np.full(n_frames, -np.inf)
        # trans_in[t, c]: unnormalized log mass entering class c after a
        # segment boundary at frame t (cumulative normalizer folded in)
        trans_in = np.full((n_frames, n_classes), -np.inf)

        for t in range(n_frames):
            hi = min(kmax, t + 1)
            if hi < kmin:
                continue
            ks = np.arange(kmin, hi + 1)
            starts = t - ks + 1
            seg_scores = seg[:, ks - 1, starts].T  # (n_ks, C)
            prev = np.where((starts == 0)[:, None], log_init,
                            trans_in[np.maximum(starts - 1, 0)])
            row = seg_scores + log_dur[ks - kmin][:, None] + prev
            row_max = row.max()
            if row_max == -np.inf:
                continue
            log_norm[t] = row_max + math.log(np.sum(np.exp(row - row_max)))
            log_alpha[t, ks - kmin, :] = row - log_norm[t]
            ending = logsumexp(log_alpha[t], axis=0)  # (C,) mass per ending class
            trans_in[t] = log_norm[t] + logsumexp(log_trans + ending[:, None], axis=0)

    if not np.isfinite(log_norm[-1]):
        raise InfeasibleSequenceError(
            f"no segmentation of {n_frames} frames into lengths within "
            f"[{params.kmin}, {params.kmax}] exists")
    return ForwardLattice(log_alpha=log_alpha, log_norm=log_norm,
                          kmin=kmin, kmax=kmax)


class _null_context:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def backward_sample(lattice: ForwardLattice, params: HsmmParams,
                    rng: np.random.Generator) -> list[Segment]:
    """Sample one segmentation from the lattice, in reverse time order.

    At the sequence end the (length, class) cell is drawn from the
    normalized lattice slice; at interior boundaries each candidate
    class c is additionally weighted by the transition probability from
    c to the previously sampled (later-in-time) class.  Returns the
    spans in forward order; they tile [0, T) exactly.
    """
    n_frames = lattice.n_frames
    n_classes = params.n_classes
    log_trans = params.log_transition_matrix()
    segments: list[Segment] = []
    t = n_frames - 1
    next_label = None
    while t >= 0:
        weights = lattice.log_alpha[t].copy()
        if next_label is not None:
            weights += log_trans[:, next_label][np.newaxis, :]
        w_max = weights.max()
        if w_max == -np.inf:
            raise InfeasibleSequenceError(
                f"backward sampling reached an unreachable frame {t}")
        probs = np.exp(weights.ravel() - w_max)
        probs /= probs.sum()
        idx = rng.choice(probs.size, p=probs)
        k = lattice.kmin + idx // n_classes
        label = idx % n_classes
        start = t - k + 1
        segments.append(Segment(start=start, stop=t + 1, label=int(label)))
        next_label = int(label)
        t = start - 1
    segments.reverse()
    return segments
