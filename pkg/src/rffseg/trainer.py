"""Blocked Gibbs sampler orchestrating segmentation training.

One sweep removes a sequence's segments from the shared class models,
resamples its segmentation by forward filtering / backward sampling
against all other sequences' assignments, and absorbs the new segments
back.  Emission models are pluggable: the random-feature regression
backend ("rff") or the exact Gaussian-process baseline ("exact-gp").
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .blr import ClassModel
from .exact_gp import GpClassData
from .features import FeatureBank, sample_feature_bank
from .hsmm import (
    HsmmParams,
    InfeasibleSequenceError,
    Segment,
    backward_sample,
    forward_filter,
    tileable,
)

__all__ = [
    "ConfigError",
    "AuditError",
    "TrainerConfig",
    "TrainerState",
    "SegmentationResult",
    "initialize",
    "gibbs_sweep",
    "train",
    "train_with_restarts",
]

BACKENDS = ("rff", "exact-gp")

PHASES = ("emission", "dp", "stats", "posterior")


class ConfigError(ValueError):
    """A run configuration field (or pair of fields) is invalid."""


class AuditError(RuntimeError):
    """Incremental statistics diverged from batch recomputation."""


@dataclass
class TrainerConfig:
    """Model and sampler settings for one training run."""

    n_classes: int
    backend: str = "rff"
    n_features: int = 20
    lengthscale: float = 1.0
    beta: float = 10.0
    psi: float = 1.0
    kmin: int = 15
    kmax: int = 30
    mean_length: float = 20.0
    alpha: float = 1.0
    iterations: int = 5
    restarts: int = 1
    seed: int = 0
    audit: bool = False
    shuffle_sequences: bool = False

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.n_classes < 1:
            raise ConfigError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.n_features < 1:
            raise ConfigError(f"n_features must be >= 1, got {self.n_features}")
        if self.lengthscale <= 0:
            raise ConfigError(f"lengthscale must be > 0, got {self.lengthscale}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.psi <= 0:
            raise ConfigError(f"psi must be > 0, got {self.psi}")
        if self.kmin < 1:
            raise ConfigError(f"kmin must be >= 1, got {self.kmin}")
        if self.kmin > self.kmax:
            raise ConfigError(
                f"kmin must not exceed kmax, got kmin={self.kmin} kmax={self.kmax}")
        if self.mean_length <= 0:
            raise ConfigError(f"mean_length must be > 0, got {self.mean_length}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be >= 1, got {self.restarts}")


class PhaseTimer:
    """Wall-clock accumulator for the training phases."""

    def __init__(self):
        self.totals = {name: 0.0 for name in PHASES}

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - t0


class _BoundRffEmitter:
    """ClassModel bound to its feature bank behind the emitter protocol."""

    def __init__(self, model: ClassModel, bank: FeatureBank):
        self.model = model
        self.bank = bank

    def logpdf(self, tau, x):
        return self.model.predictive_logpdf(self.bank, tau, x)

    def log_emission_table(self, seq, kmax):
        return self.model.log_emission_table(self.bank, seq, kmax)


class RffEmissions:
    """Incremental random-feature regression models, one per class."""

    backend_name = "rff"

    def __init__(self, bank: FeatureBank, n_classes: int, n_dims: int,
                 beta: float, psi: float):
        self.bank = bank
        self.class_models = [
            ClassModel(c, n_dims, bank.n_features, beta=beta, psi=psi)
            for c in range(n_classes)
        ]

    def add(self, label: int, key, segment: np.ndarray) -> None:
        self.class_models[label].add_segment(self.bank, segment)

    def remove(self, label: int, key, segment: np.ndarray) -> None:
        self.class_models[label].remove_segment(self.bank, segment)

    def refresh(self) -> None:
        for model in self.class_models:
            model.refresh()

    def emitters(self):
        return [_BoundRffEmitter(m, self.bank) for m in self.class_models]

    def audit_deviation(self, sequences, assignments) -> float:
        """Max-abs gap between incremental stats and a batch rebuild."""
        fresh = RffEmissions(self.bank, len(self.class_models),
                             self.class_models[0].n_dims,
                             self.class_models[0].beta, self.class_models[0].psi)
        _replay_assignments(fresh, sequences, assignments)
        worst = 0.0
        for cur, ref in zip(self.class_models, fresh.class_models):
            if cur.n_points != ref.n_points:
                raise AuditError(
                    f"class {cur.class_id}: n_points {cur.n_points} != "
                    f"batch value {ref.n_points}")
            for st_cur, st_ref in zip(cur.stats, ref.stats):
                worst = max(worst,
                            np.max(np.abs(st_cur.precision - st_ref.precision)),
                            np.max(np.abs(st_cur.proj - st_ref.proj)))
        return worst


class ExactGpEmissions:
    """Pooled-point Gaussian-process models, one per class.

    Segments are tracked as keyed blocks so removal restores the exact
    point set; any change triggers a full Gram rebuild at the next
    refresh.
    """

    backend_name = "exact-gp"

    def __init__(self, n_classes: int, n_dims: int, beta: float,
                 lengthscale: float):
        self.class_models = [
            GpClassData(n_dims, beta=beta, lengthscale=lengthscale)
            for _ in range(n_classes)
        ]
        self.blocks = [dict() for _ in range(n_classes)]
        self._dirty = [True] * n_classes

    def add(self, label: int, key, segment: np.ndarray) -> None:
        if key in self.blocks[label]:
            raise ValueError(f"duplicate segment key {key} in class {label}")
        self.blocks[label][key] = np.asarray(segment, dtype=np.float64)
        self._dirty[label] = True

    def remove(self, label: int, key, segment: np.ndarray) -> None:
        del self.blocks[label][key]
        self._dirty[label] = True

    def refresh(self) -> None:
        for c, data in enumerate(self.class_models):
            if not self._dirty[c]:
                continue
            taus, values = self._pooled(c)
            data.set_points(taus, values)
            data.refresh()
            self._dirty[c] = False

    def _pooled(self, label: int):
        blocks = list(self.blocks[label].values())
        if not blocks:
            return np.zeros(0), np.zeros((0, self.class_models[label].n_dims))
        taus = np.concatenate([np.arange(1, b.shape[1] + 1, dtype=np.float64)
                               for b in blocks])
        values = np.vstack([b.T for b in blocks])
        return taus, values

    def emitters(self):
        return self.class_models

    def audit_deviation(self, sequences, assignments) -> float:
        expected = [dict() for _ in self.class_models]
        for seq_idx, segs in enumerate(assignments):
            for seg in segs:
                expected[seg.label][(seq_idx, seg.start, seg.stop)] = \
                    sequences[seq_idx][:, seg.start:seg.stop]
        for c, (have, want) in enumerate(zip(self.blocks, expected)):
            if set(have) != set(want):
                raise AuditError(
                    f"class {c}: tracked segment keys diverge from assignments")
            for key in have:
                if not np.array_equal(have[key], want[key]):
                    raise AuditError(f"class {c}: segment {key} payload diverges")
        return 0.0


def _replay_assignments(emissions, sequences, assignments) -> None:
    for seq_idx, segs in enumerate(assignments):
        for seg in segs:
            emissions.add(seg.label, (seq_idx, seg.start, seg.stop),
                          sequences[seq_idx][:, seg.start:seg.stop])


@dataclass
class TrainerState:
    """Everything a sweep needs: data, models, counts, and randomness."""

    config: TrainerConfig
    sequences: list
    bank: FeatureBank
    hsmm: HsmmParams
    emissions: object
    assignments: list
    iteration: int = 0
    loglik_trace: list = field(default_factory=list)
    rng_seed: int = 0
    rng: np.random.Generator = None
    timer: PhaseTimer = field(default_factory=PhaseTimer)

    @property
    def class_models(self):
        return self.emissions.class_models

    def audit(self) -> None:
        """Cross-check incremental state against batch recomputation."""
        deviation = self.emissions.audit_deviation(self.sequences, self.assignments)
        if deviation > 1e-6:
            raise AuditError(
                f"sufficient statistics drifted {deviation:.3e} from batch rebuild")
        trans = np.zeros_like(self.hsmm.transition_counts)
        counts = np.zeros_like(self.hsmm.class_counts)
        for segs in self.assignments:
            for seg in segs:
                counts[seg.label] += 1
            for prev, cur in zip(segs[:-1], segs[1:]):
                trans[prev.label, cur.label] += 1
        if not np.array_equal(trans, self.hsmm.transition_counts):
            raise AuditError("transition counts diverge from assignments")
        if not np.array_equal(counts, self.hsmm.class_counts):
            raise AuditError("class counts diverge from assignments")


@dataclass
class SegmentationResult:
    """Final labels plus everything needed to reproduce and inspect a run."""

    labels: list
    spans: list
    loglik_trace: list
    timings: dict
    config: TrainerConfig
    state: TrainerState = field(repr=False, default=None)
    restart_logliks: list = None
    restart_seeds: list = None

    @property
    def final_loglik(self) -> float:
        return self.loglik_trace[-1] if self.loglik_trace else float("-inf")


def _random_spans(n_frames: int, kmin: int, kmax: int,
                  rng: np.random.Generator) -> list[tuple[int, int]]:
    """Cut [0, n_frames) into uniform-random lengths within [kmin, kmax].

    Each draw is uniform over the lengths that keep the remainder
    tileable, so no repair pass is needed afterwards.
    """
    spans = []
    pos = 0
    remaining = n_frames
    while remaining > 0:
        choices = [k for k in range(kmin, min(kmax, remaining) + 1)
                   if tileable(remaining - k, kmin, kmax)]
        k = int(rng.choice(choices))
        spans.append((pos, pos + k))
        pos += k
        remaining -= k
    return spans


def initialize(sequences, config: TrainerConfig, seed: int | None = None) -> TrainerState:
    """Randomly segment all sequences and build the initial statistics."""
    config.validate()
    sequences = [np.asarray(s, dtype=np.float64) for s in sequences]
    if not sequences:
        raise ConfigError("at least one sequence is required")
    n_dims = sequences[0].shape[0]
    for i, s in enumerate(sequences):
        if s.ndim != 2 or s.shape[0] != n_dims:
            raise ConfigError(
                f"sequence {i} must be (n_dims, T) with n_dims={n_dims}, "
                f"got shape {s.shape}")
    bad = [i for i, s in enumerate(sequences)
           if not tileable(s.shape[1], config.kmin, config.kmax)]
    if bad:
        raise InfeasibleSequenceError(
            f"sequences {bad} cannot be tiled with lengths in "
            f"[{config.kmin}, {config.kmax}]")

    if seed is None:
        seed = config.seed
    ss = np.random.SeedSequence(seed)
    bank_ss, gibbs_ss = ss.spawn(2)
    bank_seed = int(bank_ss.generate_state(1, dtype=np.uint64)[0])
    bank = sample_feature_bank(config.n_features, config.lengthscale, bank_seed)
    rng = np.random.default_rng(gibbs_ss)

    hsmm = HsmmParams(n_classes=config.n_classes, kmin=config.kmin,
                      kmax=config.kmax, mean_length=config.mean_length,
                      alpha=config.alpha)
    if config.backend == "rff":
        emissions = RffEmissions(bank, config.n_classes, n_dims,
                                 config.beta, config.psi)
    else:
        emissions = ExactGpEmissions(config.n_classes, n_dims,
                                     config.beta, config.lengthscale)

    state = TrainerState(config=config, sequences=sequences, bank=bank,
                         hsmm=hsmm, emissions=emissions, assignments=[],
                         rng_seed=seed, rng=rng)
    with state.timer.phase("stats"):
        for seq_idx, seq in enumerate(sequences):
            spans = _random_spans(seq.shape[1], config.kmin, config.kmax, rng)
            labels = rng.integers(0, config.n_classes, size=len(spans))
            segs = [Segment(start=a, stop=b, label=int(c))
                    for (a, b), c in zip(spans, labels)]
            state.assignments.append(segs)
            for seg in segs:
                emissions.add(seg.label, (seq_idx, seg.start, seg.stop),
                              seq[:, seg.start:seg.stop])
            hsmm.absorb_labels([seg.label for seg in segs])
    return state


def gibbs_sweep(state: TrainerState) -> TrainerState:
    """Resample every sequence's segmentation once, in place."""
    config = state.config
    order = np.arange(len(state.sequences))
    if config.shuffle_sequences:
        state.rng.shuffle(order)
    sweep_loglik = 0.0
    for seq_idx in order:
        seq_idx = int(seq_idx)
        seq = state.sequences[seq_idx]
        old = state.assignments[seq_idx]
        with state.timer.phase("stats"):
            for seg in old:
                state.emissions.remove(seg.label, (seq_idx, seg.start, seg.stop),
                                       seq[:, seg.start:seg.stop])
            state.hsmm.release_labels([seg.label for seg in old])
        with state.timer.phase("posterior"):
            state.emissions.refresh()
        lattice = forward_filter(seq, state.emissions.emitters(), state.hsmm,
                                 timer=state.timer)
        with state.timer.phase("dp"):
            new = backward_sample(lattice, state.hsmm, state.rng)
        with state.timer.phase("stats"):
            for seg in new:
                state.emissions.add(seg.label, (seq_idx, seg.start, seg.stop),
                                    seq[:, seg.start:seg.stop])
            state.hsmm.absorb_labels([seg.label for seg in new])
        state.assignments[seq_idx] = new
        sweep_loglik += lattice.total_loglik
    state.iteration += 1
    state.loglik_trace.append(sweep_loglik)
    if config.audit:
        state.audit()
    return state


def labels_from_spans(spans, n_frames: int) -> np.ndarray:
    """Expand a span list into one class label per frame."""
    labels = np.empty(n_frames, dtype=np.int64)
    for seg in spans:
        labels[seg.start:seg.stop] = seg.label
    return labels


def train(sequences, config: TrainerConfig,
          seed: int | None = None) -> SegmentationResult:
    """Run ``config.iterations`` sweeps and package the outcome."""
    t_start = time.perf_counter()
    state = initialize(sequences, config, seed=seed)
    for _ in range(config.iterations):
        gibbs_sweep(state)
    total = time.perf_counter() - t_start
    timings = dict(state.timer.totals)
    timings["total"] = total
    timings["other"] = total - sum(state.timer.totals.values())
    labels = [labels_from_spans(segs, seq.shape[1])
              for segs, seq in zip(state.assignments, state.sequences)]
    return SegmentationResult(labels=labels, spans=state.assignments,
                              loglik_trace=list(state.loglik_trace),
                              timings=timings, config=config, state=state)


def train_with_restarts(sequences, config: TrainerConfig) -> SegmentationResult:
    """Rerun training from ``config.restarts`` seeds, keep the best.

    Restart ``r`` uses seed ``config.seed + r``; the winner is the run
    with the highest final total log-likelihood.
    """
    best = None
    finals = []
    seeds = [config.seed + r for r in range(config.restarts)]
    for restart_seed in seeds:
        result = train(sequences, config, seed=restart_seed)
        finals.append(result.final_loglik)
        if best is None or result.final_loglik > best.final_loglik:
            best = result
    best.restart_logliks = finals
    best.restart_seeds = seeds
    return best


def snapshot_dict(state: TrainerState) -> dict:
    """Serializable model state: feature bank, class stats, chain counts."""
    hsmm = state.hsmm
    out = {
        "backend": state.emissions.backend_name,
        "bank": state.bank.to_dict(),
        "hsmm": {
            "n_classes": hsmm.n_classes,
            "kmin": hsmm.kmin,
            "kmax": hsmm.kmax,
            "mean_length": hsmm.mean_length,
            "alpha": hsmm.alpha,
            "transition_counts": hsmm.transition_counts.tolist(),
            "class_counts": hsmm.class_counts.tolist(),
        },
    }
    if state.emissions.backend_name == "rff":
        out["classes"] = [
            {
                "class_id": m.class_id,
                "n_points": m.n_points,
                "per_dim": [
                    {"precision": st.precision.tolist(), "proj": st.proj.tolist()}
                    for st in m.stats
                ],
            }
            for m in state.emissions.class_models
        ]
    else:
        state.emissions.refresh()
        out["classes"] = [
            {"class_id": c, "taus": data.taus.tolist(), "values": data.values.tolist()}
            for c, data in enumerate(state.emissions.class_models)
        ]
    return out


def emissions_from_snapshot(snap: dict, n_dims: int, beta: float, psi: float,
                            lengthscale: float):
    """Rebuild an emission backend (and bank) from a snapshot dict."""
    bank = FeatureBank.from_dict(snap["bank"])
    if snap["backend"] == "rff":
        emissions = RffEmissions(bank, len(snap["classes"]), n_dims, beta, psi)
        for entry, model in zip(snap["classes"], emissions.class_models):
            if len(entry["per_dim"]) != n_dims:
                raise ValueError(
                    f"snapshot was trained on {len(entry['per_dim'])} "
                    f"dimensions, data has {n_dims}")
            for st, stored in zip(model.stats, entry["per_dim"]):
                st.precision = np.asarray(stored["precision"], dtype=np.float64)
                st.proj = np.asarray(stored["proj"], dtype=np.float64)
                st.n_points = int(entry["n_points"])
            model.dirty = True
    else:
        emissions = ExactGpEmissions(len(snap["classes"]), n_dims, beta, lengthscale)
        for entry, data in zip(snap["classes"], emissions.class_models):
            data.set_points(np.asarray(entry["taus"], dtype=np.float64),
                            np.asarray(entry["values"], dtype=np.float64))
        emissions._dirty = [False] * len(snap["classes"])
    return bank, emissions


def hsmm_from_snapshot(snap: dict) -> HsmmParams:
    h = snap["hsmm"]
    return HsmmParams(
        n_classes=int(h["n_classes"]), kmin=int(h["kmin"]), kmax=int(h["kmax"]),
        mean_length=float(h["mean_length"]), alpha=float(h["alpha"]),
        transition_counts=np.asarray(h["transition_counts"], dtype=np.int64),
        class_counts=np.asarray(h["class_counts"], dtype=np.int64),
    )
