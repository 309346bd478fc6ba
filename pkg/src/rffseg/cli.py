"""Command-line surface: train, segment, eval, bench, and synth verbs.

Every artifact embeds the run configuration and a build identifier so
results stay attributable; label files and model snapshots contain no
timestamps and are bit-reproducible for a fixed (data, config, seed).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import subprocess
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataFormatError,
    LoadSchema,
    PreprocessRecord,
    SequenceStore,
    bench_base_spec,
    evaluate_nhd,
    generate_synthetic,
    load_sequences,
    preprocess,
    quickstart_spec,
)
from .hsmm import InfeasibleSequenceError, backward_sample, forward_filter
from .trainer import (
    ConfigError,
    TrainerConfig,
    emissions_from_snapshot,
    hsmm_from_snapshot,
    labels_from_spans,
    snapshot_dict,
    train,
    train_with_restarts,
)

SNAPSHOT_VERSION = 1

THREADS_ENV = "RFFSEG_THREADS"


@dataclass
class RunConfig:
    """Echo of everything that shaped a run, written into every artifact."""

    backend: str = "rff"
    n_features: int = 20
    lengthscale: float = 1.0
    beta: float = 10.0
    psi: float = 1.0
    n_classes: int = 11
    kmin: int = 15
    kmax: int = 30
    mean_length: float = 20.0
    alpha: float = 1.0
    iterations: int = 5
    restarts: int = 1
    seed: int = 0
    downsample: int = 1
    normalize: bool = True
    columns: list | None = None
    label_column: int | None = None
    delimiter: str | None = None
    audit: bool = False
    shuffle_sequences: bool = False
    threads: int | None = None
    data: list = field(default_factory=list)
    out: str | None = None

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            n_classes=self.n_classes, backend=self.backend,
            n_features=self.n_features, lengthscale=self.lengthscale,
            beta=self.beta, psi=self.psi, kmin=self.kmin, kmax=self.kmax,
            mean_length=self.mean_length, alpha=self.alpha,
            iterations=self.iterations, restarts=self.restarts,
            seed=self.seed, audit=self.audit,
            shuffle_sequences=self.shuffle_sequences)

    def schema(self) -> LoadSchema:
        return LoadSchema(delimiter=self.delimiter, columns=self.columns,
                          label_column=self.label_column)

    def to_dict(self) -> dict:
        return asdict(self)


def build_info() -> dict:
    info = {"package": "rffseg", "version": __version__}
    try:
        sha = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True,
            cwd=Path(__file__).resolve().parent, timeout=5)
        info["git"] = sha.stdout.strip() if sha.returncode == 0 else None
    except OSError:
        info["git"] = None
    return info


def capture_environment(threads: int | None) -> dict:
    cpu = None
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.lower().startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "cpu": cpu or platform.processor() or platform.machine(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": threads,
    }


def limit_threads(threads: int | None) -> int | None:
    """Bound BLAS pool size for clean timings; returns the applied limit."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else None
    if threads is None:
        return None
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=threads)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    return threads


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_labels(path: Path, labels, header: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# rffseg labels, one class id per frame\n")
        fh.write("# meta: " + json.dumps(header, sort_keys=True) + "\n")
        for arr in labels:
            for v in arr:
                fh.write(f"{int(v)}\n")


def read_labels(path) -> np.ndarray:
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(int(float(line)))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad label: {exc}") from exc
    if not values:
        raise DataFormatError(f"{path}: no labels found")
    return np.asarray(values, dtype=np.int64)


def _spans_payload(store: SequenceStore, spans) -> list:
    return [
        {
            "name": name,
            "spans": [
                {"start": s.start, "end": s.stop, "length": s.length,
                 "label": s.label}
                for s in seq_spans
            ],
        }
        for name, seq_spans in zip(store.names, spans)
    ]


def _load_and_prepare(cfg: RunConfig) -> SequenceStore:
    store = load_sequences(cfg.data, cfg.schema())
    return preprocess(store, downsample=cfg.downsample, normalize=cfg.normalize)


def cmd_train(cfg: RunConfig) -> int:
    limit_threads(cfg.threads)
    cfg.trainer_config().validate()
    store = _load_and_prepare(cfg)
    result = train_with_restarts(store.sequences, cfg.trainer_config())

    out = Path(cfg.out)
    echo = cfg.to_dict()
    build = build_info()
    _write_json(out / "model.json", {
        "format_version": SNAPSHOT_VERSION,
        "config": echo,
        "build": build,
        "preprocess": store.record.to_dict() if store.record else None,
        "model": snapshot_dict(result.state),
    })
    _write_labels(out / "labels.txt", result.labels,
                  {"config": echo, "build": build})
    _write_json(out / "spans.json", {
        "config": echo,
        "build": build,
        "sequences": _spans_payload(store, result.spans),
    })
    with open(out / "loglik.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,total_loglik\n")
        for i, v in enumerate(result.loglik_trace, start=1):
            fh.write(f"{i},{v!r}\n")
    _write_json(out / "result.json", {
        "config": echo,
        "build": build,
        "n_sequences": len(store.sequences),
        "frames": store.total_frames,
        "restart_seeds": result.restart_seeds or [cfg.seed],
        "restart_final_logliks": result.restart_logliks or [result.final_loglik],
        "best_seed": result.state.rng_seed,
        "final_loglik": result.final_loglik,
        "timings": result.timings,
        "artifacts": ["model.json", "labels.txt", "spans.json", "loglik.csv"],
    })
    print(f"trained {len(store.sequences)} sequences "
          f"({store.total_frames} frames); final loglik "
          f"{result.final_loglik:.3f}; artifacts in {out}")
    return 0


def cmd_segment(cfg: RunConfig, model_path: str) -> int:
    limit_threads(cfg.threads)
    with open(model_path, "r", encoding="utf-8") as fh:
        snap = json.load(fh)
    model_cfg = RunConfig(**snap["config"])
    record = (PreprocessRecord.from_dict(snap["preprocess"])
              if snap.get("preprocess") else None)
    schema = LoadSchema(delimiter=cfg.delimiter, columns=cfg.columns,
                        label_column=cfg.label_column)
    store = load_sequences(cfg.data, schema)
    if record is not None:
        store = preprocess(store, downsample=record.downsample,
                           normalize=record.normalized, record=record)
    n_dims = store.n_dims
    bank, emissions = emissions_from_snapshot(
        snap["model"], n_dims, model_cfg.beta, model_cfg.psi,
        model_cfg.lengthscale)
    hsmm = hsmm_from_snapshot(snap["model"])
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    emitters = emissions.emitters()
    labels, spans = [], []
    for seq in store.sequences:
        lattice = forward_filter(seq, emitters, hsmm)
        segs = backward_sample(lattice, hsmm, rng)
        spans.append(segs)
        labels.append(labels_from_spans(segs, seq.shape[1]))

    out = Path(cfg.out)
    echo = {"segment_config": cfg.to_dict(), "model_config": snap["config"]}
    build = build_info()
    _write_labels(out / "labels.txt", labels, {"config": echo, "build": build})
    _write_json(out / "spans.json", {
        "config": echo, "build": build,
        "sequences": _spans_payload(store, spans),
    })
    print(f"segmented {len(store.sequences)} sequences with {model_path}; "
          f"artifacts in {out}")
    return 0


def cmd_eval(labels_path: str, truth_path: str, out_path: str | None) -> int:
    predicted = read_labels(labels_path)
    truth = read_labels(truth_path)
    report = evaluate_nhd(predicted, truth)
    payload = {
        "config": {"labels": str(labels_path), "truth": str(truth_path)},
        "build": build_info(),
        **report.to_dict(),
    }
    if out_path:
        _write_json(Path(out_path), payload)
    print(f"nhd {report.nhd:.6f} over {predicted.size} frames "
          f"({len(report.mapping)} predicted classes)")
    return 0


def cmd_synth(preset: str, out_dir: str, seed: int, overrides: dict) -> int:
    spec = quickstart_spec() if preset == "quickstart" else bench_base_spec()
    if overrides.get("n_sequences") is not None or overrides.get("seq_length") is not None:
        spec.seq_lengths = None  # custom sizes replace preset per-sequence lengths
    for name, value in overrides.items():
        if value is not None:
            setattr(spec, name, value)
    spec.validate()
    store = generate_synthetic(spec, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, seq, lab in zip(store.names, store.sequences, store.labels):
        with open(out / f"{name}.txt", "w", encoding="utf-8") as fh:
            for t in range(seq.shape[1]):
                cells = " ".join(repr(float(v)) for v in seq[:, t])
                fh.write(f"{cells} {int(lab[t])}\n")
    _write_labels(out / "truth.txt", store.labels,
                  {"preset": preset, "seed": seed})
    _write_json(out / "synth.json", {
        "preset": preset,
        "seed": seed,
        "build": build_info(),
        "n_dims": spec.n_dims,
        "label_column": spec.n_dims,
        "sequences": store.names,
        "frames": store.total_frames,
        "n_patterns": len(spec.patterns),
    })
    print(f"wrote {len(store.sequences)} sequences ({store.total_frames} frames) "
          f"with {len(spec.patterns)} patterns to {out}")
    return 0


def cmd_bench(cfg: RunConfig, duplications: list[int], backends: list[str],
              trials: int, max_gp_frames: int | None) -> int:
    threads = limit_threads(cfg.threads)
    store = _load_and_prepare(cfg)
    base = store.sequences
    base_frames = store.total_frames
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []  # (frames, backend, trial, seconds, phases)
    for dup in duplications:
        seqs = [s for _ in range(dup) for s in base]
        frames = base_frames * dup
        for backend in backends:
            if (backend == "exact-gp" and max_gp_frames is not None
                    and frames > max_gp_frames):
                print(f"skipping exact-gp at {frames} frames "
                      f"(--max-gp-frames {max_gp_frames})")
                continue
            for trial in range(trials):
                tcfg = cfg.trainer_config()
                tcfg.backend = backend
                tcfg.restarts = 1
                result = train(seqs, tcfg, seed=cfg.seed + trial)
                seconds = result.timings["total"]
                rows.append((frames, backend, trial, seconds, result.timings))
                print(f"bench frames={frames} backend={backend} trial={trial} "
                      f"seconds={seconds:.3f}", flush=True)

    with open(out / "bench.csv", "w", encoding="utf-8") as fh:
        fh.write("frames,backend,trial,seconds\n")
        for frames, backend, trial, seconds, _ in rows:
            fh.write(f"{frames},{backend},{trial},{seconds!r}\n")

    points = []
    for dup in duplications:
        frames = base_frames * dup
        for backend in backends:
            trials_here = [r for r in rows if r[0] == frames and r[1] == backend]
            if not trials_here:
                continue
            secs = [r[3] for r in trials_here]
            phases = {}
            for key in trials_here[0][4]:
                phases[key] = float(np.mean([r[4][key] for r in trials_here]))
            points.append({
                "frames": frames,
                "backend": backend,
                "trial_count": len(secs),
                "trial_seconds": secs,
                "mean_seconds": float(np.mean(secs)),
                "phase_means": phases,
            })
    speedups = []
    for dup in duplications:
        frames = base_frames * dup
        gp = next((p for p in points
                   if p["frames"] == frames and p["backend"] == "exact-gp"), None)
        rff = next((p for p in points
                    if p["frames"] == frames and p["backend"] == "rff"), None)
        if gp and rff:
            speedups.append({"frames": frames,
                             "ratio": gp["mean_seconds"] / rff["mean_seconds"]})
    report = {
        "config": cfg.to_dict(),
        "build": build_info(),
        "environment": capture_environment(threads),
        "trials": trials,
        "duplications": duplications,
        "base_frames": base_frames,
        "points": points,
        "speedups": speedups,
    }
    _write_json(out / "bench.json", report)

    with open(out / "bench.dat", "w", encoding="utf-8") as fh:
        fh.write("# frames mean_seconds backend\n")
        for p in points:
            fh.write(f"{p['frames']} {p['mean_seconds']!r} {p['backend']}\n")
    with open(out / "bench.gnuplot", "w", encoding="utf-8") as fh:
        fh.write(
            "set xlabel 'frames'\n"
            "set ylabel 'training seconds'\n"
            "set logscale y\n"
            "plot for [b in 'rff exact-gp'] '< grep '.b.' bench.dat' "
            "using 1:2 with linespoints title b\n")
    for s in speedups:
        print(f"speed-up at {s['frames']} frames: {s['ratio']:.1f}x")
    print(f"bench artifacts in {out}")
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["rff", "exact-gp"], default="rff")
    p.add_argument("--features", type=int, default=20, dest="n_features",
                   help="number of random features M")
    p.add_argument("--lengthscale", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=10.0,
                   help="observation noise precision")
    p.add_argument("--psi", type=float, default=1.0,
                   help="weight prior precision")
    p.add_argument("--classes", type=int, default=11, dest="n_classes")
    p.add_argument("--kmin", type=int, default=15)
    p.add_argument("--kmax", type=int, default=30)
    p.add_argument("--mean-length", type=float, default=20.0,
                   help="Poisson mean segment length")
    p.add_argument("--alpha", type=float, default=1.0,
                   help="transition smoothing")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--audit", action="store_true",
                   help="cross-check incremental stats after every sweep")
    p.add_argument("--shuffle", action="store_true", dest="shuffle_sequences")
    p.add_argument("--threads", type=int, default=None,
                   help=f"BLAS thread cap (default: ${THREADS_ENV})")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", nargs="+", required=True,
                   help="delimited text files, one frame per row")
    p.add_argument("--downsample", type=int, default=1,
                   help="keep every n-th frame")
    p.add_argument("--no-normalize", action="store_false", dest="normalize")
    p.add_argument("--columns", type=str, default=None,
                   help="comma-separated observation column indices")
    p.add_argument("--label-column", type=int, default=None)
    p.add_argument("--delimiter", type=str, default=None,
                   help="cell delimiter (default: any whitespace)")


def _runconfig_from_args(args) -> RunConfig:
    columns = None
    if args.columns:
        columns = [int(v) for v in str(args.columns).split(",") if v != ""]
    return RunConfig(
        backend=getattr(args, "backend", "rff"),
        n_features=getattr(args, "n_features", 20),
        lengthscale=getattr(args, "lengthscale", 1.0),
        beta=getattr(args, "beta", 10.0),
        psi=getattr(args, "psi", 1.0),
        n_classes=getattr(args, "n_classes", 11),
        kmin=getattr(args, "kmin", 15),
        kmax=getattr(args, "kmax", 30),
        mean_length=getattr(args, "mean_length", 20.0),
        alpha=getattr(args, "alpha", 1.0),
        iterations=getattr(args, "iterations", 5),
        restarts=getattr(args, "restarts", 1),
        seed=args.seed,
        downsample=args.downsample,
        normalize=args.normalize,
        columns=columns,
        label_column=args.label_column,
        delimiter=args.delimiter,
        audit=getattr(args, "audit", False),
        shuffle_sequences=getattr(args, "shuffle_sequences", False),
        threads=getattr(args, "threads", None),
        data=list(args.data),
        out=args.out,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rffseg",
        description="Unsupervised time-series segmentation with "
                    "random-feature GP emissions")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a segmentation model")
    _add_data_flags(p_train)
    _add_train_flags(p_train)
    p_train.add_argument("--out", required=True, help="output directory")

    p_seg = sub.add_parser("segment", help="label new data with a snapshot")
    p_seg.add_argument("--model", required=True, help="model.json path")
    _add_data_flags(p_seg)
    p_seg.add_argument("--seed", type=int, default=0)
    p_seg.add_argument("--threads", type=int, default=None)
    p_seg.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="score labels against ground truth")
    p_eval.add_argument("--labels", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out", default=None, help="report JSON path")

    p_bench = sub.add_parser("bench", help="duplication-ladder timing harness")
    _add_data_flags(p_bench)
    _add_train_flags(p_bench)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--duplications", type=str, default="1",
                         help="comma-separated duplication factors")
    p_bench.add_argument("--backends", type=str, default="rff,exact-gp")
    p_bench.add_argument("--trials", type=int, default=5,
                         help="timed runs per (frames, backend) point")
    p_bench.add_argument("--max-gp-frames", type=int, default=None,
                         help="skip the exact-gp backend above this size")

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--preset", choices=["quickstart", "bench-base"],
                         default="quickstart")
    p_synth.add_argument("--seed", type=int, default=42)
    p_synth.add_argument("--sequences", type=int, default=None,
                         dest="n_sequences")
    p_synth.add_argument("--frames", type=int, default=None, dest="seq_length")
    p_synth.add_argument("--dims", type=int, default=None, dest="n_dims")
    p_synth.add_argument("--block-min", type=int, default=None)
    p_synth.add_argument("--block-max", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(_runconfig_from_args(args))
        if args.command == "segment":
            cfg = _runconfig_from_args(args)
            return cmd_segment(cfg, args.model)
        if args.command == "eval":
            return cmd_eval(args.labels, args.truth, args.out)
        if args.command == "bench":
            cfg = _runconfig_from_args(args)
            dups = [int(v) for v in args.duplications.split(",") if v != ""]
            if not dups or any(d < 1 for d in dups):
                raise ConfigError(
                    f"--duplications must list positive integers, "
                    f"got {args.duplications!r}")
            backends = [b.strip() for b in args.backends.split(",") if b.strip()]
            for b in backends:
                if b not in ("rff", "exact-gp"):
                    raise ConfigError(f"unknown backend {b!r} in --backends")
            return cmd_bench(cfg, dups, backends, args.trials, args.max_gp_frames)
        if args.command == "synth":
            overrides = {
                "n_sequences": args.n_sequences,
                "seq_length": args.seq_length,
                "n_dims": args.n_dims,
                "block_min": args.block_min,
                "block_max": args.block_max,
            }
            return cmd_synth(args.preset, args.out, args.seed, overrides)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, DataFormatError, InfeasibleSequenceError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
