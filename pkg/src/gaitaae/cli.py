"""Command-line pipeline: ``synth``, ``extract``, ``train``, ``score`` and ``eval``.

Every stage works inside one working directory::

    data/manifest.csv            sequence list (synth, or supplied by hand)
    data/<sequence>/frames.txt   ordered frame files of one sequence
    hist/<sequence>/*.ghist      one histogram per accepted frame
    run/checkpoints/*.gaae       snapshots, run/last.ckpt, losses.csv, stable_window.csv
    scores/epoch_XXXX/*.csv      per-frame measures for validation and test sequences
    eval/                        report.csv, delta_table.csv, roc_points.csv

Configuration is a flat ``key = value`` file; ``--set key=value`` overrides it.
Exit codes: 0 success, 1 usage or invalid configuration, 2 data error
(including partially rejected extraction), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import aae, evaluation, histogram, index, pipeline, synth
from .errors import DataError, EmptyDataset, GaitAAEError, NumericError

log = logging.getLogger("gaitaae")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# key -> default; the default's type drives parsing
DEFAULTS: dict[str, object] = {
    "workdir": ".",
    "workers": 1,
    "data_seed": 2024,
    "seed": 0,
    "n_train_subjects": 6,
    "n_validation_subjects": 1,
    "n_test_subjects": 4,
    "train_frames": 400,
    "validation_frames": 120,
    "test_frames": 240,
    "points_per_frame": 6000,
    "noise_sigma": 0.01,
    "cycle_length": 0,
    "modes": synth.GAIT_MODES,
    "rows": 16,
    "sectors": 16,
    "hidden": 96,
    "latent": 16,
    "slope": 0.2,
    "prior_var": 1.0,
    "epochs": 500,
    "batch_size": 64,
    "lr_ae": 1e-3,
    "lr_gen": 1e-3,
    "lr_disc": 1e-2,
    "gamma0": 0.1,
    "gamma_decay": 0.99,
    "stable_window": 100,
    "save_every": 1,
    "prune_checkpoints": True,
    "exponent": index.DEFAULT_EXPONENT,
    "mask": "ae+p+d",
    "score_dtype": "float64",
    "deltas": (1, 10, 21, 60),
    "main_delta": 60,
    "overlaps": ("none", "sliding"),
}

# left out of the digest: where files go, how many processes, and how far
# training runs (results at epoch e do not depend on the final epoch count)
_UNDIGESTED = ("workdir", "workers", "epochs")


class ConfigError(GaitAAEError):
    pass


def _parse_value(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            return tuple(int(t) for t in items) if isinstance(default[0], int) else tuple(items)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None


def _format_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def workdir(self) -> Path:
        return Path(self.values["workdir"])

    @property
    def digest(self) -> str:
        items = {k: _format_value(v) for k, v in self.values.items() if k not in _UNDIGESTED}
        return aae.config_digest(items)

    def benchmark(self) -> synth.BenchmarkConfig:
        v = self.values
        return synth.BenchmarkConfig(
            n_train_subjects=v["n_train_subjects"], n_validation_subjects=v["n_validation_subjects"],
            n_test_subjects=v["n_test_subjects"], train_frames=v["train_frames"],
            test_frames=v["test_frames"], validation_frames=v["validation_frames"],
            points_per_frame=v["points_per_frame"], noise_sigma=v["noise_sigma"], modes=tuple(v["modes"]),
            seed=v["data_seed"], cycle_length=v["cycle_length"] or None,
        )

    def train(self) -> aae.TrainConfig:
        v = self.values
        return aae.TrainConfig(
            epochs=v["epochs"], batch_size=v["batch_size"], lr_ae=v["lr_ae"], lr_gen=v["lr_gen"],
            lr_disc=v["lr_disc"], gamma0=v["gamma0"], gamma_decay=v["gamma_decay"], seed=v["seed"],
            stable_window=v["stable_window"],
        )

    def model_kwargs(self) -> dict:
        v = self.values
        return dict(input_dim=v["rows"] * v["sectors"], hidden=v["hidden"], latent=v["latent"],
                    slope=v["slope"], prior_var=v["prior_var"])

    def index_config(self) -> index.IndexConfig:
        return index.IndexConfig(self.values["exponent"], tuple(self.values["mask"].split("+")))

    def eval_configs(self):
        main = [evaluation.EvalConfig("frame"), evaluation.EvalConfig("segment", self.values["main_delta"]),
                evaluation.EvalConfig("sequence")]
        table = [evaluation.EvalConfig("segment", d, mode) for mode in self.values["overlaps"] for d in self.values["deltas"]]
        return main, table

    def validate(self):
        """Build every module config once so bad values fail before any work."""
        v = self.values
        try:
            self.benchmark()
            self.train()
            self.index_config()
            self.eval_configs()
            aae.PriorSpec(v["latent"], v["prior_var"])
            if min(v["rows"], v["sectors"], v["hidden"], v["latent"], v["save_every"], v["workers"]) < 1:
                raise ValueError("rows, sectors, hidden, latent, save_every and workers must be >= 1")
            if v["score_dtype"] not in ("float64", "float32"):
                raise ValueError("score_dtype must be float64 or float32")
            if not 0 < v["slope"] < 1:
                raise ValueError("slope must lie in (0, 1)")
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
        return self


def load_config(path=None, overrides=(), workdir=None, workers=None) -> RunConfig:
    values = dict(DEFAULTS)
    entries = []
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            entries.append(line)
    entries.extend(overrides)
    for entry in entries:
        key, _, text = entry.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = _parse_value(key, text)
    if workdir is not None:
        values["workdir"] = workdir
    if workers is not None:
        values["workers"] = workers
    return RunConfig(values).validate()


# -- small file helpers -------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path, digest, header, rows, comments=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest={digest}\n")
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    """Returns ``(comments, rows)``; comments are ``key=value`` lines parsed into a dict."""
    comments, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                comments[key.strip()] = value.strip()
            else:
                lines.append(line)
    return comments, list(csv.DictReader(lines))


def _pool_map(func, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _paths(cfg: RunConfig):
    w = cfg.workdir
    return w / "data", w / "hist", w / "run", w / "scores", w / "eval"


def _manifest(cfg: RunConfig):
    path = _paths(cfg)[0] / "manifest.csv"
    if not path.exists():
        raise DataError(f"no manifest at {path}; run synth or supply one")
    rows = synth.read_manifest(path)
    if not rows:
        raise DataError(f"{path} lists no sequences")
    return rows


def _load_histograms(hist_dir: Path, cfg: RunConfig):
    files = sorted(hist_dir.glob("frame_*.ghist"))
    if not files:
        raise DataError(f"no histograms in {hist_dir}")
    hists = [histogram.read_ghist(f) for f in files]
    shape = (cfg["rows"], cfg["sectors"])
    for f, h in zip(files, hists):
        if h.levels.shape != shape:
            raise DataError(f"{f}: histogram shape {h.levels.shape}, configured {shape}")
    frames = [int(f.stem.split("_")[1]) for f in files]
    return frames, histogram.stack_histograms(hists)


# -- synth --------------------------------------------------------------------


def _synth_one(args):
    directory, spec = args
    return synth.write_sequence(directory, spec)


def cmd_synth(cfg: RunConfig) -> int:
    data_dir = _paths(cfg)[0]
    data_dir.mkdir(parents=True, exist_ok=True)
    specs = synth.default_benchmark(cfg.benchmark())
    counts = _pool_map(_synth_one, [(data_dir / s.sequence_id, s) for s in specs], cfg["workers"])
    synth.write_manifest(data_dir / "manifest.csv", specs, [f"config_digest={cfg.digest}"])
    print(f"synth: {len(specs)} sequences, {sum(counts)} frames -> {data_dir}")
    return EXIT_OK


# -- extract ------------------------------------------------------------------


def _extract_one(args):
    seq_dir, out_dir, rows, sectors = args
    frame_files = histogram.read_sequence_manifest(seq_dir / "frames.txt")
    out_dir.mkdir(parents=True, exist_ok=True)
    for old in out_dir.glob("frame_*.ghist"):
        old.unlink()
    rejected = []
    for i, path in enumerate(frame_files):
        cloud = histogram.read_point_cloud(path, i)
        try:
            hist = histogram.cloud_to_histogram(cloud, rows, sectors)
        except DataError as exc:
            rejected.append((i, str(exc)))
            continue
        histogram.write_ghist(out_dir / f"frame_{i:05d}.ghist", hist)
    return len(frame_files), rejected


def cmd_extract(cfg: RunConfig) -> int:
    data_dir, hist_dir = _paths(cfg)[:2]
    rows = _manifest(cfg)
    jobs = []
    for r in rows:
        seq_dir = data_dir / r.sequence_id
        if not (seq_dir / "frames.txt").exists():
            raise DataError(f"sequence {r.sequence_id!r} has no frames.txt in {seq_dir}")
        jobs.append((seq_dir, hist_dir / r.sequence_id, cfg["rows"], cfg["sectors"]))
    results = _pool_map(_extract_one, jobs, cfg["workers"])
    log_rows, n_rejected, n_total = [], 0, 0
    for r, (n, rejected) in zip(rows, results):
        for frame, reason in rejected:
            log.error("sequence %s frame %d rejected: %s", r.sequence_id, frame, reason)
        n_total += n
        n_rejected += len(rejected)
        log_rows.append([r.sequence_id, n, n - len(rejected), ";".join(str(f) for f, _ in rejected)])
    write_csv(hist_dir / "extract_log.csv", cfg.digest, ["sequence_id", "frames", "histograms", "rejected_frames"], log_rows)
    print(f"extract: {n_total - n_rejected}/{n_total} frames -> {hist_dir}")
    if n_rejected:
        print(f"extract: {n_rejected} degenerate frame(s) rejected, see extract_log.csv", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# -- train --------------------------------------------------------------------


def _training_matrix(cfg: RunConfig):
    hist_dir = _paths(cfg)[1]
    train_rows = [r for r in _manifest(cfg) if r.split == "train"]
    if not train_rows:
        raise EmptyDataset("manifest has no sequences with split=train")
    blocks = [_load_histograms(hist_dir / r.sequence_id, cfg)[1] for r in train_rows]
    return np.vstack(blocks)


def _write_losses(path, digest, history):
    rows = [[e, *(_fmt(v) for v in row)] for e, row in enumerate(history, 1)]
    write_csv(path, digest, ["epoch", "L_AE", "L_D", "L_Q"], rows)


def cmd_train(cfg: RunConfig, resume: bool = False) -> int:
    run_dir = _paths(cfg)[2]
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = cfg.train()
    exponent = cfg["exponent"]
    digest = cfg.digest
    X = _training_matrix(cfg)
    log.info("training on %d histograms", len(X))

    last = run_dir / "last.ckpt"
    if resume and last.exists():
        state = aae.load_checkpoint(last, train_cfg)
        if state.config_digest != digest:
            raise DataError("last.ckpt was written under a different configuration")
        model, opt, history, start = state.model, state.optimizers, state.history, state.epoch + 1
        log.info("resuming after epoch %d", state.epoch)
    else:
        for old in ckpt_dir.glob("epoch_*.gaae"):
            old.unlink()
        model = aae.AAEModel.create(np.random.default_rng([train_cfg.seed, 0]), **cfg.model_kwargs())
        opt, history, start = aae.Optimizers.from_config(train_cfg), None, 1

    def after_epoch(m, epoch, hist):
        if epoch % cfg["save_every"] == 0 or epoch == train_cfg.epochs:
            snap = pipeline.snapshot(m, epoch, hist, X, exponent, digest)
            aae.save_checkpoint(ckpt_dir / f"epoch_{epoch:04d}.gaae", snap)
        state = pipeline.snapshot(m, epoch, hist, X, exponent, digest, optimizers=opt)
        aae.save_checkpoint(last, state)
        _write_losses(run_dir / "losses.csv", digest, hist)

    history, _ = aae.train(model, X, train_cfg, opt=opt, history=history, start_epoch=start, callback=after_epoch)
    first, end = aae.select_stable_window(history, train_cfg.stable_window)
    write_csv(run_dir / "stable_window.csv", digest, ["start", "end", "window"], [[first, end, train_cfg.stable_window]])
    if cfg["prune_checkpoints"]:
        for path in ckpt_dir.glob("epoch_*.gaae"):
            if not first <= int(path.stem.split("_")[1]) <= end:
                path.unlink()
    print(f"train: {len(history)} epochs, stable window {first}-{end} -> {run_dir}")
    return EXIT_OK


# -- score --------------------------------------------------------------------


def _window_checkpoints(cfg: RunConfig):
    run_dir = _paths(cfg)[2]
    window_file = run_dir / "stable_window.csv"
    if not window_file.exists():
        raise DataError(f"no stable window record at {window_file}; run train first")
    (row,) = read_csv(window_file)[1]
    first, end = int(row["start"]), int(row["end"])
    paths = [run_dir / "checkpoints" / f"epoch_{e:04d}.gaae" for e in range(first, end + 1)]
    paths = [p for p in paths if p.exists()]
    if not paths:
        raise DataError(f"no checkpoints saved inside the stable window {first}-{end}")
    return paths


def _score_one(args):
    ckpt_path, sequences, out_dir, cfg_values = args
    cfg = RunConfig(cfg_values)
    ckpt = aae.load_checkpoint(ckpt_path)
    if ckpt.index_stats is None:
        raise DataError(f"{ckpt_path} carries no training statistics")
    weights = pipeline.weights_for(ckpt, cfg.index_config().mask)
    s_ae, s_p, s_d, u = ckpt.index_stats
    comments = [f"epoch={ckpt.epoch}", f"stats={_fmt(s_ae)},{_fmt(s_p)},{_fmt(s_d)}", f"exponent={_fmt(u)}",
                f"weights={','.join(_fmt(w) for w in weights.weights)}"]
    epoch_dir = out_dir / f"epoch_{ckpt.epoch:04d}"
    for seq_id, (frames, X) in sequences.items():
        m = index.score_frames(ckpt.model, weights, X, np.dtype(cfg["score_dtype"]).type)
        rows = [[f, _fmt(a), _fmt(p), _fmt(d), _fmt(c)] for f, a, p, d, c in zip(frames, m.y_ae, m.y_p, m.y_d, m.combined)]
        write_csv(epoch_dir / f"{seq_id}.csv", cfg.digest, ["frame_index", "y_ae", "y_p", "y_d", "combined"], rows, comments)
    return ckpt.epoch


def cmd_score(cfg: RunConfig) -> int:
    hist_dir, _, score_dir = _paths(cfg)[1:4]
    ckpts = _window_checkpoints(cfg)
    rows = [r for r in _manifest(cfg) if r.split != "train"]
    if not rows:
        raise EmptyDataset("manifest has no validation or test sequences")
    sequences = {r.sequence_id: _load_histograms(hist_dir / r.sequence_id, cfg) for r in rows}
    jobs = [(p, sequences, score_dir, cfg.values) for p in ckpts]
    epochs = _pool_map(_score_one, jobs, cfg["workers"])
    print(f"score: {len(rows)} sequences x {len(epochs)} checkpoints -> {score_dir}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------


def _read_scores(path):
    comments, rows = read_csv(path)
    m = index.FrameMeasures(*(np.array([float(r[k]) for r in rows]) for k in ("y_ae", "y_p", "y_d", "combined")))
    stats = tuple(float(v) for v in comments["stats"].split(",")) + (float(comments["exponent"]),)
    return m, stats


def cmd_eval(cfg: RunConfig) -> int:
    score_dir, eval_dir = _paths(cfg)[3:5]
    epochs = [int(p.stem.split("_")[1]) for p in _window_checkpoints(cfg)]
    rows = [r for r in _manifest(cfg) if r.split != "train"]
    test = [r for r in rows if r.split == "test"]
    val = [r for r in rows if r.split == "validation"]
    if not test:
        raise EmptyDataset("manifest has no test sequences")

    stats, test_m, val_m = [], [], []
    for e in epochs:
        epoch_dir = score_dir / f"epoch_{e:04d}"
        if not epoch_dir.exists():
            raise DataError(f"missing scores for epoch {e}; run score first")
        loaded = {r.sequence_id: _read_scores(epoch_dir / f"{r.sequence_id}.csv") for r in rows}
        stats.append(loaded[test[0].sequence_id][1])
        test_m.append([loaded[r.sequence_id][0] for r in test])
        val_m.append([loaded[r.sequence_id][0] for r in val])

    main_cfgs, table_cfgs = cfg.eval_configs()
    all_cfgs = list({c.name: c for c in main_cfgs + table_cfgs}.values())
    mask = cfg.index_config().mask
    chosen = "+".join(m for m in index.MEASURES if m in mask)
    measure_sets = dict(pipeline.MEASURE_SETS)
    measure_sets.setdefault(chosen, mask)
    reports = pipeline.evaluate_measures(
        epochs, stats, test_m, [r.label for r in test], all_cfgs,
        val_m if val else None, [r.label for r in val] if val else None, measure_sets,
    )

    digest = cfg.digest
    window = [f"epochs={epochs[0]}-{epochs[-1]} ({len(epochs)} checkpoints)"]
    report_rows = []
    for set_name in measure_sets:
        for c in main_cfgs:
            rep = reports[(set_name, c.name)]
            report_rows.append([set_name, c.name, c.level, c.delta if c.level == "segment" else "", c.overlap,
                                _fmt(rep.auc), _fmt(rep.auc_std), _fmt(rep.eer), _fmt(rep.eer_std),
                                len(rep.aucs), sum(rep.flipped)])
    write_csv(eval_dir / "report.csv", digest,
              ["measure_set", "config", "level", "delta", "overlap", "auc_mean", "auc_std", "eer_mean", "eer_std",
               "n_checkpoints", "n_flipped"], report_rows, window)

    table_rows = []
    for c in table_cfgs:
        rep = reports[(chosen, c.name)]
        table_rows.append([c.overlap, c.delta, _fmt(rep.auc), _fmt(rep.auc_std), _fmt(rep.eer), _fmt(rep.eer_std)])
    write_csv(eval_dir / "delta_table.csv", digest, ["overlap", "delta", "auc_mean", "auc_std", "eer_mean", "eer_std"],
              table_rows, window + [f"measure_set={chosen}"])

    roc_rows = []
    for c in main_cfgs:
        rep = reports[(chosen, c.name)]
        for e, roc in zip(rep.epochs, rep.rocs):
            roc_rows.extend([c.name, e, _fmt(fpr), _fmt(tpr)] for fpr, tpr in roc)
    write_csv(eval_dir / "roc_points.csv", digest, ["config", "epoch", "fpr", "tpr"], roc_rows,
              [f"measure_set={chosen}"])

    print(f"eval: measure set {chosen}, {window[0]}")
    for c in main_cfgs:
        rep = reports[(chosen, c.name)]
        print(f"  {c.name:<12} AUC {rep.auc:.3f} +- {rep.auc_std:.3f}   EER {rep.eer:.3f} +- {rep.eer_std:.3f}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaitaae", description="Gait normality index pipeline.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="flat key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key (repeatable)")
    common.add_argument("-w", "--workdir", help="working directory (overrides the workdir key)")
    common.add_argument("--workers", type=int, help="processes for synth, extract and score")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate the synthetic gait benchmark")
    sub.add_parser("extract", parents=[common], help="point clouds -> cylindrical histograms")
    train = sub.add_parser("train", parents=[common], help="train the model and record checkpoints")
    train.add_argument("--resume", action="store_true", help="continue from run/last.ckpt")
    sub.add_parser("score", parents=[common], help="per-frame measures for stable-window checkpoints")
    sub.add_parser("eval", parents=[common], help="AUC / EER reports from score files")
    sub.add_parser("show-config", parents=[common], help="print the resolved configuration and digest")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.workdir, args.workers)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "extract":
            return cmd_extract(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "score":
            return cmd_score(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        for key, value in cfg.values.items():
            print(f"{key} = {_format_value(value)}")
        print(f"# config_digest={cfg.digest}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
