"""In-memory glue: clouds -> histograms -> trained snapshots -> scores -> reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import aae, evaluation, histogram, index, synth
from .errors import DataError

log = logging.getLogger(__name__)

# measure subsets reported by default, keyed by a short name
MEASURE_SETS = {
    "ae": ("ae",),
    "p": ("p",),
    "d": ("d",),
    "ae+p": ("ae", "p"),
    "ae+d": ("ae", "d"),
    "ae+p+d": ("ae", "p", "d"),
}


@dataclass
class SequenceData:
    sequence_id: str
    label: int
    split: str
    X: np.ndarray  # (frames, rows*sectors)
    rejected: list[int] = field(default_factory=list)


def clouds_to_matrix(clouds, rows=histogram.DEFAULT_ROWS, sectors=histogram.DEFAULT_SECTORS):
    """Histogram every cloud; degenerate frames are skipped and their indices returned."""
    hists, rejected = [], []
    for cloud in clouds:
        try:
            hists.append(histogram.cloud_to_histogram(cloud, rows, sectors))
        except DataError as exc:
            log.warning("frame %d rejected: %s", cloud.frame_index, exc)
            rejected.append(cloud.frame_index)
    return histogram.stack_histograms(hists), rejected


def build_dataset(specs, rows=histogram.DEFAULT_ROWS, sectors=histogram.DEFAULT_SECTORS) -> list[SequenceData]:
    out = []
    for spec in specs:
        X, rejected = clouds_to_matrix(synth.generate_sequence(spec.params, spec.n_frames), rows, sectors)
        out.append(SequenceData(spec.sequence_id, spec.label, spec.split, X, rejected))
    return out


def split(data, name):
    return [d for d in data if d.split == name]


def snapshot(model, epoch, history, train_X, exponent, digest="0" * 64, optimizers=None) -> aae.Checkpoint:
    """Freeze a model together with the training means of its measures."""
    frozen = model.copy()
    stats = index.training_stats(index.raw_measures(frozen, train_X), exponent)
    return aae.Checkpoint(frozen, epoch, np.array(history, copy=True), digest, (*stats, exponent), optimizers)


def train_with_snapshots(train_X, train_cfg: aae.TrainConfig, model=None, save_every=1, exponent=index.DEFAULT_EXPONENT,
                         model_kwargs=None, digest="0" * 64):
    """Train from scratch and keep a :class:`~gaitaae.aae.Checkpoint` every ``save_every`` epochs."""
    if model is None:
        model = aae.AAEModel.create(np.random.default_rng([train_cfg.seed, 0]), **(model_kwargs or {}))
    snaps = {}

    def keep(m, epoch, hist):
        if epoch % save_every == 0 or epoch == train_cfg.epochs:
            snaps[epoch] = snapshot(m, epoch, hist, train_X, exponent, digest)

    history, _ = aae.train(model, train_X, train_cfg, callback=keep)
    return history, snaps


def weights_for(ckpt: aae.Checkpoint, mask) -> index.WeightVector:
    if ckpt.index_stats is None:
        raise DataError(f"checkpoint for epoch {ckpt.epoch} has no training statistics")
    s_ae, s_p, s_d, u = ckpt.index_stats
    return index.weights_from_stats((s_ae, s_p, s_d), mask, u)


def measure_sequences(ckpt: aae.Checkpoint, sequences, dtype=np.float64) -> list[index.FrameMeasures]:
    return [index.raw_measures(ckpt.model, seq.X, dtype) for seq in sequences]


def combined_scores(measures, weights: index.WeightVector):
    return [np.asarray(index.combine(m, weights), dtype=np.float64) for m in measures]


def evaluate_measures(epochs, stats, test_measures, test_labels, eval_cfgs, val_measures=None, val_labels=None,
                      measure_sets=None):
    """Reports for every (measure set, evaluation config) from precomputed measures.

    Args:
      epochs: checkpoint epochs, one per entry of ``stats``.
      stats: per checkpoint ``(s_ae, s_p, s_d, exponent)`` training statistics.
      test_measures: per checkpoint, one :class:`~gaitaae.index.FrameMeasures` per test sequence.
      val_measures: same layout for validation sequences; when given, score
        polarity is decided per checkpoint and measure set on their
        frame-level scores, otherwise on the evaluated set itself.

    Returns ``{(set_name, cfg.name): EvalReport}``.
    """
    measure_sets = measure_sets or MEASURE_SETS
    reports = {}
    for set_name, mask in measure_sets.items():
        per_ckpt = []
        orientation = [] if val_measures else None
        for i, st in enumerate(stats):
            w = index.weights_from_stats(st[:3], mask, st[3])
            per_ckpt.append(combined_scores(test_measures[i], w))
            if val_measures:
                val_scores = combined_scores(val_measures[i], w)
                frame_set = evaluation.level_scores(val_scores, val_labels, evaluation.EvalConfig("frame"))
                orientation.append(evaluation.orient(frame_set)[0])
        for cfg in eval_cfgs:
            reports[(set_name, cfg.name)] = evaluation.evaluate_epoch_range(per_ckpt, test_labels, cfg, orientation, epochs)
    return reports


def evaluate_checkpoints(checkpoints, test, eval_cfgs, validation=None, measure_sets=None, dtype=np.float64):
    """Like :func:`evaluate_measures`, scoring ``test`` / ``validation`` sequences with each checkpoint."""
    checkpoints = sorted(checkpoints, key=lambda c: c.epoch)
    for c in checkpoints:
        if c.index_stats is None:
            raise DataError(f"checkpoint for epoch {c.epoch} has no training statistics")
    test_m = [measure_sequences(c, test, dtype) for c in checkpoints]
    val_m = [measure_sequences(c, validation, dtype) for c in checkpoints] if validation else None
    return evaluate_measures(
        [c.epoch for c in checkpoints], [c.index_stats for c in checkpoints], test_m, [seq.label for seq in test],
        eval_cfgs, val_m, [v.label for v in validation] if validation else None, measure_sets,
    )
