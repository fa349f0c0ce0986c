"""ROC / AUC / EER and temporal aggregation of frame scores.

Abnormal is the positive class and higher scores mean "more abnormal". A
score channel with the opposite polarity is handled by :func:`orient`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import EmptySequence, SegmentTooLong, SingleClass

NORMAL = 0
ABNORMAL = 1

LEVELS = ("frame", "segment", "sequence")
OVERLAPS = ("none", "sliding")


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray  # 1 = abnormal

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels).astype(np.int64).reshape(-1)
        if len(self.scores) != len(self.labels) or len(self.scores) == 0:
            raise ValueError("scores and labels must be aligned and non-empty")
        if not np.isin(self.labels, (NORMAL, ABNORMAL)).all():
            raise ValueError("labels must be 0 (normal) or 1 (abnormal)")

    def check_both_classes(self):
        n_pos = int(self.labels.sum())
        if n_pos == 0 or n_pos == len(self.labels):
            raise SingleClass("both normal and abnormal samples are required")


@dataclass(frozen=True)
class EvalConfig:
    level: str = "segment"
    delta: int = 60
    overlap: str = "none"

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}")
        if self.overlap not in OVERLAPS:
            raise ValueError(f"overlap must be one of {OVERLAPS}")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")

    @property
    def name(self) -> str:
        if self.level == "segment":
            return f"{'sliding' if self.overlap == 'sliding' else 'segment'}{self.delta}"
        return self.level


@dataclass
class EvalReport:
    config: EvalConfig
    epochs: list[int] = field(default_factory=list)
    aucs: list[float] = field(default_factory=list)
    eers: list[float] = field(default_factory=list)
    flipped: list[bool] = field(default_factory=list)
    rocs: list[np.ndarray] = field(default_factory=list)

    @property
    def auc(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def eer(self) -> float:
        return float(np.mean(self.eers))

    @property
    def auc_std(self) -> float:
        return float(np.std(self.aucs))

    @property
    def eer_std(self) -> float:
        return float(np.std(self.eers))


# -- ROC kernel ---------------------------------------------------------------


@_accel.njit
def _roc_counts_loop(sorted_scores, sorted_labels):
    n = sorted_scores.shape[0]
    tps = np.zeros(n + 1, dtype=np.int64)
    fps = np.zeros(n + 1, dtype=np.int64)
    k = 0
    tp = 0
    fp = 0
    for i in range(n):
        if sorted_labels[i] == 1:
            tp += 1
        else:
            fp += 1
        if i == n - 1 or sorted_scores[i + 1] != sorted_scores[i]:
            k += 1
            tps[k] = tp
            fps[k] = fp
    return tps[:k + 1], fps[:k + 1]


def _roc_counts_numpy(sorted_scores, sorted_labels):
    ends = np.flatnonzero(np.diff(sorted_scores) != 0)
    ends = np.append(ends, len(sorted_scores) - 1)
    tp = np.cumsum(sorted_labels)[ends]
    fp = (ends + 1) - tp
    return np.concatenate([[0], tp]).astype(np.int64), np.concatenate([[0], fp]).astype(np.int64)


def roc_counts(s: ScoredSet, use_numba: bool | None = None):
    """Cumulative (TP, FP) counts when thresholding at each distinct score, high to low.

    Both arrays start with 0 (threshold above every score).
    """
    s.check_both_classes()
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    order = np.argsort(-s.scores, kind="mergesort")
    kernel = _roc_counts_loop if use_numba else _roc_counts_numpy
    return kernel(np.ascontiguousarray(s.scores[order]), np.ascontiguousarray(s.labels[order]))


def roc_curve(s: ScoredSet) -> np.ndarray:
    """ROC vertices as a (k, 2) array of (FPR, TPR) from (0, 0) to (1, 1)."""
    tp, fp = roc_counts(s)
    return np.column_stack([fp / fp[-1], tp / tp[-1]])


def auc(s: ScoredSet) -> float:
    """Trapezoidal ROC area, i.e. P(abnormal > normal) + P(tie) / 2."""
    tp, fp = roc_counts(s)
    twice_area = np.sum(np.diff(fp) * (tp[1:] + tp[:-1]))
    return float(twice_area / (2.0 * tp[-1] * fp[-1]))


def eer_from_roc(roc: np.ndarray) -> float:
    """Point where FPR equals the miss rate, interpolating linearly between vertices."""
    fpr, tpr = roc[:, 0], roc[:, 1]
    gap = (1.0 - tpr) - fpr  # non-increasing, from 1 to -1
    k = int(np.argmax(gap <= 0))
    if gap[k] == 0:
        return float(fpr[k])
    lam = gap[k - 1] / (gap[k - 1] - gap[k])
    return float(fpr[k - 1] + lam * (fpr[k] - fpr[k - 1]))


def eer(s: ScoredSet) -> float:
    return eer_from_roc(roc_curve(s))


def orient(s: ScoredSet) -> tuple[bool, float]:
    """Whether the channel must be negated to reach AUC >= 0.5 on ``s``, and the raw AUC."""
    raw = auc(s)
    return raw < 0.5, raw


# -- aggregation --------------------------------------------------------------


def aggregate(frame_scores, delta: int, mode: str = "none") -> np.ndarray:
    """Mean score over windows of ``delta`` consecutive frames.

    ``mode="none"`` uses disjoint windows and drops the trailing remainder;
    ``mode="sliding"`` uses every window at stride 1.
    """
    x = np.asarray(frame_scores, dtype=np.float64).reshape(-1)
    if delta < 1:
        raise ValueError("delta must be >= 1")
    if delta > len(x):
        raise SegmentTooLong(f"segment of {delta} frames exceeds sequence of {len(x)}")
    if mode == "none":
        k = len(x) // delta
        return x[: k * delta].reshape(k, delta).mean(axis=1)
    if mode == "sliding":
        return np.lib.stride_tricks.sliding_window_view(x, delta).mean(axis=1)
    raise ValueError(f"unknown aggregation mode {mode!r}")


def sequence_score(frame_scores) -> float:
    x = np.asarray(frame_scores, dtype=np.float64).reshape(-1)
    if len(x) == 0:
        raise EmptySequence("sequence has no frames")
    return float(x.mean())


def level_scores(sequences, labels, cfg: EvalConfig) -> ScoredSet:
    """Pool per-sequence frame scores into one scored set at the configured level."""
    scores, out_labels = [], []
    for frames, label in zip(sequences, labels):
        if cfg.level == "frame":
            vals = np.asarray(frames, dtype=np.float64).reshape(-1)
        elif cfg.level == "segment":
            vals = aggregate(frames, cfg.delta, cfg.overlap)
        else:
            vals = np.array([sequence_score(frames)])
        scores.append(vals)
        out_labels.append(np.full(len(vals), int(label)))
    return ScoredSet(np.concatenate(scores), np.concatenate(out_labels))


def evaluate_epoch_range(per_checkpoint, labels, cfg: EvalConfig, orientation=None, epochs=None) -> EvalReport:
    """AUC / EER for each checkpoint's scores and their means.

    Args:
      per_checkpoint: for each checkpoint, a list of per-sequence frame-score
        arrays aligned with ``labels``.
      labels: one label per sequence (1 = abnormal).
      cfg: aggregation level, segment length and overlap.
      orientation: optional per-checkpoint booleans; True negates the scores.
        When omitted the polarity is decided on the evaluated set itself.
      epochs: optional epoch numbers echoed into the report.
    """
    per_checkpoint = list(per_checkpoint)
    if not per_checkpoint:
        raise ValueError("need at least one checkpoint")
    report = EvalReport(cfg)
    for i, sequences in enumerate(per_checkpoint):
        scored = level_scores(sequences, labels, cfg)
        if orientation is None:
            flip, _ = orient(scored)
        else:
            flip = bool(orientation[i])
        if flip:
            scored = ScoredSet(-scored.scores, scored.labels)
        roc = roc_curve(scored)
        report.epochs.append(int(epochs[i]) if epochs is not None else i)
        report.aucs.append(auc(scored))
        report.eers.append(eer_from_roc(roc))
        report.flipped.append(flip)
        report.rocs.append(roc)
    return report
