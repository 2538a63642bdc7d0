"""Multi-label metrics, ROC/PR curves, patient-level folds and reports."""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import DataError, ParameterError, UndefinedMetricError


@dataclass
class PredictionRecord:
    slice_id: str
    patient_id: str
    scores: np.ndarray
    true_labels: np.ndarray


def records_to_arrays(records):
    truth = np.array([np.asarray(r.true_labels, dtype=np.int64) for r in records])
    scores = np.array([np.asarray(r.scores, dtype=np.float64) for r in records])
    return truth, scores


def predict_sets(scores, thresholds):
    scores = np.asarray(scores, dtype=np.float64)
    return scores >= np.broadcast_to(np.asarray(thresholds, dtype=np.float64), scores.shape[-1:])


def _ratio(num, den, both_empty):
    # 0/0 counts as 1 only when truth and prediction are both empty
    out = np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=den > 0)
    return np.where(both_empty, 1.0, out)


def multilabel_metrics(truth, scores, thresholds):
    """Hamming-score accuracy, example-based precision/recall, and F1.

    ``truth`` is (n, C) binary; a record is predicted to hold class k when
    ``scores[:, k] >= thresholds[k]``. F1 is the harmonic mean of the
    averaged precision and recall.
    """
    T = np.asarray(truth).astype(bool)
    if T.ndim != 2 or len(T) == 0:
        raise DataError("multilabel_metrics needs at least one record")
    S = predict_sets(scores, thresholds)
    return multilabel_metrics_sets(T, S)


def multilabel_metrics_sets(T, S):
    T = np.asarray(T, dtype=bool)
    S = np.asarray(S, dtype=bool)
    inter = (T & S).sum(axis=1)
    union = (T | S).sum(axis=1)
    nt, ns = T.sum(axis=1), S.sum(axis=1)
    empty = union == 0
    acc = float(np.mean(_ratio(inter, union, empty)))
    prec = float(np.mean(_ratio(inter, ns, empty)))
    rec = float(np.mean(_ratio(inter, nt, empty)))
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return {"accuracy": acc, "precision": prec, "recall": rec, "f1": f1}


def per_class_f1(truth, scores, cls, threshold):
    """Binary precision/recall/F1 of one class at ``threshold``.

    Zero predicted positives gives precision 0 and zero actual positives
    gives recall 0; either case sets ``degenerate``.
    """
    t = np.asarray(truth)[:, cls].astype(bool)
    p = np.asarray(scores)[:, cls] >= threshold
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return {"precision": prec, "recall": rec, "f1": f1, "degenerate": degenerate}


def _sweep(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last].astype(np.float64)
    fp = np.cumsum(~y)[last].astype(np.float64)
    return s[last], tp, fp, int(y.sum()), int((~y).sum())


@dataclass
class Curve:
    thresholds: np.ndarray
    x: np.ndarray
    y: np.ndarray
    area: float


def roc_auc(scores, labels):
    """ROC curve over every distinct score and its trapezoidal AUC.

    Tied scores form a single step, so the area equals the Mann-Whitney
    statistic with ties counted as one half.
    """
    thr, tp, fp, npos, nneg = _sweep(scores, labels)
    if npos == 0 or nneg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    tpr = np.r_[0.0, tp / npos]
    fpr = np.r_[0.0, fp / nneg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return Curve(np.r_[np.inf, thr], fpr, tpr, auc)


def pr_curve(scores, labels):
    """Precision-recall points per distinct threshold and average precision
    ``sum_k (R_k - R_{k-1}) P_k``."""
    thr, tp, fp, npos, _ = _sweep(scores, labels)
    if npos == 0:
        raise UndefinedMetricError("precision-recall needs at least one positive label")
    rec = tp / npos
    prec = tp / (tp + fp)
    ap = float(np.sum(np.diff(np.r_[0.0, rec]) * prec))
    return Curve(thr, rec, prec, ap)


def patient_folds(patient_ids, k=5, seed=0):
    """Seeded partition of the distinct patients into ``k`` folds."""
    uniq = sorted(set(patient_ids))
    k = int(k)
    if k < 2:
        raise ParameterError("need at least 2 folds")
    if len(uniq) < k:
        raise DataError(f"need at least {k} distinct patients, got {len(uniq)}")
    perm = rngmod.stream(seed, "folds").permutation(len(uniq))
    return [sorted(uniq[i] for i in perm[f::k]) for f in range(k)]


def slice_folds(patient_ids, folds):
    """Fold index of every slice, looked up through its patient."""
    where = {p: i for i, fold in enumerate(folds) for p in fold}
    try:
        return np.array([where[p] for p in patient_ids], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"patient {exc.args[0]!r} is not in any fold") from None


def choose_thresholds(truth, scores, max_candidates=64, sweeps=2):
    """Per-class thresholds maximising overall multi-label F1.

    Starts from each class's best single-class F1 threshold, then runs
    coordinate ascent over candidate thresholds (score quantile midpoints).
    """
    truth = np.asarray(truth).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    c = scores.shape[1]
    cands = []
    for k in range(c):
        u = np.unique(scores[:, k])
        if len(u) > max_candidates:
            u = np.unique(np.quantile(u, np.linspace(0, 1, max_candidates)))
        mids = (u[1:] + u[:-1]) / 2.0 if len(u) > 1 else u
        cands.append(np.r_[u[0] - 1.0, mids, u[-1] + 1.0])
    thr = np.empty(c)
    for k in range(c):
        f1s = [per_class_f1(truth, scores, k, t)["f1"] for t in cands[k]]
        thr[k] = cands[k][int(np.argmax(f1s))]
    best = multilabel_metrics(truth, scores, thr)["f1"]
    for _ in range(sweeps):
        improved = False
        for k in range(c):
            for t in cands[k]:
                trial = thr.copy()
                trial[k] = t
                f1 = multilabel_metrics(truth, scores, trial)["f1"]
                if f1 > best + 1e-12:
                    best, thr, improved = f1, trial, True
        if not improved:
            break
    return thr


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    class_names: tuple
    per_class: list
    overall: dict
    roc: dict = field(default_factory=dict)
    pr: dict = field(default_factory=dict)
    thresholds: np.ndarray = None


def evaluate(truth, scores, thresholds, class_names):
    truth = np.asarray(truth).astype(np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    per, roc, pr = [], {}, {}
    for k, name in enumerate(class_names):
        row = per_class_f1(truth, scores, k, thresholds[k])
        try:
            roc[name] = roc_auc(scores[:, k], truth[:, k])
            row["auc"] = roc[name].area
        except UndefinedMetricError:
            row["auc"] = float("nan")
        try:
            pr[name] = pr_curve(scores[:, k], truth[:, k])
            row["average_precision"] = pr[name].area
        except UndefinedMetricError:
            row["average_precision"] = float("nan")
        per.append(row)
    overall = multilabel_metrics(truth, scores, thresholds)
    aucs = [r["auc"] for r in per if np.isfinite(r["auc"])]
    overall["mean_auc"] = float(np.mean(aucs)) if aucs else float("nan")
    return EvalReport(tuple(class_names), per, overall, roc, pr, np.asarray(thresholds, dtype=np.float64))


REPORT_COLUMNS = ("row", "precision", "recall", "f1", "auc", "average_precision", "accuracy", "threshold")
CURVE_COLUMNS = ("class", "curve", "threshold", "x", "y")


def _fmt(v):
    if v is None or v == "":
        return ""
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


def report_csv(report, provenance=None):
    """Report as CSV text: one row per class, then the ``overall`` row."""
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {provenance}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for name, row, t in zip(report.class_names, report.per_class, report.thresholds):
        w.writerow([name, _fmt(row["precision"]), _fmt(row["recall"]), _fmt(row["f1"]), _fmt(row["auc"]),
                    _fmt(row["average_precision"]), "", _fmt(t)])
    o = report.overall
    w.writerow(["overall", _fmt(o["precision"]), _fmt(o["recall"]), _fmt(o["f1"]), _fmt(o["mean_auc"]),
                "", _fmt(o["accuracy"]), ""])
    return buf.getvalue()


def curves_csv(report, provenance=None):
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {provenance}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for kind, curves in (("roc", report.roc), ("pr", report.pr)):
        for name in report.class_names:
            c = curves.get(name)
            if c is None:
                continue
            for t, x, y in zip(c.thresholds, c.x, c.y):
                w.writerow([name, kind, _fmt(t), _fmt(x), _fmt(y)])
    return buf.getvalue()


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def curves_svg(curves, title, xlabel, ylabel, size=360):
    """Minimal standalone SVG line plot of ``{name: Curve}`` on the unit square."""
    pad = 40
    inner = size - 2 * pad

    def px(x, y):
        return f"{pad + x * inner:.2f},{pad + (1.0 - y) * inner:.2f}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="11">',
           f'<rect x="{pad}" y="{pad}" width="{inner}" height="{inner}" fill="none" stroke="#444"/>',
           f'<text x="{size / 2:.0f}" y="{pad - 14}" text-anchor="middle" font-size="13">{title}</text>',
           f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle">{xlabel}</text>',
           f'<text x="12" y="{size / 2:.0f}" text-anchor="middle" transform="rotate(-90 12 {size / 2:.0f})">'
           f'{ylabel}</text>']
    for i, (name, c) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(px(float(x), float(y)) for x, y in zip(c.x, c.y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{pad + 6}" y="{pad + inner - 8 - 14 * i}" fill="{color}">'
                   f'{name} ({c.area:.3f})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
