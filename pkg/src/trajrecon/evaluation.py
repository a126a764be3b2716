"""CLEAR-MOT scoring under footprint IOU, plus kinematic statistics.

A dataset is any sequence of objects exposing ``id``, ``t``, ``x``, ``y``,
``length``, ``width`` and ``direction`` (fragments and trajectories both
qualify).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .core import DEFAULT_DT, footprint, frame_index

IOU_THRESHOLD = 0.3


def footprint_iou(a, b) -> float:
    """IOU of two ``(x0, x1, y0, y1)`` rectangles."""
    w = min(a[1], b[1]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[2], b[2])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    union = (a[1] - a[0]) * (a[3] - a[2]) + (b[1] - b[0]) * (b[3] - b[2]) - inter
    return float(inter / union)


@dataclass
class FrameMatch:
    t: float
    pairs: list  # (gt_id, pred_id, iou)
    fn: list  # unmatched gt ids
    fp: list  # unmatched pred ids


class _Detections:
    def __init__(self, dataset, dt):
        self.ids = [str(o.id) for o in dataset]
        if not dataset:
            self.frame = np.zeros(0, np.int64)
            self.owner = np.zeros(0, np.int64)
            self.box = np.zeros((4, 0))
            return
        frames, owner, boxes = [], [], []
        for i, o in enumerate(dataset):
            k = frame_index(o.t, dt)
            frames.append(k)
            owner.append(np.full(k.size, i, dtype=np.int64))
            boxes.append(np.vstack(footprint(o.x, o.y, o.length, o.width, o.direction)))
        frame = np.concatenate(frames)
        own = np.concatenate(owner)
        box = np.hstack(boxes)
        # sort by frame, ties by id so assignment tie-breaks favour smaller ids
        rank = np.empty(len(self.ids), dtype=np.int64)
        rank[np.argsort(self.ids, kind="stable")] = np.arange(len(self.ids))
        order = np.lexsort((rank[own], frame))
        self.frame = frame[order]
        self.owner = own[order]
        self.box = np.ascontiguousarray(box[:, order])

    def slices(self, frames):
        lo = np.searchsorted(self.frame, frames, side="left")
        hi = np.searchsorted(self.frame, frames, side="right")
        return lo, hi


def match_frames(gt: Sequence, pred: Sequence, iou_threshold: float = IOU_THRESHOLD,
                 dt: float = DEFAULT_DT) -> list[FrameMatch]:
    """Per-frame one-to-one matching, continuity first.

    A pair matched in the previous frame is kept while its IOU stays at or
    above the threshold; the rest is solved as a maximum-IOU assignment.
    """
    G = _Detections(gt, dt)
    P = _Detections(pred, dt)
    frames = np.union1d(G.frame, P.frame)
    glo, ghi = G.slices(frames)
    plo, phi = P.slices(frames)
    pair_pred = np.full(len(G.ids), -1, dtype=np.int64)
    pair_frame = np.full(len(G.ids), -2, dtype=np.int64)
    col_of = np.full(max(len(P.ids), 1), -1, dtype=np.int64)
    iou_fn = _kernels.iou_matrix
    out = []
    for f, a, b, c, d in zip(frames.tolist(), glo.tolist(), ghi.tolist(), plo.tolist(), phi.tolist()):
        t = f * dt
        g = G.owner[a:b]
        p = P.owner[c:d]
        if g.size == 0 or p.size == 0:
            out.append(FrameMatch(t, [], [G.ids[i] for i in g], [P.ids[j] for j in p]))
            continue
        gb = G.box[:, a:b]
        pb = P.box[:, c:d]
        iou = iou_fn(gb[0], gb[1], gb[2], gb[3], pb[0], pb[1], pb[2], pb[3])
        mg = np.full(g.size, -1, dtype=np.int64)
        used = np.zeros(p.size, dtype=bool)
        col_of[p] = np.arange(p.size)
        prev = np.where(pair_frame[g] == f - 1, pair_pred[g], -1)
        for r in np.flatnonzero(prev >= 0).tolist():
            cidx = col_of[prev[r]]
            if cidx >= 0 and p[cidx] == prev[r] and not used[cidx] and iou[r, cidx] >= iou_threshold:
                mg[r] = cidx
                used[cidx] = True
        col_of[p] = -1
        free_r = np.flatnonzero(mg < 0)
        free_c = np.flatnonzero(~used)
        if free_r.size and free_c.size:
            sub = iou[np.ix_(free_r, free_c)]
            if (sub >= iou_threshold).any():
                sub = np.where(sub >= iou_threshold, sub, 0.0)
                rr, cc = linear_sum_assignment(sub, maximize=True)
                ok = sub[rr, cc] >= iou_threshold
                mg[free_r[rr[ok]]] = free_c[cc[ok]]
                used[free_c[cc[ok]]] = True
        hit = np.flatnonzero(mg >= 0)
        pair_pred[g[hit]] = p[mg[hit]]
        pair_frame[g[hit]] = f
        pairs = [(G.ids[g[r]], P.ids[p[mg[r]]], float(iou[r, mg[r]])) for r in hit.tolist()]
        out.append(FrameMatch(t, pairs, [G.ids[i] for i in g[mg < 0]], [P.ids[j] for j in p[~used]]))
    return out


@dataclass
class DistStats:
    min: float = math.nan
    max: float = math.nan
    mean: float = math.nan
    stdev: float = math.nan
    count: int = 0

    @classmethod
    def of(cls, v) -> "DistStats":
        v = np.asarray(v, dtype=np.float64)
        if v.size == 0:
            return cls()
        return cls(float(v.min()), float(v.max()), float(v.mean()), float(v.std()), int(v.size))


@dataclass
class KinematicStats:
    length: DistStats
    speed: DistStats
    accel: DistStats
    samples: dict = field(default_factory=dict, repr=False)

    def histograms(self, bins: int = 50) -> dict:
        out = {}
        for name, v in self.samples.items():
            if len(v):
                counts, edges = np.histogram(v, bins=bins)
                out[name] = {"counts": counts.tolist(), "edges": edges.tolist()}
            else:
                out[name] = {"counts": [], "edges": []}
        return out


def kinematic_stats(dataset: Sequence) -> KinematicStats:
    """Finite-difference speed and acceleration over every object.

    Speed is measured along the travel direction. Acceleration uses the
    spacing between consecutive speed samples' midpoints.
    """
    lengths, speeds, accels = [], [], []
    for o in dataset:
        t = np.asarray(o.t, dtype=np.float64)
        x = np.asarray(o.x, dtype=np.float64)
        lengths.append(abs(float(x[-1] - x[0])) if x.size else 0.0)
        if t.size < 2:
            continue
        dtt = np.diff(t)
        v = o.direction * np.diff(x) / dtt
        speeds.append(v)
        if t.size >= 3:
            mid = 0.5 * (t[1:] + t[:-1])
            accels.append(np.diff(v) / np.diff(mid))
    cat = lambda a: np.concatenate(a) if a else np.zeros(0)  # noqa: E731
    sp, ac = cat(speeds), cat(accels)
    return KinematicStats(DistStats.of(lengths), DistStats.of(sp), DistStats.of(ac),
                          {"length": np.asarray(lengths), "speed": sp, "accel": ac})


@dataclass
class EvalReport:
    precision: float
    recall: float
    mota: float
    motp: float
    fgmt_per_gt: float
    sw_per_gt: float
    n_gt: int
    n_pred: int
    tp: int
    fp: int
    fn: int
    idsw: int
    fgmt: int
    kinematics: KinematicStats | None = None

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "kinematics"}
        if self.kinematics is not None:
            d["kinematics"] = {n: asdict(getattr(self.kinematics, n)) for n in ("length", "speed", "accel")}
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_table(self, label: str = "PRED") -> str:
        return format_table({label: self})


def format_table(reports: dict) -> str:
    """Aligned text table, one column per report."""
    names = list(reports)
    rows = [("Precision", "", "precision"), ("Recall", "", "recall"), ("MOTA", "", "mota"),
            ("MOTP", "", "motp"), ("Fgmt/GT", "", "fgmt_per_gt"), ("Sw/GT", "", "sw_per_gt"),
            ("No. trajectories", "", "n_pred")]
    lines = []
    head = f"{'Metrics / Statistics':<22}{'':<7}" + "".join(f"{n:>12}" for n in names)
    lines.append(head)
    lines.append("-" * len(head))
    for title, sub, key in rows:
        vals = []
        for n in names:
            v = getattr(reports[n], key)
            vals.append(f"{v:>12d}" if isinstance(v, int) else f"{v:>12.3f}")
        lines.append(f"{title:<22}{sub:<7}" + "".join(vals))
    for group, unit in (("length", "(ft)"), ("speed", "(ft/s)"), ("accel", "(ft/s2)")):
        for i, stat in enumerate(("min", "max", "mean", "stdev")):
            title = {"length": "Trajectory lengths", "speed": "Speed", "accel": "Acceleration"}[group]
            label = title if i == 0 else (unit if i == 1 else "")
            vals = []
            for n in names:
                k = reports[n].kinematics
                vals.append(f"{getattr(getattr(k, group), stat):>12.2f}" if k is not None else f"{'-':>12}")
            lines.append(f"{label:<22}{stat:<7}" + "".join(vals))
    return "\n".join(lines)


def compute_metrics(matches: Sequence[FrameMatch], n_pred: int | None = None) -> EvalReport:
    tp = fp = fn = idsw = fgmt = 0
    iou_sum = 0.0
    last_pred: dict = {}
    was_matched: dict = {}
    gts: set = set()
    preds: set = set()
    for fm in matches:
        fp += len(fm.fp)
        fn += len(fm.fn)
        tp += len(fm.pairs)
        preds.update(fm.fp)
        for g, p, iou in fm.pairs:
            iou_sum += iou
            gts.add(g)
            preds.add(p)
            q = last_pred.get(g)
            if q is not None and q != p:
                idsw += 1
            last_pred[g] = p
            was_matched[g] = True
        for g in fm.fn:
            gts.add(g)
            if was_matched.get(g):
                fgmt += 1
            was_matched[g] = False
    n_gt_det = tp + fn
    if not gts or n_gt_det == 0:
        raise ValueError("no ground truth")
    n_gt = len(gts)
    return EvalReport(
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / n_gt_det,
        mota=1.0 - (fn + fp + idsw) / n_gt_det,
        motp=iou_sum / tp if tp else 0.0,
        fgmt_per_gt=fgmt / n_gt,
        sw_per_gt=idsw / n_gt,
        n_gt=n_gt,
        n_pred=len(preds) if n_pred is None else n_pred,
        tp=tp, fp=fp, fn=fn, idsw=idsw, fgmt=fgmt,
    )


def evaluate(pred: Sequence, gt: Sequence, iou_threshold: float = IOU_THRESHOLD,
             dt: float = DEFAULT_DT) -> EvalReport:
    """Match, score and attach kinematic statistics of ``pred``."""
    rep = compute_metrics(match_frames(gt, pred, iou_threshold, dt), n_pred=len(pred))
    rep.kinematics = kinematic_stats(pred)
    return rep
