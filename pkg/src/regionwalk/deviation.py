"""Absolute deviation between a network and its endpoint interpolant.

Along a segment pi(t) = x0 + t (x1 - x0) the network restricted to one
linear region is affine in t, and so is the straight line a(t) between
the endpoint outputs f(x0) and f(x1). Their gap per logit k is therefore
affine on each region,

    g(t) = c + m t,
    c = f_r(x0) - f(x0),
    m = (f_r(x1) - f_r(x0)) - (f(x1) - f(x0)),

where f_r is the frozen affine map of region r extended to the whole
line. |g| integrates in closed form by splitting at the zero crossing
z = -c/m clamped into the region, which is exact regardless of the sign
of m (the split point is the only place |g| can kink). Summing over the
regions of a trace and scaling by the segment length gives the absolute
deviation per logit; the l2 norm over logits is the headline score.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .discovery import RegionTrace, SegmentTask, TERMINATION_NONE
from .net import Network, forward_batch, forward_frozen_batch


def interpolant_at(f0, f1, t):
    """Point on the straight line between endpoint outputs: f0 + t (f1 - f0)."""
    f0 = np.asarray(f0, dtype=np.float64)
    f1 = np.asarray(f1, dtype=np.float64)
    return f0 + np.multiply(t, f1 - f0)


def region_deviation(c, m, t_a, t_b):
    """Exact integral of |c + m t| over [t_a, t_b]. Broadcasts over arrays."""
    c = np.asarray(c, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    t_a = np.asarray(t_a, dtype=np.float64)
    t_b = np.asarray(t_b, dtype=np.float64)
    if np.any(t_b < t_a):
        raise InputError("region interval has t_b < t_a")
    safe_m = np.where(m == 0.0, 1.0, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = -c / safe_m
    z = np.where(m == 0.0, t_a, z)
    ts = np.clip(z, t_a, t_b)
    left = np.abs(c * (ts - t_a) + m * (ts * ts - t_a * t_a) / 2.0)
    right = np.abs(c * (t_b - ts) + m * (t_b * t_b - ts * ts) / 2.0)
    out = left + right
    return out if out.ndim else float(out)


class DeviationScore:
    """Deviation of one segment (or one whole path, after summing)."""

    __slots__ = ("per_logit", "l2", "density", "partial", "segment_id", "path_id")

    def __init__(self, per_logit: np.ndarray, density: int, partial: bool,
                 segment_id: str | None = None, path_id: str | None = None):
        self.per_logit = np.asarray(per_logit, dtype=np.float64)
        self.l2 = float(np.linalg.norm(self.per_logit))
        self.density = int(density)
        self.partial = bool(partial)
        self.segment_id = segment_id
        self.path_id = path_id

    def __repr__(self) -> str:
        return (f"DeviationScore(l2={self.l2:.6g}, density={self.density}, "
                f"partial={self.partial}, segment_id={self.segment_id!r})")


def absolute_deviation(net: Network, task: SegmentTask, trace: RegionTrace) -> DeviationScore:
    """Closed-form absolute deviation of one traced segment.

    Needs the trace's midpoint patterns; each region costs two frozen
    evaluations (its affine map at both endpoints). A trace that ended in
    a terminal event is integrated over what was found and the score is
    flagged partial.
    """
    if len(trace.patterns) != trace.density:
        raise InputError("trace is missing midpoint patterns")
    if trace.density < 1:
        raise InputError("trace has no regions")

    ends, _ = forward_batch(net, np.stack([task.x0, task.x1]))
    f0, f1 = ends[0], ends[1]

    bits = np.stack([p.bits for p in trace.patterns])
    n = bits.shape[0]
    fr0 = forward_frozen_batch(net, bits, np.broadcast_to(task.x0, (n,) + task.x0.shape))
    fr1 = forward_frozen_batch(net, bits, np.broadcast_to(task.x1, (n,) + task.x1.shape))

    c = fr0 - f0[None, :]                       # (n, K)
    m = (fr1 - fr0) - (f1 - f0)[None, :]        # (n, K)
    b = np.asarray(trace.boundaries)
    t_a = b[:-1][:, None]
    t_b = b[1:][:, None]
    per_region = region_deviation(c, m, t_a, t_b)
    per_logit = task.span * per_region.sum(axis=0)

    return DeviationScore(per_logit=per_logit, density=trace.density,
                          partial=trace.termination != TERMINATION_NONE,
                          segment_id=trace.segment_id, path_id=trace.path_id)


def path_deviation(scores) -> DeviationScore:
    """Sum segment scores into one path score.

    All scores must carry the same path_id; densities add, per-logit
    deviations add, and partial flags propagate.
    """
    scores = list(scores)
    if not scores:
        raise InputError("path_deviation needs at least one score")
    ids = {s.path_id for s in scores}
    if len(ids) != 1:
        raise InputError(f"scores mix path ids: {sorted(map(str, ids))}")
    per_logit = np.sum([s.per_logit for s in scores], axis=0)
    return DeviationScore(per_logit=per_logit,
                          density=sum(s.density for s in scores),
                          partial=any(s.partial for s in scores),
                          segment_id=None, path_id=scores[0].path_id)


def deviation_record(score: DeviationScore) -> dict:
    """JSON-ready summary of one path score (one line of a deviation file)."""
    return {
        "path_id": score.path_id,
        "density": score.density,
        "deviation_l2": score.l2,
        "deviation_per_logit": [float(v) for v in score.per_logit],
        "partial": score.partial,
    }
