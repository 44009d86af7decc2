"""Adaptive discovery of linear regions along straight segments.

Walking from x0 toward x1, the distance to the nearest region boundary
ahead can be read off in closed form: inside a region the network is
affine, so each ReLU input moves linearly along the direction and the
displacement at which neuron (w, b) hits zero is

    lambda = -(w' x + b) / (w' d)

evaluated at the frozen masks of the current region. One joint pass of
x and d yields every candidate at once; the smallest candidate above the
sensitivity tau is the next crossing. Repeating until the pattern of x1
is reached enumerates, in order, every region along the segment whose
extent exceeds tau.

Candidates at or below tau are discarded, so regions shorter than tau
are stepped over and the reported density undercounts by those (a few
percent at typical settings). tau is expressed in units of steps along
the unit direction.

A note on boundary landings: each step lands on the crossed hyperplane
up to roundoff, leaving that preactivation at ~1e-16 of either sign
(hand-built integer nets land at exactly zero). Classifying such a
point by the raw sign would randomly keep the stale bit, so the walk
resolves region membership at its own resolution tau: along the walk a
bit is on iff pre + tau * dir > 0 (the sign a hair of length tau
ahead), and the pattern of x1 it compares against is resolved looking
backward, pre - tau * dir > 0. The resolved masks gate the evaluation
itself, not just the reported bits: deeper preactivations and their
slopes are computed in the resolved region's affine map, otherwise a
wrong-sign landing residue (~1e-17 on a crossed hyperplane) would feed
the stale region's slopes into every candidate downstream and the walk
could stall just short of the far end. Hyperplanes closer than tau are
thereby treated as already crossed on both sides of the comparison,
which is exactly the contract of the tau filter. Plain forward
evaluation keeps the strict pre > 0 convention.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError
from .net import ActivationPattern, Network, _joint_pass

TAU_DEFAULT = 1e-6
BATCH_DEFAULT = 1024
PARALLEL_TOL = 1e-300  # |w'd| below this counts as moving parallel to the hyperplane

TERMINATION_NONE = "none"
TERMINATION_NO_LAMBDA = "no_finite_lambda"
TERMINATION_OVERSHOOT = "overshoot"


@dataclass
class SegmentTask:
    """One straight segment to trace, with its precomputed geometry."""

    x0: np.ndarray
    x1: np.ndarray
    unit_dir: np.ndarray
    span: float
    tau: float = TAU_DEFAULT
    segment_id: str | None = None
    path_id: str | None = None

    @classmethod
    def from_endpoints(cls, x0, x1, tau: float = TAU_DEFAULT,
                       segment_id: str | None = None, path_id: str | None = None) -> "SegmentTask":
        x0 = np.asarray(x0, dtype=np.float64)
        x1 = np.asarray(x1, dtype=np.float64)
        if x0.shape != x1.shape:
            raise InputError(f"endpoint shapes differ: {x0.shape} vs {x1.shape}")
        if not (np.isfinite(x0).all() and np.isfinite(x1).all()):
            raise InputError("segment endpoints must be finite")
        if tau <= 0:
            raise InputError(f"tau must be positive, got {tau}")
        span = float(np.linalg.norm((x1 - x0).ravel()))
        if span == 0.0:
            raise InputError("segment endpoints coincide")
        unit = (x1 - x0) / span
        return cls(x0=x0, x1=x1, unit_dir=unit, span=span, tau=tau,
                   segment_id=segment_id, path_id=path_id)


@dataclass
class CrossingRecord:
    """One boundary crossing, or the terminal event that stopped the walk."""

    t: float                       # position of the boundary as a fraction of span, in [0, 1]
    lam: float                     # step length along unit_dir that produced it
    pattern_after: ActivationPattern | None
    layer: int | None              # ReLU ordinal of the crossed neuron
    neuron: int | None             # flat index within that ReLU's input
    termination: str = TERMINATION_NONE


@dataclass
class RegionTrace:
    """Ordered partition of a segment into linear regions.

    boundaries has t_0 = 0 and t_last = 1 always; when the walk stops
    early (termination != none) the final interval simply covers the
    remainder, and the trace is marked accordingly. patterns holds the
    activation pattern at each interval midpoint.
    """

    boundaries: list[float]
    records: list[CrossingRecord]
    patterns: list[ActivationPattern] = field(default_factory=list)
    segment_id: str | None = None
    path_id: str | None = None

    @property
    def density(self) -> int:
        return len(self.boundaries) - 1

    @property
    def termination(self) -> str:
        if self.records and self.records[-1].termination != TERMINATION_NONE:
            return self.records[-1].termination
        return TERMINATION_NONE

    @property
    def lambdas(self) -> list[float]:
        return [r.lam for r in self.records if r.termination == TERMINATION_NONE]


def _candidates(px: np.ndarray, pd: np.ndarray, tau: float) -> np.ndarray:
    """Crossing displacements for one ReLU's inputs; non-crossings become +inf."""
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = -px / pd
    cand = np.where(np.abs(pd) < PARALLEL_TOL, np.inf, cand)
    # anything at or below tau (including negatives and nan) is not a step
    return np.where(cand > tau, cand, np.inf)


def _scan_candidates(relu_inputs, tau: float) -> tuple[float, int | None, int | None]:
    best = math.inf
    layer = neuron = None
    for idx, (px, pd) in enumerate(relu_inputs):
        cand = _candidates(px[0], pd[0], tau)
        j = int(np.argmin(cand))
        if cand[j] < best:
            best = float(cand[j])
            layer, neuron = idx, j
    return best, layer, neuron


def find_lambda(net: Network, x, unit_dir, tau: float = TAU_DEFAULT):
    """Distance to the nearest region boundary ahead of x along unit_dir.

    Returns (lam, layer, neuron) where layer is the ReLU ordinal and
    neuron the flat index of the first-crossed hyperplane. Ties resolve
    to the lowest (layer, neuron). Returns (inf, None, None) when no
    candidate survives the tau filter.
    """
    if tau <= 0:
        raise InputError(f"tau must be positive, got {tau}")
    xb = np.asarray(x, dtype=np.float64)[None]
    db = np.asarray(unit_dir, dtype=np.float64)[None]
    if xb.shape != db.shape:
        raise InputError("x and unit_dir shapes differ")
    if not np.any(db):
        raise InputError("unit_dir is all-zero")
    _, _, relu_inputs = _joint_pass(net, xb, db, keep_relu_inputs=True, resolve=tau)
    return _scan_candidates(relu_inputs, tau)


def find_linear_regions(net: Network, task: SegmentTask) -> RegionTrace:
    """Trace every linear region of extent > tau along one segment.

    The walk advances by the closed-form crossing distance, re-reading the
    pattern after each step, and stops when the pattern of x1 is reached.
    Failure to reach it is recorded as a terminal event (no usable step
    left: no_finite_lambda; next crossing past the far end: overshoot)
    rather than raised, and the final interval is closed at t = 1.
    """
    if task.x0.shape != net.input_shape:
        raise InputError(f"task endpoints have shape {task.x0.shape}, network expects {net.input_shape}")
    x0 = task.x0
    d = task.unit_dir
    span = task.span
    tau = task.tau

    _, target_bits, _ = _joint_pass(net, task.x1[None], d[None], resolve=-tau)
    target = target_bits[0]

    _, walk_bits, relu_inputs = _joint_pass(net, x0[None], d[None],
                                            keep_relu_inputs=True, resolve=tau)
    bits = walk_bits[0]

    boundaries = [0.0]
    records: list[CrossingRecord] = []
    cum = 0.0
    max_steps = int(span / tau) + 2

    if not np.array_equal(bits, target):
        steps = 0
        while True:
            steps += 1
            if steps > max_steps:
                raise NumericError(
                    f"segment {task.segment_id or '?'}: more than {max_steps} steps, tau too small for span"
                )
            lam, layer, neuron = _scan_candidates(relu_inputs, tau)
            if math.isinf(lam):
                records.append(CrossingRecord(t=1.0, lam=math.inf, pattern_after=None,
                                              layer=None, neuron=None,
                                              termination=TERMINATION_NO_LAMBDA))
                break
            if cum + lam > span:
                records.append(CrossingRecord(t=1.0, lam=lam, pattern_after=None,
                                              layer=layer, neuron=neuron,
                                              termination=TERMINATION_OVERSHOOT))
                break
            cum = cum + lam
            x = x0 + cum * d
            _, walk_bits, relu_inputs = _joint_pass(net, x[None], d[None],
                                                    keep_relu_inputs=True, resolve=tau)
            bits = walk_bits[0]
            t = cum / span
            boundaries.append(t)
            records.append(CrossingRecord(t=t, lam=lam,
                                          pattern_after=ActivationPattern(bits),
                                          layer=layer, neuron=neuron))
            if np.array_equal(bits, target):
                break

    if boundaries[-1] < 1.0:
        boundaries.append(1.0)

    b = np.asarray(boundaries)
    mids = (b[:-1] + b[1:]) / 2.0
    shape_ones = (1,) * x0.ndim
    xs = x0[None] + (mids * span).reshape((-1,) + shape_ones) * d[None]
    _, mid_bits, _ = _joint_pass(net, xs)
    patterns = [ActivationPattern(row) for row in mid_bits]

    return RegionTrace(boundaries=boundaries, records=records, patterns=patterns,
                       segment_id=task.segment_id, path_id=task.path_id)


_WORKER_NET: Network | None = None


def _pool_init(net: Network) -> None:
    global _WORKER_NET
    _WORKER_NET = net


def _pool_trace(task: SegmentTask) -> RegionTrace:
    return find_linear_regions(_WORKER_NET, task)


def trace_batch(net: Network, tasks, batch_size: int = BATCH_DEFAULT,
                workers: int = 1) -> list[RegionTrace]:
    """Trace many segments, results in input order.

    Every segment runs the identical single-segment walk, so traces are
    bit-for-bit independent of batch_size and worker count; batch_size
    only caps the dispatch chunk handed to each worker. Terminal events
    inside a trace never abort the batch.
    """
    tasks = list(tasks)
    if not tasks:
        raise InputError("trace_batch needs at least one task")
    if batch_size < 1:
        raise InputError(f"batch_size must be positive, got {batch_size}")
    if workers <= 1:
        return [find_linear_regions(net, t) for t in tasks]
    chunk = max(1, min(batch_size, math.ceil(len(tasks) / workers)))
    with ProcessPoolExecutor(max_workers=workers, initializer=_pool_init, initargs=(net,)) as ex:
        return list(ex.map(_pool_trace, tasks, chunksize=chunk))


def rebuild_trace(net: Network, task: SegmentTask, boundaries,
                  termination: str = TERMINATION_NONE) -> RegionTrace:
    """Reconstruct a trace from stored boundaries.

    Midpoint patterns are recomputed from the model; crossing records are
    not recoverable and only a terminal marker survives. Used to pick a
    trace file back up for deviation scoring.
    """
    b = np.asarray(boundaries, dtype=np.float64)
    if b.size < 2 or b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
        raise InputError(f"segment {task.segment_id or '?'}: invalid boundary sequence")
    mids = (b[:-1] + b[1:]) / 2.0
    shape_ones = (1,) * task.x0.ndim
    xs = task.x0[None] + (mids * task.span).reshape((-1,) + shape_ones) * task.unit_dir[None]
    _, mid_bits, _ = _joint_pass(net, xs)
    records = []
    if termination != TERMINATION_NONE:
        records.append(CrossingRecord(t=1.0, lam=math.inf, pattern_after=None,
                                      layer=None, neuron=None, termination=termination))
    return RegionTrace(boundaries=[float(t) for t in b], records=records,
                       patterns=[ActivationPattern(row) for row in mid_bits],
                       segment_id=task.segment_id, path_id=task.path_id)


def trace_record(trace: RegionTrace) -> dict:
    """JSON-ready summary of one trace (one line of a trace file)."""
    lams = trace.lambdas
    return {
        "segment_id": trace.segment_id,
        "path_id": trace.path_id,
        "density": trace.density,
        "boundaries_t": [float(t) for t in trace.boundaries],
        "terminations": trace.termination,
        "lambda_min": float(min(lams)) if lams else None,
        "lambda_median": float(np.median(lams)) if lams else None,
    }
