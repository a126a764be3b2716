"""Partitioned streaming pipeline: ingest, per-partition association, a
master stitching pass, then concurrent rectification.

Fragments are routed to the partition holding their last point. Each
worker owns one :class:`AssociationState`; nothing is shared between
workers. Chains that come within ``margin`` feet of an interior boundary
are handed to a master pass: their fragments inside the boundary zone are
re-associated individually, the rest of each chain as fixed
super-fragments. One pipeline runs per travel direction.
"""
from __future__ import annotations

import heapq
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .association import AssociationState, SuperFragment, chain_cost
from .core import Fragment
from .costs import CostModelParams
from .io import RecordError, apply_config, fragment_from_record, iter_records, read_config, write_trajectories
from .rectify import RectifierConfig, rectify_trajectory

log = logging.getLogger(__name__)

THREADS_ENV = "TRAJRECON_THREADS"


class PipelineError(RuntimeError):
    """A stage failed; ``manifest`` describes what was written before it."""

    def __init__(self, msg: str, manifest: dict | None = None):
        super().__init__(msg)
        self.manifest = manifest or {}


def resolve_threads(requested: int | None = None) -> int:
    """Thread count: the environment variable wins over ``requested``."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    else:
        n = requested if requested is not None else 1
    if n < 1:
        raise ValueError("thread count must be at least 1")
    return n


# ---------------------------------------------------------------------------
# ingest

class StreamIngest:
    """Reorder a fragment stream by last timestamp within a bounded window.

    A record is held until the watermark (largest last timestamp seen) is
    ``window`` seconds past it. Records whose last timestamp is already
    older than ``watermark - window`` on arrival are rejected and counted.
    """

    def __init__(self, records: Iterable, window: float = 5.0):
        if window < 0:
            raise ValueError("window must be non-negative")
        self.window = float(window)
        self._records = records
        self.n_read = 0
        self.n_emitted = 0
        self.rejected: list[str] = []

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)

    def __iter__(self) -> Iterator[Fragment]:
        heap: list = []
        wm = -math.inf
        seq = 0
        for f in self._records:
            self.n_read += 1
            if f.t_end < wm - self.window:
                log.error("fragment %s rejected: last timestamp %.2f is %.2f s behind the watermark %.2f",
                          f.id, f.t_end, wm - f.t_end, wm)
                self.rejected.append(f.id)
                continue
            wm = max(wm, f.t_end)
            heapq.heappush(heap, (f.t_end, seq, f))
            seq += 1
            while heap and heap[0][0] <= wm - self.window:
                self.n_emitted += 1
                yield heapq.heappop(heap)[2]
        while heap:
            self.n_emitted += 1
            yield heapq.heappop(heap)[2]


def _file_fragments(path) -> Iterator[Fragment]:
    for lineno, rec in iter_records(path):
        try:
            yield fragment_from_record(rec)
        except ValueError as e:
            raise RecordError(path, lineno, str(e)) from None


def stream_ingest(source, window: float = 5.0) -> StreamIngest:
    """Ordered fragment stream from a JSONL path or an iterable of fragments."""
    if isinstance(source, (str, os.PathLike)):
        p = Path(source)
        if not p.exists():
            raise FileNotFoundError(f"input not found: {p}")
        source = _file_fragments(p)
    return StreamIngest(source, window)


# ---------------------------------------------------------------------------
# config

@dataclass
class PipelineConfig:
    input: str | None = None
    output: str = "trajectories.jsonl"
    csv_output: str | None = None
    # interior partition boundaries along the corridor (ft); empty = one partition
    boundaries: tuple = ()
    # with no explicit boundaries, split this extent evenly into ``workers`` parts
    corridor: tuple = (0.0, 2000.0)
    workers: int = 1
    horizon: float = 60.0
    # boundary zone half-width; None = max_gap * v_max
    margin: float | None = None
    v_max: float = 100.0
    reorder_window: float = 5.0
    threads: int = 1
    seed: int = 0
    cost: CostModelParams = field(default_factory=CostModelParams)
    rectifier: RectifierConfig = field(default_factory=RectifierConfig)

    def __post_init__(self):
        self.boundaries = tuple(float(b) for b in self.boundaries)
        if any(b1 <= b0 for b0, b1 in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("partition boundaries must be strictly increasing")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.margin is not None and self.margin < 0:
            raise ValueError("margin must be non-negative")

    def partition_bounds(self) -> tuple:
        if self.boundaries:
            return self.boundaries
        if self.workers == 1:
            return ()
        x0, x1 = self.corridor
        return tuple(float(b) for b in np.linspace(x0, x1, self.workers + 1)[1:-1])

    @property
    def boundary_margin(self) -> float:
        return self.margin if self.margin is not None else self.cost.max_gap * self.v_max

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        """Read ``[pipeline]``, ``[association]`` and ``[rectification]`` sections.

        Keys outside any section belong to ``[pipeline]``.
        """
        sec = read_config(path)
        pipe = dict(sec.pop("general", {}))
        pipe.update(sec.pop("pipeline", {}))
        cost = apply_config(CostModelParams, sec.pop("association", {}))
        rect = apply_config(RectifierConfig, sec.pop("rectification", {}))
        for name in sec:
            if name not in ("scenario", "noise", "benchmark"):
                raise ValueError(f"{path}: unknown section [{name}]")
        cfg = apply_config(cls, pipe, cls(cost=cost, rectifier=rect))
        # paths in the file are relative to the file
        base = Path(path).resolve().parent
        for key in ("input", "output", "csv_output"):
            v = getattr(cfg, key)
            if v and not Path(v).is_absolute():
                setattr(cfg, key, str(base / v))
        for k, v in overrides.items():
            if v is not None:
                setattr(cfg, k, v)
        cfg.__post_init__()
        return cfg


# ---------------------------------------------------------------------------
# stages

@dataclass
class WorkerResult:
    partition: int
    direction: int
    chains: list
    excluded: list
    n_fragments: int
    peak_resident: int


def run_worker(partition: int, direction: int, fragments: Sequence[Fragment], params: CostModelParams,
               horizon: float) -> WorkerResult:
    """Online association over one partition's stream (already in last-timestamp order)."""
    st = AssociationState(params, horizon)
    for f in fragments:
        st.add(f)
        st.evict()
    st.flush()
    return WorkerResult(partition, direction, list(st.finalized), list(st.excluded), len(fragments),
                        st.peak_resident)


def partition_of(f: Fragment, bounds: Sequence[float]) -> int:
    """Index of the partition holding the fragment's last point."""
    return int(np.searchsorted(np.asarray(bounds, dtype=np.float64), float(f.x[-1]), side="right"))


def _touches(frags: Sequence[Fragment], bounds, margin) -> bool:
    lo = min(float(f.x.min()) for f in frags)
    hi = max(float(f.x.max()) for f in frags)
    return any(hi >= b - margin and lo <= b + margin for b in bounds)


def _master_units(frags: Sequence[Fragment], params: CostModelParams, bounds, margin) -> list:
    """Split a worker chain for the master pass.

    Links the worker made near a boundary may have been chosen without the
    fragments routed to the neighbouring partition, so fragments inside a
    boundary zone are released one by one. Runs of fragments outside every
    zone stay fixed and travel as super-fragments.
    """
    out, run = [], []

    def close():
        if len(run) == 1:
            out.append(run[0])
        elif run:
            out.append(SuperFragment(run[0].id, tuple(run), chain_cost(run, params)))
        run.clear()

    for f in frags:
        if _touches([f], bounds, margin):
            close()
            out.append(f)
        else:
            run.append(f)
    close()
    return out


def master_pass(results: Sequence[WorkerResult], by_id: dict, params: CostModelParams, horizon: float,
                bounds: Sequence[float], margin: float):
    """Stitch worker chains that reach into a boundary zone.

    Returns ``(chains, excluded, peak_resident)``.
    """
    keep, units = [], []
    excluded = []
    for r in results:
        for ch in r.chains:
            frags = [by_id[i] for i in ch]
            if not bounds or not _touches(frags, bounds, margin):
                keep.append(ch)
            else:
                units.extend(_master_units(frags, params, bounds, margin))
        for i in r.excluded:
            f = by_id[i]
            if bounds and _touches([f], bounds, margin):
                units.append(f)
            else:
                excluded.append(i)
    if not units:
        return keep, excluded, 0
    # ordered merge of the worker outputs on last timestamp
    units.sort(key=lambda u: (u.t_end, u.id))
    st = AssociationState(params, horizon)
    for u in units:
        st.add(u)
        st.evict()
    st.flush()
    return keep + st.finalized, excluded + list(st.excluded), st.peak_resident


@dataclass
class RunSummary:
    n_fragments: int = 0
    n_rejected: int = 0
    n_chains: int = 0
    n_excluded: int = 0
    n_trajectories: int = 0
    n_unrectified: int = 0
    total_cost: float = 0.0
    wall_time: float = 0.0
    peak_resident: int = 0
    workers: list = field(default_factory=list)
    stage_times: dict = field(default_factory=dict)
    output: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _sorted_chains(chains, by_id):
    """Chains ordered by first timestamp, then trajectory id (first fragment id)."""
    fixed = []
    for ch in chains:
        ch = sorted(ch, key=lambda i: (by_id[i].t_start, by_id[i].t_end, i))
        fixed.append(ch)
    fixed.sort(key=lambda c: (by_id[c[0]].t_start, c[0]))
    return fixed


def associate_stream(fragments: Iterable[Fragment], config: PipelineConfig, threads: int = 1):
    """Stages one and two. Returns ``(chains, excluded, by_id, worker stats, peak)``."""
    bounds = config.partition_bounds()
    margin = config.boundary_margin
    by_id: dict = {}
    queues: dict = {}
    for f in fragments:
        if f.id in by_id:
            raise ValueError(f"duplicate fragment id {f.id!r}")
        by_id[f.id] = f
        queues.setdefault((f.direction, partition_of(f, bounds)), []).append(f)
    keys = sorted(queues)
    with ThreadPoolExecutor(max_workers=max(1, min(threads, len(keys) or 1))) as ex:
        futs = {k: ex.submit(run_worker, k[1], k[0], queues[k], config.cost, config.horizon) for k in keys}
        results = []
        for k in keys:
            try:
                results.append(futs[k].result())
            except Exception as e:  # surfaced as a pipeline failure below
                raise PipelineError(f"worker {k[1]} (direction {k[0]:+d}) failed: {e}",
                                    {"stage": "association", "partition": k[1], "direction": k[0]}) from e
    chains, excluded = [], []
    peak = max((r.peak_resident for r in results), default=0)
    for d in sorted({k[0] for k in keys}):
        rs = [r for r in results if r.direction == d]
        c, x, p = master_pass(rs, by_id, config.cost, config.horizon, bounds, margin)
        chains += c
        excluded += x
        peak = max(peak, p)
    stats = [{"partition": r.partition, "direction": r.direction, "fragments": r.n_fragments,
              "chains": len(r.chains), "peak_resident": r.peak_resident} for r in results]
    return _sorted_chains(chains, by_id), sorted(excluded), by_id, stats, peak


def rectify_chains(chains: Sequence[Sequence[str]], by_id: dict, config: RectifierConfig | None = None,
                   threads: int = 1, on_error: str = "passthrough") -> Iterator:
    """Rectify chains on a thread pool; results come back in input order."""
    config = config or RectifierConfig()

    def job(ch):
        return rectify_trajectory([by_id[i] for i in ch], config, ch[0], on_error=on_error)

    if threads <= 1:
        for ch in chains:
            yield job(ch)
        return
    with ThreadPoolExecutor(max_workers=threads) as ex:
        # bounded look-ahead keeps memory flat on long runs
        window = 4 * threads
        pending = []
        it = iter(chains)
        for ch in it:
            pending.append(ex.submit(job, ch))
            if len(pending) >= window:
                yield pending.pop(0).result()
        for fut in pending:
            yield fut.result()


def _manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


def run_pipeline(config: PipelineConfig, fragments: Iterable[Fragment] | None = None,
                 threads: int | None = None) -> RunSummary:
    """Run every stage and write trajectories to ``config.output``.

    ``fragments`` replaces reading ``config.input``. On failure a manifest
    next to the output lists what was completed and the error, and
    :class:`PipelineError` is raised.
    """
    t0 = time.perf_counter()
    threads = resolve_threads(threads if threads is not None else config.threads)
    out = Path(config.output)
    summary = RunSummary(output=str(out))
    manifest = {"status": "running", "output": str(out), "stages_completed": [], "trajectories_written": 0}
    mpath = _manifest_path(out)
    mpath.unlink(missing_ok=True)

    def fail(stage, err):
        extra = {k: v for k, v in getattr(err, "manifest", {}).items() if k != "stage"}
        manifest.update(extra, status="failed", stage=stage, error=str(err))
        mpath.parent.mkdir(parents=True, exist_ok=True)
        mpath.write_text(json.dumps(manifest, indent=2))
        raise PipelineError(f"{stage} failed: {err}", manifest) from err

    try:
        src = fragments if fragments is not None else config.input
        if src is None:
            raise ValueError("no input given")
        stream = stream_ingest(src, config.reorder_window)
        ordered = list(stream)
    except (OSError, ValueError) as e:
        fail("ingest", e)
    summary.n_fragments = stream.n_read
    summary.n_rejected = stream.n_rejected
    summary.stage_times["ingest"] = time.perf_counter() - t0
    manifest["stages_completed"].append("ingest")

    t1 = time.perf_counter()
    try:
        chains, excluded, by_id, stats, peak = associate_stream(ordered, config, threads)
    except Exception as e:
        fail("association", e)
    summary.n_chains = len(chains)
    summary.n_excluded = len(excluded)
    summary.workers = stats
    summary.peak_resident = peak
    summary.total_cost = float(sum(chain_cost([by_id[i] for i in ch], config.cost, with_terminals=True)
                                   for ch in chains))
    summary.stage_times["association"] = time.perf_counter() - t1
    manifest["stages_completed"].append("association")

    t2 = time.perf_counter()
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("")
    done = []
    try:
        batch = []
        for tr in rectify_chains(chains, by_id, config.rectifier, threads):
            batch.append(tr)
            if not tr.rectified:
                summary.n_unrectified += 1
            if len(batch) >= 256:
                write_trajectories(out, batch, append=True)
                manifest["trajectories_written"] += len(batch)
                done += batch
                batch = []
        write_trajectories(out, batch, append=True)
        manifest["trajectories_written"] += len(batch)
        done += batch
    except Exception as e:
        fail("rectification", e)
    summary.n_trajectories = len(done)
    summary.stage_times["rectification"] = time.perf_counter() - t2
    manifest["stages_completed"].append("rectification")
    if config.csv_output:
        from .io import export_csv
        export_csv(config.csv_output, done)
    summary.wall_time = time.perf_counter() - t0
    return summary
