"""Command line entry point: ``trajrecon <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("trajrecon")


class CliError(Exception):
    pass


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input not found: {p}")
    return p


def _sections(args) -> dict:
    if not args.config:
        return {}
    from .io import read_config
    return read_config(_need_file(args.config))


def _threads(args) -> int:
    from .pipeline import resolve_threads
    return resolve_threads(args.threads)


def _cost_params(args, sec):
    from .costs import CostModelParams
    from .io import apply_config
    p = apply_config(CostModelParams, sec.get("association", {}))
    if getattr(args, "max_overlap", None) is not None:
        p = dataclasses.replace(p, max_overlap=args.max_overlap)
    return p


def _rect_config(sec):
    from .io import apply_config
    from .rectify import RectifierConfig
    return apply_config(RectifierConfig, sec.get("rectification", {}))


def _tuples(raw: str, width: int, name: str) -> tuple:
    """``"a b c; d e f"`` -> ((a, b, c), (d, e, f))."""
    out = []
    for part in raw.split(";"):
        vals = [float(v) for v in part.replace(",", " ").split()]
        if not vals:
            continue
        if len(vals) != width:
            raise CliError(f"{name}: each entry needs {width} numbers")
        out.append(tuple(vals))
    return tuple(out)


def _scenario(args, sec):
    from .benchgen import ScenarioSpec, appendix_a_scenario
    from .io import apply_config
    vals = dict(sec.get("scenario", {}))
    scale = float(vals.pop("demand_scale", args.demand_scale if args.demand_scale is not None else 0.5))
    preset = vals.pop("preset", "appendix_a")
    if preset == "appendix_a":
        base = appendix_a_scenario(scale)
    elif preset == "none":
        base = ScenarioSpec()
    else:
        raise CliError(f"unknown scenario preset {preset!r}")
    if "demand" in vals:
        base = dataclasses.replace(base, demand=_tuples(vals.pop("demand"), 3, "demand"))
    if "bottleneck" in vals:
        raw = vals.pop("bottleneck")
        bn = None if raw.strip().lower() in ("none", "") else _tuples(raw, 6, "bottleneck")[0]
        base = dataclasses.replace(base, bottleneck=bn)
    return apply_config(ScenarioSpec, vals, base)


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args, sec):
    from .benchgen import generate_ground_truth
    from .io import write_dataset
    spec = _scenario(args, sec)
    gt = generate_ground_truth(spec, args.seed)
    n = write_dataset(args.output, gt)
    print(f"wrote {n} ground-truth trajectories to {args.output}")


def cmd_perturb(args, sec):
    from .benchgen import CameraLayout, NoiseSpec, appendix_a_layout, appendix_a_masks, perturb
    from .io import apply_config, load_external, write_fragments
    gt = load_external(_need_file(args.gt))
    vals = dict(sec.get("noise", {}))
    n_drop = int(vals.pop("n_dropouts", args.dropouts))
    layout_name = vals.pop("layout", "appendix_a")
    base = NoiseSpec(sigma=args.sigma, outlier_rate=args.outlier_rate, seed=args.seed + 2)
    noise = apply_config(NoiseSpec, vals, base)
    if layout_name == "appendix_a":
        layout = appendix_a_layout()
        length = max((float(max(o.x)) for o in gt), default=2000.0)
        duration = max((float(o.t[-1]) for o in gt), default=900.0)
        masks = appendix_a_masks(args.seed + 1, n_drop, length, duration)
    elif layout_name == "single":
        layout, masks = CameraLayout.single(), []
    else:
        raise CliError(f"unknown layout {layout_name!r}")
    frags, _ = perturb(gt, masks, layout, noise)
    # stream order, so the file can be fed to `run` as is
    frags.sort(key=lambda f: (f.t_end, f.id))
    n = write_fragments(args.output, frags)
    print(f"wrote {n} fragments to {args.output}")


def cmd_associate(args, sec):
    from .association import ncc_batch, ncc_online
    from .io import read_fragments, write_chains
    frags = read_fragments(_need_file(args.input))
    params = _cost_params(args, sec)
    chains = []
    for d in (1, -1):
        part = [f for f in frags if f.direction == d]
        if not part:
            continue
        if args.batch:
            chains += ncc_batch(part, params)
        else:
            st = ncc_online(part, params, horizon=args.horizon)
            st.flush()
            chains += st.finalized
    by_id = {f.id: f for f in frags}
    chains = [sorted(c, key=lambda i: (by_id[i].t_start, by_id[i].t_end, i)) for c in chains]
    chains.sort(key=lambda c: (by_id[c[0]].t_start, c[0]))
    write_chains(args.output, chains)
    print(f"wrote {len(chains)} chains from {len(frags)} fragments to {args.output}")


def cmd_rectify(args, sec):
    from .io import export_csv, read_chains, read_fragments, write_trajectories
    from .pipeline import rectify_chains
    frags = read_fragments(_need_file(args.fragments))
    chains = read_chains(_need_file(args.chains))
    by_id = {f.id: f for f in frags}
    missing = [i for c in chains for i in c if i not in by_id]
    if missing:
        raise CliError(f"chains reference unknown fragment {missing[0]!r}")
    trajs = list(rectify_chains(chains, by_id, _rect_config(sec), _threads(args)))
    n = write_trajectories(args.output, trajs)
    if args.csv:
        export_csv(args.csv, trajs)
    print(f"wrote {n} trajectories to {args.output}")


def cmd_evaluate(args, sec):
    from .evaluation import evaluate, format_table
    from .io import load_external
    pred = load_external(_need_file(args.pred))
    gt = load_external(_need_file(args.gt))
    rep = evaluate(pred, gt, args.iou)
    if args.json:
        print(rep.to_json(indent=2))
    else:
        print(format_table({args.label: rep}))
    if args.output:
        Path(args.output).write_text(rep.to_json(indent=2))


def cmd_plot(args, sec):
    from .evaluation import match_frames
    from .io import load_external
    from .plotting import emit_timespace_plot
    data = load_external(_need_file(args.input))
    matches = match_frames(load_external(_need_file(args.gt)), data) if args.gt else None
    res = emit_timespace_plot(data, args.output, lane=args.lane, matches=matches, fmt=args.format)
    print(f"wrote {res.n_polylines} polylines ({res.n_points} points) to {res.path}")


def cmd_run(args, sec):
    from .pipeline import PipelineConfig, PipelineError, run_pipeline
    if args.config:
        cfg = PipelineConfig.from_file(args.config)
    else:
        cfg = PipelineConfig()
    if args.input:
        cfg.input = str(args.input)
    if args.output:
        cfg.output = str(args.output)
    if args.workers:
        cfg.workers = args.workers
    cfg.seed = args.seed
    if cfg.input is None:
        raise CliError("run needs an input (--input or 'input =' in the config)")
    _need_file(cfg.input)
    try:
        summary = run_pipeline(cfg, threads=args.threads)
    except PipelineError as e:
        raise CliError(f"{e} (manifest: {e.manifest.get('output', cfg.output)}.manifest.json)") from e
    print(summary.to_json(indent=2))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def globals_(suppress):
        g = argparse.ArgumentParser(add_help=False)
        # on subcommands the defaults are suppressed so flags given before
        # the subcommand are not overwritten
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--config", default=d(None), help="key = value config file")
        g.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
        g.add_argument("--threads", type=int, default=d(None),
                       help="worker threads; TRAJRECON_THREADS overrides")
        g.add_argument("-v", "--verbose", action="count", default=d(0))
        return g

    common = globals_(True)
    ap = argparse.ArgumentParser(prog="trajrecon", parents=[globals_(False)],
                                 description="Fragment association and trajectory rectification for roadway video.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("generate", parents=[common], help="simulate ground-truth trajectories")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--demand-scale", type=float, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("perturb", parents=[common], help="corrupt ground truth into RAW fragments")
    p.add_argument("gt")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--outlier-rate", type=float, default=0.003)
    p.add_argument("--dropouts", type=int, default=10)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("associate", parents=[common], help="link fragments into chains")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--horizon", type=float, default=math.inf)
    p.add_argument("--max-overlap", type=float, default=None)
    p.add_argument("--batch", action="store_true", help="solve in one batch instead of streaming")
    p.set_defaults(func=cmd_associate)

    p = sub.add_parser("rectify", parents=[common], help="rectify chains into trajectories")
    p.add_argument("chains")
    p.add_argument("fragments")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--csv", help="also write a CSV export")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("evaluate", parents=[common], help="CLEAR-MOT scores against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--iou", type=float, default=0.3)
    p.add_argument("--label", default="PRED")
    p.add_argument("--json", action="store_true")
    p.add_argument("-o", "--output", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", parents=[common], help="time-space diagram")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--lane", type=int, default=None)
    p.add_argument("--gt", help="colour points by match status against this ground truth")
    p.add_argument("--format", choices=("png", "csv"), default=None)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("run", parents=[common], help="full partitioned pipeline")
    p.add_argument("--input")
    p.add_argument("-o", "--output")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)  # exits 2 on usage errors
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        sec = _sections(args)
        args.func(args, sec)
    except CliError as e:
        print(f"trajrecon: error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"trajrecon: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
