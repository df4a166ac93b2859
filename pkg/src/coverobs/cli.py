"""Command line front end for the whole pipeline.

Subcommands mirror the library layering: ``net`` generates or inspects the
paired graphs, ``cover`` solves and audits estimation-set assignments,
``gains synth`` designs observer parameters, ``sim`` runs the closed loops
and sweeps, and ``pipeline`` chains all stages over one shared manifest.

Every file the tool writes carries the SHA-256 hash of its run manifest:
JSON documents embed a ``manifest_hash`` key, CSV files start with a
``# manifest_hash=...`` comment line above the header row.  Re-running a
command with identical inputs and seeds reproduces identical bytes.

Exit codes: 0 success, 1 numeric failure (divergence, infeasible design),
2 input error (bad flags, missing or unparsable files).  The environment
variable COVEROBS_THREADS caps sweep parallelism.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .coverage import (
    CoverageError,
    dimension_stats,
    load_cover,
    pareto_local_audit,
    save_cover,
    solve,
    validate,
)
from .gains import (
    ControllerGains,
    GainsError,
    load_controller,
    load_design,
    save_design,
    synthesize,
)
from .netgraph import (
    GraphError,
    gen_random_pair,
    load_pair,
    save_pair,
    similarity,
    star_pair,
)
from .observer import ObserverError
from .plant import PlantError, build_microgrid, load_plant, save_plant
from .simloop import (
    SimConfig,
    SimError,
    invariant_set_report,
    run_distributed,
    theta_sweep,
)

PAPER_GAMMA_STIFF_THETA = 10.0


class InputError(Exception):
    """User-facing input problem: maps to exit code 2."""


# ------------------------------------------------------------------ manifest

def _tool_versions() -> dict:
    return {
        "coverobs": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


@dataclass
class RunManifest:
    """Reproducibility record shared by every artifact of one command."""

    command: str
    inputs: dict
    outputs: dict
    seeds: dict
    config: dict
    versions: dict = field(default_factory=_tool_versions)

    def body(self) -> dict:
        return {
            "command": self.command,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seeds": self.seeds,
            "config": self.config,
            "versions": self.versions,
        }

    def digest(self) -> str:
        canon = json.dumps(self.body(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def write(self, path: str | Path) -> str:
        doc = self.body()
        doc["hash"] = self.digest()
        Path(path).write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return doc["hash"]


def _manifest_path(primary_out: Path) -> Path:
    return primary_out.with_name(primary_out.name + ".manifest.json")


def _write_csv(path: Path, header: list, rows, manifest_hash: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest_hash={manifest_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row]
            )


def _emit_json(doc: dict, out: Path | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out is None:
        print(text)
    else:
        out.write_text(text + "\n", encoding="utf-8")


# ------------------------------------------------------------------- loading

def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"missing {what} file: {path}")
    return p


def _load_pair(path: str):
    try:
        return load_pair(_require(path, "network"))
    except (GraphError, OSError, ValueError) as exc:
        raise InputError(f"cannot load network {path}: {exc}") from exc


def _load_cover(path: str):
    try:
        return load_cover(_require(path, "cover"))
    except (CoverageError, OSError, ValueError) as exc:
        raise InputError(f"cannot load cover {path}: {exc}") from exc


def _load_plant(path: str, pair):
    try:
        return load_plant(_require(path, "plant"), pair)
    except (PlantError, OSError, ValueError) as exc:
        raise InputError(f"cannot load plant {path}: {exc}") from exc


def _load_design(path: str):
    try:
        return load_design(_require(path, "design"))
    except (GainsError, OSError, ValueError) as exc:
        raise InputError(f"cannot load design {path}: {exc}") from exc


def _load_controller(path: str | None) -> ControllerGains:
    if path is None:
        return ControllerGains(K_blocks={})
    try:
        return load_controller(_require(path, "controller"))
    except (GainsError, OSError, ValueError) as exc:
        raise InputError(f"cannot load controller {path}: {exc}") from exc


SIM_CONFIG_KEYS = {
    "horizon",
    "step",
    "x0",
    "observer_init",
    "sat_level",
    "seed",
    "force",
    "record_points",
}


def _sim_config(path: str | None, force_flag: bool) -> SimConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(_require(path, "config").read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise InputError(f"config {path} must hold a JSON object")
        unknown = set(raw) - SIM_CONFIG_KEYS
        if unknown:
            raise InputError(
                f"config {path} has unknown keys: {', '.join(sorted(unknown))}"
            )
    if "x0" in raw and raw["x0"] is not None:
        raw["x0"] = np.asarray(raw["x0"], dtype=float)
    raw["force"] = bool(raw.get("force", False)) or force_flag
    try:
        return SimConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad simulation config: {exc}") from exc


def _parse_thetas(text: str) -> list[float]:
    try:
        vals = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise InputError(f"bad theta list {text!r}: {exc}") from exc
    if not vals:
        raise InputError("theta list is empty")
    return vals


def _parse_poles(text: str | None):
    if text is None:
        return None
    try:
        vals = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise InputError(f"bad pole list {text!r}: {exc}") from exc
    if not vals:
        raise InputError("pole list is empty")
    return vals


def _resolve_policy(args) -> tuple[str, float | None]:
    policy = args.policy
    if getattr(args, "paper_gamma", False):
        policy = "paper"
    if policy == "fixed" and args.gamma is None:
        raise InputError("--policy fixed needs --gamma")
    return policy, args.gamma


def _warn_paper_stiffness(policy: str, theta: float, n: int) -> None:
    if policy == "paper" and theta >= PAPER_GAMMA_STIFF_THETA:
        gamma = 100.0 * theta * theta
        stiff = gamma * theta ** (n - 1)
        print(
            f"warning: paper gamma schedule at theta={theta:g} sets "
            f"gamma={gamma:g}; consensus stiffness ~{stiff:.3g} forces "
            "very small integration steps",
            file=sys.stderr,
        )


# ---------------------------------------------------------------------- net

def cmd_net_gen(args) -> int:
    out = Path(args.out)
    if args.star:
        pair = star_pair(args.nodes)
    else:
        pair = gen_random_pair(
            args.nodes, args.avg_degree, args.similarity, args.seed, tol=args.tol
        )
    manifest = RunManifest(
        command="net gen",
        inputs={},
        outputs={"pair": str(out)},
        seeds={"net": args.seed},
        config={
            "nodes": args.nodes,
            "star": bool(args.star),
            "avg_degree": args.avg_degree,
            "target_similarity": args.similarity,
            "tol": args.tol,
        },
    )
    digest = manifest.write(_manifest_path(out))
    save_pair(pair, out, manifest_hash=digest)
    print(f"wrote {out}  nodes={pair.n}  S_pc={similarity(pair):.4f}")
    return 0


def cmd_net_info(args) -> int:
    pair = _load_pair(args.pair)
    phys = sum(len(pair.phys_neighbors(i)) for i in pair.nodes())
    comm = sum(len(pair.comm_neighbors(i)) for i in pair.nodes()) // 2
    _emit_json(
        {
            "nodes": pair.n,
            "phys_edges": phys,
            "comm_edges": comm,
            "similarity": similarity(pair),
        },
        None,
    )
    return 0


# -------------------------------------------------------------------- cover

def _stats_doc(assignment, block_order: int) -> dict:
    stats = dimension_stats(assignment, block_order)
    return {
        "sets": len(assignment.nonempty_sets()),
        "block_order": stats.block_order,
        "max_dim": stats.max_dim,
        "min_dim": stats.min_dim,
        "mean_dim": stats.mean_dim,
        "max_reduction": stats.max_reduction,
        "min_reduction": stats.min_reduction,
        "mean_reduction": stats.mean_reduction,
    }


def cmd_cover_solve(args) -> int:
    pair = _load_pair(args.pair)
    out = Path(args.out)
    assignment = solve(pair)
    report = validate(assignment, pair)
    if not report.ok:
        raise CoverageError(f"solver produced an invalid cover: {report.violations}")
    manifest = RunManifest(
        command="cover solve",
        inputs={"pair": args.pair},
        outputs={"cover": str(out)},
        seeds={},
        config={"block_order": args.block_order},
    )
    digest = manifest.write(_manifest_path(out))
    save_cover(assignment, out, manifest_hash=digest)
    doc = _stats_doc(assignment, args.block_order)
    if args.audit:
        doc["pareto_local"], doc["counterexample"] = _run_audit(assignment, pair)
    _emit_json(doc, None)
    return 0


def _run_audit(assignment, pair):
    if pair.n > 12:
        raise InputError(
            f"audit enumerates single edits exhaustively; N={pair.n} exceeds 12"
        )
    ok, witness = pareto_local_audit(assignment, pair)
    return ok, witness


def cmd_cover_audit(args) -> int:
    pair = _load_pair(args.pair)
    assignment = _load_cover(args.cover) if args.cover else solve(pair)
    ok, witness = _run_audit(assignment, pair)
    _emit_json({"pareto_local": ok, "counterexample": witness}, None)
    return 0


def cmd_cover_stats(args) -> int:
    pair = _load_pair(args.pair)
    assignment = _load_cover(args.cover) if args.cover else solve(pair)
    report = validate(assignment, pair)
    if not report.ok:
        raise CoverageError(f"cover is invalid for this network: {report.violations}")
    _emit_json(_stats_doc(assignment, args.block_order), None)
    return 0


# -------------------------------------------------------------------- gains

def cmd_gains_synth(args) -> int:
    pair = _load_pair(args.pair)
    assignment = _load_cover(args.cover)
    plant = _load_plant(args.plant, pair)
    controller = _load_controller(args.controller)
    policy, gamma = _resolve_policy(args)
    poles = _parse_poles(args.poles)
    _warn_paper_stiffness(policy, args.theta, plant.n)
    out = Path(args.out)
    design = synthesize(
        plant, assignment, pair, args.theta, controller,
        gamma=gamma, policy=policy, poles=poles,
    )
    manifest = RunManifest(
        command="gains synth",
        inputs={
            "pair": args.pair,
            "cover": args.cover,
            "plant": args.plant,
            "controller": args.controller or "",
        },
        outputs={"design": str(out)},
        seeds={},
        config={
            "theta": design.theta,
            "gamma": design.gamma,
            "policy": design.policy,
            "poles": list(design.poles),
        },
    )
    digest = manifest.write(_manifest_path(out))
    save_design(design, out, extra={"manifest_hash": digest})
    certified = design.gamma >= design.gamma_bound
    print(
        f"wrote {out}  theta={design.theta:g}  gamma={design.gamma:.6g}  "
        f"bound={design.gamma_bound:.6g}  certified={certified}"
    )
    return 0


# ---------------------------------------------------------------------- sim

def cmd_sim_run(args) -> int:
    pair = _load_pair(args.pair)
    assignment = _load_cover(args.cover)
    plant = _load_plant(args.plant, pair)
    design = _load_design(args.design)
    controller = _load_controller(args.controller)
    config = _sim_config(args.config, args.force)
    out = Path(args.out)

    result = run_distributed(plant, assignment, pair, design, controller, config)
    x0 = config.resolve_x0(plant.state_dim)
    manifest = RunManifest(
        command="sim run",
        inputs={
            "pair": args.pair,
            "cover": args.cover,
            "plant": args.plant,
            "design": args.design,
            "controller": args.controller or "",
            "config": args.config or "",
        },
        outputs={"result": str(out)},
        seeds={"sim": config.seed},
        config={
            "theta": design.theta,
            "gamma": design.gamma,
            "sat_level": config.resolve_sat(x0),
            "h": result.h,
            "horizon": config.horizon,
            "observer_init": config.observer_init,
            "record_points": config.record_points,
        },
    )
    digest = manifest.write(_manifest_path(out))
    header = ["t"] + [f"x{k}" for k in range(1, plant.state_dim + 1)] + [
        "err_norm",
        "sat_flag",
    ]
    rows = (
        [t] + list(xrow) + [e, int(s)]
        for t, xrow, e, s in zip(
            result.t, result.x, result.err_norm, result.sat_flags
        )
    )
    _write_csv(out, header, rows, digest)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(
        f"wrote {out}  I_x={result.I_x:.6g}  h={result.h:.3g}  "
        f"steps={result.steps}  final_err={result.err_norm[-1]:.3g}"
    )
    return 0


def cmd_sim_sweep(args) -> int:
    pair = _load_pair(args.pair)
    assignment = _load_cover(args.cover)
    plant = _load_plant(args.plant, pair)
    controller = _load_controller(args.controller)
    policy, gamma = _resolve_policy(args)
    poles = _parse_poles(args.poles)
    thetas = _parse_thetas(args.thetas)
    for theta in thetas:
        _warn_paper_stiffness(policy, theta, plant.n)
    out = Path(args.out)

    rows = theta_sweep(
        plant, assignment, pair, thetas, args.repeats, args.seed, controller,
        policy=policy, gamma=gamma, poles=poles, horizon=args.horizon,
        force=args.force, observer_init=args.observer_init,
    )
    manifest = RunManifest(
        command="sim sweep",
        inputs={
            "pair": args.pair,
            "cover": args.cover,
            "plant": args.plant,
            "controller": args.controller or "",
        },
        outputs={"sweep": str(out)},
        seeds={"sweep": args.seed},
        config={
            "thetas": thetas,
            "repeats": args.repeats,
            "policy": policy,
            "gamma": gamma,
            "poles": list(poles) if poles else None,
            "horizon": args.horizon,
            "observer_init": args.observer_init,
        },
    )
    digest = manifest.write(_manifest_path(out))
    _write_csv(
        out,
        ["theta", "mean_gap", "min_gap", "max_gap"],
        ([r["theta"], r["mean_gap"], r["min_gap"], r["max_gap"]] for r in rows),
        digest,
    )
    print(f"wrote {out}  thetas={len(rows)}  repeats={args.repeats}")
    return 0


def cmd_sim_report(args) -> int:
    pair = _load_pair(args.pair)
    assignment = _load_cover(args.cover)
    plant = _load_plant(args.plant, pair)
    design = _load_design(args.design)
    controller = _load_controller(args.controller)
    config = _sim_config(args.config, args.force)
    out = Path(args.out) if args.out else None

    result = run_distributed(plant, assignment, pair, design, controller, config)
    report = invariant_set_report(design, controller, plant, result)
    doc = dict(report)
    doc["I_x"] = result.I_x
    if out is not None:
        manifest = RunManifest(
            command="sim report",
            inputs={
                "pair": args.pair,
                "cover": args.cover,
                "plant": args.plant,
                "design": args.design,
                "controller": args.controller or "",
                "config": args.config or "",
            },
            outputs={"report": str(out)},
            seeds={"sim": config.seed},
            config={"theta": design.theta, "gamma": design.gamma},
        )
        doc["manifest_hash"] = manifest.write(_manifest_path(out))
    _emit_json(doc, out)
    return 0


# ----------------------------------------------------------------- pipeline

class _Stage:
    """Prefix any error with the pipeline stage that raised it."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(
            exc,
            (
                InputError, GraphError, CoverageError, PlantError,
                GainsError, ObserverError, SimError,
            ),
        ):
            exc.args = (f"stage {self.name}: {exc}",)
        return False


def cmd_pipeline(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        name: outdir / f"{name}.{ext}"
        for name, ext in (
            ("pair", "json"), ("cover", "json"), ("plant", "json"),
            ("design", "json"), ("result", "csv"), ("sweep", "csv"),
        )
    }
    policy, gamma = _resolve_policy(args)
    poles = _parse_poles(args.poles)
    thetas = _parse_thetas(args.thetas) if args.thetas else [args.theta]

    manifest = RunManifest(
        command="pipeline",
        inputs={"controller": args.controller or ""},
        outputs={name: str(p) for name, p in paths.items()},
        seeds={
            "net": args.seed,
            "plant": args.plant_seed,
            "sim": args.seed,
            "sweep": args.seed,
        },
        config={
            "nodes": args.nodes,
            "star": bool(args.star),
            "avg_degree": args.avg_degree,
            "target_similarity": args.similarity,
            "coupling_scale": args.coupling_scale,
            "theta": args.theta,
            "policy": policy,
            "gamma": gamma,
            "poles": list(poles) if poles else None,
            "horizon": args.horizon,
            "observer_init": args.observer_init,
            "thetas": thetas,
            "repeats": args.repeats,
        },
    )
    digest = manifest.write(outdir / "manifest.json")

    with _Stage("network"):
        if args.star:
            pair = star_pair(args.nodes)
        else:
            pair = gen_random_pair(
                args.nodes, args.avg_degree, args.similarity, args.seed
            )
        save_pair(pair, paths["pair"], manifest_hash=digest)
    with _Stage("cover"):
        assignment = solve(pair)
        report = validate(assignment, pair)
        if not report.ok:
            raise CoverageError(f"invalid cover: {report.violations}")
        save_cover(assignment, paths["cover"], manifest_hash=digest)
    with _Stage("plant"):
        plant = build_microgrid(pair, args.plant_seed, args.coupling_scale)
        save_plant(plant, paths["plant"], manifest_hash=digest)
    with _Stage("gains"):
        controller = _load_controller(args.controller)
        _warn_paper_stiffness(policy, args.theta, plant.n)
        design = synthesize(
            plant, assignment, pair, args.theta, controller,
            gamma=gamma, policy=policy, poles=poles,
        )
        save_design(design, paths["design"], extra={"manifest_hash": digest})
    with _Stage("sim"):
        config = SimConfig(
            horizon=args.horizon,
            observer_init=args.observer_init,
            seed=args.seed,
            force=args.force,
        )
        result = run_distributed(
            plant, assignment, pair, design, controller, config
        )
        header = ["t"] + [
            f"x{k}" for k in range(1, plant.state_dim + 1)
        ] + ["err_norm", "sat_flag"]
        rows = (
            [t] + list(xrow) + [e, int(s)]
            for t, xrow, e, s in zip(
                result.t, result.x, result.err_norm, result.sat_flags
            )
        )
        _write_csv(paths["result"], header, rows, digest)
    with _Stage("sweep"):
        sweep_rows = theta_sweep(
            plant, assignment, pair, thetas, args.repeats, args.seed,
            controller, policy=policy, gamma=gamma, poles=poles,
            horizon=args.horizon, force=args.force,
            observer_init=args.observer_init,
        )
        _write_csv(
            paths["sweep"],
            ["theta", "mean_gap", "min_gap", "max_gap"],
            (
                [r["theta"], r["mean_gap"], r["min_gap"], r["max_gap"]]
                for r in sweep_rows
            ),
            digest,
        )
    print(
        f"pipeline complete in {outdir}  I_x={result.I_x:.6g}  "
        f"final_err={result.err_norm[-1]:.3g}"
    )
    return 0


# ------------------------------------------------------------------- parser

def _add_policy_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--policy", choices=("auto", "paper", "fixed"), default="auto",
        help="gamma schedule: auto takes 1.1x the certified bound, paper "
        "uses 100*theta^2, fixed takes --gamma verbatim",
    )
    parser.add_argument(
        "--paper-gamma", action="store_true",
        help="shorthand for --policy paper",
    )
    parser.add_argument("--gamma", type=float, default=None,
                        help="consensus gain (required for --policy fixed)")
    parser.add_argument("--poles", default=None,
                        help="comma-separated observer poles; negative values "
                             "need the equals form, e.g. --poles=-4,-9")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coverobs",
        description="Cover-based distributed observer toolkit",
        epilog="COVEROBS_THREADS caps sweep parallelism; outputs embed the "
        "run manifest hash.",
    )
    top = parser.add_subparsers(dest="group", required=True)

    net = top.add_parser("net", help="generate or inspect graph pairs")
    netsub = net.add_subparsers(dest="cmd", required=True)
    gen = netsub.add_parser("gen", help="generate a physical/communication pair")
    gen.add_argument("-n", "--nodes", type=int, required=True)
    gen.add_argument("--star", action="store_true",
                     help="star on node 1 in both layers")
    gen.add_argument("--avg-degree", type=float, default=3.0)
    gen.add_argument("--similarity", type=float, default=0.85,
                     help="target layer similarity S_pc")
    gen.add_argument("--tol", type=float, default=0.05)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_net_gen)
    info = netsub.add_parser("info", help="summarize a saved pair")
    info.add_argument("pair")
    info.set_defaults(func=cmd_net_info)

    cover = top.add_parser("cover", help="estimation-set assignment tools")
    coversub = cover.add_subparsers(dest="cmd", required=True)
    csolve = coversub.add_parser("solve", help="solve and save a cover")
    csolve.add_argument("--pair", required=True)
    csolve.add_argument("--out", required=True)
    csolve.add_argument("--block-order", type=int, default=1,
                        help="states per node when reporting dimensions")
    csolve.add_argument("--audit", action="store_true",
                        help="also run the local-edit audit (N <= 12)")
    csolve.set_defaults(func=cmd_cover_solve)
    caudit = coversub.add_parser("audit", help="single-edit optimality audit")
    caudit.add_argument("--pair", required=True)
    caudit.add_argument("--cover", default=None,
                        help="audit this file instead of solving fresh")
    caudit.set_defaults(func=cmd_cover_audit)
    cstats = coversub.add_parser("stats", help="observer dimension statistics")
    cstats.add_argument("--pair", required=True)
    cstats.add_argument("--cover", default=None)
    cstats.add_argument("--block-order", type=int, default=1)
    cstats.set_defaults(func=cmd_cover_stats)

    gains = top.add_parser("gains", help="observer gain synthesis")
    gainssub = gains.add_subparsers(dest="cmd", required=True)
    synth = gainssub.add_parser("synth", help="design gains for one theta")
    synth.add_argument("--pair", required=True)
    synth.add_argument("--cover", required=True)
    synth.add_argument("--plant", required=True)
    synth.add_argument("--controller", default=None)
    synth.add_argument("--theta", type=float, required=True)
    _add_policy_flags(synth)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_gains_synth)

    sim = top.add_parser("sim", help="closed-loop simulation")
    simsub = sim.add_subparsers(dest="cmd", required=True)
    run = simsub.add_parser("run", help="one distributed run to CSV")
    for flag in ("--pair", "--cover", "--plant", "--design"):
        run.add_argument(flag, required=True)
    run.add_argument("--controller", default=None)
    run.add_argument("--config", default=None,
                     help="JSON file of SimConfig overrides")
    run.add_argument("--force", action="store_true",
                     help="run even when gamma sits below the certified bound")
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_sim_run)
    sweep = simsub.add_parser("sweep", help="index-gap sweep over theta")
    for flag in ("--pair", "--cover", "--plant"):
        sweep.add_argument(flag, required=True)
    sweep.add_argument("--controller", default=None)
    sweep.add_argument("--thetas", default="2,3,5,7,9,12,15")
    sweep.add_argument("--repeats", type=int, default=6)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--horizon", type=float, default=10.0)
    sweep.add_argument("--observer-init", type=float, default=2.0)
    _add_policy_flags(sweep)
    sweep.add_argument("--force", action="store_true")
    sweep.add_argument("--out", required=True)
    sweep.set_defaults(func=cmd_sim_sweep)
    rep = simsub.add_parser("report", help="invariant-set radii for one run")
    for flag in ("--pair", "--cover", "--plant", "--design"):
        rep.add_argument(flag, required=True)
    rep.add_argument("--controller", default=None)
    rep.add_argument("--config", default=None)
    rep.add_argument("--force", action="store_true")
    rep.add_argument("--out", default=None,
                     help="write JSON here instead of stdout")
    rep.set_defaults(func=cmd_sim_report)

    pipe = top.add_parser(
        "pipeline", help="network -> cover -> gains -> sim -> sweep"
    )
    pipe.add_argument("-n", "--nodes", type=int, required=True)
    pipe.add_argument("--star", action="store_true")
    pipe.add_argument("--avg-degree", type=float, default=3.0)
    pipe.add_argument("--similarity", type=float, default=0.85)
    pipe.add_argument("--seed", type=int, default=0)
    pipe.add_argument("--plant-seed", type=int, default=0)
    pipe.add_argument("--coupling-scale", type=float, default=1.0)
    pipe.add_argument("--controller", default=None)
    pipe.add_argument("--theta", type=float, default=5.0)
    _add_policy_flags(pipe)
    pipe.add_argument("--horizon", type=float, default=10.0)
    pipe.add_argument("--observer-init", type=float, default=2.0)
    pipe.add_argument("--thetas", default=None,
                      help="sweep list; defaults to just --theta")
    pipe.add_argument("--repeats", type=int, default=2)
    pipe.add_argument("--force", action="store_true")
    pipe.add_argument("--outdir", required=True)
    pipe.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        GraphError, CoverageError, PlantError, GainsError, ObserverError,
        SimError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
