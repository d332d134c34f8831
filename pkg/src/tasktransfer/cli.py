"""Command-line driver: one subcommand per pipeline stage.

Stages talk only through files in the run directory (``--out``)::

    config.txt  manifest.json  snapshots/*.snap  cells/*.json
    samples.csv  curves.csv  dataset.csv  holdout.csv
    model.ttm  predictions.csv  transfer_summary.json
    accuracy_grid.csv  grid_summary.json  report/

Exit codes: 0 success, 2 config or parse error, 3 missing prerequisite
artifact, 4 degenerate data, 5 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import artifacts as io
from .adaptation import (
    DIMENSIONS,
    NoPoliciesConverged,
    _sample_job,
    adaptation_jobs,
    build_dataset,
    final_success_by_match,
    group_curves,
    scratch_jobs,
    train_base_policies,
)
from .config import ConfigError, RunConfig, load_config
from .gridworld import EnvConfig, reset, shortest_plan, render_text, trajectory_jsonl
from .instructions import ALL_INSTRUCTIONS, TOKEN_TABLE, MalformedInstruction, parse, render, slug
from .learner import CorruptSnapshot, NonFiniteLoss, load_snapshot, save_snapshot
from .pipeline import run_pipeline, split_by_beta, split_fraction
from .runner import derive_seed, run_jobs
from .transfer import (
    DegenerateDataset,
    accuracy,
    load_model,
    predictions,
    save_model,
    select_best,
    shuffle_labels,
    train_classifier,
    verb_dominance_records,
)
from .transfer import NonFiniteLoss as ClassifierNonFinite

log = logging.getLogger("tasktransfer")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_DEGENERATE, EXIT_NUMERIC = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ helpers


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.out)


def _manifest_path(cfg) -> Path:
    return _out(cfg) / "manifest.json"


def read_manifest(cfg) -> dict:
    path = _manifest_path(cfg)
    if not path.exists():
        raise CliError(EXIT_MISSING, f"{path} not found; run train-base first")
    return json.loads(path.read_text())


def write_manifest(cfg, manifest: dict) -> None:
    io.write_json(_manifest_path(cfg), manifest)


def _config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(cfg.to_text().encode()).hexdigest()[:16]


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CliError(EXIT_MISSING, f"missing {what}: {path}")
    return path


def _plan_record(plan) -> dict:
    return {
        "seed": plan.seed,
        "alpha": [render(z) for z in plan.alpha],
        "beta": [render(z) for z in plan.beta],
        "n_adapt_steps": plan.n_adapt_steps,
    }


# ---------------------------------------------------------------- commands


def cmd_train_base(cfg: RunConfig, force: bool = False) -> int:
    out = _out(cfg)
    snap_dir = out / "snapshots"
    if _manifest_path(cfg).exists() or (snap_dir.exists() and any(snap_dir.iterdir())):
        if not force:
            raise CliError(EXIT_CONFIG, f"{out} already holds a run; pass --force to overwrite")
        for sub in ("snapshots", "cells", "report"):
            shutil.rmtree(out / sub, ignore_errors=True)
        for name in ("manifest.json", "samples.csv", "curves.csv", "dataset.csv", "holdout.csv",
                     "model.ttm", "predictions.csv", "transfer_summary.json"):
            (out / name).unlink(missing_ok=True)
    snap_dir.mkdir(parents=True, exist_ok=True)
    io.write_text(out / "config.txt", cfg.to_text())
    plan = cfg.plan()
    manifest = {
        "software_version": __version__,
        "config": cfg.recorded(),
        "config_hash": _config_hash(cfg),
        "token_table": TOKEN_TABLE,
        "plan": _plan_record(plan),
        "stages": {},
    }
    try:
        snaps, failed = train_base_policies(plan, cfg.parallel)
    except NoPoliciesConverged as exc:
        manifest["stages"]["train-base"] = {"status": "failed", "reason": str(exc)}
        write_manifest(cfg, manifest)
        raise CliError(EXIT_DEGENERATE, str(exc)) from None
    bases = []
    for snap in snaps:
        path = snap_dir / f"{slug(snap.instruction)}.snap"
        save_snapshot(snap, path)
        bases.append({
            "instruction": render(snap.instruction),
            "file": f"snapshots/{path.name}",
            "converged": True,
            "train_steps_used": snap.train_steps_used,
            "final_success_rate": snap.final_success_rate,
            "seed": snap.seed,
            "sha256": snap.digest(),
        })
    for z in failed:
        bases.append({"instruction": render(z), "converged": False,
                      "seed": derive_seed(plan.seed, "base", render(z))})
    bases.sort(key=lambda b: parse(b["instruction"]))
    manifest["stages"]["train-base"] = {"status": "complete", "bases": bases}
    write_manifest(cfg, manifest)
    print(f"trained {len(snaps)}/{len(plan.alpha)} base policies into {snap_dir}")
    return EXIT_OK


def _load_bases(cfg, manifest):
    stage = manifest.get("stages", {}).get("train-base")
    if not stage or stage.get("status") != "complete":
        raise CliError(EXIT_MISSING, "no completed train-base stage in manifest")
    snaps = []
    for b in stage["bases"]:
        if not b["converged"]:
            continue
        path = _require(_out(cfg) / b["file"], "base snapshot")
        try:
            snaps.append(load_snapshot(path))
        except CorruptSnapshot as exc:
            raise CliError(EXIT_MISSING, f"unreadable snapshot {path}: {exc}") from None
    return snaps


def _cell_name(job) -> str:
    base = "scratch" if job[0] is None else slug(job[0].instruction)
    return f"{base}__{slug(job[1])}"


def cmd_sample(cfg: RunConfig) -> int:
    out = _out(cfg)
    manifest = read_manifest(cfg)
    bases = _load_bases(cfg, manifest)
    plan = cfg.plan()
    transfers = ALL_INSTRUCTIONS if cfg.extended_grid else plan.beta
    jobs = adaptation_jobs(plan, bases, transfers)
    if cfg.scratch_baselines:
        jobs += scratch_jobs(plan, transfers)
    cell_dir = out / "cells"
    cell_dir.mkdir(exist_ok=True)
    stage = manifest["stages"].setdefault("sample", {"status": "running", "cells": {}})
    stage["status"] = "running"
    cells = stage["cells"]
    results: dict[str, object] = {}
    pending = []
    for job in jobs:
        name = _cell_name(job)
        path = cell_dir / f"{name}.json"
        if cells.get(name, {}).get("status") == "done" and path.exists():
            sample = io.sample_from_json(json.loads(path.read_text()))
            if sample.seed == job[5]:
                results[name] = sample
                continue
        pending.append(job)

    def done(i, res):
        name = _cell_name(pending[i])
        if isinstance(res, Exception):
            cells[name] = {"status": "failed", "error": repr(res), "seed": pending[i][5]}
        else:
            io.write_json(cell_dir / f"{name}.json", io.sample_to_json(res))
            cells[name] = {"status": "done", "seed": res.seed}
            results[name] = res
        write_manifest(cfg, manifest)

    run_jobs(_sample_job, pending, cfg.parallel, on_done=done)
    samples = list(results.values())
    io.write_samples(out / "samples.csv", samples)
    io.write_curves(out / "curves.csv", samples)
    failed = sorted(n for n, c in cells.items() if c["status"] != "done")
    stage["status"] = "complete" if not failed else "partial"
    stage["transfers"] = [render(z) for z in transfers]
    stage["cells"] = dict(sorted(cells.items()))
    write_manifest(cfg, manifest)
    print(f"computed {len(pending)} cells, reused {len(jobs) - len(pending)}; {len(failed)} failed")
    return EXIT_OK


def cmd_build_dataset(cfg: RunConfig) -> int:
    out = _out(cfg)
    samples = io.read_samples(_require(out / "samples.csv", "samples.csv"))
    manifest = read_manifest(cfg)
    beta = [parse(z) for z in manifest["plan"]["beta"]]
    train, holdout = split_by_beta(samples, beta)
    io.write_dataset(out / "dataset.csv", train)
    if holdout:
        io.write_dataset(out / "holdout.csv", holdout)
    else:
        (out / "holdout.csv").unlink(missing_ok=True)
    manifest["stages"]["build-dataset"] = {"status": "complete", "train_records": len(train), "holdout_records": len(holdout)}
    write_manifest(cfg, manifest)
    if not train:
        raise CliError(EXIT_DEGENERATE, "dataset is empty: every base pair tied on every transfer task")
    print(f"{len(train)} training records, {len(holdout)} holdout records")
    return EXIT_OK


def cmd_train_transfer(cfg: RunConfig, synthetic: bool = False) -> int:
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    if synthetic:
        rng = np.random.default_rng(derive_seed(cfg.seed, "synthetic"))
        train = verb_dominance_records(200, rng)
        holdout = verb_dominance_records(100, rng)
        source = "synthetic"
    else:
        train = io.read_dataset(_require(out / "dataset.csv", "dataset.csv"))
        if (out / "holdout.csv").exists():
            holdout, source = io.read_dataset(out / "holdout.csv"), "unseen_transfer_tasks"
        else:
            train, holdout = split_fraction(
                train, cfg.classifier_holdout_fraction, np.random.default_rng(derive_seed(cfg.seed, "split"))
            )
            source = "beta_fraction"
            log.warning("no holdout.csv; scoring on a held-out fraction of seen-task records")
    if not holdout:
        raise CliError(EXIT_DEGENERATE, "holdout set is empty")
    accs = []
    for run in range(cfg.classifier_runs):
        seed = derive_seed(cfg.seed, "classifier", run)
        try:
            model, _ = train_classifier(train, cfg.classifier_config(seed))
        except DegenerateDataset as exc:
            raise CliError(EXIT_DEGENERATE, str(exc)) from None
        accs.append(accuracy(model, holdout))
        if run == 0:
            save_model(model, out / "model.ttm", cfg.classifier_config(seed))
            io.write_predictions(out / "predictions.csv", predictions(model, holdout))
    summary = {
        "holdout_source": source,
        "n_train": len(train),
        "n_holdout": len(holdout),
        "runs": len(accs),
        "accuracies": [round(a, 6) for a in accs],
        "mean": round(float(np.mean(accs)), 6),
        "std": round(float(np.std(accs)), 6),
    }
    io.write_json(out / "transfer_summary.json", summary)
    if _manifest_path(cfg).exists():
        manifest = read_manifest(cfg)
        manifest["stages"]["train-transfer"] = dict(summary, status="complete")
        write_manifest(cfg, manifest)
    print(f"holdout accuracy {summary['mean']:.2f} +-{summary['std']:.2f} over {len(accs)} runs ({source})")
    return EXIT_OK


def cmd_grid(cfg: RunConfig) -> int:
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ks, ps = cfg.grid_values()
    rows, cells = [], {}
    for k in ks:
        for p in ps:
            if k < 2 or k >= len(ALL_INSTRUCTIONS) or p < 1 or p >= len(ALL_INSTRUCTIONS):
                log.warning("skipping infeasible cell k=%d p=%d", k, p)
                rows.append((k, p, "", "", 0, "infeasible"))
                continue
            accs = []
            for run in range(cfg.grid_runs):
                seed = derive_seed(cfg.seed, "grid", k, p, run)
                plan = cfg.plan(seed=seed, k=k, p=p)
                try:
                    res = run_pipeline(plan, cfg.classifier_config(seed), cfg.parallel)
                except NoPoliciesConverged as exc:
                    log.warning("k=%d p=%d run %d: %s", k, p, run, exc)
                    continue
                if res.accuracy is not None:
                    accs.append(res.accuracy)
                print(f"k={k} p={p} run {run}: accuracy {res.accuracy}", flush=True)
            if accs:
                mean, std = float(np.mean(accs)), float(np.std(accs))
                rows.append((k, p, f"{mean:.2f}", f"{std:.2f}", len(accs), "ok"))
                cells[f"{k},{p}"] = {"mean": round(mean, 6), "std": round(std, 6), "accuracies": [round(a, 6) for a in accs]}
            else:
                rows.append((k, p, "", "", 0, "degenerate"))
    io.write_csv(out / "accuracy_grid.csv", ("k", "p", "mean", "std", "runs", "status"), rows)
    io.write_json(out / "grid_summary.json", {"cells": cells, "trend": _trend(cells, ks, ps)})
    for k, p, mean, std, n, status in rows:
        print(f"k={k:<3} p={p:<3} {mean} +-{std} ({status})")
    return EXIT_OK


def _trend(cells: dict, ks, ps) -> dict:
    """Monotonicity of mean accuracy along k and along p; reported, never enforced."""
    def monotone(seq):
        vals = [v for v in seq if v is not None]
        return all(b >= a for a, b in zip(vals, vals[1:]))

    def mean(k, p):
        c = cells.get(f"{k},{p}")
        return None if c is None else c["mean"]

    return {
        "nondecreasing_in_k": {str(p): monotone([mean(k, p) for k in ks]) for p in ps},
        "nondecreasing_in_p": {str(k): monotone([mean(k, p) for p in ps]) for k in ks},
    }


def cmd_report(cfg: RunConfig) -> int:
    from .plotting import plot_match_curves

    out = _out(cfg)
    samples = io.read_samples(_require(out / "samples.csv", "samples.csv"), _require(out / "curves.csv", "curves.csv"))
    scratch = [s for s in samples if s.base_instruction is None]
    adapted = [s for s in samples if s.base_instruction is not None]
    if not adapted:
        raise CliError(EXIT_DEGENERATE, "samples.csv holds no adaptation samples")
    report = out / "report"
    report.mkdir(exist_ok=True)
    summary_rows = []
    for dim in DIMENSIONS:
        mc = group_curves(adapted, dim, scratch or None)
        io.write_match_curves(report / f"curves_{dim}.csv", mc)
        plot_match_curves(mc, report / f"{dim}.svg")
        hit, miss = final_success_by_match(adapted, dim)
        summary_rows.append((dim, mc.n_match, "" if hit is None else io.fmt(hit), mc.n_differ, "" if miss is None else io.fmt(miss)))
        if mc.empty_partitions:
            log.warning("%s: empty partition(s) %s", dim, ", ".join(mc.empty_partitions))
    io.write_csv(report / "final_success.csv", ("dimension", "n_match", "match_mean", "n_differ", "differ_mean"), summary_rows)
    print(f"wrote report to {report}")
    return EXIT_OK


def cmd_select(model_path: str, instruction: str, snapshots: str) -> int:
    try:
        z_x = parse(instruction)
    except MalformedInstruction as exc:
        raise CliError(EXIT_CONFIG, f"cannot parse instruction {instruction!r}: {exc}") from None
    model = load_model(_require(Path(model_path), "transfer model"))
    snap_dir = _require(Path(snapshots), "snapshot directory")
    labels = sorted({load_snapshot(p).instruction for p in sorted(snap_dir.glob("*.snap"))})
    if not labels:
        raise CliError(EXIT_MISSING, f"no snapshots in {snap_dir}")
    for rank, r in enumerate(select_best(model, z_x, labels), start=1):
        print(f"{rank}\t{render(r.instruction)}\t{r.wins}\t{r.mean_probability:.6f}")
    return EXIT_OK


def cmd_render(text: str, cfg: RunConfig, with_plan: bool) -> int:
    try:
        task = parse(text)
    except MalformedInstruction as exc:
        raise CliError(EXIT_CONFIG, f"cannot parse instruction {text!r}: {exc}") from None
    state = reset(cfg.env_config(), task, np.random.default_rng(cfg.seed))
    print(render_text(state))
    if with_plan:
        plan = shortest_plan(state) or []
        sys.stdout.write(trajectory_jsonl(state, plan))
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--parallel", type=int, help="worker processes")
    common.add_argument("--out", help="run directory")
    common.add_argument("--backend", choices=["tabular", "neural"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tasktransfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train-base", parents=[common], help="train the k base policies")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    sub.add_parser("sample", parents=[common], help="run the adaptation grid (resumable)")
    sub.add_parser("build-dataset", parents=[common], help="pairwise comparison records")
    p = sub.add_parser("train-transfer", parents=[common], help="train and score the transfer classifier")
    p.add_argument("--synthetic", action="store_true", help="use the verb-dominance generator")
    sub.add_parser("grid", parents=[common], help="accuracy grid over k and p")
    sub.add_parser("report", parents=[common], help="match-curve CSVs and SVG figures")
    p = sub.add_parser("select", parents=[common], help="rank base policies for an instruction")
    p.add_argument("instruction")
    p.add_argument("--model", help="transfer model file (default <out>/model.ttm)")
    p.add_argument("--snapshots", help="snapshot directory (default <out>/snapshots)")
    p = sub.add_parser("render", parents=[common], help="print a start state for an instruction")
    p.add_argument("instruction")
    p.add_argument("--plan", action="store_true", help="also dump the oracle trajectory as JSON lines")
    return parser


def resolve_config(args) -> RunConfig:
    path = args.config
    if path is None and args.command not in ("train-base", "grid") and args.out:
        candidate = Path(args.out) / "config.txt"
        if candidate.exists():
            path = str(candidate)
    overrides = {"seed": args.seed, "parallel": args.parallel, "out": args.out, "backend": args.backend}
    return load_config(path, overrides=overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        cmd = args.command
        if cmd == "train-base":
            return cmd_train_base(cfg, args.force)
        if cmd == "sample":
            return cmd_sample(cfg)
        if cmd == "build-dataset":
            return cmd_build_dataset(cfg)
        if cmd == "train-transfer":
            return cmd_train_transfer(cfg, args.synthetic)
        if cmd == "grid":
            return cmd_grid(cfg)
        if cmd == "report":
            return cmd_report(cfg)
        if cmd == "select":
            out = Path(cfg.out)
            return cmd_select(args.model or str(out / "model.ttm"), args.instruction, args.snapshots or str(out / "snapshots"))
        if cmd == "render":
            return cmd_render(args.instruction, cfg, args.plan)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLoss, ClassifierNonFinite, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
