"""Command-line pipeline: simulate | design | evaluate | report | worker.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure,
4 protocol error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import balance as balance_mod
from . import simgen, worker
from .config import ConfigError, RunConfig, derive_seed
from .data import (
    ColumnSchema,
    DataError,
    Dataset,
    PartitionSpec,
    balanced_partition,
    load_dataset,
    save_dataset,
)
from .designs import ALL_METHODS, DesignError, DesignVector
from .glm import ConvergenceError, GlmError
from .orchestrator import (
    DistributedRunError,
    RunResult,
    run_all_data,
    run_distributed,
    run_oracle,
    write_transcript,
)
from .protocol import ProtocolError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_PROTOCOL = 4

DEFAULT_PORT = 7425
PORT_ENV = "DISTDESIGN_PORT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="distdesign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate synthetic datasets and mechanism manifests")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--n", type=int, default=10000)
    sim.add_argument("--p", type=int, default=120)
    sim.add_argument("--m", type=int, default=6)
    sim.add_argument("--setting", choices=("one", "two"), default="one")
    sim.add_argument("--replicates", type=int, default=1)
    sim.add_argument("--out-dir", default=".")

    des = sub.add_parser("design", help="run the design pipeline on a dataset")
    des.add_argument("--dataset", required=True)
    des.add_argument("--mechanism", help="manifest from simulate (partition, oracle scores)")
    des.add_argument("--schema", help="JSON column-kind declarations for the CSV")
    des.add_argument("--config", help="JSON run configuration")
    des.add_argument("--mode", choices=("distributed", "all-data", "oracle"))
    des.add_argument("--transport", choices=("in-process", "multi-process"))
    des.add_argument("--m", type=int, help="designer count when no mechanism manifest is given")
    des.add_argument("--seed", type=int)
    des.add_argument("--methods", help="comma-separated subset of " + ",".join(ALL_METHODS))
    des.add_argument("--criterion", choices=("d_max", "d_plus"))
    des.add_argument("--transcript", help="write a protocol transcript (NDJSON)")
    des.add_argument(
        "--no-all-data", action="store_true",
        help="skip the all-data comparison rows in distributed mode",
    )
    des.add_argument("--out-dir", default=".")

    ev = sub.add_parser("evaluate", help="re-evaluate existing design files against a dataset")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--schema")
    ev.add_argument("--criterion", choices=("d_max", "d_plus"), default="d_max")
    ev.add_argument("--threshold", type=float, default=0.2)
    ev.add_argument("--out", default="balance.json")
    ev.add_argument("designs", nargs="+", help="design CSVs named <designer>__<method>__<kind>.csv")

    rep = sub.add_parser("report", help="long-format balance table and figures")
    rep.add_argument("balance", nargs="+", help="balance.json files from design/evaluate")
    rep.add_argument("--out-dir", default=".")
    rep.add_argument("--no-figures", action="store_true")

    wrk = sub.add_parser("worker", help="long-running designer worker")
    group = wrk.add_mutually_exclusive_group(required=True)
    group.add_argument("--stdio", action="store_true")
    group.add_argument("--connect", metavar="HOST[:PORT]")
    wrk.add_argument("--designer-id", type=int, help="informational; assigned via handshake")

    return parser


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in range(args.replicates):
        seed = derive_seed(args.seed, r) if args.replicates > 1 else args.seed
        tag = f"_{r + 1:03d}" if args.replicates > 1 else ""
        x = simgen.generate_covariates(args.n, args.p, seed)
        mech = simgen.sample_mechanism(args.p, seed)
        truth = simgen.true_propensity(mech, x)
        w = simgen.assign_treatments(truth, seed)
        dataset = simgen.make_dataset(x, w)
        partition = simgen.make_partition(mech, args.p, args.m, args.setting, seed)
        save_dataset(dataset, out / f"dataset{tag}.csv")
        simgen.save_mechanism(
            mech,
            out / f"mechanism{tag}.json",
            extra={
                "n": args.n, "p": args.p, "m": args.m, "setting": args.setting,
                "partition": [list(b) for b in partition.blocks],
            },
        )
        pre = balance_mod.pre_design_report(dataset)
        print(
            f"replicate {r + 1}: seed={seed} treated={int(w.sum())}/{args.n} "
            f"pre-design d_max={pre.d_max:.3f} d_plus={pre.d_plus}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# design


def _load_schema(path) -> ColumnSchema:
    if not path:
        return ColumnSchema()
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    return ColumnSchema(
        treatment_column=d.get("treatment_column", "treatment"), kinds=d.get("kinds", {})
    )


def _run_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    updates = {}
    for key in ("mode", "transport", "seed", "m"):
        val = getattr(args, key, None)
        if val is not None:
            updates[key] = val
    engine_updates = {}
    if getattr(args, "methods", None):
        engine_updates["methods"] = tuple(args.methods.split(","))
    if getattr(args, "criterion", None):
        engine_updates["selection_criterion"] = args.criterion
    if "seed" in updates:
        engine_updates["base_seed"] = updates["seed"]
    if engine_updates:
        updates["engine"] = dataclasses.replace(config.engine, **engine_updates)
    return dataclasses.replace(config, **updates) if updates else config


def _design_label(designer_id) -> str:
    return f"m{designer_id}" if isinstance(designer_id, int) else str(designer_id)


def _write_design_csv(dv: DesignVector, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("subject_id,group_id\n")
        for i, g in enumerate(dv.assignments):
            fh.write(f"{i},{int(g)}\n")


def _mechanism_terms(manifest: dict) -> list[tuple]:
    return [
        ("interaction", t["column_a"], t["column_b"])
        for t in manifest.get("interactions", [])
    ]


def _emit_run(result: RunResult, dataset: Dataset, config: RunConfig, out: Path,
              terms: list[tuple]) -> None:
    design_dir = out / "designs"
    design_dir.mkdir(parents=True, exist_ok=True)
    for dv in result.designs:
        name = f"{_design_label(dv.designer_id)}__{dv.method}__{dv.kind}.csv"
        _write_design_csv(dv, design_dir / name)

    reports = result.reports
    if terms:
        central = balance_mod.evaluate_terms_central(
            dataset, result.designs, terms, config.engine.balance_threshold
        )
        reports = [
            dataclasses.replace(r, evaluated_terms=central.get(r.design_ref, r.evaluated_terms))
            for r in reports
        ]
    names = {i: m.name for i, m in enumerate(dataset.covariate_meta)}
    balance_mod.write_summary_json(
        out / "balance.json", result.selection, reports,
        pre_design=result.pre_design, column_names=names,
    )
    balance_mod.write_balance_csv(
        reports + [result.pre_design], out / "balance.csv", column_names=names
    )
    config.write_manifest(out / "resolved-config.json")

    print(f"pre-design d_max={result.pre_design.d_max:.3f} d_plus={result.pre_design.d_plus}")
    print(f"{'designer':>10} {'method':>16} {'d_max':>7} {'d_plus':>6} {'retained':>8}")
    for row in result.selection.table:
        print(
            f"{_design_label(row['designer_id']):>10} {row['method']:>16} "
            f"{row['d_max']:>7.3f} {row['d_plus']:>6d} {row['n_retained']:>8d}"
        )
    win = result.selection.winner
    print(f"winner: {_design_label(win[0])} / {win[1]} (criterion {result.selection.criterion})")


def cmd_design(args) -> int:
    config = _run_config(args)
    schema = _load_schema(args.schema)
    schema = dataclasses.replace(schema, treatment_column=config.treatment_column) \
        if args.schema is None else schema
    dataset = load_dataset(args.dataset, schema)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = None
    terms: list[tuple] = []
    if args.mechanism:
        with open(args.mechanism, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        terms = _mechanism_terms(manifest)

    if config.mode == "oracle":
        if manifest is None:
            raise DataError("oracle mode needs --mechanism with the generating scores")
        mech = simgen.MechanismSpec.from_dict(manifest)
        truth = simgen.true_propensity(mech, dataset.covariates)
        result = run_oracle(dataset, truth, config.engine, extra_terms=terms)
    elif config.mode == "all-data":
        result = run_all_data(dataset, config.engine, extra_terms=terms)
    else:
        if manifest is not None and "partition" in manifest:
            partition = PartitionSpec(tuple(tuple(b) for b in manifest["partition"]))
        else:
            partition = balanced_partition(dataset.p, config.m, config.seed)
        result = run_distributed(
            dataset, partition, config.engine,
            transport=config.transport, extra_terms=terms,
            record_transcript=bool(args.transcript),
        )
        if args.transcript:
            write_transcript(result.transcript, args.transcript)
        if not args.no_all_data:
            baseline = run_all_data(dataset, config.engine, extra_terms=terms)
            selection, merged = balance_mod.aggregate_and_select(
                result.reports + baseline.reports, config.engine.selection_criterion
            )
            result = dataclasses.replace(
                result, selection=selection, reports=merged,
                designs=result.designs + baseline.designs,
            )
    _emit_run(result, dataset, config, out, terms)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _load_design_csv(path) -> DesignVector:
    stem = Path(path).stem
    parts = stem.split("__")
    if len(parts) != 3:
        raise DataError(
            f"{path}: design files are named <designer>__<method>__<kind>.csv"
        )
    designer, method, kind = parts
    designer_id: int | str = int(designer[1:]) if designer.startswith("m") and designer[1:].isdigit() else designer
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["subject_id", "group_id"]:
            raise DataError(f"{path}: expected header subject_id,group_id")
        for line in fh:
            sid, gid = line.strip().split(",")
            rows.append((int(sid), int(gid)))
    rows.sort()
    assignments = np.array([g for _, g in rows], dtype=np.int64)
    return DesignVector(
        assignments=assignments, kind=kind, designer_id=designer_id, method=method
    )


def cmd_evaluate(args) -> int:
    schema = _load_schema(args.schema)
    dataset = load_dataset(args.dataset, schema)
    block = balance_mod.full_dataset_block(dataset)
    partials = []
    designs = []
    for path in args.designs:
        dv = _load_design_csv(path)
        dv.validate(dataset.treatment)
        designs.append(dv)
        partials.append(
            balance_mod.evaluate_design_block(
                dv, block, dataset.treatment, threshold=args.threshold
            )
        )
    partials = [
        dataclasses.replace(r, baseline=not isinstance(r.designer_id, int)) for r in partials
    ]
    selection, merged = balance_mod.aggregate_and_select(partials, args.criterion)
    names = {i: m.name for i, m in enumerate(dataset.covariate_meta)}
    balance_mod.write_summary_json(
        args.out, selection, merged,
        pre_design=balance_mod.pre_design_report(dataset, args.threshold),
        column_names=names,
    )
    win = selection.winner
    print(f"winner: {_design_label(win[0])} / {win[1]} (criterion {selection.criterion})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in args.balance:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        label = Path(path).stem
        pre = payload.get("pre_design", {})
        for cand in payload.get("candidates", []):
            for cov, d in sorted(cand.get("per_covariate", {}).items()):
                rows.append((label, cov, "before", cand["method"], cand["designer_id"],
                             pre.get("per_covariate", {}).get(cov)))
                rows.append((label, cov, "after", cand["method"], cand["designer_id"], d))
            for term, d in sorted(cand.get("terms", {}).items()):
                rows.append((label, term, "before", cand["method"], cand["designer_id"],
                             pre.get("terms", {}).get(term)))
                rows.append((label, term, "after", cand["method"], cand["designer_id"], d))
        if not args.no_figures:
            from . import figures

            figures.balance_change_figure(payload, out / f"balance_change_{label}.png")
            figures.term_balance_figure(payload, out / f"term_balance_{label}.png")

    rows.sort(key=lambda r: (r[0], str(r[4]), r[3], r[1], r[2]))
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("source,covariate,stage,method,designer,d_value\n")
        for label, cov, stage, method, designer, d in rows:
            val = "" if d is None else repr(float(d))
            fh.write(f"{label},{cov},{stage},{method},{designer},{val}\n")
    print(f"wrote {out / 'summary.csv'} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# worker


def cmd_worker(args) -> int:
    if args.stdio:
        return worker.serve_stdio()
    host, _, port = args.connect.partition(":")
    port_num = int(port) if port else int(os.environ.get(PORT_ENV, DEFAULT_PORT))
    return worker.serve_tcp(host, port_num)


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {
        "simulate": cmd_simulate,
        "design": cmd_design,
        "evaluate": cmd_evaluate,
        "report": cmd_report,
        "worker": cmd_worker,
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GlmError, ConvergenceError, DesignError, balance_mod.BalanceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DistributedRunError as exc:
        if exc.category == "numeric":
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
