"""Command-line entry point: prepare, fit, sample, evaluate, experiment.

Every failure exits nonzero after printing one machine-readable JSON
object to stderr: {"error": <exception type>, "message": <detail>}.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import harness
from .metrics import evaluate_all
from .sessions import (
    ColumnSchema,
    chronological_split,
    load_csv,
    read_preprocessed_csv,
    write_csv,
)


def _schema_from_args(args) -> ColumnSchema:
    return ColumnSchema(
        start=args.col_start,
        energy=args.col_energy,
        duration=args.col_duration,
        end=args.col_end,
    )


def _cmd_prepare(args) -> dict:
    ds = load_csv(args.input, _schema_from_args(args), name=args.name)
    split = chronological_split(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for tag, part in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        path = out / f"{tag}.csv"
        write_csv(part, path)
        files[tag] = str(path)
    manifest = {
        "name": ds.name,
        "rows": len(ds),
        "dropped": ds.dropped,
        "sizes": {tag: len(part) for tag, part in
                  (("train", split.train), ("valid", split.valid), ("test", split.test))},
        "span_days": {"test": split.test.span_days()},
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def _load_hyper(path) -> tuple[dict, dict, dict]:
    if path is None:
        return {}, {}, {}
    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return raw.get("codine", {}), raw.get("gmmnet", {}), raw.get("kde", {})


def _cmd_fit(args) -> dict:
    train = read_preprocessed_csv(args.train)
    valid = read_preprocessed_csv(args.valid) if args.valid else None
    codine_cfg, gmmnet_cfg, _ = _load_hyper(args.config)
    fm = harness.fit_model(
        args.model, train, valid, seed=args.seed, codine_cfg=codine_cfg, gmmnet_cfg=gmmnet_cfg
    )
    Path(args.out).write_text(json.dumps(fm.to_dict(), sort_keys=True) + "\n")
    return {"model": args.model, "checkpoint": str(args.out), **fm.meta}


def _cmd_sample(args) -> dict:
    with open(args.checkpoint, "r", encoding="utf-8") as fh:
        fm = harness.FittedModel.from_dict(json.load(fh))
    feats = harness.sample_model(fm, args.n, seed=args.seed)
    pd.DataFrame(feats, columns=["arrival_shifted", "duration", "energy"]).to_csv(
        args.out, index=False
    )
    return {"model": fm.model, "rows": int(len(feats)), "out": str(args.out), **fm.meta}


def _cmd_evaluate(args) -> dict:
    train = read_preprocessed_csv(args.train)
    test = read_preprocessed_csv(args.test)
    synthetic = read_preprocessed_csv(args.synthetic)
    _, _, kde_cfg = _load_hyper(args.config)
    spans = args.spans if args.spans is not None else test.span_days()
    rep = evaluate_all(
        train.features(),
        test.features(),
        synthetic.features(),
        spans=spans,
        kde_cfg=kde_cfg,
        metadata={"synthetic": str(args.synthetic), "test": str(args.test)},
    )
    Path(args.out).write_text(json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n")
    return rep.to_dict()


def _cmd_experiment(args) -> dict:
    cfg = harness.ExperimentConfig.from_yaml(args.config)
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if overrides:
        cfg = harness.ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    table = harness.run_experiment(cfg)
    written = harness.emit_report(table, cfg.out_dir)
    return {
        "out_dir": str(cfg.out_dir),
        "cells": len(table.records),
        "failed_cells": sum(1 for r in table.records if not r["ok"]),
        "files": [str(p) for p in written],
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="evcopula",
        description="Fit, sample and evaluate joint-dependence models of EV charging events.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    prep = sub.add_parser("prepare", help="raw CSV -> preprocessed splits + manifest")
    prep.add_argument("--input", required=True)
    prep.add_argument("--name", default=None)
    prep.add_argument("--out", required=True)
    prep.add_argument("--col-start", required=True)
    prep.add_argument("--col-duration", default=None)
    prep.add_argument("--col-end", default=None)
    prep.add_argument("--col-energy", required=True)
    prep.set_defaults(func=_cmd_prepare)

    fit = sub.add_parser("fit", help="fit one model, write a checkpoint JSON")
    fit.add_argument("--model", required=True, choices=harness.MODEL_NAMES)
    fit.add_argument("--train", required=True)
    fit.add_argument("--valid", default=None)
    fit.add_argument("--config", default=None, help="YAML with codine/gmmnet/kde keys")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=_cmd_fit)

    smp = sub.add_parser("sample", help="checkpoint -> synthetic CSV")
    smp.add_argument("--checkpoint", required=True)
    smp.add_argument("--n", type=int, required=True)
    smp.add_argument("--seed", type=int, default=0)
    smp.add_argument("--out", required=True)
    smp.set_defaults(func=_cmd_sample)

    ev = sub.add_parser("evaluate", help="synthetic vs test -> metrics JSON")
    ev.add_argument("--train", required=True)
    ev.add_argument("--test", required=True)
    ev.add_argument("--synthetic", required=True)
    ev.add_argument("--spans", type=int, default=None)
    ev.add_argument("--config", default=None)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=_cmd_evaluate)

    ex = sub.add_parser("experiment", help="full table from a config file")
    ex.add_argument("--config", required=True)
    ex.add_argument("--out", default=None)
    ex.add_argument("--workers", type=int, default=None)
    ex.add_argument("--seed", type=int, default=None, help="replace the seed list with one seed")
    ex.set_defaults(func=_cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except Exception as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
