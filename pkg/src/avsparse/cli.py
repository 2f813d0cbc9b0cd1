"""Command-line entry point: ``avsparse {mask,merge,select,simulate}``.

Exit codes: 0 on success, 2 for I/O or parse errors, 3 when an input
violates a contract (bad ratio, shape mismatch, missing warm-up, ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import apply_overrides, config_from_dict, load_config
from .errors import InvalidInput, ShapeError
from .masking import TokenSet, apply_mask, plan_mask
from .merging import AttentionInputs, prumerge
from .numeric import make_rng
from .selection import WARMUP_EPOCH, SelectionConfig, read_loss_log, run_selection

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONTRACT = 3

log = logging.getLogger("avsparse")


class _IOFailure(Exception):
    pass


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise _IOFailure(f"cannot read {path}: {exc}") from exc


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write(path: str | None, doc) -> None:
    text = _dumps(doc)
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc}") from exc


def cmd_mask(args) -> int:
    ts = TokenSet.from_json(_read_json(args.input))
    seed = 0 if args.seed is None else args.seed
    make_rng(seed)
    plan = plan_mask(len(ts), args.ratio, seed)
    _write(args.out, {"tokens": apply_mask(ts, plan).to_json(), "plan": plan.to_json()})
    return EXIT_OK


def cmd_merge(args) -> int:
    ts = TokenSet.from_json(_read_json(args.tokens))
    inp = AttentionInputs.from_json(_read_json(args.attention))
    result = prumerge(ts, inp)
    _write(args.out, {"tokens": result.merged.to_json(), "merge": result.to_json()})
    return EXIT_OK


def _selection_config(args, n_samples: int, n_epochs: int) -> SelectionConfig:
    cfg = config_from_dict(_read_json(args.config)) if args.config else None
    section = cfg.selection if cfg is not None else None
    epochs = args.epochs if args.epochs is not None else (section.epochs if section else n_epochs)
    group_size = args.group_size if args.group_size is not None else (section.group_size if section else 3)
    decay = args.decay if args.decay is not None else (section.decay if section else 0.618)
    size = args.subset_size if args.subset_size is not None else (section.subset_size if section else None)
    if size is None:
        size = max(1, round(0.25 * n_samples))
    if size > n_samples:
        raise InvalidInput(f"subset size {size} exceeds the {n_samples} samples in the loss log")
    return SelectionConfig(epochs, group_size, decay, size)


def cmd_select(args) -> int:
    try:
        with open(args.losses, encoding="utf-8") as fh:
            lines = fh.readlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise _IOFailure(f"cannot read {args.losses}: {exc}") from exc
    try:
        records = read_loss_log(lines)
    except json.JSONDecodeError as exc:
        raise _IOFailure(f"malformed loss log {args.losses}: {exc}") from exc
    n_epochs = len(records) - 1
    cfg = _selection_config(args, records[WARMUP_EPOCH].size, n_epochs)
    if cfg.epochs != n_epochs:
        raise InvalidInput(f"loss log has {n_epochs} epochs, config expects {cfg.epochs}")
    subset = run_selection(records.__getitem__, cfg)
    _write(args.out, subset.to_json(cfg))
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulator import (
        PipelineConfig,
        generate_dataset,
        random_subset,
        run_retention_experiment,
        select_subset,
        train,
    )

    cfg = config_from_dict(_read_json(args.config)) if args.config else load_config(None)
    cfg = apply_overrides(cfg, seed=args.seed, ratio=args.ratio, epochs=args.epochs, subset_size=args.subset_size)
    make_rng(cfg.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _IOFailure(f"cannot create {out}: {exc}") from exc

    resolved = cfg.to_json()
    tc = cfg.train
    ds = generate_dataset(cfg.dataset)
    log.info("dense run")
    dense = train(ds, PipelineConfig.dense(), tc.epochs, cfg.seed, lr=tc.lr, batch_size=tc.batch_size, name="dense")
    log.info("sparse run")
    sparse = train(ds, cfg.sparse_pipeline(), tc.epochs, cfg.seed, lr=tc.lr, batch_size=tc.batch_size, name="sparse")
    sparse.extra.update(
        proxy_reduction=1 - sparse.compute_proxy / dense.compute_proxy,
        encoder_token_reduction=1 - sparse.encoder_tokens / dense.encoder_tokens,
        accuracy_gap=dense.final_accuracy - sparse.final_accuracy,
    )

    sel = cfg.selection_config()
    log.info("key-subset selection (%d epochs, subset %d)", sel.epochs, sel.subset_size)
    key_subset = select_subset(
        ds, sel, cfg.seed, prune_ratio=cfg.infobatch.prune_ratio, delta=cfg.infobatch.delta,
        lr=tc.lr, batch_size=tc.batch_size,
    )
    # the full-data reference is the dense run under another name
    full = replace(dense, name="full", extra={})
    kw = dict(lr=tc.lr, batch_size=tc.batch_size, full_report=full)
    subset = run_retention_experiment(ds, key_subset, tc.epochs, cfg.seed, **kw)
    control = run_retention_experiment(ds, random_subset(len(ds), sel.subset_size, cfg.seed), tc.epochs, cfg.seed, **kw)
    subset.extra["random_control"] = {
        "final_accuracy": control.final_accuracy,
        "above_chance_retention": control.extra["above_chance_retention"],
        "planted_hard_recall": control.planted_hard_recall,
    }

    reports = {"dense": dense, "sparse": sparse, "full": full, "subset": subset}
    timings = {}
    for name, report in reports.items():
        report.extra["config"] = resolved
        _write(str(out / f"{name}.json"), report.to_json())
        try:
            (out / f"{name}.csv").write_text(report.to_csv(), encoding="utf-8")
        except OSError as exc:
            raise _IOFailure(str(exc)) from exc
        timings[name] = report.wall_clock_s
    _write(str(out / "key_subset.json"), key_subset.to_json(sel))
    _write(str(out / "timings.json"), timings)
    log.info(
        "proxy reduction %.1f%%, accuracy dense %.3f sparse %.3f, subset retention %.3f",
        100 * sparse.extra["proxy_reduction"], dense.final_accuracy, sparse.final_accuracy,
        subset.extra["above_chance_retention"],
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avsparse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="randomly drop a fraction of a TokenSet's tokens")
    p.add_argument("input", help="TokenSet JSON file")
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("merge", help="attention-guided key-token merging")
    p.add_argument("tokens", help="TokenSet JSON file")
    p.add_argument("attention", help='JSON with "Q", "K" and optional "V" matrices')
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("select", help="key-subset selection from a JSON Lines loss log")
    p.add_argument("losses", help='JSON Lines, one {"epoch": e, "losses": [...]} per epoch; epoch -1 is warm-up')
    p.add_argument("--config", help="JSON config; only its selection section is used")
    p.add_argument("--epochs", type=int)
    p.add_argument("--group-size", type=int)
    p.add_argument("--decay", type=float)
    p.add_argument("--subset-size", type=int)
    p.add_argument("--out", help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="paired dense/sparse and full/subset experiments")
    p.add_argument("--config", help="JSON config (default: built-in defaults)")
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float, help="masking ratio")
    p.add_argument("--epochs", type=int, help="training and selection epochs")
    p.add_argument("--subset-size", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidInput, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
