"""Command-line pipeline: synth -> search -> derive -> train -> predict -> evaluate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import plotting
from .artifacts import ArtifactError, load_network, manifest_norm_stats, save_network
from .config import ConfigError, RunConfig
from .data import (
    VolumeFormatError, compute_norm_stats, load_directory, normalize, read_case, synth_phantom,
    write_case, write_volume,
)
from .data.volume import read_header, read_label
from .engine import NumericError, most_common, search, train
from .inference import predict_case
from .metrics import evaluate_case, read_metrics_csv, write_metrics_csv
from .network import GenotypeError, genotype_hash, load_genotype, save_genotype
from .network.genotype import genotype_from_dict

log = logging.getLogger("cellsearch3d")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


def _write_jsonl(path: Path, rows) -> Path:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path


def _resolve(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    updates = {"seed": args.seed, "out_dir": args.out, "data_dir": getattr(args, "data", None)}
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            updates[key] = json.loads(raw)
        except json.JSONDecodeError:
            updates[key] = raw
    return cfg.override(**updates)


def _labelled_cases(cfg: RunConfig, ids=None):
    try:
        cases = load_directory(cfg.data_dir)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    if ids is not None:
        by_id = {c.case_id: c for c in cases}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"cases not found in {cfg.data_dir}: {missing}")
        cases = [by_id[i] for i in ids]
    for c in cases:
        if c.label is None:
            raise DataError(f"case {c.case_id} has no label file")
        if c.modalities != cfg.modalities:
            raise DataError(f"case {c.case_id} has {c.modalities} modalities, config says {cfg.modalities}")
    return cases


# --- commands -----------------------------------------------------------------------

def cmd_synth(args) -> int:
    dims = args.dims * 3 if len(args.dims) == 1 else args.dims
    if len(dims) != 3:
        raise ConfigError("--dims takes one or three extents")
    out = Path(args.out or "data")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from None
    base = args.seed or 0
    for i in range(args.count):
        case = synth_phantom(base + i, dims, args.modalities, case_id=f"phantom{base + i:04d}")
        for p in write_case(case, out):
            log.info("wrote %s", p)
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = _resolve(args)
    out = Path(cfg.out_dir)
    raw = _labelled_cases(cfg)
    if len(raw) < 2:
        raise DataError(f"search needs at least 2 labelled cases in {cfg.data_dir}, found {len(raw)}")
    out.mkdir(parents=True, exist_ok=True)
    stats = compute_norm_stats(raw)
    cases = [normalize(c, stats, cfg.xi, cfg.lam) for c in raw]
    result = search(cases, cfg.search(), cfg.backbone())
    dc, uc = result.genotype
    save_genotype(out / "genotype.json", dc, uc)
    _write_jsonl(out / "search_history.jsonl", result.history)
    (out / "norm_stats.json").write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    # the counter is stored in insertion order so `derive` can repeat the selection
    extra = {"counter": [[k, n] for k, n in result.counter.items()],
             "stopped_early": result.stopped_early}
    save_network(out / "search_state.net", result.network, kind="search_state",
                 norm_stats=stats, extra=extra)
    cfg.save(out / "config.json")
    if cfg.figures:
        plotting.plot_search_history(result.history, out / "search_history.png")
    log.info("search finished after %d epochs; genotype %s", len(result.history), genotype_hash(dc, uc))
    return EXIT_OK


def cmd_derive(args) -> int:
    state = Path(args.state)
    net, manifest = load_network(state)
    if not manifest["search_mode"]:
        raise ConfigError(f"{state} holds a derived network, not a search state")
    out = Path(args.out or state.parent)
    out.mkdir(parents=True, exist_ok=True)
    counter = manifest["extra"].get("counter")
    if args.current or not counter:
        dc, uc = net.derive_genotype()
    else:
        dc, uc = genotype_from_dict(json.loads(most_common(Counter(dict(counter)))))
    save_genotype(out / "genotype.json", dc, uc)
    log.info("derived genotype %s", genotype_hash(dc, uc))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(cfg.out_dir)
    geno_path = args.genotype or cfg.genotype_file or str(out / "genotype.json")
    if not Path(geno_path).exists():
        raise ConfigError(f"genotype file {geno_path} not found")
    genotypes = load_genotype(geno_path)
    raw = _labelled_cases(cfg, cfg.train_case_ids)
    if not raw:
        raise DataError(f"no labelled cases in {cfg.data_dir}")
    out.mkdir(parents=True, exist_ok=True)
    stats = compute_norm_stats(raw)
    cases = [normalize(c, stats, cfg.xi, cfg.lam) for c in raw]
    result = train(cases, genotypes, cfg.train(), cfg.backbone())
    extra = {"train_patch": cfg.train_patch, "xi": cfg.xi, "lam": cfg.lam,
             "threshold": cfg.threshold, "nested_eval": cfg.nested_eval}
    save_network(out / "model.net", result.network, kind="model", norm_stats=stats, extra=extra)
    _write_jsonl(out / "train_history.jsonl", result.history)
    if cfg.figures and result.history:
        plotting.plot_train_history(result.history, out / "train_history.png")
    if result.history:
        log.info("training finished; final loss %.4f", result.history[-1]["loss"])
    return EXIT_OK


def cmd_predict(args) -> int:
    net, manifest = load_network(args.model)
    if manifest["search_mode"]:
        raise ConfigError(f"{args.model} is a search state; train a derived model first")
    stats = manifest_norm_stats(manifest)
    if stats is None:
        raise ArtifactError(f"{args.model} carries no normalization statistics")
    extra = manifest["extra"]
    case = read_case(args.case)
    label, _ = predict_case(net, case, stats, extra["train_patch"], extra["xi"], extra["lam"],
                            extra["threshold"], extra["nested_eval"])
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = write_volume(out / f"{case.case_id}_label.vvol", label, "label", case.case_id)
    log.info("wrote %s", path)
    return EXIT_OK


def _label_files(directory) -> dict[str, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"directory {directory} does not exist")
    found = {}
    for p in sorted(directory.glob("*.vvol")):
        h = read_header(p)
        if h["kind"] == "label":
            found[h["case_id"]] = p
    return found


def cmd_evaluate(args) -> int:
    preds, truths = _label_files(args.pred), _label_files(args.truth)
    if not preds:
        raise DataError(f"no label volumes in {args.pred}")
    missing = sorted(set(preds) - set(truths))
    if missing:
        raise DataError(f"no ground truth for case(s): {', '.join(missing)}")
    records = []
    for cid in sorted(preds):
        _, p = read_label(preds[cid])
        _, t = read_label(truths[cid])
        records.append((cid, evaluate_case(p, t)))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_metrics_csv(out / "metrics.csv", records)
    if not args.no_figures:
        plotting.plot_metrics(read_metrics_csv(csv_path), out / "metrics.png")
    log.info("wrote %s", csv_path)
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellsearch3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p, config_required=False):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="write synthetic labelled phantoms")
    shared(p)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--dims", type=int, nargs="+", default=[48])
    p.add_argument("--modalities", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (("search", cmd_search, "search cell structures"),
                                 ("train", cmd_train, "retrain a derived network")):
        p = sub.add_parser(name, help=helptext)
        shared(p, config_required=True)
        p.add_argument("--data", help="override data_dir")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        if name == "train":
            p.add_argument("--genotype", help="genotype JSON (default: <out>/genotype.json)")
        p.set_defaults(func=func)

    p = sub.add_parser("derive", help="extract the genotype from a saved search state")
    shared(p)
    p.add_argument("--state", required=True)
    p.add_argument("--current", action="store_true",
                   help="derive from the final hybrid parameters instead of the search counter")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("predict", help="segment one case with a trained model")
    shared(p)
    p.add_argument("--model", required=True)
    p.add_argument("--case", required=True, help="image .vvol file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predicted label volumes against ground truth")
    shared(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GenotypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, VolumeFormatError, ArtifactError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
