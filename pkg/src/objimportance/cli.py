"""Command-line entry point.

Verbs: ``gen-data``, ``gradcheck``, ``train``, ``eval``, ``infer``, ``plot``.
Every ``RunConfig`` and ``SceneConfig`` field has a flag (``--n-proposals``,
``--no-graph`` ...). Values come from the defaults, then ``--config FILE``, then flags.

Exit codes: 0 success, 1 usage error, 2 data/config mismatch, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import model, pipeline, plotting, storage, trainer
from .config import ConfigError, RunConfig, build, parse_pairs
from .evaluation import ApReport, evaluate_fold
from .scenes import SceneConfig, dataset_summary, generate_dataset

EXIT_OK, EXIT_USAGE, EXIT_MISMATCH, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("objimportance")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config flags -----------------------------------------------------------

def _add_fields(parser: argparse.ArgumentParser, cls) -> None:
    group = parser.add_argument_group(cls.__name__)
    for f in dataclasses.fields(cls):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(cls(), f.name)
        if isinstance(default, bool):
            # BooleanOptionalAction would read "--no-graph" as a negation, so a bare
            # flag means true and an explicit value is parsed like the config file
            group.add_argument(flag, dest=f.name, nargs="?", const="true", default=argparse.SUPPRESS,
                               metavar="BOOL")
        else:
            # parsed later with the config-file rules so flags and files agree
            group.add_argument(flag, dest=f.name, type=str, default=argparse.SUPPRESS, metavar=f.name.upper())


def _resolve(args, *classes):
    """Defaults, then the ``--config`` file, then explicit flags."""
    pairs = {}
    if getattr(args, "config", None):
        try:
            pairs = parse_pairs(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    known = {f.name for cls in classes for f in dataclasses.fields(cls)}
    unknown = sorted(set(pairs) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for name in known:
        if name in vars(args):
            value = vars(args)[name]
            pairs[name] = value
    out = []
    for cls in classes:
        names = {f.name for f in dataclasses.fields(cls)}
        out.append(build(cls, {k: v for k, v in pairs.items() if k in names}))
    return out


def _config_options(parser, *classes):
    parser.add_argument("--config", help="flat key = value config file")
    for cls in classes:
        _add_fields(parser, cls)


# -- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg, scfg = _resolve(args, RunConfig, SceneConfig)
    scenes = generate_dataset(cfg, scfg)
    try:
        storage.save_dataset(args.out, scenes)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from None
    summary = dataset_summary(scenes)
    print(json.dumps(summary))
    print(f"wrote {summary['n_scenes']} scenes to {args.out}; "
          f"positive rate {100 * summary['positive_rate']:.2f}% "
          f"({summary['positives_per_scene']:.3f} positives per scene)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = trainer.GRADCHECK_CONFIG
    if args.config or any(f.name in vars(args) for f in dataclasses.fields(RunConfig)):
        (cfg,) = _resolve(args, RunConfig)
    report = trainer.gradient_check(cfg, seed=args.check_seed, h=args.step, tolerance=args.tolerance)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def _fold_weight_path(run_dir: Path, fold: int | None) -> Path:
    return run_dir / ("model.weights" if fold is None else f"fold{fold}.weights")


def cmd_train(args) -> int:
    (cfg,) = _resolve(args, RunConfig)
    dims = storage.dataset_dims(args.data)
    storage.check_compatible(cfg, dims)
    scenes = storage.load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    folds = (1, 2, 3) if cfg.mode == "cv" else (None,)
    records = []
    for fold in folds:
        train_set = [s for s in scenes if s.split != fold]
        if not train_set:
            raise storage.FormatError(f"fold {fold} has no training scenes")
        init_seed = cfg.seed + 1000 * (fold or 0)
        params = model.init_params(cfg, seed=init_seed)
        steps = args.max_steps

        def on_epoch(epoch, tlog, fold=fold):
            records.append({"fold": fold or 0, "epoch": epoch + 1, "loss": tlog.epoch_loss[-1],
                            "edge_row_sum": tlog.edge_row_sums[-1]})
            print(json.dumps(records[-1]), flush=True)

        items = pipeline.train_items(train_set)
        if steps is not None:
            # a step budget: cycle through the data until exactly ``steps`` batches ran
            per_epoch = -(-len(items) // cfg.batch_size)
            items = (items * (-(-steps // per_epoch)))[:steps * cfg.batch_size]
            params, _ = trainer.train(cfg, items, params=params, epochs=1, on_epoch=on_epoch)
        else:
            params, _ = trainer.train(cfg, items, params=params, on_epoch=on_epoch)
        storage.save_weights(_fold_weight_path(out, fold), params, cfg)
    with open(out / "train_log.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
    print(f"wrote weights and train_log.jsonl to {out}")
    return EXIT_OK


def _load_fold_weights(path: Path) -> dict:
    """Map fold -> (cfg, params). A single file scores every split."""
    if path.is_dir():
        found = {k: _fold_weight_path(path, k) for k in (1, 2, 3) if _fold_weight_path(path, k).exists()}
        if found:
            return {k: storage.load_weights(p) for k, p in found.items()}
        path = _fold_weight_path(path, None)
    if not path.exists():
        raise UsageError(f"no weights at {path}")
    loaded = storage.load_weights(path)
    return {k: loaded for k in (1, 2, 3)}


def _check_weights(params, cfg) -> None:
    try:
        model.check_params(params, cfg)
    except ValueError as exc:
        raise storage.ConfigMismatch(str(exc)) from None


def cmd_eval(args) -> int:
    dims = storage.dataset_dims(args.data)
    scenes = storage.load_dataset(args.data)
    weights = None if args.oracle else _load_fold_weights(Path(args.weights))
    folds = []
    for k in (1, 2, 3):
        test = [s for s in scenes if s.split == k]
        if not test:
            continue
        if weights is None:
            scores = pipeline.oracle_scores(test)
        else:
            cfg, params = weights[k]
            storage.check_compatible(cfg, dims)
            _check_weights(params, cfg)
            scores = pipeline.score_scenes(params, cfg, test)[0]
        samples = [([p.box for p in s.test_proposals], sc, s.gt_boxes) for s, sc in zip(test, scores)]
        folds.append(evaluate_fold(k, samples))
    report = ApReport(folds)
    for line in report.records():
        print(line)
    print(report.table(args.name or ("oracle" if args.oracle else Path(args.weights).name)))
    if args.metrics_out:
        with open(args.metrics_out, "w") as f:
            for fr in folds:
                f.write(json.dumps({"fold": fr.fold, "ap": fr.ap, "n_samples": fr.n_samples, "n_gt": fr.n_gt,
                                    "recall": fr.recall.tolist(), "precision": fr.precision.tolist()}) + "\n")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg, params = storage.load_weights(args.weights)
    _check_weights(params, cfg)
    storage.check_compatible(cfg, storage.dataset_dims(args.scene))
    scenes = storage.load_dataset(args.scene)
    if not 0 <= args.index < len(scenes):
        raise UsageError(f"scene index {args.index} out of range (file holds {len(scenes)})")
    scene = scenes[args.index]
    scores, edges = pipeline.score_scenes(params, cfg, [scene])
    record = {"index": scene.index, "scores": scores[0].tolist(),
              "edge_matrix": None if edges[0] is None else edges[0].tolist()}
    text = json.dumps(record)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _read_jsonl(path: str) -> list[dict]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    return [json.loads(l) for l in lines if l.strip()]


def cmd_plot(args) -> int:
    if not (args.log or args.metrics or args.edges):
        raise UsageError("nothing to plot: pass --log, --metrics and/or --edges")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.log:
        records = _read_jsonl(args.log)
        if not records:
            raise UsageError(f"{args.log}: training log is empty")
        written.append(plotting.loss_curves(records, out / "loss_curves.png"))
    if args.metrics:
        folds = [r for r in _read_jsonl(args.metrics) if "recall" in r]
        if not folds:
            raise UsageError(f"{args.metrics}: no per-fold PR data")
        written.append(plotting.pr_curves(folds, out / "pr_curves.png"))
    if args.edges:
        recs = _read_jsonl(args.edges)
        if not recs or recs[0].get("edge_matrix") is None:
            raise UsageError(f"{args.edges}: no edge matrix (was the model trained without the graph?)")
        written.append(plotting.edge_heatmap(np.array(recs[0]["edge_matrix"]), out / "edge_heatmap.png"))
    for p in written:
        print(p)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="objimportance", description="Interaction-graph object importance: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    g.add_argument("--out", required=True)
    _config_options(g, RunConfig, SceneConfig)
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("gradcheck", help="compare analytic gradients with central differences")
    c.add_argument("--step", type=float, default=1e-5)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--check-seed", dest="check_seed", type=int, default=0)
    _config_options(c, RunConfig)
    c.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train per fold (mode=cv) or on everything (mode=single)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="run directory for weights and the training log")
    t.add_argument("--max-steps", type=int, default=None, help="stop after this many optimizer steps")
    _config_options(t, RunConfig)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="11-point AP per split and the average")
    e.add_argument("--data", required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", help="run directory (fold weights) or a single weight file")
    src.add_argument("--oracle", action="store_true", help="score proposals with their labels")
    e.add_argument("--metrics-out", help="write per-fold AP and PR curves as JSON lines")
    e.add_argument("--name", help="row label for the table")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="scores and edge matrix for one scene")
    i.add_argument("--weights", required=True)
    i.add_argument("--scene", required=True, help="dataset file holding the scene")
    i.add_argument("--index", type=int, default=0, help="position of the scene in the file")
    i.add_argument("--out", help="also write the JSON record here")
    i.set_defaults(func=cmd_infer)

    pl = sub.add_parser("plot", help="loss curves, PR curves and edge heatmaps as PNG")
    pl.add_argument("--log", help="train_log.jsonl")
    pl.add_argument("--metrics", help="file written by eval --metrics-out")
    pl.add_argument("--edges", help="file written by infer --out")
    pl.add_argument("--out", required=True, help="output directory")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, parse errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (storage.ConfigMismatch, storage.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (trainer.NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
