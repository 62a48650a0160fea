"""Command-line entry point: ``tinyae <stage> [--config FILE] [--set k=v ...]``.

Stages write into the output directory and read what earlier stages produced:

    gen-data  -> data/dataset.csv
    extract   -> features/features.csv
    select    -> selection/ranking.csv, selection/rfe.csv
    train     -> models/<name>.mlp, .norm.json, .history.json
    tune      -> models/<name>.tune.json
    quantize  -> models/<name>.qmodel
    eval      -> eval/<name>.json, eval/<name>.confusion.csv
    bench     -> bench/bench.csv, bench/bench.md
    report    -> report/report.md (aggregation only)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, dataset, features, nn, quant, selection
from .config import OUTPUT_ENV, ConfigError, ModelSpec, PipelineConfig

log = logging.getLogger("tinyae")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING = 0, 2, 3


class MissingArtifact(RuntimeError):
    def __init__(self, path: Path, stage: str):
        super().__init__(f"missing {path}; run the '{stage}' stage first")
        self.path, self.stage = path, stage


class Workspace:
    """Paths of every artifact under the output directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = cfg.output_dir

    def path(self, *parts: str, mkdir: bool = False) -> Path:
        p = self.root.joinpath(*parts)
        if mkdir:
            p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise MissingArtifact(path, stage)
        return path

    # ------------------------------------------------------------------
    def signals(self) -> list[dataset.Signal]:
        src = self.cfg.dataset_path
        if src is None:
            src = self.require(self.path("data", "dataset.csv"), "gen-data")
        elif not src.exists():
            raise MissingArtifact(src, "dataset")
        sigs = dataset.load_dataset(src, self.cfg.section("dataset").get("format", "csv"))
        mode = self.cfg.section("dataset").get("downsample_mode", "stride")
        return [dataset.downsample(s, dataset.CANONICAL_LENGTH, mode) for s in sigs]

    def feature_table(self):
        return features.read_feature_csv(self.require(self.path("features", "features.csv"), "extract"))

    def split(self, labels) -> dict[str, np.ndarray]:
        sp = self.cfg.section("split")
        return dataset.split_indices(labels, tuple(sp["ratios"]), sp["seed"])

    def model_inputs(self, spec: ModelSpec, signals=None):
        """(X, y) for a model spec: raw samples or the selected feature columns."""
        if spec.features is None:
            return dataset.to_matrix(signals if signals is not None else self.signals())
        X, y, names = self.feature_table()
        col = {n: i for i, n in enumerate(names)}
        missing = [f for f in spec.features if f not in col]
        if missing:
            raise ConfigError(f"feature table lacks {missing}")
        return X[:, [col[f] for f in spec.features]], y

    def model_path(self, spec: ModelSpec, suffix: str, mkdir: bool = False) -> Path:
        return self.path("models", f"{spec.name}{suffix}", mkdir=mkdir)

    def rep_indices(self, train_idx: np.ndarray) -> np.ndarray:
        q = self.cfg.section("quant")
        rng = np.random.default_rng(self.cfg.section("split")["seed"])
        pick = rng.permutation(train_idx)[: q["rep_size"]]
        return np.sort(pick)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def cmd_gen_data(ws: Workspace) -> Path:
    synth = ws.cfg.section("dataset").get("synth")
    if synth is None:
        raise ConfigError("gen-data needs a [dataset.synth] source")
    sigs = dataset.synth_dataset(synth["n_per_class"], synth["seed"], ws.cfg.synth_config)
    out = ws.path("data", "dataset.csv", mkdir=True)
    try:
        dataset.save_csv(sigs, out)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from None
    counts = np.bincount([int(s.label) for s in sigs], minlength=3)
    for cls, n in zip(dataset.DamageClass, counts):
        print(f"{cls.name.lower():8s} {n}")
    print(f"wrote {out}")
    return out


def cmd_extract(ws: Workspace) -> Path:
    sigs = ws.signals()
    X = features.feature_matrix(sigs)
    out = ws.path("features", "features.csv", mkdir=True)
    features.write_feature_csv(out, X, [int(s.label) for s in sigs], features.FEATURE_NAMES)
    print(f"extracted {len(features.FEATURE_NAMES)} features from {len(sigs)} events -> {out}")
    return out


def cmd_select(ws: Workspace) -> Path:
    X, y, names = ws.feature_table()
    tr = ws.split(y)["train"]
    m = selection.FeatureMatrix(X[tr], y[tr], names)
    sc = ws.cfg.section("selection")
    chi = selection.chi2_scores(m)
    mi = selection.mutual_info_scores(m, sc["mi_bins"])
    out = ws.path("selection", "ranking.csv", mkdir=True)
    selection.write_ranking_csv(out, names, chi, mi)
    max_size = min(sc["max_size"], len(names))
    subsets = selection.rfe(m, max_size, sc["folds"], sc["seed"])
    rfe_path = ws.path("selection", "rfe.csv")
    with open(rfe_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["size", "cv_accuracy", "features"])
        for res in subsets:
            writer.writerow([len(res.selected), f"{res.cv_accuracy:.6f}", ";".join(res.selected)])
    print("chi2 top-5:", ", ".join(names[i] for i in chi.order[:5]))
    print("MI   top-5:", ", ".join(names[i] for i in mi.order[:5]))
    for res in subsets:
        print(f"RFE size {len(res.selected):2d}  cv={res.cv_accuracy:.3f}  {', '.join(res.selected)}")
    if sc.get("exhaustive"):
        best = selection.exhaustive_search(m, subsets[-1].selected, min(3, max_size), sc["folds"], sc["seed"])
        exh_path = ws.path("selection", "exhaustive.csv")
        with open(exh_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["size", "cv_accuracy", "features"])
            for res in best:
                writer.writerow([len(res.selected), f"{res.cv_accuracy:.6f}", ";".join(res.selected)])
    time8, freq5 = selection.paper_presets()
    print("preset time-domain (8):", ", ".join(time8))
    print("preset frequency-inclusive (5):", ", ".join(freq5))
    return out


def _fit_inputs(ws: Workspace, spec: ModelSpec, signals=None):
    X, y = ws.model_inputs(spec, signals)
    idx = ws.split(y)
    scaler = nn.Standardizer.fit(X[idx["train"]], per_dimension=spec.features is not None)
    return scaler.transform(X), y, idx, scaler


def cmd_train(ws: Workspace) -> None:
    signals = ws.signals() if any(s.features is None for s in ws.cfg.models) else None
    for spec in ws.cfg.models:
        Xs, y, idx, scaler = _fit_inputs(ws, spec, signals)
        cfg = ws.cfg.train_config
        model = nn.build(spec.input_dim, *spec.hidden, seed=cfg.seed)
        model, hist = nn.train(model, Xs[idx["train"]], y[idx["train"]],
                               Xs[idx["validation"]], y[idx["validation"]], cfg)
        nn.save_model(model, ws.model_path(spec, ".mlp", mkdir=True))
        scaler.save(ws.model_path(spec, ".norm.json"))
        _write_json(ws.model_path(spec, ".history.json"), hist.to_dict())
        print(f"{spec.name}: params={model.param_count} best_epoch={hist.best_epoch} "
              f"stopped={hist.stopped_epoch} val_acc={hist.val_accuracy[hist.best_epoch - 1]:.4f}")


def cmd_tune(ws: Workspace) -> None:
    signals = ws.signals() if any(s.features is None for s in ws.cfg.models) else None
    tc = ws.cfg.section("tune")
    base = ws.cfg.train_config
    cfg = nn.TrainConfig(base.learning_rate, base.batch_size, tc.get("max_epochs", base.max_epochs),
                         base.patience, base.seed)
    space = {"h1": tc["h1"], "h2": tc["h2"], "lr": tc["lr"]}
    n_space = len(space["h1"]) * len(space["h2"]) * len(space["lr"])
    for spec in ws.cfg.models:
        Xs, y, idx, _ = _fit_inputs(ws, spec, signals)
        res = nn.tune(spec.input_dim, Xs[idx["train"]], y[idx["train"]], Xs[idx["validation"]],
                      y[idx["validation"]], space, min(tc["budget"], n_space), tc["seed"], cfg)
        _write_json(ws.model_path(spec, ".tune.json", mkdir=True),
                    {"best": {"h1": res.best[0], "h2": res.best[1], "lr": res.best[2]}, "trials": res.trials})
        print(f"{spec.name}: best h1={res.best[0]} h2={res.best[1]} lr={res.best[2]}")


def cmd_quantize(ws: Workspace) -> None:
    if not ws.cfg.section("quant")["enabled"]:
        print("quantization disabled in config; nothing to do")
        return
    signals = ws.signals() if any(s.features is None for s in ws.cfg.models) else None
    for spec in ws.cfg.models:
        model = nn.load_model(ws.require(ws.model_path(spec, ".mlp"), "train"))
        scaler = nn.Standardizer.load(ws.require(ws.model_path(spec, ".norm.json"), "train"))
        X, y = ws.model_inputs(spec, signals)
        rep = ws.rep_indices(ws.split(y)["train"])
        qm = quant.quantize(model, quant.calibrate(model, scaler.transform(X[rep])))
        quant.save_qmodel(qm, ws.model_path(spec, ".qmodel"))
        flash, ram = quant.footprint(qm)
        print(f"{spec.name}: int8 blob={qm.blob_bytes} B flash={flash / 1024:.2f} KB ram={ram / 1024:.2f} KB")


def cmd_eval(ws: Workspace) -> None:
    signals = ws.signals() if any(s.features is None for s in ws.cfg.models) else None
    use_q = ws.cfg.section("quant")["enabled"]
    for spec in ws.cfg.models:
        model = nn.load_model(ws.require(ws.model_path(spec, ".mlp"), "train"))
        scaler = nn.Standardizer.load(ws.require(ws.model_path(spec, ".norm.json"), "train"))
        X, y = ws.model_inputs(spec, signals)
        te = ws.split(y)["test"]
        Xt = scaler.transform(X[te])
        res = nn.evaluate(model, Xt, y[te])
        payload = {"model": spec.name, "params": model.param_count,
                   "float_size_bytes": model.float_size_bytes,
                   "float_size_kb": round(model.float_size_bytes / 1024, 2),
                   "float": res.to_dict()}
        print(f"{spec.name}: float accuracy={res.accuracy:.4f}")
        print(nn.render_confusion(res.confusion))
        rows = [("float", res.confusion)]
        if use_q:
            qm = quant.load_qmodel(ws.require(ws.model_path(spec, ".qmodel"), "quantize"))
            qres = nn.evaluate(qm, Xt, y[te])
            agree = float(np.mean(qm.predict(Xt) == model.predict(Xt)))
            dev = float(np.max(np.abs(qm.logits(Xt) - model.logits(Xt))))
            payload["int8"] = qres.to_dict()
            payload["top1_agreement"] = agree
            payload["logit_max_abs_dev"] = dev
            rows.append(("int8", qres.confusion))
            print(f"{spec.name}: int8 accuracy={qres.accuracy:.4f} agreement={agree:.4f} "
                  f"max|dlogit|={dev:.4g}")
        _write_json(ws.path("eval", f"{spec.name}.json"), payload)
        with open(ws.path("eval", f"{spec.name}.confusion.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "true", "pred_tensile", "pred_shear", "pred_mixed"])
            for kind, cm in rows:
                for cls, row in zip(dataset.DamageClass, cm):
                    writer.writerow([kind, cls.name.lower(), *map(int, row)])


def cmd_bench(ws: Workspace) -> None:
    bc = ws.cfg.section("bench")
    use_q = ws.cfg.section("quant")["enabled"]
    signals = ws.signals()
    te = ws.split([int(s.label) for s in signals])["test"]
    test_signals = [signals[i] for i in te]
    kwargs = {k: bc[src] for k, src in (("runtime_overhead", "runtime_overhead_bytes"),
                                          ("arena_slack", "arena_slack_bytes")) if bc.get(src) is not None}
    pipes = []
    for spec in ws.cfg.models:
        scaler = nn.Standardizer.load(ws.require(ws.model_path(spec, ".norm.json"), "train"))
        if use_q:
            model = quant.load_qmodel(ws.require(ws.model_path(spec, ".qmodel"), "quantize"))
        else:
            model = nn.load_model(ws.require(ws.model_path(spec, ".mlp"), "train"))
        pipes.append(bench.Pipeline(spec.name, model, scaler, list(spec.features) if spec.features else None))
    timings = bench.time_pipelines(pipes, test_signals, bc["reps"], bc["warmup"])
    reports = []
    for pipe, (extraction, inference) in zip(pipes, timings):
        flash, ram = quant.footprint(pipe.model, **kwargs)
        reports.append(bench.BenchReport(pipe.name, inference, extraction, bench.mac_count(pipe.model),
                                         flash, ram, bc["power_mw"]))
    md, csv_text = bench.make_report(reports)
    ws.path("bench", "bench.csv", mkdir=True).write_text(csv_text)
    ws.path("bench", "bench.md").write_text(md)
    print(md, end="")


def cmd_report(ws: Workspace) -> Path:
    table1 = ["| Model | Parameter | Accuracy | Int8 accuracy | Model size |",
              "|-------|-----------|----------|---------------|------------|"]
    t1_rows = []
    for spec in ws.cfg.models:
        ev = json.loads(ws.require(ws.path("eval", f"{spec.name}.json"), "eval").read_text())
        q = ev.get("int8", {}).get("accuracy")
        table1.append(f"| {spec.name} | {ev['params']} | {ev['float']['accuracy']:.3f} | "
                      f"{'--' if q is None else f'{q:.3f}'} | {ev['float_size_kb']:.2f} KB |")
        t1_rows.append([spec.name, ev["params"], ev["float"]["accuracy"], "" if q is None else q,
                        ev["float_size_kb"]])
    bench_rows = bench.read_report_csv(ws.require(ws.path("bench", "bench.csv"), "bench"))
    out = ws.path("report", "report.md", mkdir=True)
    with open(ws.path("report", "table1.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "params", "accuracy", "int8_accuracy", "model_size_kb"])
        writer.writerows(t1_rows)
    text = ("# Model test results\n\n" + "\n".join(table1) + "\n\n"
            "# Deployed pipeline parameters (host timings)\n\n" + bench.render_markdown(bench_rows))
    out.write_text(text)
    print(text, end="")
    return out


STAGES = {
    "gen-data": cmd_gen_data,
    "extract": cmd_extract,
    "select": cmd_select,
    "train": cmd_train,
    "tune": cmd_tune,
    "quantize": cmd_quantize,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "report": cmd_report,
}
PIPELINE = ["gen-data", "extract", "select", "train", "quantize", "eval", "bench", "report"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinyae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*STAGES, "all"]:
        p = sub.add_parser(name, help="run every stage in order" if name == "all" else f"run the {name} stage")
        p.add_argument("-c", "--config", type=Path, help="TOML config file")
        p.add_argument("-o", "--output-dir", type=Path,
                       help=f"output directory (overrides config and ${OUTPUT_ENV})")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. train.max_epochs=50")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(args.config, args.overrides, args.output_dir)
        ws = Workspace(cfg)
        stages = PIPELINE if args.command == "all" else [args.command]
        if args.command == "all" and cfg.dataset_path is not None:
            stages = stages[1:]
        for stage in stages:
            log.info("running %s", stage)
            STAGES[stage](ws)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (dataset.DatasetError, features.FeatureError, selection.SelectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
