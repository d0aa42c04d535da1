"""Command-line entry point: ``deepaug <command> [options]``."""
import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import reports
from .config import SWEEP_AXES, SweepSpec, format_value, parse_config, write_resolved
from .data import export_dataset, generate_synthetic, parse_cifar, SyntheticSpec
from .errors import ConfigError, DeepAugError
from .metrics import alignment, linear_probe, uniformity, cka_matrix
from .augment import augment_inputs
from .nn import load_checkpoint
from .rng import derive_seed
from .trainer import TrainConfig, prepare_data, run_experiment

log = logging.getLogger("deepaug")

SUMMARY_COLUMNS = ("run",) + SWEEP_AXES + reports.METRICS_COLUMNS
TREND_COLUMNS = ("run", "target_layer", "stop_grad", "batch_fraction", "all_layers_rate") + reports.METRICS_COLUMNS
_OUR_FILES = ("resolved.cfg", "metrics.*", "cka*.csv", "cka*.json", "checkpoint_epoch*.daug", "summary.*",
              "trend*.*", "probe.*", "align_uniform.*", "dataset.daug", "cifar_summary.*")


class RunExists(DeepAugError):
    pass


def _load_config(args) -> TrainConfig:
    cfg = parse_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        if isinstance(cfg, SweepSpec):
            cfg.base = cfg.base.replace(seed=args.seed)
        else:
            cfg = cfg.replace(seed=args.seed)
    return cfg


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    return Path((cfg.base if isinstance(cfg, SweepSpec) else cfg).out)


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise RunExists(f"output directory {out} exists and is not empty (use --force to overwrite)")
        for pattern in _OUR_FILES:
            for p in out.glob(pattern):
                p.unlink()
    out.mkdir(parents=True, exist_ok=True)


def _final_row(records) -> dict:
    last = records[-1]
    return {c: getattr(last, c) for c in reports.METRICS_COLUMNS}


def _run_point(job):
    label, cfg, run_dir, write_json = job
    run_dir = Path(run_dir)
    _prepare_out(run_dir, force=True)
    write_resolved(cfg, run_dir)
    records = run_experiment(cfg, run_dir, write_json=write_json)
    return label, _final_row(records)


def _run_jobs(jobs, parallel: int):
    """Run jobs, returning ``{label: final_row}`` and a list of ``(label, error)``."""
    done, failed = {}, []
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [(job[0], pool.submit(_run_point, job)) for job in jobs]
            for label, fut in futures:
                try:
                    done[label] = fut.result()[1]
                except Exception as e:  # keep the other runs
                    failed.append((label, e))
    else:
        for job in jobs:
            try:
                done[job[0]] = _run_point(job)[1]
            except Exception as e:
                failed.append((job[0], e))
    return done, failed


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if isinstance(cfg, SweepSpec):
        raise ConfigError("config has sweep = true; use the 'sweep' command")
    out = _out_dir(args, cfg)
    _prepare_out(out, args.force)
    write_resolved(cfg, out)
    records = run_experiment(cfg, out, write_json=args.json)
    row = _final_row(records)
    print(",".join(reports.METRICS_COLUMNS))
    print(",".join(reports.fmt(row[c]) for c in reports.METRICS_COLUMNS))
    return 0


def cmd_sweep(args) -> int:
    spec = _load_config(args)
    if not isinstance(spec, SweepSpec):
        raise ConfigError("config has no sweep axes; set sweep = true and give list values")
    out = _out_dir(args, spec)
    _prepare_out(out, args.force)
    write_resolved(spec, out)
    points = spec.points()
    for label, _, _ in points:
        if (out / label).exists() and not args.force:
            raise RunExists(f"run directory {out / label} exists (use --force to overwrite)")
    jobs = [(label, cfg, str(out / label), args.json) for label, _, cfg in points]
    done, failed = _run_jobs(jobs, args.parallel)
    rows = []
    for label, values, cfg in points:
        if label in done:
            rows.append({"run": label, **{k: format_value(getattr(cfg, k)) for k in SWEEP_AXES}, **done[label]})
    reports.write_table(out / "summary.csv", SUMMARY_COLUMNS, rows, args.json)
    for label, err in failed:
        print(f"run {label} failed: {err}", file=sys.stderr)
    return 1 if failed else 0


def trend_check(base: TrainConfig, out: Path, layers=None, parallel: int = 1, write_json: bool = False) -> dict:
    """Run baseline (s=0), per-layer stop-gradient runs and all-layer dropout; write summary and trend CSVs."""
    L = base.num_layers
    layers = list(range(-1, L)) if layers is None else list(layers)
    runs = [("baseline", base.replace(batch_fraction=0.0, all_layers_rate=0.0))]
    runs += [(f"stop_layer{l}", base.replace(target_layer=l, batch_fraction=0.5, rate=0.5, stop_grad=True,
                                             all_layers_rate=0.0)) for l in layers]
    runs.append(("all_layers", base.replace(batch_fraction=0.0, all_layers_rate=0.5)))
    jobs = [(label, cfg, str(out / label), write_json) for label, cfg in runs]
    done, failed = _run_jobs(jobs, parallel)
    if failed:
        raise DeepAugError("; ".join(f"{label}: {err}" for label, err in failed))
    rows = [{"run": label, "target_layer": cfg.target_layer, "stop_grad": format_value(cfg.stop_grad),
             "batch_fraction": cfg.batch_fraction, "all_layers_rate": cfg.all_layers_rate, **done[label]}
            for label, cfg in runs]
    reports.write_table(out / "summary.csv", TREND_COLUMNS, rows, write_json)

    fine = {r["run"]: r["probe_fine"] for r in rows}
    targeted = {f"stop_layer{l}": fine[f"stop_layer{l}"] for l in layers}
    non_input = [v for k, v in targeted.items() if k != "stop_layer-1"]
    best = max(targeted.values())
    checks = [
        {"check": "non_input_layer_ge_baseline", "value": max(non_input) if non_input else float("nan"),
         "reference": fine["baseline"],
         "passed": format_value(bool(non_input) and max(non_input) >= fine["baseline"])},
        {"check": "all_layers_below_best_targeted", "value": fine["all_layers"], "reference": best,
         "passed": format_value(fine["all_layers"] < best)},
    ]
    reports.write_table(out / "trend.csv", ("check", "value", "reference", "passed"), checks, write_json)
    return {"rows": rows, "checks": checks}


def cmd_trend(args) -> int:
    cfg = _load_config(args)
    base = cfg.base if isinstance(cfg, SweepSpec) else cfg
    out = _out_dir(args, cfg)
    _prepare_out(out, args.force)
    write_resolved(base, out)
    result = trend_check(base, out, parallel=args.parallel, write_json=args.json)
    for c in result["checks"]:
        print(f"{c['check']}: value={reports.fmt(c['value'])} reference={reports.fmt(c['reference'])} passed={c['passed']}")
    return 0


def _eval_setup(args):
    cfg = _load_config(args)
    if isinstance(cfg, SweepSpec):
        cfg = cfg.base
    if args.data:
        cfg = cfg.replace(dataset="file", data_path=args.data)
    encoder = load_checkpoint(args.checkpoint)
    data = prepare_data(cfg)
    if data.features.shape[1] != encoder.input_width:
        raise ConfigError(f"dataset width {data.features.shape[1]} does not match checkpoint input width "
                          f"{encoder.input_width}")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    return cfg, encoder, data, out


def cmd_probe(args) -> int:
    cfg, encoder, data, out = _eval_setup(args)
    layer = encoder.L - 2 if args.layer is None else args.layer
    if args.layer is None and encoder.L < 2:
        layer = 0
    encoder.check_index(layer)
    feats = encoder.activations(data.features, {layer})[layer]
    pc = cfg.probe_config()
    ds = data.dataset
    fine = linear_probe(feats, ds.fine_labels, data.train_idx, data.test_idx, pc)
    coarse = float("nan") if ds.coarse_labels is None else linear_probe(
        feats, ds.coarse_labels, data.train_idx, data.test_idx, pc)
    row = {"coarse_acc": coarse, "fine_acc": fine, "probe_config_hash": pc.digest()}
    reports.write_table(out / "probe.csv", reports.PROBE_COLUMNS, [row], args.json)
    print(",".join(reports.fmt(row[c]) for c in reports.PROBE_COLUMNS))
    return 0


def cmd_cka(args) -> int:
    cfg, encoder, data, out = _eval_setup(args)
    if args.layers:
        layers = [int(v.replace("−", "-")) for v in args.layers.split(",")]
    else:
        layers = list(range(encoder.L))
    for l in layers:
        encoder.check_index(l)
    acts = encoder.activations(data.features[data.eval_idx], set(layers))
    matrix = cka_matrix([acts[l] for l in layers])
    reports.write_cka(out / "cka.csv", matrix, layers, args.json)
    print(f"wrote {out / 'cka.csv'}")
    return 0


def cmd_align_uniform(args) -> int:
    cfg, encoder, data, out = _eval_setup(args)
    xe = data.features[data.eval_idx]
    aug = cfg.augmentation()

    def unit(x):
        x = np.asarray(x, dtype=np.float64)
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    views = [unit(encoder.forward(augment_inputs(xe, aug, derive_seed(cfg.eval_seed, "align", v))).data)
             for v in (0, 1)]
    row = {
        "alignment": alignment(views[0], views[1], cfg.align_alpha),
        "uniformity": uniformity(unit(encoder.forward(xe).data), cfg.unif_t),
        "n": len(xe), "alpha": cfg.align_alpha, "t": cfg.unif_t,
    }
    reports.write_table(out / "align_uniform.csv", reports.ALIGN_UNIFORM_COLUMNS, [row], args.json)
    print(",".join(reports.fmt(row[c]) for c in reports.ALIGN_UNIFORM_COLUMNS))
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    if isinstance(cfg, SweepSpec):
        cfg = cfg.base
    out = Path(args.out) if args.out else Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.daug"
    if path.exists() and not args.force:
        raise RunExists(f"{path} exists (use --force to overwrite)")
    ds = generate_synthetic(SyntheticSpec(
        cfg.syn_superclasses, cfg.syn_subclasses, cfg.syn_dim, cfg.syn_per_subclass,
        cfg.syn_super_spread, cfg.syn_sub_spread, cfg.syn_noise, cfg.data_seed))
    export_dataset(ds, path)
    print(f"wrote {path}: n={len(ds)} d={ds.features.shape[1]} fine={ds.num_fine} coarse={ds.num_coarse}")
    return 0


def cmd_parse_cifar(args) -> int:
    ds = parse_cifar(args.input, args.variant)
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.daug"
    if path.exists() and not args.force:
        raise RunExists(f"{path} exists (use --force to overwrite)")
    export_dataset(ds, path)
    row = {"variant": args.variant, "records": len(ds), "fine_classes": ds.num_fine, "coarse_classes": ds.num_coarse}
    cols = ("variant", "records", "fine_classes", "coarse_classes")
    reports.write_table(out / "cifar_summary.csv", cols, [row], args.json)
    print(",".join(str(row[c]) for c in cols))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory (overrides the config's out key)")
    common.add_argument("--seed", type=int, help="training seed (overrides the config)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--json", action="store_true", help="also write a JSON mirror of every CSV")
    common.add_argument("--parallel", type=int, default=1, metavar="N", help="concurrent runs for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="deepaug", description="Deep Augmentation contrastive-learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="run one experiment").set_defaults(func=cmd_train)
    sub.add_parser("sweep", parents=[common], help="run every point of a sweep config").set_defaults(func=cmd_sweep)
    sub.add_parser("trend", parents=[common],
                   help="baseline vs per-layer stop-gradient vs all-layer dropout").set_defaults(func=cmd_trend)
    for name, func, helptext in (("probe", cmd_probe, "linear-probe accuracy of a checkpoint"),
                                 ("cka", cmd_cka, "cross-layer linear CKA of a checkpoint"),
                                 ("align-uniform", cmd_align_uniform, "alignment and uniformity of a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", help="dataset file from gen-data/parse-cifar (default: the config's dataset)")
        if name == "probe":
            p.add_argument("--layer", type=int, help="insertion point to probe (default: L-2)")
        if name == "cka":
            p.add_argument("--layers", help="comma-separated insertion points (default: 0..L-1)")
        p.set_defaults(func=func)
    sub.add_parser("gen-data", parents=[common], help="write the configured synthetic dataset").set_defaults(
        func=cmd_gen_data)
    p = sub.add_parser("parse-cifar", parents=[common], help="convert a CIFAR binary batch to a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--variant", choices=("cifar10", "cifar100"), required=True)
    p.set_defaults(func=cmd_parse_cifar)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.parallel < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DeepAugError, IndexError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
