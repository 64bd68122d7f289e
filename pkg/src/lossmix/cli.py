"""``lossmix`` command line: gen-data, train, ablate, mixfn, gradcheck.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 I/O failure.
The output root defaults to ``$LOSSMIX_OUT`` or ``./lossmix-out``.
"""
import argparse
import dataclasses
import json
import logging
import os
import re
import sys

from lossmix import cache
from lossmix.config import ConfigError, config_hash, load_config_file
from lossmix.errors import NumericError
from lossmix.losses import REGIMES
from lossmix.mixing import MixingFunction, parse_rho, phi_curve_table, write_curve_csv
from lossmix.nn import save_checkpoint
from lossmix.signal import DataConfig, make_dataset
from lossmix.trainer import TrainConfig, run_ablation, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
GRADCHECK_TOL = 1e-5

log = logging.getLogger("lossmix")

# [mixing] and [model] keys map onto TrainConfig fields
_SECTION_FIELDS = {
    "train": {"regime", "epochs", "batch_size", "seed", "loss", "optimizer", "lr", "beta1", "beta2",
              "eps", "l2_weight", "detach_embedding"},
    "mixing": {"beta_alpha", "rho_C", "mlp_width"},
    "model": {"hidden", "bottleneck", "leaky_slope"},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_root(args):
    return args.out or os.environ.get("LOSSMIX_OUT") or "lossmix-out"


def _file_sections(args):
    return load_config_file(args.config) if args.config else {}


def build_data_config(args, doc):
    fields = {f.name for f in dataclasses.fields(DataConfig)}
    data = dict(doc.get("data", {}))
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown [data] key(s): {sorted(unknown)}")
    if getattr(args, "n_pairs", None) is not None:
        data["n_pairs"] = args.n_pairs
    if getattr(args, "snr", None):
        data["snr_list"] = [float(v) for v in args.snr.split(",")]
    if getattr(args, "data_seed", None) is not None:
        data["seed"] = args.data_seed
    return DataConfig(**data)


def build_train_config(args, doc, **override):
    kw = {}
    for section, allowed in _SECTION_FIELDS.items():
        vals = doc.get(section, {})
        unknown = set(vals) - allowed
        if unknown:
            raise ConfigError(f"unknown [{section}] key(s): {sorted(unknown)}")
        kw.update(vals)
    flag_map = {"regime": "regime", "epochs": "epochs", "batch_size": "batch_size", "lr": "lr",
                "l2": "l2_weight", "beta_alpha": "beta_alpha", "C": "rho_C",
                "mlp_width": "mlp_width", "seed": "seed"}
    for flag, name in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "detach_embedding", False):
        kw["detach_embedding"] = True
    kw.update(override)
    if kw.get("regime", "learnable-loss-mixup") not in REGIMES:
        raise UsageError(f"unknown regime {kw['regime']!r}; valid regimes: {', '.join(REGIMES)}")
    return TrainConfig(data=build_data_config(args, doc), **kw)


def _load_or_make_dataset(args, data_cfg):
    if getattr(args, "data", None):
        ds = cache.load_dataset(args.data)
        log.info("loaded dataset cache from %s", args.data)
        return ds
    return make_dataset(data_cfg)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(args):
    doc = _file_sections(args)
    data_cfg = build_data_config(args, doc)
    directory = os.path.join(_out_root(args), "data")
    want = config_hash(data_cfg.to_dict())
    existing = cache.read_manifest(directory)
    if existing is not None and not args.force:
        if existing.get("config_hash") == want:
            print(f"cache up to date: {directory} ({want[:12]})")
            return EXIT_OK
        raise UsageError(f"{directory} holds a dataset with config hash "
                         f"{existing.get('config_hash', '?')[:12]}, requested {want[:12]}; "
                         f"pass --force to overwrite")
    manifest = cache.write_dataset(directory, make_dataset(data_cfg))
    sizes = ", ".join(f"{k}={v['n']}" for k, v in manifest["splits"].items())
    print(f"wrote {directory}: {sizes} ({want[:12]})")
    return EXIT_OK


def _run_dir(root, cfg):
    return os.path.join(root, f"train-{cfg.regime}-s{cfg.seed}")


def cmd_train(args):
    doc = _file_sections(args)
    cfg = build_train_config(args, doc)
    dataset = _load_or_make_dataset(args, cfg.data)
    model, report = train(cfg, dataset)
    directory = _run_dir(_out_root(args), cfg)
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "epochs.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for line in report.jsonl_lines():
            fh.write(line + "\n")
    _write_json(os.path.join(directory, "summary.json"), report.summary_dict())
    save_checkpoint(os.path.join(directory, "checkpoint.json"), model.networks(),
                    meta={"config": report.config, "config_hash": report.config_hash})
    s = report.summary
    print(f"{cfg.regime}: {s['epochs_completed']} epochs, val LSD {s['initial_val_lsd']:.4f} -> "
          f"{s['final_val_lsd']:.4f}; wrote {directory}")
    if report.aborted:
        print(f"numeric failure: {report.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_ablate(args):
    doc = _file_sections(args)
    cfg = build_train_config(args, doc)
    seeds = list(range(args.seeds)) if args.seed_list is None else [int(s) for s in args.seed_list.split(",")]
    dataset = _load_or_make_dataset(args, cfg.data)
    result = run_ablation(cfg, seeds=seeds, dataset=dataset)
    directory = os.path.join(_out_root(args), "ablation")
    os.makedirs(directory, exist_ok=True)
    result.write_csv(os.path.join(directory, "ablation.csv"))
    payload = result.to_dict()
    payload["config"] = cfg.to_dict()
    _write_json(os.path.join(directory, "ablation.json"), payload)
    for regime, agg in result.aggregates.items():
        print(f"{regime:24s} val LSD {agg['mean']:.4f} +/- {agg['std']:.4f} (n={agg['n']})")
    return EXIT_OK


def _slug(spec):
    return re.sub(r"[^A-Za-z0-9.]+", "_", spec.strip().lower()).strip("_")


def cmd_mixfn(args):
    specs = args.rho or ["identity", "pow:3", "pow:0.33"]
    try:
        rhos = [(spec, parse_rho(spec)) for spec in specs]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    directory = os.path.join(_out_root(args), "mixfn")
    os.makedirs(directory, exist_ok=True)
    cfg = {"rho": specs, "points": args.points}
    files = []
    for spec, rho in rhos:
        name = f"phi_{_slug(spec)}.csv"
        write_curve_csv(os.path.join(directory, name), phi_curve_table(MixingFunction(rho), args.points))
        files.append(name)
    _write_json(os.path.join(directory, "manifest.json"),
                {"config": cfg, "config_hash": config_hash(cfg), "files": files})
    print("\n".join(os.path.join(directory, f) for f in files))
    return EXIT_OK


def cmd_gradcheck(args):
    from lossmix.checks import check_objectives

    reports = check_objectives(seed=args.seed or 0, step=args.step, inject_bug=args.inject_bug)
    rows = {}
    failed = []
    for regime, r in reports.items():
        ok = r.passed(GRADCHECK_TOL)
        rows[regime] = {"max_rel_error": r.max_rel_error, "worst_param": r.worst_param,
                        "worst_index": list(r.worst_index), "passed": ok, "n_checked": r.n_checked}
        print(f"{'PASS' if ok else 'FAIL'}  {regime:24s} max rel err {r.max_rel_error:.3e} "
              f"at {r.worst_param}{list(r.worst_index)}")
        if not ok:
            failed.append(regime)
    directory = _out_root(args)
    os.makedirs(directory, exist_ok=True)
    cfg = {"step": args.step, "seed": args.seed or 0, "tol": GRADCHECK_TOL}
    _write_json(os.path.join(directory, "gradcheck.json"),
                {"config": cfg, "config_hash": config_hash(cfg), "objectives": rows})
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config with [data], [train], [mixing], [model] sections")
    common.add_argument("--out", help="output root (default: $LOSSMIX_OUT or ./lossmix-out)")
    common.add_argument("--seed", type=int, help="run seed override")
    common.add_argument("-v", "--verbose", action="count", default=0)

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--n-pairs", type=int)
    data_opts.add_argument("--snr", help="comma-separated SNR list in dB")
    data_opts.add_argument("--data-seed", type=int)

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--epochs", type=int)
    train_opts.add_argument("--batch-size", type=int)
    train_opts.add_argument("--lr", type=float)
    train_opts.add_argument("--l2", type=float)
    train_opts.add_argument("--beta-alpha", type=float)
    train_opts.add_argument("--C", type=float, dest="C")
    train_opts.add_argument("--mlp-width", type=int)
    train_opts.add_argument("--detach-embedding", action="store_true")
    train_opts.add_argument("--data", help="dataset cache directory written by gen-data")

    p = _Parser(prog="lossmix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common, data_opts], help="write the synthetic dataset cache")
    g.add_argument("--force", action="store_true", help="overwrite a cache with a different config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common, data_opts, train_opts], help="train one regime")
    t.add_argument("--regime", help=f"one of: {', '.join(REGIMES)}")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", parents=[common, data_opts, train_opts],
                       help="train the four ablation regimes over several seeds")
    a.add_argument("--seeds", type=int, default=3, help="number of seeds (0..n-1)")
    a.add_argument("--seed-list", help="explicit comma-separated seeds")
    a.set_defaults(func=cmd_ablate)

    m = sub.add_parser("mixfn", parents=[common], help="emit phi curves as CSV")
    m.add_argument("--rho", action="append", help="'identity' or 'pow:<c>' (repeatable)")
    m.add_argument("--points", type=int, default=101)
    m.set_defaults(func=cmd_mixfn)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference check every objective")
    c.add_argument("--step", type=float, default=1e-6)
    c.add_argument("--inject-bug", choices=REGIMES, help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"lossmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"lossmix: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"lossmix: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"lossmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
