"""Command line entry point: ``fplab <command> [options]``.

Exit status: 0 on success, 1 on I/O errors (missing or unreadable files),
2 on invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiment as ex
from .filters import FilterChain, parse_chain_spec
from .imagecore import PPMError

log = logging.getLogger("fplab")

EXIT_OK, EXIT_IO, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(args) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("FPLAB_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ex.ConfigError(f"FPLAB_SEED must be an integer, got {env!r}") from None


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _out_dir(args, cfg: ex.ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output_dir is not None:
        return cfg.output_dir
    raise ex.ConfigError("no output directory: pass --out or set output_dir in the config")


# --- commands -----------------------------------------------------------------


def cmd_filter(args) -> int:
    if args.chain and args.chain_file:
        raise ex.ConfigError("use either --chain or --chain-file, not both")
    if args.chain_file:
        items = ex.read_json(Path(args.chain_file).read_text(encoding="utf-8"), args.chain_file)
        chain = FilterChain.from_list(items)
    else:
        chain = parse_chain_spec(args.chain or "")
    ex.apply_chain_file(chain, args.input, args.output)
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg = ex.ExperimentConfig.load(args.config, seed=_seed(args))
    if args.batch is not None:
        cfg = cfg.with_raw({**cfg.raw, "batch": args.batch})
    out = _out_dir(args, cfg)
    result = ex.run_transfer(cfg)
    ex.write_files(out, result.files)
    log.info("wrote %d files to %s", len(result.files), out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = ex.ExperimentConfig.load(args.config, seed=_seed(args))
    out = _out_dir(args, cfg)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ex.ConfigError(f"--values must be comma-separated integers, got {args.values!r}") from None
    if not values:
        raise ex.ConfigError("--values is empty")
    if args.seeds < 1:
        raise ex.ConfigError("--seeds must be >= 1")
    result = ex.run_ablation(cfg, args.param, values, seeds=args.seeds, jobs=args.jobs)
    files = {"ablation.csv": ex.ablation_csv(result.rows).encode(), "trend.json": ex.dumps(result.trend).encode()}
    for name, run in result.runs:
        files[f"runs/{name}/final.ppm"] = run.files["final.ppm"]
        files[f"runs/{name}/manifest.json"] = run.files["manifest.json"]
        files[f"runs/{name}/report.json"] = run.files["report.json"]
    ex.write_files(out, files)
    print(json.dumps(result.trend, sort_keys=True))
    return EXIT_OK


def cmd_metrics(args) -> int:
    rows, missing = ex.load_pairs_manifest(args.manifest)
    if missing:
        for p in missing:
            print(f"missing file: {p}", file=sys.stderr)
        return EXIT_IO
    metrics, summary = ex.run_metrics(rows, jobs=args.jobs)
    text = ex.metrics_csv(rows, metrics)
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    if args.summary:
        _write_text(Path(args.summary), ex.dumps(summary))
    return EXIT_OK


def cmd_fit(args) -> int:
    params = {}
    dataset = args.dataset
    if args.config:
        raw = ex.read_json(Path(args.config).read_text(encoding="utf-8"), args.config)
        if not isinstance(raw, dict) or not isinstance(raw.get("fit"), dict):
            raise ex.ConfigError(f"{args.config}: expected a fit manifest with a 'fit' object")
        params = {k: v for k, v in raw["fit"].items() if k in ex.FIT_DEFAULTS}
        dataset = dataset or raw["fit"].get("dataset")
    for key, flag in FIT_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            params[key] = value
    seed = _seed(args)
    if seed is not None:
        params["seed"] = seed
    if dataset is None:
        raise ex.ConfigError("no dataset: pass --dataset or --config with a fit manifest")
    manifest = Path(dataset)
    if manifest.is_dir():
        manifest = manifest / "manifest.json"
    if not manifest.is_file():
        print(f"missing file: {manifest}", file=sys.stderr)
        return EXIT_IO
    for name in ("buckets", "samples_per_item", "T"):
        if int(params.get(name, ex.FIT_DEFAULTS[name])) < 1:
            raise ex.ConfigError(f"{name} must be >= 1")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        model, fit_manifest = ex.run_fit(manifest, out, params)
    except ValueError as exc:
        if isinstance(exc, PPMError):
            raise
        raise ex.ConfigError(str(exc)) from None
    _write_text(out.with_name(out.name + ".manifest.json"), ex.dumps(fit_manifest))
    log.info("fitted %d buckets, dim %d", model.buckets, model.dim)
    return EXIT_OK


FIT_FLAGS = {
    "T": "T",
    "beta1": "beta1",
    "betaT": "betaT",
    "buckets": "buckets",
    "lambda": "lambda_reg",
    "samples_per_item": "samples_per_item",
    "conditions": "conditions",
}


def cmd_gen(args) -> int:
    if args.config:
        gen = ex.read_json(Path(args.config).read_text(encoding="utf-8"), args.config)
    else:
        seed = _seed(args)
        gen = {
            "random": {
                "n": args.n,
                "seed": seed if seed is not None else 0,
                "shape": args.shape,
                "fill": args.fill,
                "size": args.size,
            }
        }
    try:
        ex.run_gen(gen, Path(args.out))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PPMError):
            raise
        raise ex.ConfigError(f"invalid gen config: {exc}") from None
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fplab", description="Filtered dual-branch diffusion toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("filter", help="apply a filter chain to one image")
    f.add_argument("input")
    f.add_argument("output")
    f.add_argument("--chain", help="stages like 'gaussian_blur:radius=2,invert' or a named chain")
    f.add_argument("--chain-file", help="JSON list of stages")
    f.set_defaults(func=cmd_filter)

    t = sub.add_parser("transfer", help="run one structure/appearance transfer")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--batch", type=int)
    t.set_defaults(func=cmd_transfer)

    a = sub.add_parser("ablate", help="sweep one parameter over values and seeds")
    a.add_argument("--config", required=True)
    a.add_argument("--param", required=True, choices=ex.SWEEP_PARAMS)
    a.add_argument("--values", required=True, help="comma-separated integers")
    a.add_argument("--seeds", type=int, default=1)
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_ablate)

    m = sub.add_parser("metrics", help="score generated images against references")
    m.add_argument("manifest", help="JSON list of {generated, reference} or {generated, structure, appearance}")
    m.add_argument("--out", help="CSV path (default: stdout)")
    m.add_argument("--summary", help="JSON summary path")
    m.add_argument("--jobs", type=int, default=1)
    m.set_defaults(func=cmd_metrics)

    fit = sub.add_parser("fit", help="fit the linear noise predictor on a generated dataset")
    fit.add_argument("--dataset", help="dataset directory or its manifest.json")
    fit.add_argument("--config", help="fit manifest from an earlier run, to replay it")
    fit.add_argument("--out", required=True, help="model .npz path; a .manifest.json is written beside it")
    fit.add_argument("--T", type=int, help="steps (default 200)")
    fit.add_argument("--beta1", type=float, help="first beta (default 1e-4)")
    fit.add_argument("--betaT", type=float, help="last beta (default 0.05)")
    fit.add_argument("--buckets", type=int, help="time buckets (default 20)")
    fit.add_argument("--lambda", dest="lambda_reg", type=float, help="ridge strength (default 1e-6)")
    fit.add_argument("--samples-per-item", type=int, help="draws per item and bucket (default 4)")
    fit.add_argument("--conditions", choices=("none", "self"), help="condition vectors (default none)")
    fit.add_argument("--seed", type=int)
    fit.set_defaults(func=cmd_fit)

    g = sub.add_parser("gen", help="render a procedural shape dataset")
    g.add_argument("--config", help="JSON with 'random' and/or 'items'")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=16)
    g.add_argument("--shape", default="square")
    g.add_argument("--fill", default="solid")
    g.add_argument("--size", type=int, default=8)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ex.MissingFilesError as exc:
        for p in exc.paths:
            print(f"missing file: {p}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PPMError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
