"""Configuration-driven command line: single runs, alpha sweeps and the
component ablation matrix, with manifests and deterministic CSV outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 I/O or data-file error.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from .config import config_hash, load_config
from .engine import MethodSpec, PRESETS, resolve_method, run_single, train_reference
from .errors import ConfigError, InputError, NumericalError, ParseError
from .metrics import aggregate_seeds, write_summary_csv, write_trace_csv, write_trace_jsonl

OUT_ROOT_ENV = "AER_OUT_ROOT"

ABLATION_VARIANTS = [
    ("er", PRESETS["er"]),
    ("er_ace", PRESETS["er_ace"]),
    ("er_ace_alpha", MethodSpec("er_ace_alpha", ace=True, alpha_gate=True)),
    ("er_ace_alpha_aer", MethodSpec("er_ace_alpha_aer", ace=True,
                                    alpha_gate=True, alternate=True)),
    ("er_ace_abs", PRESETS["er_ace_abs"]),
    ("full_aer_abs", PRESETS["aer_abs"]),
    ("full_minus_ace", MethodSpec("full_minus_ace", alpha_gate=True,
                                  alternate=True, selector="abs")),
]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aer",
        description="Continual-learning engine for noisy class-incremental streams")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the configured method over all seeds")
    sweep_p = sub.add_parser("sweep-alpha",
                             help="rerun the configured method across insertion cutoffs")
    ablate_p = sub.add_parser("ablate", help="run the component ablation matrix")
    for p in (run_p, sweep_p, ablate_p):
        p.add_argument("--config", required=True, help="path to the INI config file")
        p.add_argument("--seeds", help="comma-separated seed list overriding the config")
        p.add_argument("--out", help="output directory (default: runs/<name>, "
                                     f"root overridable via ${OUT_ROOT_ENV})")
    sweep_p.add_argument("--alphas", required=True,
                         help="comma-separated insertion-cutoff percentages")
    return parser


def _parse_seed_list(text):
    try:
        seeds = tuple(int(s) for s in text.replace(" ", "").split(",") if s)
    except ValueError:
        raise ConfigError(f"--seeds: cannot parse {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds: need at least one seed")
    return seeds


def _resolve_out_dir(arg_out, cfg, command):
    if arg_out:
        return Path(arg_out)
    name = f"{command}-{cfg.method}-{config_hash(cfg)[:12]}"
    root = os.environ.get(OUT_ROOT_ENV)
    return (Path(root) if root else Path("runs")) / name


def _run_variants(cfg, variants, out_dir):
    """Execute (label, cfg, spec) variants, write all artifacts, return rows."""
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        reference = train_reference(cfg)
    except NumericalError:
        # the reference model only feeds the diversity column; a divergence
        # here must not preempt the seeded runs and their state dumps
        warnings.warn("reference model training diverged; diversity left empty")
        reference = None
    rows = []
    outputs = []
    for label, vcfg, spec in variants:
        vdir = out_dir if len(variants) == 1 else out_dir / label
        vdir.mkdir(parents=True, exist_ok=True)

        def hook_factory(seed, _vdir=vdir):
            def hook(task, model, buffer):
                if buffer is not None and len(buffer):
                    path = _vdir / f"buffer_task{task}_seed{seed}.jsonl"
                    buffer.dump_jsonl(path)
                    outputs.append(path)
            return hook

        records = []
        for seed in vcfg.seeds:
            rec = run_single(vcfg, seed, spec=spec, reference_model=reference,
                             on_task_end=hook_factory(seed), dump_dir=vdir)
            records.append(rec)
            tpath = vdir / f"trace_seed{seed}.csv"
            write_trace_csv(rec.traces, tpath)
            jpath = vdir / f"trace_seed{seed}.jsonl"
            write_trace_jsonl(rec.traces, jpath)
            outputs.extend([tpath, jpath])
            if rec.consolidation_reports:
                cpath = vdir / f"consolidation_seed{seed}.json"
                cpath.write_text(json.dumps(rec.consolidation_reports, sort_keys=True))
                outputs.append(cpath)
        if records[0].noise_report is not None:
            npath = vdir / "noise_manifest.json"
            npath.write_text(json.dumps(records[0].noise_report, sort_keys=True))
            outputs.append(npath)
        agg = aggregate_seeds(records)
        rows.append({
            "label": label,
            "method": spec.label if spec else vcfg.method,
            "noise_kind": vcfg.noise_kind,
            "noise_rate": vcfg.noise_rate,
            "alpha": vcfg.alpha,
            "consolidation": vcfg.consolidation,
            "seeds": ";".join(str(s) for s in vcfg.seeds),
            "faa_mean": agg["faa"][0], "faa_se": agg["faa"][1],
            "ff_mean": agg["ff"][0], "ff_se": agg["ff"][1],
            "purity_mean": agg["purity"][0], "purity_se": agg["purity"][1],
            "diversity_mean": agg["diversity"][0],
            "diversity_se": agg["diversity"][1],
        })
    summary_path = out_dir / "summary.csv"
    write_summary_csv(rows, summary_path)
    outputs.append(summary_path)
    manifest = {
        "tool_version": __version__,
        "config": cfg.as_dict(),
        "config_hash": config_hash(cfg),
        "variants": [label for label, _, _ in variants],
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": sorted(str(p.relative_to(out_dir)) for p in outputs),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True))
    return rows


def _print_rows(rows):
    header = f"{'label':<20} {'faa':>8} {'ff':>8} {'purity':>8} {'diversity':>10}"
    print(header)
    for row in rows:
        def cell(v, width):
            return f"{v:>{width}.4f}" if isinstance(v, float) else f"{'-':>{width}}"
        print(f"{row['label']:<20} {cell(row['faa_mean'], 8)} "
              f"{cell(row['ff_mean'], 8)} {cell(row['purity_mean'], 8)} "
              f"{cell(row['diversity_mean'], 10)}")


def cmd_run(args):
    cfg = load_config(args.config)
    if args.seeds:
        cfg = dataclasses.replace(cfg, seeds=_parse_seed_list(args.seeds)).validate()
    out_dir = _resolve_out_dir(args.out, cfg, "run")
    rows = _run_variants(cfg, [(cfg.method, cfg, resolve_method(cfg.method))],
                         out_dir)
    _print_rows(rows)
    print(f"artifacts written to {out_dir}")
    return 0


def cmd_sweep_alpha(args):
    cfg = load_config(args.config)
    if args.seeds:
        cfg = dataclasses.replace(cfg, seeds=_parse_seed_list(args.seeds)).validate()
    try:
        alphas = [float(a) for a in args.alphas.replace(" ", "").split(",") if a]
    except ValueError:
        raise ConfigError(f"--alphas: cannot parse {args.alphas!r}") from None
    if not alphas:
        raise ConfigError("--alphas: need at least one value")
    for a in alphas:
        if not 0 <= a <= 100:
            raise ConfigError(f"--alphas: {a} outside [0, 100]")
    spec = resolve_method(cfg.method)
    variants = []
    for a in alphas:
        vcfg = dataclasses.replace(cfg, alpha=a).validate()
        variants.append((f"alpha={a:g}", vcfg, spec))
    out_dir = _resolve_out_dir(args.out, cfg, "sweep-alpha")
    rows = _run_variants(cfg, variants, out_dir)
    _print_rows(rows)
    print(f"artifacts written to {out_dir}")
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config)
    if args.seeds:
        cfg = dataclasses.replace(cfg, seeds=_parse_seed_list(args.seeds)).validate()
    variants = [(label, cfg, spec) for label, spec in ABLATION_VARIANTS]
    out_dir = _resolve_out_dir(args.out, cfg, "ablate")
    rows = _run_variants(cfg, variants, out_dir)
    _print_rows(rows)
    print(f"artifacts written to {out_dir}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "sweep-alpha": cmd_sweep_alpha, "ablate": cmd_ablate}
    try:
        return handlers[args.command](args)
    except (ConfigError, InputError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except (ParseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
