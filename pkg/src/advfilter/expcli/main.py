"""``advfilter`` command line entry point."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from advfilter.eegdata import export_csv, import_csv, save_dataset, synthesize
from advfilter.errors import ConfigError, DataError, NumericalError
from advfilter.expcli.config import load_config
from advfilter.expcli.runners import KINDS, run_experiment
from advfilter.metrics import AttackReport, load_report, save_report

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _global_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", metavar="PATH", default=S, help="key=value config file")
    p.add_argument("--seed", type=int, default=S, help="master seed (repeat r uses seed + r)")
    p.add_argument("--out", metavar="DIR", default=S, help="output directory")
    p.add_argument("--workers", type=int, default=S, help="parallel worker processes")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=S, dest="overrides",
                   help="override one config key (repeatable)")
    p.add_argument("--print-config", action="store_true", default=S,
                   help="print the resolved config and exit")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="advfilter", parents=[common],
                                     description="Spatial-filter evasion and backdoor attacks on EEG classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset as ETRC")
    p.add_argument("--file", default="synthetic.etrc", help="file name inside --out")
    p.add_argument("--csv", metavar="DIR", help="also export the per-trial CSV layout here")
    p = sub.add_parser("ingest", parents=[common], help="convert a CSV directory to ETRC")
    p.add_argument("csv_dir")
    p.add_argument("--file", default="ingested.etrc")
    p.add_argument("--classes", type=int, default=None, help="number of classes (default: max label + 1)")
    for kind in KINDS:
        sub.add_parser(kind, parents=[common], help=f"run the {kind} protocol")
    p = sub.add_parser("report", parents=[common], help="merge run reports into one CSV and print a summary")
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--file", default="report", help="output stem inside --out")
    return parser


def _split_override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def resolve_config(args: argparse.Namespace):
    pairs = dict(_split_override(t) for t in getattr(args, "overrides", []))
    for flag in ("seed", "out", "workers"):
        if hasattr(args, flag):
            pairs[flag] = str(getattr(args, flag))
    return load_config(getattr(args, "config", None), pairs)


def format_summary(report: AttackReport) -> str:
    lines = [f"{'scenario':<13}{'model':<15}{'condition':<22}{'n':>3}  {'bca':>13}  {'asr':>13}  {'rmse':>13}"]
    for e in report.summary():
        cells = []
        for m in ("bca", "asr", "rmse"):
            cells.append(f"{e[m + '_mean']:.3f}±{e[m + '_std']:.3f}" if m + "_mean" in e else "-")
        lines.append(f"{e['scenario']:<13}{e['model']:<15}{e['condition']:<22}{e['repeats']:>3}  "
                     + "  ".join(f"{c:>13}" for c in cells))
    return "\n".join(lines)


def merge_reports(paths) -> AttackReport:
    merged = AttackReport("merged")
    for p in paths:
        rep = load_report(p)
        merged.extend(rep)
        merged.meta.setdefault("sources", []).append({"path": str(p), "config_hash": rep.config_hash})
    merged.sort()
    return merged


def _run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if getattr(args, "print_config", False):
        sys.stdout.write(cfg.to_text())
        return EXIT_OK
    out = Path(cfg.out)
    cmd = args.command
    if cmd == "synth":
        ds = synthesize(cfg.synthetic)
        save_dataset(ds, out / args.file)
        if args.csv:
            export_csv(ds, args.csv)
        print(f"wrote {out / args.file}: {len(ds)} trials, C={ds.n_channels}, T={ds.n_samples}, K={ds.n_classes}")
    elif cmd == "ingest":
        ds = import_csv(args.csv_dir, n_classes=args.classes)
        save_dataset(ds, out / args.file)
        print(f"wrote {out / args.file}: {len(ds)} trials")
    elif cmd == "report":
        merged = merge_reports(args.reports)
        jpath, cpath = save_report(merged, out, args.file)
        print(format_summary(merged))
        print(f"wrote {cpath} ({len(merged.rows)} rows)")
    else:
        report = run_experiment(cmd, cfg)
        print(format_summary(report))
        for err in report.errors:
            print(f"repeat {err['repeat']} subject {err['subject']} failed: {err['message']}", file=sys.stderr)
        if report.errors and not report.rows:
            # every unit failed: surface the first failure's family
            return {"config": EXIT_CONFIG, "numerical": EXIT_NUMERIC}.get(report.errors[0]["family"], EXIT_DATA)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
