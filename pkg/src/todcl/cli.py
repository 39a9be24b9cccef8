"""Command-line entry point: ``todcl <verb> [flags]``.

Exit codes: 0 ok, 2 config error, 3 divergence, 4 I/O or dataset error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

from .checkpoint import CheckpointError
from .data.io import DatasetError, load_dataset, save_dataset
from .data.synthetic import ALL_DOMAINS, DESK_DOMAINS, generate_domain, make_curriculum_specs, mixed_sizes
from .harness import (
    ALL, ConfigError, RunConfig, RunManifest, ablate_memory, grid, load_config_file, output_root, run,
    strategy_grid, summarize,
)
from .training import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _optional(kind):
    def parse(text: str):
        if text.lower() in ("none", "null"):
            return None
        return kind(text)
    parse.__name__ = kind.__name__
    return parse


def _capacity(text: str):
    if text.upper() == ALL:
        return ALL
    return _optional(int)(text)


def add_config_flags(p: argparse.ArgumentParser) -> None:
    """One flag per RunConfig field; unset flags leave the file/default value alone."""
    p.add_argument("--config", help="JSON or YAML file with RunConfig keys")
    hints = typing.get_type_hints(RunConfig)
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        hint = hints[f.name]
        if f.name == "memory_capacity":
            p.add_argument(flag, type=_capacity, default=argparse.SUPPRESS, help="examples per task, or ALL")
        elif f.name == "metrics":
            p.add_argument(flag, nargs="+", default=argparse.SUPPRESS)
        elif hint is bool:
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            args = [a for a in typing.get_args(hint) if a is not type(None)] or [hint]
            p.add_argument(flag, type=_optional(args[0]), default=argparse.SUPPRESS,
                           help=f"default: {f.default}")


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    values = load_config_file(ns.config) if getattr(ns, "config", None) else {}
    names = {f.name for f in dataclasses.fields(RunConfig)}
    values.update({k: v for k, v in vars(ns).items() if k in names})
    return RunConfig.from_dict(values)


def _print_manifest(m: RunManifest) -> None:
    avgs = {k: round(m.avg(k), 2) for k in m.matrices}
    print(json.dumps({"strategy": m.strategy, "setting": m.setting, "seed": m.config["seed"],
                      "avg": avgs, "resources": m.resources, "dir": m.extras.get("directory")}))


def cmd_run(ns) -> int:
    _print_manifest(run(config_from_args(ns), ns.out))
    return EXIT_OK


def cmd_grid(ns) -> int:
    base = config_from_args(ns)
    configs = strategy_grid(base, ns.strategies, ns.seeds, ns.lams)
    manifests = grid(configs, ns.out, ns.workers)
    for m in manifests:
        _print_manifest(m)
    metric = next(iter(manifests[0].matrices))
    for name, (mean, std, n) in summarize(manifests, metric).items():
        print(f"{name}\t{metric}\t{mean:.2f} +- {std:.2f}\t(n={n})")
    return EXIT_OK


def cmd_ablate(ns) -> int:
    from .plots import write_ablation

    base = config_from_args(ns)
    if base.strategy != "REPLAY":
        base = base.replace(strategy="REPLAY")
    report = ablate_memory(base, ns.capacities, ns.metric, ns.out)
    path = output_root(ns.out) / f"ablation_{base.setting.lower()}_s{base.seed}.tsv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_ablation(path, report)
    for cap, v in report.rows():
        print(f"{cap}\t{v:.2f}")
    if report.multi is not None:
        print(f"MULTI\t{report.multi:.2f}")
    print(path)
    return EXIT_OK


def _find_manifests(paths) -> list[RunManifest]:
    found = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif p.is_dir():
            found += sorted(p.rglob("manifest.json"))
        else:
            raise FileNotFoundError(p)
    return [RunManifest.load(f) for f in found]


def cmd_export(ns) -> int:
    from .plots import export_plots

    manifests = [m for m in _find_manifests(ns.paths or [output_root(None)]) if m.status == "ok"]
    if ns.setting:
        manifests = [m for m in manifests if m.setting == ns.setting.upper()]
    try:
        written = export_plots(manifests, ns.dest, ns.metrics, figures=not ns.no_figures)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for w in written:
        print(w)
    return EXIT_OK


def cmd_gen_data(ns) -> int:
    domains = ALL_DOMAINS if ns.all_domains else DESK_DOMAINS[: ns.n_domains]
    specs = make_curriculum_specs(domains, seed=ns.seed)
    sizes = mixed_sizes(len(specs), ns.low, ns.high, ns.seed)
    dialogues = [d for spec, n in zip(specs, sizes) for d in generate_domain(spec, n)]
    Path(ns.output).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ns.output, dialogues)
    print(f"{len(dialogues)} dialogues, {len(specs)} domains -> {ns.output}")
    return EXIT_OK


def cmd_validate(ns) -> int:
    data = load_dataset(ns.path)
    for task, parts in sorted(data.items()):
        print(task + "\t" + "\t".join(f"{k}={len(v)}" for k, v in parts.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="todcl", description="Continual learning for task-oriented dialogue.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="one curriculum run")
    add_config_flags(r)
    r.add_argument("--out", help="output root (overrides $TODCL_OUTPUT_ROOT)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("grid", help="strategies x seeds")
    add_config_flags(g)
    g.add_argument("--out")
    g.add_argument("--strategies", nargs="+",
                   default=["VANILLA", "L2", "EWC", "AGEM", "REPLAY", "LAMOL", "MULTI", "ADAPTER"])
    g.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    g.add_argument("--lams", nargs="+", type=float, default=None, help="lambda sweep for L2/EWC")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_grid)

    a = sub.add_parser("ablate-mem", help="REPLAY over memory capacities")
    add_config_flags(a)
    a.add_argument("--out")
    a.add_argument("--capacities", nargs="+", type=_capacity, default=[10, 50, 100, 500, ALL])
    a.add_argument("--metric", default=None)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("export-plots", help="Avg. Metric per prefix as TSV and PNG")
    e.add_argument("paths", nargs="*", help="manifest files or run directories")
    e.add_argument("--dest", default="plots")
    e.add_argument("--metrics", nargs="+", default=None)
    e.add_argument("--setting", default=None, help="keep only runs of this setting")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_export)

    d = sub.add_parser("gen-data", help="write a synthetic corpus in the unified format")
    d.add_argument("output")
    d.add_argument("--n-domains", type=int, default=8)
    d.add_argument("--all-domains", action="store_true")
    d.add_argument("--low", type=int, default=100)
    d.add_argument("--high", type=int, default=2000)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_gen_data)

    v = sub.add_parser("validate-data", help="check a unified-format file")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, DatasetError, CheckpointError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
