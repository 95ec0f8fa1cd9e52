"""Command-line front end.

Exit codes: 0 ok, 1 usage error, 2 config or IO error, 3 verification failure.
"""

from __future__ import annotations

import csv
import itertools
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import kernels
from .config import ConfigError, SimConfig, check_config, dump_config, load_config
from .report import RunReport, load_report, make_report, speedup, write_outputs
from .sim import simulate
from .weights import WeightFileError, generate_weights, load_model

EXIT_USAGE, EXIT_CONFIG, EXIT_VERIFY = 1, 2, 3
OUT_ENV = "MDKSIM_OUT_DIR"
FLAG_NAMES = ("fused_ln_res", "headwise_pipeline", "sync_overlap")


class Fail(click.ClickException):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.exit_code = code


def _out_dir(explicit):
    return Path(explicit or os.environ.get(OUT_ENV) or "out")


def _load(config_path) -> SimConfig:
    try:
        return load_config(config_path)
    except ConfigError as exc:
        raise Fail(str(exc)) from exc


def _override(cfg: SimConfig, nodes=None, prompt=None, gen=None, seed=None, flags=None) -> SimConfig:
    hw = {"n_nodes": nodes} if nodes is not None else {}
    run = {k: v for k, v in (("prompt_len", prompt), ("gen_len", gen), ("seed", seed)) if v is not None}
    fl = {k: v for k, v in (flags or {}).items() if v is not None}
    try:
        out = cfg.replace(hardware=hw, run=run, flags=fl)
        check_config(out.model, out.hardware)
    except (ConfigError, TypeError, ValueError) as exc:
        raise Fail(str(exc)) from exc
    return out


def _weights(cfg: SimConfig, path):
    path = path or cfg.run.weights
    if not path:
        return None
    try:
        return load_model(path, cfg.model)
    except WeightFileError as exc:
        raise Fail(str(exc)) from exc


def run_one(cfg: SimConfig, weights=None, keep_tokens=None, baseline: RunReport | None = None):
    try:
        res = simulate(cfg, weights, keep_tokens=keep_tokens)
    except (ConfigError, ValueError) as exc:
        raise Fail(str(exc)) from exc
    return make_report(cfg, res.timeline, res.n_generated, kernels.BACKEND, baseline), res


@click.group()
def cli():
    """Simulator of a multi-node LLM accelerator."""


def _flag_options(fn):
    for name in reversed(FLAG_NAMES):
        opt = name.replace("_", "-")
        fn = click.option(f"--{opt}/--no-{opt}", name, default=None, help=f"toggle {name}")(fn)
    return fn


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help=f"output directory (default ${OUT_ENV} or ./out)")
@click.option("--nodes", type=int, default=None)
@click.option("--prompt", "prompt_len", type=int, default=None)
@click.option("--gen", "gen_len", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--weights", type=click.Path(dir_okay=False), default=None,
              help="weight file; enables the functional path")
@click.option("--baseline", type=click.Path(dir_okay=False), default=None,
              help="report to compute the speed-up against")
@click.option("--trace-tokens", type=int, default=8, show_default=True,
              help="tokens whose raw intervals go into the trace (-1 keeps all)")
@click.option("--stem", default="run", show_default=True)
@_flag_options
def run(config_path, out_dir, nodes, prompt_len, gen_len, seed, weights, baseline, trace_tokens,
        stem, **flags):
    """Simulate one configuration and write report, trace and latency table."""
    cfg = _override(_load(config_path), nodes, prompt_len, gen_len, seed, flags)
    base = None
    if baseline:
        try:
            base = load_report(baseline)
        except (OSError, ValueError, TypeError) as exc:
            raise Fail(f"cannot read baseline report {baseline}: {exc}") from exc
    keep = None if trace_tokens < 0 else trace_tokens
    rep, res = run_one(cfg, _weights(cfg, weights), keep, base)
    try:
        paths = write_outputs(_out_dir(out_dir), rep, res.timeline, stem)
    except OSError as exc:
        raise Fail(f"cannot write outputs: {exc}") from exc
    d = rep.decode
    click.echo(f"nodes={cfg.hardware.n_nodes} decode_mean_ms="
               f"{d.mean_s * 1e3:.4f} tokens_per_sec={rep.tokens_per_sec:.2f}" if d else
               f"nodes={cfg.hardware.n_nodes} prefill only")
    if rep.breakdown:
        click.echo("breakdown " + " ".join(f"{k}={v:.2f}%" for k, v in rep.breakdown.items()))
    if rep.speedup.get("tokens_per_sec"):
        click.echo(f"speedup={rep.speedup['tokens_per_sec']:.4f}")
    for k, p in paths.items():
        click.echo(f"{k}: {p}")


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--weights", type=click.Path(dir_okay=False), default=None)
def verify(config_path, weights):
    """Run the oracle-equivalence checks."""
    from .verify import run_all
    cfg = _load(config_path)
    checks = run_all(cfg, _weights(cfg, weights))
    for c in checks:
        click.echo(f"{'PASS' if c.ok else 'FAIL'}  {c.name}" + (f"  ({c.detail})" if c.detail else ""))
    failed = [c for c in checks if not c.ok]
    click.echo(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if failed:
        raise Fail(f"{len(failed)} check(s) failed", EXIT_VERIFY)


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def genweights(config_path, seed, out_path):
    """Write deterministic random W8A8 weights."""
    cfg = _load(config_path)
    try:
        generate_weights(cfg.model, cfg.run.seed if seed is None else seed, out_path)
    except OSError as exc:
        raise Fail(f"cannot write {out_path}: {exc}") from exc
    click.echo(out_path)


def _parse_flag_set(text: str) -> dict:
    if text == "all":
        return dict.fromkeys(FLAG_NAMES, True)
    if text == "none":
        return dict.fromkeys(FLAG_NAMES, False)
    on = {s.strip() for s in text.split("+") if s.strip()}
    bad = on - set(FLAG_NAMES)
    if bad:
        raise click.BadParameter(f"unknown flag(s) {sorted(bad)}; use {FLAG_NAMES}, 'all' or 'none'")
    return {k: k in on for k in FLAG_NAMES}


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--nodes", default="1,2,4", show_default=True, help="comma-separated node counts")
@click.option("--flags", "flag_sets", multiple=True, default=("all", "none"), show_default=True,
              help="flag set: 'all', 'none' or names joined by '+'; repeatable")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--jobs", type=int, default=1, show_default=True, help="worker threads")
def sweep(config_path, nodes, flag_sets, out_dir, jobs):
    """Cartesian product over node counts and flag sets, one report per point."""
    base = _load(config_path)
    try:
        node_list = [int(x) for x in nodes.split(",") if x.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"--nodes: {exc}") from exc
    sets = [(fs, _parse_flag_set(fs)) for fs in flag_sets]
    points = [(n, tag, fl, _override(base, nodes=n, flags=fl)) for n, (tag, fl) in itertools.product(node_list, sets)]
    out = _out_dir(out_dir)

    def work(p):
        n, tag, _, cfg = p
        rep, res = run_one(cfg, keep_tokens=0)
        write_outputs(out, rep, res.timeline, f"n{n}_{tag.replace('+', '-')}")
        return rep

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as ex:
        reports = list(ex.map(work, points))
    rows = []
    for (n, tag, _, _), rep in zip(points, reports):
        ref = next((r for (m, t, _, _), r in zip(points, reports) if m == 1 and t == tag), None)
        sp = speedup(rep, ref).get("tokens_per_sec") if ref is not None else None
        rows.append([n, tag, rep.decode.mean_s if rep.decode else "", rep.tokens_per_sec or "", sp or ""])
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["nodes", "flags", "decode_mean_s", "tokens_per_sec", "speedup_vs_1node"])
            w.writerows(rows)
    except OSError as exc:
        raise Fail(f"cannot write sweep table: {exc}") from exc
    for r in rows:
        click.echo(",".join(str(x) for x in r))


@cli.command("show-config")
@click.argument("config_path", type=click.Path(dir_okay=False))
def show_config(config_path):
    """Print the effective config with defaults filled in."""
    click.echo(dump_config(_load(config_path)), nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="mdksim", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.exceptions.Exit as exc:
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
