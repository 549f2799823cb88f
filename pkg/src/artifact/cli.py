"""Command line: design, bench, size and library."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import RunConfig, load_config, shipped_transcripts, transcript_paths
from .llm_gateway import Gateway, GatewayError, NoNetworkTransport, TranscriptStore
from .tasks import DesignTask, get_task, load_tasks, registry, task_from_dict

LIBRARY_ENV = "ARTIFACT_LIBRARY"


def make_gateway(config: RunConfig) -> Gateway:
    store = None
    if config.mode in ("record", "replay"):
        paths = transcript_paths(config.transcripts)
        if config.mode == "record":
            p = Path(config.transcripts)
            paths = [p / "recorded.jsonl"] + paths if p.is_dir() or not p.suffix else paths
        store = TranscriptStore(paths)
    transport = NoNetworkTransport() if config.mode == "replay" else None
    return Gateway(config.provider(), config.mode, store, transport)


def resolve_task(ref: str) -> DesignTask:
    p = Path(ref)
    if p.is_file():
        data = json.loads(p.read_text())
        return task_from_dict(data["tasks"][0] if isinstance(data, dict) and "tasks" in data else data)
    return get_task(ref)


def load_suite(ref: str) -> list[DesignTask]:
    """``all``, a comma list of ids, a task file, or a JSON list of ids."""
    if ref == "all":
        return list(registry().values())
    p = Path(ref)
    if p.is_file():
        data = json.loads(p.read_text())
        if isinstance(data, list) and all(isinstance(x, (int, str)) for x in data):
            return [get_task(x) for x in data]
        return list(load_tasks(p).values())
    return [get_task(x.strip()) for x in ref.split(",") if x.strip()]


def _config(ctx: click.Context, **overrides) -> RunConfig:
    mode = overrides.get("mode")
    if mode == "replay" and not overrides.get("transcripts"):
        base = ctx.obj.get("config_path")
        file_has = base and "transcripts" in json.loads(Path(base).read_text())
        if not file_has:
            overrides["transcripts"] = str(shipped_transcripts())
    try:
        return load_config(ctx.obj.get("config_path"), **overrides)
    except (ValueError, TypeError) as exc:
        raise click.UsageError(str(exc)) from exc


def _search_opts(stages: str, window: str):
    try:
        st = tuple(int(x) for x in stages.split(","))
        lo, hi = (float(x) for x in window.split(","))
    except ValueError as exc:
        raise click.UsageError(f"bad --stages or --window: {exc}") from exc
    return st, (lo, hi)


def _ablation_options(f):
    for opt in reversed([
        click.option("--no-feedback", is_flag=True, default=None, help="Single attempt, no repair rounds."),
        click.option("--no-library", is_flag=True, default=None, help="Do not offer library tools."),
        click.option("--no-cot", is_flag=True, default=None, help="Drop the plan-first instruction."),
        click.option("--no-incontext", is_flag=True, default=None, help="Drop the worked example."),
        click.option("--repr", "repr_", type=click.Choice(["netlist", "pyspice"]), default=None,
                     help="Circuit representation requested from the model."),
    ]):
        f = opt(f)
    return f


def _ablation(no_feedback, no_library, no_cot, no_incontext, repr_) -> dict:
    return {"no_feedback": no_feedback, "no_library": no_library, "no_cot": no_cot,
            "no_incontext": no_incontext, "repr": repr_}


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), envvar="ARTIFACT_CONFIG",
              help="JSON config file (also ARTIFACT_CONFIG).")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx: click.Context, config_path, verbose):
    """Analog circuit design with language models and simulator feedback."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@main.command()
@click.option("--task", "task_ref", required=True, help="Task id or a JSON task file.")
@click.option("--objective", type=click.Choice(["gain", "gbw", "fom", "g"]), default=None,
              help="Also size the design for this objective.")
@click.option("--mode", type=click.Choice(["live", "record", "replay"]), default=None)
@click.option("--attempts", type=int, default=None, help="Maximum design attempts (default 3).")
@click.option("--transcripts", type=click.Path(), default=None)
@click.option("--workdir", type=click.Path(file_okay=False), default=None)
@click.option("--library", "library_path", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--sample", type=int, default=0)
@click.option("--budget", type=int, default=1000, help="Sizing trials when --objective is given.")
@click.option("--stages", default="20,200,200", help="Bias search points per stage (with --objective).")
@click.option("--window", default="0,1", help="Bias window as supply fractions (with --objective).")
@_ablation_options
@click.pass_context
def design(ctx, task_ref, objective, mode, attempts, transcripts, workdir, library_path, seed, sample, budget,
           stages, window, no_feedback, no_library, no_cot, no_incontext, repr_):
    """Design one task and print the verdict of each attempt."""
    from .library import open_library
    from .orchestrator import run_design_task, run_unified
    from .sizing import ExtractionFailed

    cfg = _config(ctx, mode=mode, attempts_max=attempts, transcripts=transcripts, workdir=workdir,
                  library=library_path, seed=seed,
                  **_ablation(no_feedback, no_library, no_cot, no_incontext, repr_))
    try:
        task = resolve_task(task_ref)
    except KeyError as exc:
        raise click.UsageError(str(exc)) from exc
    gw = make_gateway(cfg)
    lib = None if cfg.no_library else open_library(cfg.library)
    try:
        if objective:
            target = "gain" if objective == "g" else objective
            st, win = _search_opts(stages, window)
            out = run_unified(task, cfg, gw, target, budget, lib, stages=st, window=win, sample=sample)
            res = out.design
        else:
            res = run_design_task(task, cfg, gw, lib, sample=sample)
    except (GatewayError, ExtractionFailed) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(2)
    finally:
        gw.close()
    for a in res.attempts:
        first = next(iter(a.report.failures()), None)
        why = f" ({first.message})" if first else ""
        click.echo(f"attempt {a.index}: {a.report.verdict}{why}")
    click.echo(f"task {task.task_id}: {res.final_verdict} after {len(res.attempts)} attempt(s)")
    if objective and res.passed:
        click.echo(f"initial: {json.dumps(out.initial, sort_keys=True)}")
        click.echo(f"optimized: {json.dumps(out.optimized, sort_keys=True)}")
    sys.exit(0 if res.passed else 1)


@main.command()
@click.option("--suite", required=True, help="'all', comma list of ids, or a JSON file.")
@click.option("--n", "n", type=int, default=None, help="Samples per task (default 30).")
@click.option("--k", "ks", default="1,5", help="Comma list of k values.")
@click.option("--mode", type=click.Choice(["live", "record", "replay"]), default=None)
@click.option("--transcripts", type=click.Path(), default=None)
@click.option("--workdir", type=click.Path(file_okay=False), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--attempts", type=int, default=None)
@click.option("--seed", type=int, default=None)
@_ablation_options
@click.pass_context
def bench(ctx, suite, n, ks, mode, transcripts, workdir, workers, attempts, seed,
          no_feedback, no_library, no_cot, no_incontext, repr_):
    """Pass@k over a task suite; writes results.{tsv,csv,json} to the workdir."""
    from .orchestrator import DomainError, run_benchmark

    cfg = _config(ctx, mode=mode, transcripts=transcripts, workdir=workdir, workers=workers, attempts_max=attempts,
                  samples_n=n, seed=seed, **_ablation(no_feedback, no_library, no_cot, no_incontext, repr_))
    try:
        k_list = [int(x) for x in ks.split(",") if x.strip()]
        tasks = load_suite(suite)
    except (ValueError, KeyError) as exc:
        raise click.UsageError(str(exc)) from exc
    gw = make_gateway(cfg)
    try:
        result = run_benchmark(tasks, cfg, gw, cfg.samples_n, k_list,
                               progress=lambda r: click.echo(f"task {r.task_id} s{r.sample}: {r.final_verdict}",
                                                             err=True))
    except DomainError as exc:
        raise click.UsageError(str(exc)) from exc
    finally:
        gw.close()
    click.echo(result.table(), nl=False)


@main.command()
@click.option("--netlist", "netlist_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Parameterised template (with param_ranges_definition) or a plain netlist.")
@click.option("--objective", type=click.Choice(["gain", "gbw", "fom"]), default="fom")
@click.option("--trials", type=int, default=1000)
@click.option("--seed", type=int, default=0)
@click.option("--stages", default="20,200,200", help="Bias search points per resolution stage.")
@click.option("--window", default="0,1", help="Bias window as fractions of the supply.")
@click.option("--load", "load_pf", type=float, default=100.0, help="Load capacitance in pF.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="sizing_out")
@click.option("--mode", type=click.Choice(["live", "record", "replay"]), default=None,
              help="Gateway mode for extracting a space from a plain netlist.")
@click.option("--transcripts", type=click.Path(), default=None)
@click.pass_context
def size(ctx, netlist_path, objective, trials, seed, stages, window, load_pf, out_dir, mode, transcripts):
    """Size a circuit with TPE and multi-resolution bias search."""
    from .orchestrator import extract_param_space
    from .prompts import embed
    from .sizing import ObjectiveSpec, ParamSpaceError, optimize, validate_param_space
    from .sizing.params import parse_extraction_response

    text = Path(netlist_path).read_text()
    st, (lo, hi) = _search_opts(stages, window)
    try:
        if "param_ranges_definition" in text:
            body = text if "```" in text else embed(text.rstrip("\n"), "python")
            space = validate_param_space(parse_extraction_response(body))
        else:
            cfg = _config(ctx, mode=mode, transcripts=transcripts, seed=seed)
            gw = make_gateway(cfg)
            try:
                space = extract_param_space(text, cfg, gw)
            finally:
                gw.close()
    except (ParamSpaceError, GatewayError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    out = Path(out_dir)
    res = optimize(space, ObjectiveSpec(objective, load_pf * 1e-12), trials, seed, stages=st, window=(lo, hi),
                   history_path=out / "history.jsonl", plot_path=out / "convergence.png")
    first = res.history[0]
    if first.ok:
        click.echo(f"initial {objective}: {first.objective:.6g}")
    click.echo(f"best {objective}: {res.best.objective:.6g} at trial {res.best.trial_id}")
    click.echo(f"bias: {res.best.bias}")
    click.echo(f"params: {json.dumps(res.best.params, sort_keys=True)}")
    click.echo(f"metrics: {json.dumps(res.best.metrics, sort_keys=True)}")
    (out / "best.cir").write_text(space.render(res.best.params))


@main.group()
@click.option("--root", type=click.Path(file_okay=False), envvar=LIBRARY_ENV, default="tool_library",
              show_default=True, help="Library directory (also ARTIFACT_LIBRARY).")
@click.pass_context
def library(ctx, root):
    """Manage the circuit tool library."""
    from .library import open_library

    ctx.obj["library"] = open_library(root)


@library.command("list")
@click.pass_context
def library_list(ctx):
    for e in ctx.obj["library"].entries():
        specs = ", ".join(f"{k}={v:g}" for k, v in sorted(e.key.specs.items()))
        click.echo(f"{e.slug}\t{e.name}\t{e.key.circuit_type.value}\t{e.key.description}\t{specs}")


@library.command("query")
@click.argument("text", nargs=-1, required=True)
@click.option("--limit", type=int, default=3)
@click.pass_context
def library_query(ctx, text, limit):
    from .library import render_context

    hits = ctx.obj["library"].query(" ".join(text), limit)
    if not hits:
        click.echo("no matching tools")
        return
    click.echo(render_context(hits))


@library.command("add")
@click.argument("netlist_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--description", required=True)
@click.option("--task", "task_ref", default=None, help="Verify against this task's checks.")
@click.pass_context
def library_add(ctx, netlist_path, description, task_ref):
    """Verify a netlist and archive it as a subcircuit tool."""
    from .circuit_ir import CircuitError, parse_netlist
    from .library import UnverifiedTool, tool_from_circuit
    from .orchestrator import archived_specs
    from .verification import run_pipeline

    try:
        circuit = parse_netlist(Path(netlist_path).read_text())
    except CircuitError as exc:
        raise click.UsageError(str(exc)) from exc
    task = resolve_task(task_ref) if task_ref else None
    report = run_pipeline(circuit, task, render=False)
    if not report.passed:
        click.echo("verification failed: " + "; ".join(m for m in report.messages(("fail",))), err=True)
        sys.exit(1)
    specs = archived_specs(report)
    entry = tool_from_circuit(circuit, description, specs, task.task_id if task else None, "cli")
    try:
        res = ctx.obj["library"].add_tool(entry, report)
    except UnverifiedTool as exc:
        raise click.UsageError(str(exc)) from exc
    if res.stored:
        click.echo(f"stored {entry.slug}" + (f" (replaced {res.replaced.slug})" if res.replaced else ""))
    else:
        click.echo(f"kept existing {entry.slug}: it is at least as good")


if __name__ == "__main__":  # pragma: no cover
    main()
