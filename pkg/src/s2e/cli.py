"""Command-line entry point for the full pipeline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Defaults for file arguments resolve under $S2E_DATA_DIR when set.  A TOML
config file supplies defaults; explicit flags win.
"""

from __future__ import annotations

import csv as csv_mod
import functools
import hashlib
import json
import os
import sys
from importlib import metadata

import click
import numpy as np

from . import abstraction, agent, concepts, connect4, dataset, embedding, lander, retrieval, shaping
from .core import ContextInfo, DomainId, RolloutTrace, RunSeed, TraceStep, Transition, derive_stream
from .errors import (
    BadK, BadZ, DivergedValues, DomainMismatch, EmptyFold, EmptyTestSet,
    EmptyTrace, IoError, NonFinite, S2EError, SchemaVersionMismatch,
)

_DATA_ERRORS = (
    SchemaVersionMismatch, IoError, DomainMismatch, BadZ, BadK,
    EmptyTestSet, EmptyTrace, EmptyFold,
)
_NUMERIC_ERRORS = (NonFinite, DivergedValues)

_DOMAINS = {"connect4": DomainId.CONNECT4, "lunar_lander": DomainId.LUNAR_LANDER}

# usage errors exit 1; 2 is reserved for data errors
click.UsageError.exit_code = 1


def _version() -> str:
    try:
        return metadata.version("s2e")
    except metadata.PackageNotFoundError:
        return "unknown"


def _data_dir() -> str:
    return os.environ.get("S2E_DATA_DIR", ".")


def _resolve(path: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.join(_data_dir(), path)


def _metadata(**resolved) -> dict:
    return {"tool": "s2e", "version": _version(), "config": resolved}


def _write_json(path: str, obj: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _NUMERIC_ERRORS as e:
            click.echo(f"numeric failure: {e}", err=True)
            sys.exit(3)
        except _DATA_ERRORS as e:
            click.echo(f"data error: {e}", err=True)
            sys.exit(2)
        except S2EError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
    return wrapper


def _load_toml_defaults(ctx, param, value):
    """Install [s2e.<subcommand>] tables from a TOML file as flag defaults."""
    if not value:
        return None
    import tomli
    with open(value, "rb") as f:
        data = tomli.load(f)
    section = data.get(ctx.info_name, {})
    ctx.default_map = {**section, **(ctx.default_map or {})}
    return value


def _config_option(fn):
    return click.option(
        "--config", type=click.Path(exists=True, dir_okay=False),
        callback=_load_toml_defaults, is_eager=True, expose_value=False,
        help="TOML config file; explicit flags override it.",
    )(fn)


@click.group()
@click.version_option(version=_version(), prog_name="s2e")
def main() -> None:
    """Concept-based explanation pipeline: data, training, retrieval, play."""


@main.command("gen-data")
@_config_option
@click.option("--domain", type=click.Choice(sorted(_DOMAINS)), required=True)
@click.option("--episodes", type=int, default=50, show_default=True)
@click.option("--policy", type=click.Choice(dataset.POLICIES), default="mixture", show_default=True)
@click.option("--z", type=int, default=None, help="misaligned sets per aligned sample")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_handle_errors
def gen_data(domain, episodes, policy, z, seed, out):
    """Collect aligned rollout samples, perturb misaligned ones, write a corpus."""
    dom = _DOMAINS[domain]
    if z is None:
        z = 8 if dom is DomainId.CONNECT4 else 5
    out = _resolve(out)
    aligned = dataset.collect_aligned(dom, policy, episodes, RunSeed(seed))
    misaligned = dataset.perturb_misaligned(aligned, z, RunSeed(seed))
    corpus = dataset.Corpus(
        domain=dom,
        samples=aligned + misaligned,
        z=z,
        provenance=dataset.Provenance(policy, seed, episodes),
    )
    dataset.save(corpus, out)
    counts: dict[str, int] = {}
    for s in corpus.aligned():
        counts[s.explanation.concept_set.label()] = counts.get(
            s.explanation.concept_set.label(), 0) + 1
    report = {
        **_metadata(domain=domain, episodes=episodes, policy=policy, z=z, seed=seed, out=out),
        "aligned": len(corpus.aligned()),
        "misaligned": len(corpus.misaligned()),
        "per_set_counts": dict(sorted(counts.items())),
    }
    _write_json(out + ".report.json", report)
    click.echo(f"wrote {len(corpus.samples)} samples to {out}")


@main.command("train-embed")
@_config_option
@click.option("--corpus", type=click.Path(), required=True)
@click.option("--lr", type=float, default=0.001, show_default=True)
@click.option("--batch", type=int, default=128, show_default=True)
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_handle_errors
def train_embed(corpus, lr, batch, epochs, seed, out):
    """Train the joint state/explanation embedding and write a checkpoint."""
    if lr == 0:
        click.echo("warning: --lr 0 leaves parameters unchanged", err=True)
    corpus_path, out = _resolve(corpus), _resolve(out)
    data = dataset.load(corpus_path)
    folds = dataset.split(data, dataset.SplitSpec(), RunSeed(seed))
    cfg = embedding.TrainConfig(
        learning_rate=lr, batch_size=batch, epochs=epochs, seed=RunSeed(seed)
    )
    model, history = embedding.train(folds[0], folds[1], cfg)
    embedding.save_checkpoint(model, out)
    metrics = {
        **_metadata(corpus=corpus_path, lr=lr, batch=batch, epochs=epochs, seed=seed, out=out),
        "epochs": history,
        "checkpoint_sha256": _file_sha256(out),
    }
    _write_json(out + ".metrics.json", metrics)
    click.echo(f"checkpoint written to {out}")


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@main.command("eval-embed")
@_config_option
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--oracle", is_flag=True, help="evaluate the labeler-keyed oracle encoder")
@click.option("--corpus", type=click.Path(), required=True)
@click.option("--k", default="1,2,3", show_default=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@_handle_errors
def eval_embed(checkpoint, oracle, corpus, k, out, seed):
    """Recall@k table and confusion matrix on a held-out corpus fold."""
    corpus_path = _resolve(corpus)
    data = dataset.load(corpus_path)
    if oracle:
        model = retrieval.OracleEncoder(data.domain)
    elif checkpoint:
        model = embedding.load_checkpoint(_resolve(checkpoint), data.domain)
    else:
        raise click.UsageError("need --checkpoint or --oracle")
    try:
        ks = sorted({int(x) for x in k.split(",")})
    except ValueError:
        raise click.UsageError(f"bad --k list: {k!r}")
    folds = dataset.split(data, dataset.SplitSpec(), RunSeed(seed))
    test = [s for s in folds[2].samples if s.y == 0]
    index = retrieval.build_index(model)
    report = retrieval.evaluation_report(index, model, test, ks)
    for kk in ks:
        click.echo(f"recall@{kk}: {report['recall_at_k'][str(kk)]:.4f}")
    if out:
        out = _resolve(out)
        _write_json(out, {
            **_metadata(corpus=corpus_path, k=ks, oracle=oracle, seed=seed),
            **report,
        })
        _write_confusion_csv(out + ".confusion.csv", report)


def _write_confusion_csv(path: str, report: dict) -> None:
    labels = [c["set"] for c in report["classes"]]
    with open(path, "w", newline="") as f:
        w = csv_mod.writer(f)
        w.writerow(["true\\predicted"] + labels)
        for label, row in zip(labels, report["confusion"]):
            w.writerow([label] + list(row))


@main.command("train-agent")
@_config_option
@click.option("--domain", type=click.Choice(sorted(_DOMAINS)), required=True)
@click.option("--source", "sources", multiple=True,
              type=click.Choice(("none", "expert", "s2e")), default=("none", "expert"),
              show_default=True)
@click.option("--checkpoint", type=click.Path(), default=None,
              help="embedding checkpoint; required for --source s2e")
@click.option("--budget", type=int, default=20000, show_default=True)
@click.option("--seeds", type=int, default=3, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--policy-out", type=click.Path(), default=None,
              help="save the first trained policy here")
@_handle_errors
def train_agent_cmd(domain, sources, checkpoint, budget, seeds, out, policy_out):
    """Train value-based agents under each shaping source and compare curves."""
    dom = _DOMAINS[domain]
    out = _resolve(out)
    source_map = {}
    for tag in dict.fromkeys(sources):
        if tag == "s2e":
            if not checkpoint:
                raise click.UsageError("--source s2e needs --checkpoint")
            model = embedding.load_checkpoint(_resolve(checkpoint), dom)
            index = retrieval.build_index(model)
            source_map[tag] = shaping.ShapingSource("s2e", model=model, index=index)
        else:
            source_map[tag] = shaping.ShapingSource(tag)
    seed_list = [RunSeed(i) for i in range(seeds)]
    report = agent.compare_sources(dom, source_map, seed_list, budget)
    report.update(_metadata(domain=domain, sources=list(source_map), budget=budget, seeds=seeds))
    agent.save_report(report, out)
    agent.curves_to_csv(report, out + ".curves.csv")
    for name, entry in report["sources"].items():
        click.echo(f"{name}: median steps to threshold = {entry['median_steps_to_threshold']}")
    if policy_out:
        first = next(iter(source_map.values()))
        cfg = agent.AgentConfig(seed=seed_list[0])
        policy, _ = agent.train_agent(dom, first, cfg, budget)
        agent.save_policy(policy, _resolve(policy_out))


def _rollout_one(dom: DomainId, policy_name, seed: RunSeed) -> RolloutTrace:
    """One labeled expert episode using the scripted controller."""
    trace = RolloutTrace(dom)
    if dom is DomainId.CONNECT4:
        rng = seed.generator()
        board = connect4.new_game()
        while not connect4.is_terminal(board):
            mover = board.player_to_move
            col = connect4.heuristic_move(board, rng) if policy_name != "random" \
                else connect4.random_move(board, rng)
            nxt = connect4.apply(board, col, mover)
            ctx = ContextInfo(connect4.is_terminal(nxt), current_player=mover)
            t = Transition(dom, board, col, nxt, ctx)
            cs = concepts.label_connect4(t)
            shaped = shaping.shape(t, cs, shaping.default_table(dom))
            trace.steps.append(TraceStep(t, cs, concepts.render(col, cs), 0.0, shaped))
            board = nxt
        return trace
    s = lander.reset(seed)
    rng = seed.generator()
    for _ in range(lander.DEFAULT_CONFIG.max_episode_steps):
        if policy_name == "random":
            a = list(lander.LanderAction)[int(rng.integers(4))]
        else:
            a = lander.scripted_move(s)
        nxt, outcome = lander.step(s, a)
        t = Transition(dom, s, a, nxt, ContextInfo(outcome.terminal))
        cs = concepts.label_lander(t, outcome)
        shaped = shaping.shape(t, cs, shaping.default_table(dom))
        trace.steps.append(TraceStep(t, cs, concepts.render(a, cs), 0.0, shaped))
        s = nxt
        if outcome.terminal:
            break
    return trace


@main.command("rollout-explain")
@_config_option
@click.option("--domain", type=click.Choice(sorted(_DOMAINS)), required=True)
@click.option("--policy", type=click.Choice(("scripted", "random")), default="scripted",
              show_default=True)
@click.option("--mode", type=click.Choice(abstraction.MODES), default="raw", show_default=True)
@click.option("--checkpoint", type=click.Path(), default=None,
              help="embedding checkpoint; omitted = oracle encoder")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trace-out", type=click.Path(), default=None)
@_handle_errors
def rollout_explain(domain, policy, mode, checkpoint, seed, trace_out):
    """Roll out one episode and print retrieved explanations per step or group."""
    dom = _DOMAINS[domain]
    if mode in ("inf", "inf_teg") and dom is DomainId.CONNECT4:
        raise DomainMismatch("filtering modes apply to the lander only")
    trace = _rollout_one(dom, policy, RunSeed(seed))
    if checkpoint:
        model = embedding.load_checkpoint(_resolve(checkpoint), dom)
    else:
        model = retrieval.OracleEncoder(dom)
    index = retrieval.build_index(model)
    hits = 0
    retrieved = []
    for st in trace.steps:
        result = retrieval.retrieve(index, model, st.transition, k=1)
        cs = result.ranked[0][0]
        hit = cs == st.concept_set
        hits += int(hit)
        retrieved.append((cs, hit))
    # present through the retrieved sets, as at deployment
    shown = RolloutTrace(dom)
    for st, (cs, _) in zip(trace.steps, retrieved):
        exp = index.explanations[index.sets.index(cs)]
        shown.steps.append(TraceStep(st.transition, cs, exp, st.base_reward, st.shaped_reward))
    units = abstraction.abstract(shown, mode)
    flag = {True: "=", False: "!"}
    for u in units:
        mark = flag[retrieved[u.start][1]] if u.kind == "step" else "*"
        click.echo(f"[{u.start:4d}{'+' + str(u.n) if u.n > 1 else '    '}] {mark} {u.text}")
    click.echo(f"agreement: {hits}/{len(trace.steps)} = {hits / len(trace.steps):.3f}")
    click.echo(f"ats: {shaping.ats(trace):.6f}")
    if trace_out:
        trace_out = _resolve(trace_out)
        os.makedirs(os.path.dirname(os.path.abspath(trace_out)), exist_ok=True)
        dataset.save_trace(trace, trace_out)


@main.command("sensitivity")
@_config_option
@click.option("--trace-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--concept", type=click.Choice(("pos_x", "tilt_upper", "tilt_lower")),
              required=True)
@click.option("--grid", default="0,0.05,0.1,0.15,0.2,0.3,0.5,1.0,2.0", show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_handle_errors
def sensitivity(trace_dir, concept, grid, out):
    """Sweep a filtering threshold over stored traces; write (threshold, fraction) CSV."""
    try:
        grid_vals = [float(x) for x in grid.split(",")]
    except ValueError:
        raise click.UsageError(f"bad --grid list: {grid!r}")
    traces = []
    for name in sorted(os.listdir(trace_dir)):
        if name.endswith(".json"):
            traces.append(dataset.load_trace(os.path.join(trace_dir, name)))
    if not traces:
        raise EmptyTrace(f"no .json traces under {trace_dir}")
    concept_key = "POS" if concept == "pos_x" else "TILT"
    curve = abstraction.sensitivity_sweep(traces, concept_key, grid_vals)
    out = _resolve(out)
    with open(out, "w", newline="") as f:
        w = csv_mod.writer(f)
        w.writerow(["threshold", "filtered_fraction"])
        for th, frac in curve:
            w.writerow([th, frac])
    _write_json(out + ".meta.json", _metadata(trace_dir=trace_dir, concept=concept, grid=grid_vals))
    click.echo(f"wrote {len(curve)} points to {out}")


@main.command("serve")
@_config_option
@click.option("--addr", default="127.0.0.1:8000", show_default=True)
@click.option("--data-dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--c4-policy", type=click.Path(), default=None)
@click.option("--ll-policy", type=click.Path(), default=None)
@click.option("--c4-checkpoint", type=click.Path(), default=None)
@click.option("--ll-checkpoint", type=click.Path(), default=None)
@_handle_errors
def serve(addr, data_dir, seed, c4_policy, ll_policy, c4_checkpoint, ll_checkpoint):
    """Run the HTTP session service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    try:
        host, port_s = addr.rsplit(":", 1)
        port = int(port_s)
    except ValueError:
        raise click.UsageError(f"bad --addr {addr!r}, expected host:port")
    cfg = ServiceConfig(
        data_dir=data_dir or _data_dir(),
        seed=seed,
        c4_policy_path=c4_policy,
        ll_policy_path=ll_policy,
        c4_checkpoint_path=c4_checkpoint,
        ll_checkpoint_path=ll_checkpoint,
    )
    uvicorn.run(create_app(cfg), host=host, port=port)


if __name__ == "__main__":
    main()
