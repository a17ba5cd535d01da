"""Command-line entry point.

Subcommands: index, decompose, retrieve, generate, eval, bench.
Configuration precedence: JSON config file, overridden by flags,
overridden by environment variables (API keys).

Exit codes: 0 success (including empty results), 1 usage error,
2 data/validation error, 3 external-service error.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from .adapter import load_adapter_params
from .corpus import load_corpus
from .errors import ServiceError, ValidationError, XmragError
from .evaluation import (
    PlantSpec,
    RandomCorpusSpec,
    bench_retrieval,
    coverage_of_ids,
    coverage_rate,
    lexical_topk_baseline,
    make_report,
    plant_corpus,
    planted_recall_at_1,
    random_lexical_instance,
    write_bench_csv,
)
from .generation import (
    MllmConfig,
    OfflineMllmClient,
    ReplayMllmClient,
    build_prompt,
    generate_image,
)
from .joint import joint_retrieve, report_dict
from .query import (
    HttpLlmClient,
    ReplayLlmClient,
    attach_embeddings,
    decompose_llm,
    decompose_rule_based,
    make_query,
)

log = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    manifest: str | None = None
    params: str | None = None
    beta: float | None = None
    grid_resolution: int = 10
    strip_plurals: bool = False
    offline: bool = False
    seed: int = 0
    jobs: int = 0  # 0 = available parallelism
    llm_endpoint: str = ""
    llm_model: str = "gpt-4o-mini"
    mllm_endpoint: str = ""
    mllm_model: str = "gpt-image-1"
    max_reference_images: int = 8

    def validate(self) -> None:
        if self.grid_resolution < 1:
            raise ValidationError("grid resolution must be >= 1")
        if self.beta is not None and self.beta <= 0:
            raise ValidationError("beta must be positive when set")

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


_FLAG_FIELDS = (
    "manifest", "params", "beta", "grid_resolution", "strip_plurals",
    "offline", "seed", "jobs", "llm_endpoint", "llm_model",
    "mllm_endpoint", "mllm_model", "max_reference_images",
)


def resolve_config(config_path: str | None, **flags) -> EngineConfig:
    cfg = EngineConfig()
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"cannot read config {config_path}: {e}") from e
        for key, value in data.items():
            if key in _FLAG_FIELDS:
                setattr(cfg, key, value)
    for key in _FLAG_FIELDS:
        value = flags.get(key)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _emit(obj: dict) -> None:
    click.echo(json.dumps(obj, indent=2))


def _build_query(raw: str, cfg: EngineConfig, use_llm: bool, llm_replay: str | None,
                 embeddings: str | None):
    if use_llm:
        if llm_replay:
            client = ReplayLlmClient.from_file(llm_replay)
        else:
            if not cfg.llm_endpoint:
                raise ValidationError("llm decomposition needs an endpoint (flag or config)")
            client = HttpLlmClient(cfg.llm_endpoint, cfg.llm_model)
        subqueries = decompose_llm(raw, client)
    else:
        subqueries = decompose_rule_based(raw)
    query = make_query(raw, subqueries)
    if embeddings:
        query = attach_embeddings(query, embeddings)
    return query


@click.group()
@click.option("--verbose", is_flag=True, help="debug logging")
def cli(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("index")
@click.argument("manifest", type=click.Path())
@click.option("--strip-plurals", is_flag=True, default=None)
@click.option("--out", type=click.Path(), default=None, help="also write the summary here")
def cmd_index(manifest, strip_plurals, out):
    """Validate a corpus manifest and print an index summary."""
    corpus = load_corpus(manifest, strip_plurals=bool(strip_plurals))
    summary = {"records": len(corpus), "tokens": len(corpus.token_index)}
    if out:
        Path(out).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _emit(summary)


@cli.command("decompose")
@click.argument("query_text")
@click.option("--llm", is_flag=True, help="use the external LLM instead of rules")
@click.option("--llm-replay", type=click.Path(), default=None,
              help="canned caption->completion JSON for offline LLM runs")
@click.option("--config", type=click.Path(), default=None)
@click.option("--llm-endpoint", default=None)
@click.option("--llm-model", default=None)
def cmd_decompose(query_text, llm, llm_replay, config, llm_endpoint, llm_model):
    """Split a query into subqueries."""
    cfg = resolve_config(config, llm_endpoint=llm_endpoint, llm_model=llm_model)
    query = _build_query(query_text, cfg, llm, llm_replay, None)
    _emit({"query": query.raw, "subqueries": query.texts})


retrieval_options = [
    click.option("--config", type=click.Path(), default=None),
    click.option("--manifest", type=click.Path(), default=None),
    click.option("--params", type=click.Path(), default=None),
    click.option("--embeddings", type=click.Path(), default=None,
                 help="XMRG file with one embedding row per subquery"),
    click.option("--beta", type=float, default=None),
    click.option("--grid-resolution", type=int, default=None),
    click.option("--strip-plurals", is_flag=True, default=None),
    click.option("--offline", is_flag=True, default=None),
    click.option("--jobs", type=int, default=None),
    click.option("--llm", is_flag=True, help="use the external LLM for decomposition"),
    click.option("--llm-replay", type=click.Path(), default=None),
]


def add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


def _run_retrieval(query_text, cfg, llm, llm_replay, embeddings):
    if not cfg.manifest:
        raise ValidationError("a corpus manifest is required (flag or config)")
    corpus = load_corpus(cfg.manifest, strip_plurals=cfg.strip_plurals)
    query = _build_query(query_text, cfg, llm, llm_replay, embeddings)
    params = load_adapter_params(cfg.params) if cfg.params else None
    result = joint_retrieve(
        corpus, query, params=params, beta=cfg.beta,
        m_resolution=cfg.grid_resolution, jobs=cfg.effective_jobs(),
    )
    if cfg.beta is not None and cfg.beta >= result.beta_max_loose:
        click.echo(
            f"warning: beta={cfg.beta} is at or above the computed bound "
            f"beta_max={result.beta_max_loose}; the dense weight is capped per "
            f"grid point to preserve optimality",
            err=True,
        )
    if not result.entries:
        click.echo("notice: no lexical match for any subquery", err=True)
    if cfg.offline:
        result.counters["sparse_micros"] = 0
        result.counters["dense_micros"] = 0
    return corpus, query, result


@cli.command("retrieve")
@click.argument("query_text")
@add_options(retrieval_options)
def cmd_retrieve(query_text, config, **flags):
    """Retrieve the non-dominated image set for a query."""
    llm = flags.pop("llm", False)
    llm_replay = flags.pop("llm_replay", None)
    embeddings = flags.pop("embeddings", None)
    cfg = resolve_config(config, **flags)
    _, query, result = _run_retrieval(query_text, cfg, llm, llm_replay, embeddings)
    _emit(report_dict(result, query))


@cli.command("generate")
@click.argument("query_text")
@add_options(retrieval_options)
@click.option("--replay-image", type=click.Path(), default=None,
              help="canned image file standing in for the generation service")
@click.option("--out-image", type=click.Path(), default=None)
@click.option("--provenance", type=click.Path(), default=None)
@click.option("--mllm-endpoint", default=None)
@click.option("--mllm-model", default=None)
def cmd_generate(query_text, config, replay_image, out_image, provenance, **flags):
    """Retrieve, build the generation prompt, and submit it."""
    llm = flags.pop("llm", False)
    llm_replay = flags.pop("llm_replay", None)
    embeddings = flags.pop("embeddings", None)
    cfg = resolve_config(config, **flags)
    _, query, result = _run_retrieval(query_text, cfg, llm, llm_replay, embeddings)
    prompt = build_prompt(query, result)
    mllm_config = MllmConfig(
        endpoint=cfg.mllm_endpoint, model=cfg.mllm_model,
        max_reference_images=cfg.max_reference_images,
    )
    if cfg.offline:
        outcome = generate_image(prompt, OfflineMllmClient(), mllm_config)
        outcome.provenance["timestamp"] = 0  # byte-stable offline output
        click.echo(prompt.rendered)
    elif replay_image:
        client = ReplayMllmClient(Path(replay_image).read_bytes())
        outcome = generate_image(prompt, client, mllm_config)
        target = Path(out_image or "generated.img")
        target.write_bytes(outcome.image_bytes)
        click.echo(str(target))
    else:
        from .generation import HttpMllmClient

        if not cfg.mllm_endpoint:
            raise ValidationError("online generation needs an mllm endpoint")
        outcome = generate_image(prompt, HttpMllmClient(mllm_config), mllm_config)
        target = Path(out_image or "generated.img")
        target.write_bytes(outcome.image_bytes)
        click.echo(str(target))
    if provenance:
        Path(provenance).write_text(
            json.dumps(outcome.provenance, indent=2) + "\n", encoding="utf-8"
        )


@cli.command("eval")
@click.option("--metric", type=click.Choice(["recall", "coverage"]), default="recall")
@click.option("--num-queries", type=int, default=20)
@click.option("--subqueries", "n_sub", type=int, default=3)
@click.option("--corpus-size", type=int, default=20)
@click.option("--dim", type=int, default=16)
@click.option("--instances", type=int, default=50, help="random corpora for --metric coverage")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), default=None)
@click.option("--text", "as_text", is_flag=True, help="plain-text table instead of JSON")
def cmd_eval(metric, num_queries, n_sub, corpus_size, dim, instances, seed, out, as_text):
    """Planted-corpus recall or coverage-direction evaluation."""
    if metric == "recall":
        suite = plant_corpus(PlantSpec(
            num_queries=num_queries, n=n_sub, N=corpus_size, d_t=dim, seed=seed
        ))
        value = planted_recall_at_1(suite)
        report = make_report(
            "recall_at_1", [value],
            config={"num_queries": num_queries, "n": n_sub, "N": corpus_size,
                    "d_t": dim, "seed": seed},
        )
    else:
        wins = []
        diffs = []
        for i in range(instances):
            corpus, query = random_lexical_instance(
                RandomCorpusSpec(n=n_sub, N=corpus_size, seed=seed + i)
            )
            joint_cov = coverage_rate(joint_retrieve(corpus, query), query)
            base_cov = coverage_of_ids(
                corpus, lexical_topk_baseline(corpus, query, 3), query
            )
            wins.append(1.0 if joint_cov >= base_cov else 0.0)
            diffs.append(joint_cov - base_cov)
        report = make_report(
            "coverage_joint_vs_lexical_top3", diffs,
            config={"instances": instances, "n": n_sub, "N": corpus_size, "seed": seed},
            counters={"win_rate": float(sum(wins) / len(wins))},
        )
    payload = report.to_text() if as_text else json.dumps(report.to_dict(), indent=2)
    if out:
        Path(out).write_text(payload + "\n", encoding="utf-8")
    click.echo(payload)


@cli.command("bench")
@click.option("--sizes", default="2000", help="comma-separated corpus sizes")
@click.option("--modes", default="sparse,hybrid,dense")
@click.option("--queries", "num_queries", type=int, default=30)
@click.option("--subqueries", "n_sub", type=int, default=4)
@click.option("--match-rate", type=float, default=0.025)
@click.option("--seed", type=int, default=0)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def cmd_bench(sizes, modes, num_queries, n_sub, match_rate, seed, csv_path):
    """Efficiency run: forward-count assertions on stdout, timings to CSV.

    Stdout carries only seed-deterministic counters; wall-clock numbers
    go to the CSV file.
    """
    size_list = [int(s) for s in sizes.split(",") if s]
    mode_list = [s.strip() for s in modes.split(",") if s.strip()]
    report, rows = bench_retrieval(
        size_list, mode_list, seed=seed, num_queries=num_queries,
        n=n_sub, match_rate=match_rate,
    )
    if csv_path:
        write_bench_csv(csv_path, rows)
    deterministic = {
        "config": report.config,
        "forward_counters": {
            k: int(v) for k, v in report.counters.items() if k.endswith(tuple(
                f"forwards_N{N}" for N in size_list
            ))
        },
        "assertions": "sparse=0, hybrid<=N_tilde*n, dense=N*n: passed",
    }
    _emit(deterministic)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except ServiceError as e:
        click.echo(f"service error: {e}", err=True)
        return 3
    except (ValidationError, XmragError) as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except click.Abort:
        return 1


if __name__ == "__main__":
    sys.exit(main())
