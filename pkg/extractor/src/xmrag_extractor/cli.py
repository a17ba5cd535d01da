"""Extractor CLI: emit XMRG features, text embedding files, and fixtures."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .encoders import EncoderError
from .jobs import (
    ExtractionJob,
    FixtureSpec,
    embed_texts,
    export_fixture,
    extract_vision_features,
)


@click.group()
def cli():
    pass


@cli.command("extract-vision")
@click.option("--images", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--model", default="CLIP ViT-L/14", show_default=True)
@click.option("--batch", type=int, default=16)
@click.option("--device", default="cpu")
@click.option("--captions", type=click.Path(exists=True), default=None,
              help="JSON object mapping image stem to caption")
def cmd_extract_vision(images, out, model, batch, device, captions):
    """Write one XMRG token matrix per image plus a manifest fragment."""
    caption_map = {}
    if captions:
        caption_map = json.loads(Path(captions).read_text(encoding="utf-8"))
    job = ExtractionJob(model_id=model, out_dir=out, batch_size=batch,
                        device=device, captions=caption_map)
    paths = sorted(p for p in Path(images).iterdir() if p.is_file())
    report = extract_vision_features(paths, job)
    click.echo(json.dumps({
        "written": len(report.written),
        "skipped": report.skipped,
        "manifest": report.manifest_path,
    }, indent=2))


@cli.command("embed-texts")
@click.option("--in", "in_file", type=click.Path(exists=True), required=True,
              help="one text per line")
@click.option("--out", type=click.Path(), required=True)
@click.option("--model", default="CLIP ViT-L/14", show_default=True)
@click.option("--batch", type=int, default=16)
@click.option("--device", default="cpu")
def cmd_embed_texts(in_file, out, model, batch, device):
    """Embed a line-per-text file into a single XMRG matrix."""
    texts = [ln for ln in Path(in_file).read_text(encoding="utf-8").splitlines() if ln.strip()]
    job = ExtractionJob(model_id=model, batch_size=batch, device=device)
    path = embed_texts(texts, job, out)
    click.echo(json.dumps({"rows": len(texts), "file": path}, indent=2))


@cli.command("export-fixture")
@click.option("--out", type=click.Path(), required=True)
@click.option("--queries", type=int, default=2)
@click.option("--subqueries", type=int, default=3)
@click.option("--records", type=int, default=8)
@click.option("--dim", type=int, default=16)
@click.option("--seed", type=int, default=0)
def cmd_export_fixture(out, queries, subqueries, records, dim, seed):
    """Deterministic synthetic corpora in the engine's on-disk layout."""
    spec = FixtureSpec(num_queries=queries, subqueries=subqueries,
                       records=records, dim=dim, seed=seed)
    files = export_fixture(spec, out)
    click.echo(json.dumps({"files": len(files), "root": out}, indent=2))


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
    except (EncoderError, ValueError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
