"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Every artifact
written embeds the effective configuration and template hashes; runs with
mock backends and a fixed seed are byte-for-byte reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import click

from . import fileio
from .config import AppConfig, build_gateway, load_config
from .dataset import prepare_dataset
from .errors import RoomsmithError, ValidationError
from .metrics import (
    TfrSample,
    TopKRecord,
    clip_score,
    fid,
    format_table,
    kid,
    tfr,
    tfr_report,
    top_k_accuracy,
    topk_table,
)
from .pipeline import generate_scene
from .retrieval import (
    ObjectPrior,
    estimate_prior,
    estimate_prior_by_category,
    rerank_with_lambda,
    retrieve,
    uniform_prior,
)
from .scene import FloorPlan

logger = logging.getLogger(__name__)


def _parse_room(value: str) -> FloorPlan:
    try:
        width_text, depth_text = value.lower().split("x")
        return FloorPlan(width=float(width_text), depth=float(depth_text))
    except (ValueError, RoomsmithError) as exc:
        raise click.BadParameter(
            f"--room expects WIDTHxDEPTH in meters, e.g. 4x3.5 (got {value!r}): {exc}")


def _parse_coarse_m(value: str | None):
    if value is None or value == "all":
        return value
    try:
        parsed = int(value)
    except ValueError:
        raise click.BadParameter(f"--coarse-m expects 'all' or an integer, got {value!r}")
    if parsed < 1:
        raise click.BadParameter("--coarse-m must be >= 1")
    return parsed


def _parse_float_list(value: str, flag: str) -> list[float]:
    try:
        return [float(token) for token in value.split(",") if token.strip() != ""]
    except ValueError:
        raise click.BadParameter(f"{flag} expects comma-separated numbers, got {value!r}")


def _parse_int_list(value: str, flag: str) -> list[int]:
    try:
        return [int(token) for token in value.split(",") if token.strip() != ""]
    except ValueError:
        raise click.BadParameter(f"{flag} expects comma-separated integers, got {value!r}")


def _load_app_config(config_path: str | None, *, lambda_p: float | None = None,
                     coarse_m=None, jobs: int | None = None,
                     seed: int | None = None) -> AppConfig:
    config = load_config(config_path)
    retrieval_updates = {}
    if lambda_p is not None:
        retrieval_updates["lambda_p"] = lambda_p
    if coarse_m is not None:
        retrieval_updates["coarse_m"] = coarse_m
    if jobs is not None:
        retrieval_updates["jobs"] = jobs
    if retrieval_updates:
        config.retrieval = dataclasses.replace(config.retrieval,
                                               **retrieval_updates)
    if seed is not None:
        config.pipeline = dataclasses.replace(config.pipeline, seed=seed)
    return config


def _load_prior(path: str | None, inventory) -> ObjectPrior:
    if path is None:
        return uniform_prior(inventory)
    return ObjectPrior.from_dict(fileio.read_json(path))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log debug detail.")
def cli(verbose: bool):
    """Text-conditioned scene generation and furniture retrieval."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--prompt", required=True, help="User description of the room.")
@click.option("--room", "room_spec", required=True,
              help="Room size as WIDTHxDEPTH in meters, e.g. 4x3.5.")
@click.option("--inventory", "inventory_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--prior", "prior_path", type=click.Path(exists=True, dir_okay=False),
              help="Prior document; defaults to uniform over the inventory.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--lambda-p", type=float, default=None)
@click.option("--coarse-m", default=None)
@click.option("--jobs", type=int, default=None)
def generate(prompt, room_spec, inventory_path, prior_path, out_dir,
             config_path, seed, lambda_p, coarse_m, jobs):
    """Generate a furnished scene and write its artifacts to --out."""
    room = _parse_room(room_spec)
    config = _load_app_config(config_path, lambda_p=lambda_p,
                              coarse_m=_parse_coarse_m(coarse_m), jobs=jobs,
                              seed=seed)
    gateway = build_gateway(config)
    inventory = fileio.load_inventory(inventory_path)
    prior = _load_prior(prior_path, inventory)

    record = generate_scene(prompt, room, inventory, prior, config.retrieval,
                            gateway, templates=config.templates(),
                            config=config.pipeline)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    provenance = config.provenance()
    fileio.write_json(out / "record.json",
                      {"record": record.to_dict(), "provenance": provenance})
    (out / "layout.css").write_text(record.css_layout + "\n", encoding="utf-8")
    fileio.write_json(out / "retrieval.json", {
        "objects": [obj.to_dict() for obj in record.objects],
        "provenance": provenance,
    })
    for name, trace in record.stages.items():
        for warning in trace.warnings:
            click.echo(f"warning [{name}]: {warning}", err=True)
    unfurnished = [obj.selector for obj in record.objects if not obj.furnished]
    if unfurnished:
        click.echo(f"warning: unfurnished objects: {', '.join(unfurnished)}",
                   err=True)
    timing = " ".join(f"{k}={v:.3f}s" for k, v in record.timing_s.items())
    click.echo(f"wrote {out}/record.json, layout.css, retrieval.json "
               f"({len(record.objects)} objects; {timing})", err=True)


@cli.command("retrieve")
@click.option("--description", required=True)
@click.option("--inventory", "inventory_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--prior", "prior_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--coarse-m", default=None, help="'all' or an integer.")
@click.option("--lambda-p", type=float, default=None)
@click.option("--top-k", type=int, default=10, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--jobs", type=int, default=None)
@click.option("--format", "output_format", type=click.Choice(["table", "json"]),
              default="table", show_default=True)
def retrieve_cmd(description, inventory_path, prior_path, coarse_m, lambda_p,
                 top_k, out_path, config_path, jobs, output_format):
    """Rank inventory assets against a description."""
    if top_k < 1:
        raise click.BadParameter("--top-k must be >= 1")
    config = _load_app_config(config_path, lambda_p=lambda_p,
                              coarse_m=_parse_coarse_m(coarse_m), jobs=jobs)
    gateway = build_gateway(config)
    inventory = fileio.load_inventory(inventory_path)
    prior = _load_prior(prior_path, inventory)

    result = retrieve(description, inventory, prior, config.retrieval, gateway)
    shown = result.scores[:top_k]
    document = {"result": result.to_dict(), "provenance": config.provenance()}
    if out_path:
        fileio.write_json(out_path, document)
    if output_format == "json":
        click.echo(json.dumps(document, sort_keys=True, indent=2))
    else:
        rows = [
            [rank, s.asset, f"{s.total:.6f}", f"{s.log_prior_term:.6f}",
             f"{s.token_loglik:.6f}"]
            for rank, s in enumerate(shown, start=1)
        ]
        click.echo(format_table(
            ["rank", "asset", "total", "log_prior", "token_loglik"], rows))


@cli.group("eval")
def eval_group():
    """Evaluation metrics over saved score and embedding files."""


@eval_group.command("tfr")
@click.option("--samples", "samples_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSONL of {positive_views, negative_scores} samples.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@click.option("--format", "output_format", type=click.Choice(["table", "json"]),
              default="table", show_default=True)
def eval_tfr(samples_path, out_path, output_format):
    """Per-sample text-fidelity scores and the threshold report."""
    samples = [TfrSample.from_dict(row) for row in fileio.read_jsonl(samples_path)]
    if not samples:
        raise ValidationError(f"no samples in {samples_path}")
    scores = [tfr(sample) for sample in samples]
    report = tfr_report(scores)
    report["per_sample"] = scores
    if out_path:
        fileio.write_json(out_path, report)
    if output_format == "json":
        click.echo(json.dumps(report, sort_keys=True, indent=2))
    else:
        headers = ["mean"] + [f"@{k}" for k in report["tfr_at"]]
        row = [f"{report['mean_tfr']:.4f}"] + [
            f"{v:.4f}" for v in report["tfr_at"].values()]
        click.echo(format_table(headers, [row]))


@eval_group.command("topk")
@click.option("--records", "records_path", type=click.Path(exists=True, dir_okay=False),
              help="JSONL of {description_id, ground_truth, ranked}.")
@click.option("--scored", "scored_path", type=click.Path(exists=True, dir_okay=False),
              help="JSONL of {description_id, ground_truth, result} with "
                   "full score decompositions; required for sweeps.")
@click.option("--ks", default="1,5,10", show_default=True)
@click.option("--lambda-p-sweep", "sweep", default=None,
              help="Comma-separated weights, e.g. 0,0.01,0.1,0.5,1.0.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def eval_topk(records_path, scored_path, ks, sweep, out_path):
    """Top-k retrieval accuracy, optionally swept over the prior weight."""
    k_values = _parse_int_list(ks, "--ks")
    if (records_path is None) == (scored_path is None):
        raise click.UsageError("provide exactly one of --records or --scored")
    if sweep is not None and scored_path is None:
        raise click.UsageError("--lambda-p-sweep requires --scored input")

    results: dict[str, dict[int, float]] = {}
    if records_path:
        records = [TopKRecord.from_dict(row)
                   for row in fileio.read_jsonl(records_path)]
        results["records"] = top_k_accuracy(records, k_values)
    else:
        rows = fileio.read_jsonl(scored_path)
        from .retrieval import RankedResult
        scored = [(str(row["description_id"]), str(row["ground_truth"]),
                   RankedResult.from_dict(row["result"])) for row in rows]
        weights = (_parse_float_list(sweep, "--lambda-p-sweep")
                   if sweep is not None else [None])
        for weight in weights:
            records = []
            for description_id, truth, result in scored:
                scores = (result.scores if weight is None
                          else rerank_with_lambda(result.scores, weight))
                records.append(TopKRecord(
                    description_id=description_id, ground_truth=truth,
                    ranked=tuple(s.asset for s in scores)))
            label = "stored" if weight is None else f"lambda_p={weight:g}"
            results[label] = top_k_accuracy(records, k_values)

    if out_path:
        fileio.write_json(out_path, {
            label: {str(k): acc for k, acc in accuracies.items()}
            for label, accuracies in results.items()})
    click.echo(topk_table(results, k_values))


@eval_group.command("fid")
@click.option("--a", "path_a", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def eval_fid(path_a, path_b, out_path):
    """Fréchet distance between two embedding-set files."""
    value = fid(fileio.load_embedding_set(path_a),
                fileio.load_embedding_set(path_b))
    if out_path:
        fileio.write_json(out_path, {"fid": value})
    click.echo(f"fid: {value:.6f}")


@eval_group.command("kid")
@click.option("--a", "path_a", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--subset-size", type=int, default=None,
              help="Average over seeded subsets instead of the full sets.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def eval_kid(path_a, path_b, subset_size, seed, out_path):
    """Kernel distance (unbiased MMD^2) between two embedding-set files."""
    value = kid(fileio.load_embedding_set(path_a),
                fileio.load_embedding_set(path_b),
                subset_size=subset_size, seed=seed)
    if out_path:
        fileio.write_json(out_path, {"kid": value})
    click.echo(f"kid: {value:.8f}")


@eval_group.command("clipscore")
@click.option("--prompt", required=True)
@click.option("--views", required=True,
              help="Comma-separated view image references.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def eval_clipscore(prompt, views, config_path, out_path):
    """Cosine of the prompt embedding with the mean view embedding."""
    config = _load_app_config(config_path)
    gateway = build_gateway(config)
    view_list = [v for v in views.split(",") if v.strip()]
    value = clip_score(prompt, view_list, gateway)
    if out_path:
        fileio.write_json(out_path, {"clip_score": value})
    click.echo(f"clip_score: {value:.6f}")


@cli.command("prepare-data")
@click.option("--scenes", "scenes_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSONL of raw scene records.")
@click.option("--annotations", "annotations_path",
              type=click.Path(exists=True, dir_okay=False),
              help="JSONL of {id, annotation} records joined by scene id.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--splits", default="0.8,0.1,0.1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--synthesize-prompts", is_flag=True)
@click.option("--rect-tol", type=float, default=1e-6, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def prepare_data(scenes_path, annotations_path, out_dir, splits, seed,
                 synthesize_prompts, rect_tol, config_path):
    """Filter scenes, optionally synthesize prompts, and write the split."""
    fractions = _parse_float_list(splits, "--splits")
    if len(fractions) != 3:
        raise click.BadParameter("--splits expects three fractions")
    scenes = fileio.read_jsonl(scenes_path)
    annotations = None
    if annotations_path:
        annotations = {}
        for row in fileio.read_jsonl(annotations_path):
            key = str(row.get("id") or row.get("scene_id") or "")
            value = row.get("annotation") or row.get("caption") or ""
            if key:
                annotations[key] = value
    config = _load_app_config(config_path)
    gateway = build_gateway(config) if synthesize_prompts else None

    split = prepare_dataset(scenes, annotations, fractions=tuple(fractions),
                            seed=seed, rect_tol=rect_tol, gateway=gateway,
                            templates=config.templates(),
                            pipeline_config=config.pipeline)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_jsonl(out / "split.jsonl", [
        {"split": name, **record.to_dict()} for name, record in split.records()
    ])
    fileio.write_jsonl(out / "skips.jsonl", [
        {"scene_id": scene_id, "reason": reason}
        for scene_id, reason in split.skipped
    ])
    fileio.write_json(out / "summary.json", {
        "sizes": {"train": split.sizes[0], "val": split.sizes[1],
                  "test": split.sizes[2]},
        "skipped": len(split.skipped),
        "seed": seed,
        "provenance": config.provenance(),
    })
    click.echo(f"train/val/test = {split.sizes[0]}/{split.sizes[1]}/"
               f"{split.sizes[2]}, skipped {len(split.skipped)}")


@cli.command("estimate-prior")
@click.option("--counts", "counts_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--inventory", "inventory_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--by-category", is_flag=True,
              help="Counts are per category; members share the mass.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def estimate_prior_cmd(counts_path, inventory_path, alpha, by_category, out_path):
    """Estimate a smoothed prior from frequency counts."""
    if alpha <= 0:
        raise click.BadParameter("--alpha must be > 0 so every asset keeps mass")
    inventory = fileio.load_inventory(inventory_path)
    counts = fileio.read_counts(counts_path)
    if by_category:
        prior = estimate_prior_by_category(counts, inventory, alpha)
    else:
        prior = estimate_prior(counts, inventory, alpha)
    mass = math.fsum(math.exp(v) for v in prior.log_prior.values())
    fileio.write_json(out_path, prior.to_dict())
    click.echo(f"prior over {len(prior.log_prior)} assets, "
               f"total mass {mass:.12f}")



def main(argv: list[str] | None = None) -> int:
    """Entry point mapping exceptions to the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except RoomsmithError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
