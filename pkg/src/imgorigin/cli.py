"""Command-line interface.

Subcommands cover the full pipeline: generate data (``synth-data``),
train decoders (``train``), estimate the belonging-loss distribution
(``belonging-dist``), judge a single image (``attribute``), run a full
labeled scenario (``run-scenario``), merge scenario outputs into a table
(``report``) and dump tensors as viewable PGM/PPM (``export-pgm``).

Exit codes: 0 on success, 1 on usage errors, 2 when a required artifact
(model, dataset, distribution, file) is missing.

Everything a command writes, except wall-clock timing files, is a pure
function of its arguments; re-running with the same seeds reproduces
output files byte for byte regardless of ``--workers``.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .attribution import (
    attribute as attribute_op,
    distribution_path,
    ensure_distribution,
    load_distribution,
)
from .datasets import (
    GENERATORS,
    DatasetSpec,
    load_dataset,
    make_overlapping,
    save_dataset,
    synth_dataset,
)
from .exceptions import ImgOriginError, MissingArtifactError
from .inversion import InversionConfig, config_hash, reverse_engineer, exhaustive_invert
from .metrics import METRICS
from .models import (
    ARCHITECTURES,
    GridModel,
    load_checkpoint,
    save_checkpoint,
    train_decoder,
)
from .scenarios import (
    SCENARIOS,
    FilterParams,
    Scenario,
    emit_report,
    load_scenario_reports,
    run_scenario,
)
from .tensorio import Rng, read_tensor, write_tensor


@click.group()
@click.version_option(__version__)
def cli():
    """Origin attribution for images of small white-box generative models."""


def _parse_shape(text: str):
    try:
        parts = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"shape must look like 1x8x8, got {text!r}")
    if len(parts) != 3 or min(parts) < 1:
        raise click.BadParameter(f"shape must be CxHxW with positive dims, got {text!r}")
    return parts


def _load_model_arg(path: str):
    if path.lower() == "none":
        return None
    return load_checkpoint(path)


def inversion_options(f):
    f = click.option("--restarts", default=8, show_default=True, help="Search restarts per class.")(f)
    f = click.option("--steps", default=400, show_default=True, help="Optimizer steps per restart.")(f)
    f = click.option("--lr", default=0.05, show_default=True, help="Optimizer learning rate.")(f)
    f = click.option("--early-stop", default=1e-7, show_default=True, help="Stop a restart below this loss.")(f)
    f = click.option("--seed", default=0, show_default=True, help="Base seed.")(f)
    return f


def _inversion_config(restarts, steps, lr, early_stop, seed) -> InversionConfig:
    return InversionConfig(
        restarts=restarts,
        steps_per_restart=steps,
        learning_rate=lr,
        early_stop_loss=early_stop,
        seed=seed,
    )


@cli.command("synth-data")
@click.option("--generator", type=click.Choice(GENERATORS), default="gaussian-blobs", show_default=True)
@click.option("--count", default=256, show_default=True)
@click.option("--shape", default="1x8x8", show_default=True, help="Image shape CxHxW.")
@click.option("--classes", default=0, show_default=True, help="Class count; 0 for unconditional.")
@click.option("--seed", default=0, show_default=True)
@click.option("--overlap-with", type=click.Path(), default=None,
              help="Base dataset directory to share images with.")
@click.option("--overlap-fraction", default=0.0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def synth_data(generator, count, shape, classes, seed, overlap_with, overlap_fraction, out):
    """Generate a synthetic dataset into a directory."""
    spec = DatasetSpec(
        generator=generator,
        count=count,
        image_shape=_parse_shape(shape),
        num_classes=classes or None,
        seed=seed,
    )
    if overlap_with is not None:
        base = load_dataset(overlap_with)
        ds = make_overlapping(base, overlap_fraction, seed)
    else:
        ds = synth_dataset(spec)
    save_dataset(ds, out)
    click.echo(f"{ds.dataset_id} -> {out} ({ds.count} images)")


@cli.command("train")
@click.option("--arch", type=click.Choice(ARCHITECTURES), required=True)
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@click.option("--d-z", default=8, show_default=True)
@click.option("--hidden", default="32,64", show_default=True, help="Hidden sizes for mlp.")
@click.option("--conditional/--unconditional", default=False, show_default=True,
              help="Use dataset labels for class conditioning.")
@click.option("--squash/--no-squash", default=True, show_default=True,
              help="Sigmoid on the linear decoder output.")
@click.option("--epochs", default=200, show_default=True)
@click.option("--lr", default=5e-3, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--model-id", default=None)
@click.option("--out", required=True, type=click.Path())
def train(arch, dataset_dir, d_z, hidden, conditional, squash, epochs, lr,
          batch_size, seed, model_id, out):
    """Train a decoder on a dataset and save its checkpoint."""
    ds = load_dataset(dataset_dir)
    num_classes = None
    labels = None
    if conditional:
        if ds.labels is None:
            raise click.UsageError("--conditional requires a labeled dataset")
        num_classes = ds.meta["num_classes"]
        labels = ds.labels
    try:
        hidden_sizes = tuple(int(h) for h in hidden.split(","))
    except ValueError:
        raise click.BadParameter(f"--hidden must look like 32,64, got {hidden!r}")
    model = train_decoder(
        arch, ds.images, labels,
        d_z=d_z, hidden_sizes=hidden_sizes, num_classes=num_classes,
        squash=squash, epochs=epochs, learning_rate=lr, batch_size=batch_size,
        rng=Rng(seed), dataset_id=ds.dataset_id, model_id=model_id,
    )
    save_checkpoint(model, out)
    meta = model.training_meta
    if "final_loss" in meta:
        click.echo(
            f"{model.model_id} -> {out} (train mse {meta['initial_loss']:.4g} "
            f"-> {meta['final_loss']:.4g})"
        )
    else:
        click.echo(f"{model.model_id} -> {out} ({model.size} codebook entries)")


@cli.command("belonging-dist")
@click.option("--model", "model_dir", required=True, type=click.Path())
@click.option("--reference", "reference_dir", default="none", show_default=True,
              help="Reference checkpoint directory, or 'none'.")
@click.option("--metric", type=click.Choice(METRICS), default="mse", show_default=True)
@click.option("--n", default=100, show_default=True)
@click.option("--alpha", default=0.05, show_default=True)
@inversion_options
@click.option("--cache-dir", required=True, type=click.Path())
@click.option("--workers", default=1, show_default=True)
@click.option("--force", is_flag=True, help="Re-estimate even if cached.")
def belonging_dist(model_dir, reference_dir, metric, n, alpha, restarts, steps,
                   lr, early_stop, seed, cache_dir, workers, force):
    """Estimate (or load) the belonging-loss distribution for a model."""
    model = load_checkpoint(model_dir)
    reference = _load_model_arg(reference_dir)
    cfg = _inversion_config(restarts, steps, lr, early_stop, seed)
    dist = ensure_distribution(
        model, reference, metric, cfg,
        n=n, alpha=alpha, workers=workers, cache_dir=cache_dir, force=force,
    )
    path = distribution_path(
        cache_dir, dist.model_id, dist.reference_id, metric, dist.inversion_config_hash
    )
    click.echo(json.dumps(dist.to_json_dict(), indent=2, sort_keys=True))
    click.echo(f"cached at {path}", err=True)


def _read_image_arg(path: str, index: int | None):
    arr = read_tensor(path)
    if arr.ndim == 4:
        if index is None:
            raise click.UsageError(
                f"{path} holds {arr.shape[0]} images; pick one with --index"
            )
        if not 0 <= index < arr.shape[0]:
            raise click.UsageError(
                f"--index {index} out of range for {arr.shape[0]} images"
            )
        return arr[index].astype(np.float64)
    if arr.ndim != 3:
        raise click.UsageError(f"{path} has rank {arr.ndim}, expected an image (C, H, W)")
    return arr.astype(np.float64)


@cli.command("attribute")
@click.argument("image", type=click.Path())
@click.option("--index", default=None, type=int, help="Image index if the tensor is a stack.")
@click.option("--model", "model_dir", required=True, type=click.Path())
@click.option("--reference", "reference_dir", default="none", show_default=True)
@click.option("--metric", type=click.Choice(METRICS), default="mse", show_default=True)
@inversion_options
@click.option("--cache-dir", required=True, type=click.Path())
@click.option("--out", default=None, type=click.Path(), help="Write the verdict JSON here too.")
@click.option("--inversion-out", default=None, type=click.Path(),
              help="Write the full inversion results (includes wall times).")
def attribute_cmd(image, index, model_dir, reference_dir, metric, restarts, steps,
                  lr, early_stop, seed, cache_dir, out, inversion_out):
    """Decide whether IMAGE belongs to the model's output space."""
    model = load_checkpoint(model_dir)
    reference = _load_model_arg(reference_dir)
    cfg = _inversion_config(restarts, steps, lr, early_stop, seed)
    ref_id = reference.model_id if reference is not None else "none"
    try:
        dist = load_distribution(
            cache_dir, model.model_id, ref_id, metric, config_hash(cfg)
        )
    except MissingArtifactError as exc:
        raise MissingArtifactError(
            f"{exc}; estimate it first with: imgorigin belonging-dist "
            f"--model {model_dir} --reference {reference_dir} --metric {metric} "
            f"--cache-dir {cache_dir}"
        ) from exc
    x = _read_image_arg(image, index)
    verdict = attribute_op(
        model, x, reference, dist, metric, cfg,
        examined_id=Path(image).stem if index is None else f"{Path(image).stem}[{index}]",
    )
    text = json.dumps(verdict.to_json_dict(), indent=2, sort_keys=True)
    click.echo(text)
    if out is not None:
        Path(out).write_text(text + "\n")
    if inversion_out is not None:
        payload = {"target": reverse_or_exhaustive(model, x, metric, cfg).to_json_dict()}
        if reference is not None:
            payload["reference"] = reverse_or_exhaustive(
                reference, x, metric, cfg
            ).to_json_dict()
        Path(inversion_out).write_text(json.dumps(payload, indent=2) + "\n")


def reverse_or_exhaustive(model, x, metric, cfg):
    if isinstance(model, GridModel):
        return exhaustive_invert(model, x, metric)
    return reverse_engineer(model, x, metric, cfg)


@cli.command("run-scenario")
@click.argument("name", type=click.Choice(SCENARIOS))
@click.option("--model", "model_dir", required=True, type=click.Path())
@click.option("--reference", "reference_dir", default="none", show_default=True)
@click.option("--contrast-dataset", default=None, type=click.Path())
@click.option("--contrast-model", default=None, type=click.Path())
@click.option("--n-belonging", default=100, show_default=True)
@click.option("--n-nonbelonging", default=100, show_default=True)
@click.option("--n-distribution", default=100, show_default=True)
@click.option("--metric", type=click.Choice(METRICS), default="mse", show_default=True)
@click.option("--alpha", default=0.05, show_default=True)
@inversion_options
@click.option("--dist-seed", default=0, show_default=True,
              help="Seed for the belonging-distribution estimate.")
@click.option("--filter-gain", default=1.08, show_default=True)
@click.option("--filter-bias", default=0.02, show_default=True)
@click.option("--filter-gamma", default=1.15, show_default=True)
@click.option("--cache-dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--workers", default=1, show_default=True)
def run_scenario_cmd(name, model_dir, reference_dir, contrast_dataset, contrast_model,
                     n_belonging, n_nonbelonging, n_distribution, metric, alpha,
                     restarts, steps, lr, early_stop, seed, dist_seed,
                     filter_gain, filter_bias, filter_gamma, cache_dir, out, workers):
    """Run a labeled scenario and write report, verdicts and timing files."""
    s = Scenario(
        name=name,
        target_model=load_checkpoint(model_dir),
        reference_model=_load_model_arg(reference_dir),
        contrast_dataset=load_dataset(contrast_dataset) if contrast_dataset else None,
        contrast_model=load_checkpoint(contrast_model) if contrast_model else None,
        n_belonging=n_belonging,
        n_nonbelonging=n_nonbelonging,
        n_distribution=n_distribution,
        metric=metric,
        alpha=alpha,
        inversion=_inversion_config(restarts, steps, lr, early_stop, seed),
        seed=seed,
        distribution_seed=dist_seed,
        filter_params=FilterParams(filter_gain, filter_bias, filter_gamma),
    )
    result = run_scenario(s, cache_dir=cache_dir, out_dir=out, workers=workers)
    click.echo(emit_report(result.reports, "csv"), nl=False)


@cli.command("report")
@click.argument("scenario_dirs", nargs=-1, required=True, type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
@click.option("--out", default=None, type=click.Path())
def report_cmd(scenario_dirs, fmt, out):
    """Merge scenario output directories into one table."""
    reports = []
    for d in scenario_dirs:
        reports.extend(load_scenario_reports(d))
    click.echo(emit_report(reports, fmt, out), nl=False)


@cli.command("export-pgm")
@click.argument("tensor", type=click.Path())
@click.option("--index", default=None, type=int, help="Image index if the tensor is a stack.")
@click.option("--out", required=True, type=click.Path())
def export_pgm(tensor, index, out):
    """Export an image tensor as binary PGM (1 channel) or PPM (3 channels)."""
    img = _read_image_arg(tensor, index)
    c, h, w = img.shape
    if c not in (1, 3):
        raise click.UsageError(f"can only export 1- or 3-channel images, got {c}")
    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(out, "wb") as fh:
        if c == 1:
            fh.write(f"P5\n{w} {h}\n255\n".encode())
            fh.write(pixels[0].tobytes())
        else:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(np.transpose(pixels, (1, 2, 0)).tobytes())
    click.echo(f"{tensor} -> {out}")


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except MissingArtifactError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except ImgOriginError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
