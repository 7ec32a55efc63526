#!/usr/bin/env python3

import click

from reswcae import handler
from reswcae.models import ARCHITECTURE_KINDS


def _sigma_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter("expected a comma-separated list of numbers, e.g. 0,25,50")


# Entrypoint for use as a command-line tool
@click.group()
@click.option("--config", "config_path", default=None, help="Path to the configuration file.")
@click.option("--seed", type=int, default=None, help="Seed for initialization, shuffling and noise.")
@click.option("--out", "out_dir", default=None, help="Output directory for all artifacts.")
@click.option(
    "--log-level",
    type=click.Choice(["debug", "info", "warning", "error"], case_sensitive=False),
    default=None,
    help="Logging verbosity.",
)
@click.pass_context
def main(ctx, config_path, seed, out_dir, log_level):
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["overrides"] = {"reswcae": {"seed": seed, "out_dir": out_dir, "log_level": log_level}}


def _run(ctx, command, overrides, **options):
    merged = {section: dict(values) for section, values in ctx.obj["overrides"].items()}
    for section, values in overrides.items():
        merged.setdefault(section, {}).update(values)
    ctx.exit(handler.run(command, config_path=ctx.obj["config_path"], overrides=merged, **options))


def _data_overrides(synthetic, data_path):
    if synthetic is not None and data_path is not None:
        raise click.UsageError("Use either --synthetic or --data, not both.")
    if data_path is not None:
        return {"dataset_path": data_path, "synthetic": 0}
    return {"synthetic": synthetic}


@main.command()
@click.option("--synthetic", type=int, default=None, help="Train on N generated fingerprints.")
@click.option("--data", "data_path", default=None, help="Directory of SOCOFing-format images.")
@click.option("--kind", type=click.Choice(ARCHITECTURE_KINDS), default=None, help="Architecture.")
@click.option("--sigma", type=float, default=None, help="Fixed training noise level (0-255 scale).")
@click.option("--epochs", type=int, default=None, help="Maximum number of epochs.")
@click.option("--batch-size", type=int, default=None, help="Images per mini-batch.")
@click.option("--lr", type=float, default=None, help="Learning rate.")
@click.option("--lam", type=float, default=None, help="Weight of the KL-divergence term.")
@click.option("--optimizer", default=None, help="Optimizer plugin (adam or sgd).")
@click.pass_context
def train(ctx, synthetic, data_path, kind, sigma, epochs, batch_size, lr, lam, optimizer):
    """Train a denoiser and write best.rwae and history.csv."""
    _run(
        ctx,
        "train",
        {
            "data": _data_overrides(synthetic, data_path),
            "model": {"kind": kind},
            "noise": {"sigma": sigma},
            "loss": {"lam": lam},
            "training": {
                "max_epochs": epochs,
                "batch_size": batch_size,
                "learning_rate": lr,
                "optimizer": optimizer,
            },
        },
    )


@main.command()
@click.option("--checkpoint", required=True, help="Checkpoint written by `train`.")
@click.argument("input_path", metavar="INPUT")
@click.option("--clean", "clean_path", default=None, help="Clean reference image or directory.")
@click.option("--sigma", type=float, default=None, help="Degrade the reference with AWGN first.")
@click.pass_context
def denoise(ctx, checkpoint, input_path, clean_path, sigma):
    """Denoise an image or a directory of images."""
    _run(
        ctx,
        "denoise",
        {},
        checkpoint=checkpoint,
        input_path=input_path,
        clean_path=clean_path,
        sigma=sigma,
    )


@main.command()
@click.option("--checkpoint", required=True, help="Checkpoint written by `train`.")
@click.option("--sigmas", callback=_sigma_list, default=None, help="Noise levels, e.g. 0,25,50,100,150,200.")
@click.option("--no-clip", is_flag=True, default=False, help="Do not clip degraded images to [0, 1].")
@click.option("--synthetic", type=int, default=None, help="Evaluate on N generated fingerprints.")
@click.option("--data", "data_path", default=None, help="Directory of SOCOFing-format images.")
@click.pass_context
def evaluate(ctx, checkpoint, sigmas, no_clip, synthetic, data_path):
    """Score a checkpoint on the test split across noise levels and write eval.csv."""
    _run(
        ctx,
        "evaluate",
        {
            "data": _data_overrides(synthetic, data_path),
            "evaluation": {"sigmas": sigmas},
            "noise": {"clip": False if no_clip else None},
        },
        checkpoint=checkpoint,
    )


@main.command()
@click.option("--sigma", type=float, default=None, help="Evaluation noise level.")
@click.option("--synthetic", type=int, default=None, help="Use N generated fingerprints.")
@click.option("--data", "data_path", default=None, help="Directory of SOCOFing-format images.")
@click.option("--epochs", type=int, default=None, help="Maximum number of epochs per model.")
@click.pass_context
def compare(ctx, sigma, synthetic, data_path, epochs):
    """Train all four architectures on one split and write compare.csv."""
    _run(
        ctx,
        "compare",
        {"data": _data_overrides(synthetic, data_path), "training": {"max_epochs": epochs}},
        sigma=sigma,
    )


@main.command(name="synth-data")
@click.option("--count", type=int, required=True, help="Number of images to generate.")
@click.pass_context
def synth_data(ctx, count):
    """Write synthetic fingerprints as PGM files into <out>/synthetic."""
    _run(ctx, "synth-data", {}, count=count)


if __name__ == "__main__":
    main()
