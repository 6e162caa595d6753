"""The tlt command line

    tlt <command> --config <path> [--seed N] [--out DIR] [--override key=value ...]

Every command writes metrics.csv (key,value) and run.yml into its output
directory. While a command runs the directory holds an .incomplete marker,
removed only when the command succeeds.
"""

import logging
import os
import sys
import time
import typing

import click
import numpy as np
import pandas as pd

from tlt import consts, util
from tlt.configuration.appconfig import RunConfig
from tlt.errors import (
    EXIT_RUNTIME,
    EXIT_USAGE,
    PreconditionError,
    TltConfigurationError,
    TltUsageError,
    TrainingDivergedError,
    catchall_error_handler,
    cli_error,
)
from tlt.forge.datasets import build_dataset
from tlt.forge.manifest import read_manifest, write_manifest
from tlt.metrics.ate import estimate_ate_interventional, estimate_ate_observational
from tlt.metrics.latents import centroid_permutation_test, export_latents, write_latents
from tlt.metrics.refutation import refutation_report
from tlt.metrics.saliency import export_saliency, grad_cam, saliency_alignment
from tlt.metrics.tfr import tfr_score
from tlt.model.checkpoint import load_checkpoint
from tlt.model.network import TltNetwork
from tlt.suite import experiment_suite, suite_metrics
from tlt.training.trainer import fit, write_history


logger = logging.getLogger(__name__)


class RunContext:
    """A resolved configuration plus the output directory of one command"""

    def __init__(self, command: str, config: RunConfig):
        self.command = command
        self.config = config
        self.out = config.output_dir(command)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def manifest(self):
        return read_manifest(self.config.paths.manifest)

    def model(self):
        return load_checkpoint(self.config.paths.checkpoint)


def resolve_config(command: str, config: str, seed, out, overrides) -> RunConfig:
    """Load the config file, apply overrides then flags, and check the inputs the command reads"""
    if not config:
        raise TltUsageError(
            f"{command} needs --config or the TLT_CONFIG environment variable"
        )
    runconfig = RunConfig.fromyaml(config, overrides)
    if seed is not None:
        runconfig = runconfig.replace(seed=seed)
    if out is not None:
        runconfig = runconfig.with_paths(out=out)
    runconfig = runconfig.seeded()
    level = logging.getLevelName(runconfig.loglevel.upper())
    logging.getLogger("tlt").setLevel(level)
    runconfig.validate_inputs(command)
    if command == "gen-data" and needs_surrogate(runconfig):
        surrogate = runconfig.paths.checkpoint
        if not surrogate or not os.path.exists(surrogate):
            raise TltConfigurationError(
                "gen-data with an fgsm treatment requires paths.checkpoint to a surrogate model"
            )
    return runconfig


def needs_surrogate(runconfig: RunConfig) -> bool:
    return any(spec.kind == "fgsm" for spec in runconfig.data.treatments)


def write_metrics(path: str, metrics: typing.Dict[str, typing.Any]):
    """Write key,value rows, floats rounded to 6 significant digits"""
    values = [
        util.fmt6(v) if isinstance(v, (float, np.floating)) else v
        for v in metrics.values()
    ]
    table = pd.DataFrame(
        {"key": list(metrics.keys()), "value": pd.Series(values, dtype=object)}
    )
    table.to_csv(path, index=False, na_rep="nan")


def write_run_summary(
    path: str, ctx: RunContext, digest: str, wall_time: float, metrics: typing.Dict
):
    summary = {
        "run_id": f"{ctx.command}-{digest[:12]}",
        "command": ctx.command,
        "wall_time": round(wall_time, 3),
        "config_digest": digest,
        "metrics": util.rounded(metrics),
    }
    with open(path, "w") as fp:
        fp.write(util.canonical_yaml(summary))


CommandBody = typing.Callable[[RunContext], typing.Dict]


def execute(command: str, body: CommandBody, config, seed, out, overrides) -> int:
    """Resolve the config, run a command body, and write its records

    Configuration problems are raised before anything is written.
    """
    ctx = RunContext(command, resolve_config(command, config, seed, out, overrides))
    os.makedirs(ctx.out, exist_ok=True)
    marker = ctx.path(consts.INCOMPLETE_MARKER)
    with open(marker, "w") as fp:
        fp.write(f"{command}\n")

    started = time.monotonic()
    metrics = body(ctx)
    digest = ctx.config.digest()
    write_metrics(ctx.path("metrics.csv"), metrics)
    wall_time = time.monotonic() - started
    write_run_summary(ctx.path("run.yml"), ctx, digest, wall_time, metrics)
    os.remove(marker)
    logger.info(f"{command} finished, outputs in {ctx.out}")
    return 0


COMMAND_OPTIONS = [
    click.option(
        "--config",
        "config",
        envvar="TLT_CONFIG",
        default="",
        help="Run configuration YAML file",
    ),
    click.option(
        "--seed", type=int, default=None, help="Master seed, overriding the config"
    ),
    click.option("--out", default=None, help="Output directory, overriding the config"),
    click.option(
        "--override",
        "overrides",
        multiple=True,
        help="Dotted key=value config override",
    ),
]


def tlt_command(name: str):
    """Register a command body under the group with the shared options"""

    def decorator(body):
        def command(config, seed, out, overrides):
            return execute(name, body, config, seed, out, overrides)

        for option in reversed(COMMAND_OPTIONS):
            command = option(command)
        cli.command(name, help=body.__doc__)(command)
        return body

    return decorator


@click.group()
def cli():
    """Treatment learning causal transformer"""


@tlt_command("gen-data")
def gen_data(ctx: RunContext) -> typing.Dict:
    """Generate a dataset manifest"""
    data = ctx.config.data
    surrogate = ctx.model() if needs_surrogate(ctx.config) else None
    manifest = build_dataset(data, ctx.config.seed, surrogate=surrogate)
    path = ctx.config.paths.manifest or ctx.path("manifest.jsonl")
    write_manifest(manifest, path, storage=data.storage)
    metrics = {
        "n": len(manifest),
        "treated_fraction": manifest.treated_fraction,
        "flip_count": manifest.flip_count,
    }
    if manifest.planted_ate is not None:
        metrics["planted_ate"] = manifest.planted_ate
    return metrics


@tlt_command("train")
def train(ctx: RunContext) -> typing.Dict:
    """Train a model on a dataset manifest"""
    dataset = ctx.manifest()
    model_config = ctx.config.model.for_input(
        dataset.mode, dataset.sample_shape, dataset.n_classes
    )
    model = TltNetwork(model_config)
    path = ctx.config.paths.checkpoint or ctx.path("checkpoint.npz")
    try:
        checkpoint, history = fit(model, dataset, ctx.config.train)
    except TrainingDivergedError as exc:
        retained = last_good_path(path)
        exc.checkpoint.save(retained)
        logger.error(f"Last good parameters saved to {retained}")
        raise
    checkpoint.save(path)
    write_history(history, ctx.path("history.csv"))
    metrics = {"parameters": model.parameter_count(), "epochs": len(history)}
    if len(history):
        final = history.iloc[-1]
        metrics.update(
            {
                f"final_{column}": float(final[column])
                for column in consts.HISTORY_COLUMNS[1:]
            }
        )
    return metrics


def last_good_path(checkpoint_path: str) -> str:
    """checkpoint.npz -> checkpoint.last_good.npz"""
    stem, ext = os.path.splitext(checkpoint_path)
    return f"{stem}.last_good{ext or '.npz'}"


@tlt_command("eval")
def evaluate(ctx: RunContext) -> typing.Dict:
    """Classification and treatment-inference accuracy"""
    dataset = ctx.manifest()
    model = ctx.model()
    batch_size = ctx.config.metrics.batch_size
    correct = model.predict(dataset.x, batch_size) == dataset.y
    t_prob = model.treatment_probabilities(dataset.x, batch_size)
    t_hat = (t_prob >= 0.5).astype(np.int64)
    treated = dataset.t_clean == 1
    metrics = {
        "n": len(dataset),
        "acc": float(correct.mean()),
        "t_acc": float(np.mean(t_hat == dataset.t_clean)),
    }
    if treated.any():
        metrics["acc_treated"] = float(correct[treated].mean())
    if (~treated).any():
        metrics["acc_untreated"] = float(correct[~treated].mean())
    return metrics


@tlt_command("ate")
def ate(ctx: RunContext) -> typing.Dict:
    """Observational and interventional ATE"""
    dataset = ctx.manifest()
    model = ctx.model()
    settings = ctx.config.metrics
    seed = ctx.config.seed
    observational = estimate_ate_observational(model, dataset, settings.bootstrap, seed)
    metrics = observational.metrics("obs_")
    interventional = estimate_ate_interventional(
        model,
        dataset,
        mc_samples=settings.mc_samples,
        seed=seed,
        functional=settings.functional,
        bootstrap=settings.bootstrap,
        batch_size=settings.batch_size,
    )
    metrics.update(interventional.metrics("int_"))
    if dataset.planted_ate is not None:
        metrics["planted_ate"] = dataset.planted_ate
    return metrics


@tlt_command("refute")
def refute(ctx: RunContext) -> typing.Dict:
    """Common-cause, placebo and subset refutations of the observational ATE"""
    settings = ctx.config.metrics
    report = refutation_report(
        ctx.model(),
        ctx.manifest(),
        seed=ctx.config.seed,
        trials=settings.trials,
        subset_fraction=settings.subset_fraction,
        bootstrap=settings.bootstrap,
        tol_floor=settings.tol_floor,
        tol_placebo=settings.tol_placebo,
    )
    return report.metrics()


@tlt_command("tfr")
def tfr(ctx: RunContext) -> typing.Dict:
    """Treatment-feature ratios of a layer under the first configured treatment"""
    if not ctx.config.data.treatments:
        raise TltConfigurationError("tfr needs at least one entry in data.treatments")
    spec = ctx.config.data.treatments[0]
    report = tfr_score(
        ctx.model(),
        ctx.manifest(),
        ctx.config.metrics.layer,
        spec,
        seed=ctx.config.seed,
    )
    table = pd.DataFrame(
        {"feature": np.arange(report.scores.size), "score": report.scores}
    )
    table.to_csv(ctx.path("tfr.csv"), index=False, float_format="%.6g", na_rep="nan")
    return report.metrics()


@tlt_command("saliency")
def saliency(ctx: RunContext) -> typing.Dict:
    """Grad-CAM maps for the true class and their alignment with object masks"""
    dataset = ctx.manifest()
    model = ctx.model()
    layer = ctx.config.metrics.layer
    masked = [record for record in dataset.records if record.mask is not None]
    records = masked[: ctx.config.metrics.saliency_count]
    if not records:
        raise PreconditionError("Saliency needs records with object masks")
    directory = ctx.path("saliency")
    alignments = {}
    for record in records:
        cam = grad_cam(model, record.x, record.y, layer)
        export_saliency(directory, record.id, cam)
        alignments[record.id] = saliency_alignment(cam, record.mask)
    metrics = {
        "maps": len(records),
        "alignment_mean": float(np.mean(list(alignments.values()))),
    }
    metrics.update({f"alignment.{rid}": value for rid, value in alignments.items()})
    return metrics


@tlt_command("export-latents")
def latents(ctx: RunContext) -> typing.Dict:
    """Evaluation posterior means per record, with a treatment-separation test"""
    dataset = ctx.manifest()
    table = export_latents(ctx.model(), dataset, ctx.config.metrics.batch_size)
    write_latents(table, ctx.path("latents.csv"))
    mu = table[[c for c in table.columns if c.startswith("mu_")]].to_numpy()
    metrics = {"n": len(table), "latent_dim": mu.shape[1]}
    if 0 < int(dataset.t_clean.sum()) < len(dataset):
        separation = centroid_permutation_test(
            mu, dataset.t_clean, ctx.config.metrics.n_perm, ctx.config.seed
        )
        metrics.update(separation)
    return metrics


@tlt_command("suite")
def suite(ctx: RunContext) -> typing.Dict:
    """Accuracy and ATE per treatment and model variant"""
    return suite_metrics(experiment_suite(ctx.config, ctx.out))


def run(argv: typing.List[str]) -> int:
    """Run the command line and return the exit code"""
    try:
        result = cli.main(args=list(argv), prog_name="tlt", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        return cli_error(EXIT_USAGE, "usage", exc.format_message())
    except click.exceptions.Abort:
        return cli_error(EXIT_RUNTIME, "aborted", "interrupted")
    except click.exceptions.ClickException as exc:
        return cli_error(exc.exit_code, "usage", exc.format_message())
    except Exception as exc:
        return catchall_error_handler(exc)
    return result if isinstance(result, int) else 0


def main():
    logging.basicConfig(format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    sys.exit(run(sys.argv[1:]))
