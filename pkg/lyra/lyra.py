from contextlib import contextmanager
from importlib.resources import files
from pathlib import Path
from typing import NamedTuple

import click
import numpy as np
from rich.console import Console
from schema import And  # type: ignore[import-untyped]
from schema import Optional  # type: ignore[import-untyped]
from schema import Or  # type: ignore[import-untyped]
from schema import Schema  # type: ignore[import-untyped]
from schema import SchemaError  # type: ignore[import-untyped]
from schema import Use  # type: ignore[import-untyped]
from yaml import dump as write_yaml
from yaml import safe_load as read_yaml
from yaml import YAMLError

import itsfuzz as itf
from itsfuzz.errors import ConfigError
from itsfuzz.lyapcheck import LyapunovEvaluator
from itsfuzz.lyapcheck import sample_report
from itsfuzz.lyapcheck import verify as verify_suites
from itsfuzz.read import model_from_config
from itsfuzz.read import read_certificate
from itsfuzz.read import read_config
from itsfuzz.read import read_gains
from itsfuzz.sdesim import final_norms
from itsfuzz.sdesim import monte_carlo
from itsfuzz.sdesim import survival_fraction
from itsfuzz.stability import as_line_integral
from itsfuzz.stability import region_counts
from itsfuzz.tsmodel import beta_bounds
from itsfuzz.types import QuadraticCertificate
from itsfuzz.types import SimConfig
from itsfuzz.types import SolverOptions
from itsfuzz.types import SweepParameter
from itsfuzz.types import SynthesisOptions
from itsfuzz.types import SynthesisProblem
from itsfuzz.types import SynthesisStatus
from itsfuzz.types import TSModel
from lyra.write import write_certificate
from lyra.write import write_ensemble
from lyra.write import write_gains
from lyra.write import write_infeasibility
from lyra.write import write_region
from lyra.write import write_samples
from lyra.write import write_synthesis
from lyra.write import write_trace

LOGO = """
  ,--.
  |  |,--. ,--.,--.--. ,--,--.
  |  | \\  '  / |  .--'' ,-.  |
  |  |  \\   '  |  |   \\ '-'  |
  `--'.-'  /   `--'    `--`--'
      `---'
"""

# exit code of well formed negative results: infeasible, not converged,
# failed verification.
NEGATIVE = 2

BUNDLED_CONFIGS = ("example1", "example2")
# configuration used by each command when `--config` is not given
DEFAULT_CONFIGS = {
    "analyze": "example1",
    "sweep": "example1",
    "verify": "example1",
    "synthesize": "example2",
    "simulate": "example2",
}


def init_console(with_logo) -> Console:
    """initializes console, optionally with a logo"""
    console = Console(width=80, highlight=False)
    if with_logo:
        console.print("[white]" + LOGO, highlight=False)
    return console


def bundled_config(name: str) -> str:
    """The text of a bundled run configuration."""
    if name not in BUNDLED_CONFIGS:
        raise ValueError(f"No bundled configuration named `{name}`.")
    return files("lyra").joinpath("configs", f"{name}.yml").read_text()


def fmt_filename(filename: str | Path) -> str:
    """Rich formatting for filenames."""
    return f"'[b]{filename}[/]'"


def unused_path(file: Path, num: int = 1) -> Path:
    """Return an unused path with same stem prefix as `file` and incremental suffix,
    e.g. `path.yml`, `path-1.yml`, `path-2.yml`."""
    if not file.exists():
        return file
    parts = file.stem.split("-")
    *tail, head = parts
    stem = "-".join(tail) if head.isdigit() else "-".join(parts)
    return unused_path(file.parent / f"{stem}-{num}{file.suffix}", num=num + 1)


class BadConfig(click.ClickException):
    """A configuration that can not be read or does not describe a valid run."""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(f"Bad configuration. {message}")


def _positive(name: str):
    return And(Use(float), lambda v: v > 0, error=f"`{name}` must be greater than zero.")


def _count(name: str, minimum: int = 1):
    return And(
        lambda v: isinstance(v, int) and v >= minimum,
        error=f"`{name}` must be an integer not smaller than {minimum}.",
    )


model_schema = Schema(
    {
        "memberships": And(list, len, error="`memberships` must be a non-empty list."),
        "rules": And(
            [dict], len, error="`rules` must be a non-empty list of rule mappings."
        ),
        Optional("box"): _positive("box"),
    },
    ignore_extra_keys=True,
)

sweep_parameter_schema = Schema(
    {
        "matrix": Or("A", "B", "C", error="`matrix` must be one of A, B, C."),
        "rule": _count("rule"),
        "row": _count("row"),
        "col": _count("col"),
        "start": Use(float, error="`start` must be a number."),
        "stop": Use(float, error="`stop` must be a number."),
        "step": _positive("step"),
    },
    ignore_extra_keys=True,
)

config_schema = Schema(
    {
        "model": Or(
            And(str, len),
            dict,
            error="`model` must be a model section or a path to a model file.",
        ),
        Optional("seed"): _count("seed", minimum=0),
        Optional("analysis"): {
            Optional("method"): Or(
                *itf.stability.METHODS, error="`method` must be theorem1 or corollary1."
            ),
            Optional("envelope"): Or(
                "uniform", "entrywise", error="`envelope` must be uniform or entrywise."
            ),
            Optional("beta"): And(
                Use(float), lambda b: b >= 0, error="`beta` must be non-negative."
            ),
            Optional("samples"): _count("samples"),
        },
        Optional("sweep"): And(
            {str: sweep_parameter_schema},
            lambda d: len(d) == 2,
            error="`sweep` must name exactly two parameters.",
        ),
        Optional("synthesis"): {
            Optional("eps_ccl"): _positive("eps_ccl"),
            Optional("n_max"): _count("n_max", minimum=0),
            Optional("omega_tol"): _positive("omega_tol"),
            Optional("beta"): And(
                Use(float), lambda b: b >= 0, error="`beta` must be non-negative."
            ),
        },
        Optional("simulation"): {
            Optional("horizon"): _positive("horizon"),
            Optional("steps"): _count("steps"),
            Optional("coarsening"): _count("coarsening"),
            Optional("paths"): And(
                [_count("paths")], len, error="`paths` must be a list of positive integers."
            ),
            "initial_states": And(
                [[Use(float)]], len, error="`initial_states` must be a list of states."
            ),
            Optional("blowup"): _positive("blowup"),
        },
        Optional("solver"): {
            Optional("eps"): _positive("eps"),
            Optional("tol_feas"): _positive("tol_feas"),
            Optional("tol_gap"): _positive("tol_gap"),
            Optional("max_iter"): _count("max_iter"),
        },
    },
    ignore_extra_keys=True,
)


class RunConfig(NamedTuple):
    """A validated configuration with its model built."""

    name: str
    model: TSModel
    sections: dict
    seed: int


def parse_config(text: str, name: str, root: Path = Path(".")) -> RunConfig:
    """Parses, validates and builds a run configuration. Relative model paths
    are resolved against `root`."""
    try:
        document = read_yaml(text)
    except YAMLError as error:
        mark = getattr(error, "problem_mark", None)
        where = "" if mark is None else f" (line {mark.line + 1}, column {mark.column + 1})"
        raise BadConfig(f"Cannot parse YAML{where}.")
    try:
        sections = config_schema.validate(document)
    except SchemaError as error:
        raise BadConfig(f"Wrong inputs in config file: \n - {error}")
    section = sections["model"]
    if isinstance(section, str):
        try:
            document = read_config(root / section)
        except (OSError, YAMLError) as error:
            raise BadConfig(f"Cannot read model file: {error}")
        section = document.get("model", document) if isinstance(document, dict) else None
    try:
        model = model_from_config(model_schema.validate(section))
    except SchemaError as error:
        raise BadConfig(f"Wrong inputs in model section: \n - {error}")
    except ConfigError as error:
        raise BadConfig(f"Wrong model, at {error}")
    return RunConfig(name, model, sections, sections.get("seed", 0))


def validate_config(
    ctx: click.Context, param: click.Option, config_path: Path | None
) -> RunConfig:
    """Loads the user configuration, or the command's bundled one."""
    if config_path is None:
        name = DEFAULT_CONFIGS[ctx.info_name]
        return parse_config(bundled_config(name), name)
    return parse_config(config_path.read_text(), str(config_path), config_path.parent)


def solver_options(config: RunConfig, eps: float | None, tol_feas: float | None) -> SolverOptions:
    options = SolverOptions(**config.sections.get("solver", {}))
    if eps is not None:
        options = options._replace(eps=eps)
    if tol_feas is not None:
        options = options._replace(tol_feas=tol_feas)
    return options


@contextmanager
def library_errors():
    """Turns failures raised by the library into clean command errors."""
    try:
        yield
    except (ValueError, ArithmeticError, RuntimeError) as error:
        raise click.ClickException(f"{type(error).__name__}: {error}")


def common_options(command):
    """Options shared by every run command."""
    options = [
        click.option(
            "-c",
            "--config",
            "config",
            type=click.Path(exists=True, dir_okay=False, path_type=Path),
            callback=validate_config,
            help="Path to a YAML run configuration. "
            "If not provided, a bundled example configuration is used. "
            "You can get a copy of the bundled configurations using `lyra drop`.",
        ),
        click.option(
            "-o",
            "--out",
            "out",
            type=click.Path(file_okay=False, path_type=Path),
            default=Path("."),
            help="Directory where results are saved, created if missing.",
        ),
        click.option(
            "--seed",
            "seed",
            type=click.IntRange(min=0),
            default=None,
            help="Overrides the configuration seed.",
        ),
        click.option(
            "--eps",
            "eps",
            type=click.FloatRange(min=0, min_open=True),
            default=None,
            help="Overrides the strictness margin of the LMI solver.",
        ),
        click.option(
            "--tol-feas",
            "tol_feas",
            type=click.FloatRange(min=0, min_open=True),
            default=None,
            help="Overrides the feasibility tolerance of the LMI solver.",
        ),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _prepare(ctx: click.Context, config: RunConfig, out: Path, command: str) -> Console:
    console = init_console(with_logo=not ctx.obj["quiet"])
    console.print(f"Welcome, this is [bold]lyra.{command}[/].\n")
    console.log(f"Loaded {fmt_filename(config.name)} configuration.")
    console.log(
        f"Model has [b]{config.model.s}[/] rules over [b]{config.model.n}[/] states"
        f"{'' if config.model.p == 0 else f' and {config.model.p} input(s)'}."
    )
    out.mkdir(parents=True, exist_ok=True)
    return console


def _beta(console: Console, model: TSModel, section: dict) -> float:
    if (beta := section.get("beta")) is not None:
        console.log(f"Using configured bound beta = [b]{beta}[/].")
        return beta
    bounds = beta_bounds(model, envelope=section.get("envelope", "uniform"))
    console.log(
        f"Derivative bounds up to [b]{bounds.entries.max():.4f}[/], beta = [b]{bounds.beta:.4f}[/]."
    )
    return bounds.beta


def _sampling_summary(console: Console, table):
    bound = table["LV_bound"].to_numpy()
    negative = int((bound < 0).sum())
    console.log(
        f"Generator bound negative at [b]{negative}[/] of [b]{len(bound)}[/] sampled states."
    )


@click.group()
@click.option(
    "--quiet",
    "-q",
    type=click.BOOL,
    is_flag=True,
    help="Write less words.",
)
@click.version_option(package_name="itsfuzz")
@click.help_option()
@click.pass_context
def cli(ctx: click.Context, quiet: bool):
    """This is lyra, a command line interface to itsfuzz for certifying and
    stabilizing Ito stochastic T-S fuzzy models with line-integral Lyapunov
    functions."""
    ctx.obj = {
        "quiet": quiet,
    }
    return


@cli.command(context_settings={"show_default": True})
@common_options
@click.option(
    "-m",
    "--method",
    "method",
    type=click.Choice(itf.stability.METHODS),
    default=None,
    help="Overrides the configured analysis method.",
)
@click.pass_context
def analyze(
    ctx: click.Context,
    config: RunConfig,
    out: Path,
    seed: int | None,
    eps: float | None,
    tol_feas: float | None,
    method: str | None,
):
    """Certifies stochastic asymptotic stability of the unforced model.
    Writes the certificate and a sampling report of its generator bound."""
    console = _prepare(ctx, config, out, "analyze")
    section = config.sections.get("analysis", {})
    method = method or section.get("method", "theorem1")
    seed = config.seed if seed is None else seed
    options = solver_options(config, eps, tol_feas)

    with library_errors():
        beta = _beta(console, config.model, section) if method == "theorem1" else 0.0
        console.log(f"Solving the [b]{method}[/] conditions.")
        result = itf.analyze(config.model, method, beta, options)
    if not result.feasible:
        console.log(f"Solver status [b]{result.status.value}[/].")
        for failure in result.failures:
            console.log(f"[red]Certificate check failed:[/] {failure}")
        write_infeasibility(result, beta, filepath := out / "infeasibility.yml")
        console.log(f"Infeasibility report written to {fmt_filename(filepath)}.")
        console.print("\nNo certificate found. Exiting.\n")
        ctx.exit(NEGATIVE)

    filepath = out / "certificate.yml"
    console.log(f"Certificate found, writing to {fmt_filename(filepath)}.")
    write_certificate(result.certificate, filepath)
    with library_errors():
        certificate = result.certificate
        if isinstance(certificate, QuadraticCertificate):
            certificate = as_line_integral(config.model, certificate)
        evaluator = LyapunovEvaluator(config.model, certificate)
        table = sample_report(evaluator, section.get("samples", 1000), seed)
    _sampling_summary(console, table)
    write_samples(table, filepath := out / "samples.csv")
    console.log(f"Sampling report written to {fmt_filename(filepath)}.")
    console.print("\nDone.\n")
    return


@cli.command(context_settings={"show_default": True})
@common_options
@click.pass_context
def synthesize(
    ctx: click.Context,
    config: RunConfig,
    out: Path,
    seed: int | None,
    eps: float | None,
    tol_feas: float | None,
):
    """Designs fuzzy state feedback gains with the cone complementarity
    iteration, then certifies the closed loop independently."""
    console = _prepare(ctx, config, out, "synthesize")
    section = config.sections.get("synthesis", {})
    seed = config.seed if seed is None else seed
    options = SynthesisOptions(
        **{k: v for k, v in section.items() if k in SynthesisOptions._fields}
    )
    solver = solver_options(config, eps, tol_feas)

    with library_errors():
        beta = _beta(console, config.model, section)
        result = itf.synthesize(
            SynthesisProblem(config.model, beta, options, solver), console=console
        )
    write_synthesis(result, beta, filepath := out / "synthesis.yml")
    write_trace(result, tracepath := out / "trace.csv")
    console.log(f"Wrote {fmt_filename(filepath)} and {fmt_filename(tracepath)}.")

    if result.status == SynthesisStatus.INIT_INFEASIBLE:
        console.print("\nThe design constraints admit no initial point. Exiting.\n")
        ctx.exit(NEGATIVE)
    if result.gains is None:
        console.print(f"\nSynthesis ended with status {result.status.value}. Exiting.\n")
        ctx.exit(NEGATIVE)
    write_gains(result.gains, filepath := out / "gains.yml", result.status.value, beta)
    console.log(f"Gains written to {fmt_filename(filepath)}.")
    for j, gain in enumerate(result.gains):
        console.print(f"  K{j + 1} = {np.round(gain, 4).tolist()}")
    if result.status != SynthesisStatus.CONVERGED:
        console.print(f"\nSynthesis ended with status {result.status.value}. Exiting.\n")
        ctx.exit(NEGATIVE)

    with library_errors():
        console.log("Certifying the closed loop.")
        verification = itf.verify_closed_loop(config.model, result.gains, beta, solver)
    if not verification.feasible:
        console.log(f"[red]Closed loop not certified[/] ({verification.status.value}).")
        ctx.exit(NEGATIVE)
    write_certificate(verification.certificate, filepath := out / "closed-loop-certificate.yml")
    console.log(f"Closed loop certified, writing to {fmt_filename(filepath)}.")
    with library_errors():
        evaluator = LyapunovEvaluator(config.model, verification.certificate)
        table = sample_report(
            evaluator, config.sections.get("analysis", {}).get("samples", 1000), seed, result.gains
        )
    _sampling_summary(console, table)
    write_samples(table, out / "samples.csv")
    console.print("\nDone.\n")
    return


@cli.command(context_settings={"show_default": True})
@common_options
@click.option(
    "-w",
    "--workers",
    "workers",
    type=click.IntRange(min=1),
    default=1,
    help="Number of worker processes solving grid cells.",
)
@click.pass_context
def sweep(
    ctx: click.Context,
    config: RunConfig,
    out: Path,
    seed: int | None,
    eps: float | None,
    tol_feas: float | None,
    workers: int,
):
    """Solves both analysis methods over a two-parameter grid and writes the
    region of certified stability."""
    console = _prepare(ctx, config, out, "sweep")
    if "sweep" not in config.sections:
        raise BadConfig("No `sweep` section.")
    model = config.model
    parameters = []
    for name, p in config.sections["sweep"].items():
        matrix = getattr(model, p["matrix"])
        if p["rule"] > model.s or p["row"] > matrix.shape[1] or p["col"] > matrix.shape[2]:
            raise BadConfig(f"Sweep parameter `{name}` points outside of {p['matrix']}.")
        parameters.append(
            SweepParameter(
                name=name,
                matrix=p["matrix"],
                rule=p["rule"] - 1,
                row=p["row"] - 1,
                col=p["col"] - 1,
                start=p["start"],
                stop=p["stop"],
                step=p["step"],
            )
        )
    options = solver_options(config, eps, tol_feas)

    with library_errors():
        beta = _beta(console, model, config.sections.get("analysis", {}))
        region = itf.sweep(model, tuple(parameters), beta, options, workers, console)
    write_region(region, filepath := out / "region.csv")
    console.log(f"Region written to {fmt_filename(filepath)}.")
    for method, counts in region_counts(region).items():
        summary = ", ".join(f"{status} {count}" for status, count in counts.items())
        console.print(f"  {method}: {summary}")
    console.print("\nDone.\n")
    return


@cli.command(context_settings={"show_default": True})
@common_options
@click.option(
    "--gains",
    "gains_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="A gains or synthesis file. If not provided, the open loop is simulated.",
)
@click.option(
    "--paths",
    "paths",
    type=click.IntRange(min=1),
    multiple=True,
    help="Overrides the configured ensemble sizes, repeat for more ensembles.",
)
@click.pass_context
def simulate(
    ctx: click.Context,
    config: RunConfig,
    out: Path,
    seed: int | None,
    eps: float | None,
    tol_feas: float | None,
    gains_path: Path | None,
    paths: tuple[int, ...],
):
    """Runs Euler-Maruyama Monte Carlo ensembles of the open or closed loop."""
    console = _prepare(ctx, config, out, "simulate")
    if "simulation" not in config.sections:
        raise BadConfig("No `simulation` section.")
    section = dict(config.sections["simulation"])
    configured = section.pop("paths", [1])
    sizes = paths or configured
    with library_errors():
        gains = None if gains_path is None else read_gains(gains_path)
    console.log("Simulating the " + ("open loop." if gains is None else "closed loop."))

    for size in sizes:
        sim = SimConfig(
            **section,
            paths=size,
            seed=config.seed if seed is None else seed,
            gains=gains,
        )
        with library_errors():
            ensemble = monte_carlo(config.model, sim, console=console)
        write_ensemble(ensemble, filepath := out / f"ensemble-M{size}.csv")
        norms = np.nanmean(final_norms(ensemble), axis=1)
        console.log(
            f"[b]{size}[/] paths, survival {survival_fraction(ensemble):.2f}, "
            f"mean |x(T)| {np.round(norms, 4).tolist()}, written to {fmt_filename(filepath)}."
        )
    console.print("\nDone.\n")
    return


@cli.command(context_settings={"show_default": True})
@common_options
@click.option(
    "--certificate",
    "certificate_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="A certificate file written by `lyra analyze` or `lyra synthesize`.",
)
@click.option(
    "--samples",
    "samples",
    type=click.IntRange(min=1),
    default=10_000,
    help="Number of sampled states for the bound suites.",
)
@click.pass_context
def verify(
    ctx: click.Context,
    config: RunConfig,
    out: Path,
    seed: int | None,
    eps: float | None,
    tol_feas: float | None,
    certificate_path: Path,
    samples: int,
):
    """Checks a certificate numerically: path independence, derivatives,
    the Hessian bound and negativity of the generator bound."""
    console = _prepare(ctx, config, out, "verify")
    with library_errors():
        try:
            certificate = read_certificate(certificate_path)
        except (KeyError, TypeError) as error:
            raise BadConfig(f"Cannot read certificate, missing {error}.")
        if isinstance(certificate, QuadraticCertificate):
            certificate = as_line_integral(config.model, certificate)
        evaluator = LyapunovEvaluator(config.model, certificate)
        results = verify_suites(
            evaluator, samples, config.seed if seed is None else seed, console
        )
    if failed := [r for r in results if not r.passed]:
        console.print(f"\nSuite [b]{failed[0].name}[/] failed. Exiting.\n")
        ctx.exit(NEGATIVE)
    console.print("\nAll suites passed.\n")
    return


DEFAULT_CONFIG_NAME = "lyra-config.yml"


@cli.command()
@click.argument(
    "output",
    type=click.Path(dir_okay=True, path_type=Path),
)
@click.option(
    "-e",
    "--example",
    "example",
    type=click.Choice(BUNDLED_CONFIGS),
    default="example2",
    help="Which bundled configuration to save.",
)
@click.pass_context
def drop(ctx: click.Context, output: Path, example: str):
    """Saves a yaml configuration stub."""
    console = init_console(with_logo=False)
    text = bundled_config(example)
    config_text = (
        write_yaml(read_yaml(text), sort_keys=False)  # removes comments
        if ctx.obj["quiet"]
        else text
    )
    filepath = unused_path(
        output if not output.is_dir() else output / DEFAULT_CONFIG_NAME
    )
    with open(filepath, "w") as file:
        file.write(config_text)
    console.print(f"Created configuration file {fmt_filename(filepath)} :sparkles:.")
