"""
Command-line front end for the mean-nonexpansive fixed-point laboratory
Subcommands: certify, iterate, probe {opial,duality,modulus,center}, corpus.

Exit status: 0 success, 1 usage/config error, 2 mathematical violation.
"""

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

from certification import MARGIN_TOL, MultiIndex, certify_mean_nonexpansive
from experiment_workflow import IterationWorkflow
from geometry_probes import (
    GaugeFunction,
    asymptotic_center,
    basis_sequence,
    duality_map,
    line_grid,
    modulus_curve,
    modulus_of_convexity,
    opial_margin,
    verify_duality_identity,
    weak_continuity_probe,
)
from iteration import (
    DEFAULT_ITERATIONS,
    DEFAULT_TOL,
    epsilon_sandwich_check,
    estimate_weak_clusters,
    opial_separation,
    run_iteration,
)
from operators import list_corpus, resolve_operator
from report_io import slug, write_csv, write_json, write_plot_data
from sequence_space import TRUNCATION_DIM, CoordinateFunctional, parse_vector

load_dotenv()

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_SAMPLES = int(os.getenv("MEANNE_SAMPLES", "10000"))
OUTPUT_DIR = os.getenv("MEANNE_OUTPUT_DIR", ".")
LOG_LEVEL = os.getenv("MEANNE_LOG_LEVEL", "WARNING")
INI_SECTION = "experiment"
MODULUS_GRID = (0.25, 0.5, 1.0, 1.5, 2.0)
TRACE_FUNCTIONALS = (1, 2, 3)

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2


class ConfigError(ValueError):
    """Raised for unreadable config files and unknown config keys."""


class ExperimentConfig(BaseModel):
    """One experiment: operator, multi-index, vectors, sizes, seed, tolerances and outputs."""

    model_config = ConfigDict(frozen=True)

    operator: str = Field(default="example", description="Corpus name, e.g. 'example' or 'scale:0.5'")
    alpha: tuple[float, ...] = Field(default=(0.5, 0.5), description="Multi-index alpha_1, ..., alpha_n0")
    p: float = Field(default=2.0, description="Exponent (of the mean inequality, or of l^p for probes)")
    start: str = Field(default="e3", description="Start vector: zero, e<n> or a comma list")
    reference: Optional[str] = Field(default=None, description="Reference fixed point y")
    steps: int = Field(default=DEFAULT_ITERATIONS, ge=0, description="Iteration count N")
    n0: int = Field(default=2, ge=2, description="Window length for the monotone extraction")
    dim: int = Field(default=TRUNCATION_DIM, ge=1, description="Truncation dimension")
    seed: int = Field(default=0, ge=0)
    samples: int = Field(default=DEFAULT_SAMPLES, ge=1)
    workers: int = Field(default=1, ge=1)
    tol: float = Field(default=DEFAULT_TOL, gt=0.0, description="Iteration and clustering tolerance")
    margin_tol: float = Field(default=MARGIN_TOL, ge=0.0, description="Certification violation threshold")
    v: str = Field(default="e1", description="Comparison point for the Opial probe")
    x: str = Field(default="1,-2", description="Point for the duality probe")
    gauge: Optional[float] = Field(default=None, description="Exponent r of the gauge t^r; canonical if unset")
    eps: float = Field(default=1.0, description="epsilon for the modulus probe")
    grid: str = Field(default="-2:2:0.01", description="lo:hi:step candidates (c, 0) for the center probe")
    out_dir: str = Field(default=OUTPUT_DIR)
    plot_data: bool = Field(default=False, description="Also write gnuplot two-column .dat files")

    @field_validator("alpha", mode="before")
    @classmethod
    def _split_alpha(cls, value):
        if isinstance(value, str):
            return tuple(float(part) for part in value.split(","))
        return value

    def multi_index(self) -> MultiIndex:
        return MultiIndex(weights=self.alpha, p=self.p)

    def to_ini(self) -> str:
        lines = [f"[{INI_SECTION}]"]
        for key, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(repr(a) for a in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_ini(cls, text: str, overrides: Optional[dict] = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from e
        values = dict(parser[INI_SECTION]) if parser.has_section(INI_SECTION) else {}
        unknown = sorted(set(values) - set(cls.model_fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**values)


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file values first, then every flag given on the command line."""
    overrides = {
        field: getattr(args, field)
        for field in ExperimentConfig.model_fields
        if getattr(args, field, None) is not None
    }
    text = ""
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}") from e
    return ExperimentConfig.from_ini(text, overrides)


def _output(config: ExperimentConfig, name: str) -> Path:
    return Path(config.out_dir) / name


# Subcommands

def cmd_certify(config: ExperimentConfig) -> int:
    T = resolve_operator(config.operator, config.dim)
    report = certify_mean_nonexpansive(
        T, config.multi_index(), config.samples, config.seed,
        tol=config.margin_tol, workers=config.workers,
    )
    stem = f"certify-{slug(T.name)}"
    write_json(_output(config, f"{stem}.json"), "certify", report)
    write_csv(_output(config, f"{stem}.csv"), pd.DataFrame([report.summary_row()]))
    if config.plot_data:
        bounds = report.lipschitz_lower_bounds
        write_plot_data(_output(config, f"{stem}.dat"), range(1, len(bounds) + 1), bounds)

    if report.violation:
        print(f"✗ {T.name} violates alpha=({report.multi_index.label()}), p={config.p:g}: "
              f"margin {report.min_margin:.6e} at pair {report.witness_index}")
        print(f"  witness x = {list(report.witness_x.trimmed())}")
        print(f"  witness y = {list(report.witness_y.trimmed())}")
        return EXIT_VIOLATION
    print(f"✓ {T.name} passed alpha=({report.multi_index.label()}), p={config.p:g} "
          f"on {report.samples} pairs: min margin {report.min_margin:.6e}")
    return EXIT_OK


def cmd_iterate(config: ExperimentConfig) -> int:
    T = resolve_operator(config.operator, config.dim)
    x = parse_vector(config.start, T.domain.p)
    y = parse_vector(config.reference, T.domain.p) if config.reference is not None else None

    state = IterationWorkflow().process(
        T, x, config.steps, y, n0=config.n0, tol=config.tol,
        functionals=[CoordinateFunctional(index=i) for i in TRACE_FUNCTIONALS],
    )
    if state["status"] == "rejected":
        print(f"✗ {state['error']}")
        return EXIT_CONFIG

    trace, limit, clusters = state["trace"], state.get("limit"), state["clusters"]
    sandwich = epsilon_sandwich_check(trace, limit.indices, limit.q, config.n0) if limit else []
    stem = f"iterate-{slug(T.name)}"
    write_json(_output(config, f"{stem}.json"), "iterate", {
        "config": config,
        "status": state["status"],
        "trace": trace,
        "distance_limit": limit,
        "weak_clusters": clusters,
        "demiclosed": state["demiclosed"],
        "opial_separation": opial_separation(trace, clusters),
        "sandwich_failures": sandwich,
    })
    frame = trace.to_frame()
    write_csv(_output(config, f"{stem}.csv"), frame)
    if config.plot_data:
        column = "distance" if trace.distances is not None else "residual"
        rows = frame.dropna(subset=[column])
        write_plot_data(_output(config, f"{stem}.dat"), rows["n"], rows[column])

    if state["status"] == "violation":
        print(f"✗ {state['error']}")
        return EXIT_VIOLATION
    q = f"{limit.q:.6g}" if limit else "n/a"
    converged = limit.converged if limit else "n/a"
    mark = "✓" if state["demiclosed"] else "✗"
    print(f"{mark} {T.name} from {config.start}: q = {q} (converged: {converged}), "
          f"clusters = {len(clusters.points)}, demiclosed: {state['demiclosed']}")
    return EXIT_OK


def _gauge(config: ExperimentConfig) -> Optional[GaugeFunction]:
    return GaugeFunction.power(config.gauge) if config.gauge is not None else None


def cmd_probe(kind: str, config: ExperimentConfig) -> int:
    stem = f"probe-{kind}"
    if kind == "opial":
        u = parse_vector("zero", config.p)
        v = parse_vector(config.v, config.p)
        result = opial_margin(basis_sequence(config.p), u, v, config.steps)
        write_json(_output(config, f"{stem}.json"), f"probe {kind}", result)
        print(f"✓ Opial margin in l^{config.p:g}: liminf to u = {result.liminf_to_limit:.12g}, "
              f"to v = {result.liminf_to_other:.12g}, margin = {result.margin:.12g}")
        return EXIT_OK

    if kind == "duality":
        x = parse_vector(config.x, config.p)
        mu = _gauge(config)
        jx = duality_map(x, mu)
        identity = verify_duality_identity(x, mu)
        continuity = weak_continuity_probe(mu, config.p, config.steps)
        write_json(_output(config, f"{stem}.json"), f"probe {kind}", {
            "x": x,
            "jx": jx,
            "identity": identity,
            "identity_holds": identity.holds(),
            "weak_continuity": continuity,
        })
        mark = "✓" if identity.holds() and continuity.passed else "✗"
        print(f"{mark} J{list(x.trimmed())} = {list(jx.trimmed())}; (Jx)(x) = {identity.pairing:.12g}, "
              f"weakly continuous along e_n: {continuity.passed}")
        return EXIT_OK

    if kind == "modulus":
        estimate = modulus_of_convexity(config.p, config.eps, config.samples, config.seed)
        curve = modulus_curve(config.p, MODULUS_GRID, config.samples, config.seed)
        write_json(_output(config, f"{stem}.json"), f"probe {kind}", {"estimate": estimate, "curve": curve})
        write_csv(_output(config, f"{stem}.csv"), pd.DataFrame(curve, columns=["epsilon", "delta"]))
        if config.plot_data:
            write_plot_data(_output(config, f"{stem}.dat"), *zip(*curve))
        print(f"✓ delta_{config.p:g}({config.eps:g}) <= {estimate.delta:.6f} over {config.samples} pairs")
        return EXIT_OK

    if kind == "center":
        T = resolve_operator(config.operator, config.dim)
        trace = run_iteration(T, parse_vector(config.start, T.domain.p), config.steps)
        candidates = line_grid(config.grid, T.domain.p)
        result = asymptotic_center(trace, candidates, T, search_set=f"(c, 0), c in {config.grid}")
        clusters = estimate_weak_clusters(trace, config.tol)
        write_json(_output(config, f"{stem}.json"), f"probe {kind}", {
            "center": result,
            "level_set_diameter": result.level_set_diameter(),
            "weak_clusters": clusters,
        })
        frame = pd.DataFrame({"c": [y.coordinate(1) for y in candidates], "phi": result.values})
        write_csv(_output(config, f"{stem}.csv"), frame)
        if config.plot_data:
            write_plot_data(_output(config, f"{stem}.dat"), frame["c"], frame["phi"])
        print(f"✓ asymptotic center of {T.name} from {config.start}: "
              f"y0 = {list(result.y0.trimmed())}, r0 = {result.r0:.3e}")
        return EXIT_OK

    raise ValueError(f"unknown probe '{kind}'")


def cmd_corpus(config: ExperimentConfig) -> int:
    rows = [{"name": T.name, "domain": T.domain.describe(), "description": T.description}
            for T in list_corpus()]
    write_json(_output(config, "corpus.json"), "corpus", rows)
    for row in rows:
        print(f"  {row['name']:<16} {row['domain']}")
        print(f"  {'':<16} {row['description']}")
    return EXIT_OK


# Argument parsing

VALUE_FLAGS = {"--start", "--ref", "--v", "--x", "--grid", "--alpha"}


def _attach_values(argv: Sequence[str]) -> list[str]:
    """Turn `--grid -2:2:0.01` into `--grid=-2:2:0.01` so values may start with '-'."""
    out: list[str] = []
    tokens = list(argv)
    i = 0
    while i < len(tokens):
        if tokens[i] in VALUE_FLAGS and i + 1 < len(tokens) and tokens[i + 1].startswith("-") \
                and not tokens[i + 1].startswith("--"):
            out.append(f"{tokens[i]}={tokens[i + 1]}")
            i += 2
            continue
        out.append(tokens[i])
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with an [experiment] section; flags override it")
    common.add_argument("--seed", type=int, help="Base seed (default 0)")
    common.add_argument("--out-dir", dest="out_dir", help="Directory for reports")
    common.add_argument("--plot-data", dest="plot_data", action="store_true", default=None,
                        help="Also write gnuplot two-column data")
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    common.add_argument("--dim", type=int, help="Truncation dimension")
    common.add_argument("--samples", type=int, help=f"Sampled pairs (default {DEFAULT_SAMPLES})")
    common.add_argument("--tol", type=float, help="Iteration / clustering tolerance")
    common.add_argument("--p", type=float, help="Exponent")

    length = argparse.ArgumentParser(add_help=False)
    length.add_argument("--n", dest="steps", type=int, help=f"Sequence length N (default {DEFAULT_ITERATIONS})")

    operator = argparse.ArgumentParser(add_help=False)
    operator.add_argument("--op", dest="operator", help="Operator name from the corpus")

    orbit = argparse.ArgumentParser(add_help=False)
    orbit.add_argument("--start", help="Start vector: zero, e<n> or a comma list")
    orbit.add_argument("--n", dest="steps", type=int, help=f"Iteration count N (default {DEFAULT_ITERATIONS})")

    parser = argparse.ArgumentParser(
        prog="meanne",
        description="Numerical laboratory for mean nonexpansive maps",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    certify = commands.add_parser("certify", parents=[common, operator],
                                  help="Sampled (alpha, p)-nonexpansiveness certification")
    certify.add_argument("--alpha", help="Comma-separated multi-index, e.g. 0.5,0.5")
    certify.add_argument("--margin-tol", dest="margin_tol", type=float, help="Violation threshold")
    certify.add_argument("--workers", type=int, help="Threads for sampling blocks")

    iterate = commands.add_parser("iterate", parents=[common, operator, orbit],
                                  help="Picard iteration with convergence diagnostics")
    iterate.add_argument("--ref", dest="reference", help="Reference fixed point y")
    iterate.add_argument("--n0", type=int, help="Extraction window length")

    probe = commands.add_parser("probe", help="Banach-geometry probes")
    probes = probe.add_subparsers(dest="probe", required=True)
    opial = probes.add_parser("opial", parents=[common, length], help="Opial margin along e_n")
    opial.add_argument("--v", help="Comparison point (default e1)")
    duality = probes.add_parser("duality", parents=[common, length], help="Duality map and identity")
    duality.add_argument("--x", help="Point x (default 1,-2)")
    duality.add_argument("--gauge", type=float, help="Exponent r of the gauge t^r")
    modulus = probes.add_parser("modulus", parents=[common], help="Modulus of convexity")
    modulus.add_argument("--eps", type=float, help="epsilon in (0, 2]")
    center = probes.add_parser("center", parents=[common, operator, orbit], help="Asymptotic center over a grid")
    center.add_argument("--grid", help="lo:hi:step for candidates (c, 0)")

    commands.add_parser("corpus", parents=[common], help="List the operator corpus")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(_attach_values(sys.argv[1:] if argv is None else argv))
    except SystemExit as e:
        # argparse exits 2 on usage errors; 2 is reserved for violations
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else LOG_LEVEL.upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )

    try:
        config = load_config(args)
        if args.command == "certify":
            return cmd_certify(config)
        if args.command == "iterate":
            return cmd_iterate(config)
        if args.command == "probe":
            return cmd_probe(args.probe, config)
        return cmd_corpus(config)
    except ValueError as e:
        logger.debug("Rejected input", exc_info=True)
        print(f"✗ Error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
