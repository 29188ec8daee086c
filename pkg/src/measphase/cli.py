"""Command-line front end producing CSV or JSON data files.

Every file starts with a header that echoes the resolved configuration and
the package version.  Rows are assembled in sweep order, so the bytes of an
output file depend only on the configuration and the seed, never on the
number of worker threads.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .errors import (
    GridTooCoarseError,
    MeasPhaseError,
    PhaseUndefinedAtError,
    SearchError,
    UndefinedPhaseError,
    VisibilityZeroError,
)
from .interferometer import averaged_intensities, polarizer_intensities, postselected_intensities
from .phase_engine import MeasurementProtocol, all_plus, equator_condition, postselected_closed_form
from .topology import (
    averaged_critical_point,
    chern_number,
    chern_via_curvature,
    critical_strength,
    unfold_phase,
)
from .trajectory_sim import (
    acceptance_probability,
    averaged_phase_exact,
    averaged_phase_mc,
    resolve_threads,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_TOPOLOGY = 3
EXIT_SEARCH = 4

OUTPUT_DIR_ENV = "MEASPHASE_OUTPUT_DIR"
THREADS_ENV = "MEASPHASE_THREADS"
SCHEMA_VERSION = 1
CONSERVATION_TOL = 1e-12

_PAIRED = ("c", "theta", "gamma")
COMMANDS = ("postselected", "distribution", "chern", "critical", "interferometer")
SCHEMES = ("postselected", "polarizer", "averaged")


class ConfigError(ValueError):
    pass


# -- parsing ----------------------------------------------------------------

_ANGLE = re.compile(
    r"^\s*(?P<sign>[+-]?)\s*(?P<num>\d*\.?\d*(?:e[+-]?\d+)?)\s*\*?\s*pi\s*(?:/\s*(?P<den>\d*\.?\d+))?\s*$",
    re.IGNORECASE,
)


def parse_angle(text: str | float) -> float:
    """Decimal radians or a multiple/fraction of pi: ``"pi/4"``, ``"-3pi/4"``, ``"0.5*pi"``."""
    if isinstance(text, (int, float)):
        return float(text)
    s = text.strip()
    try:
        return float(s)
    except ValueError:
        pass
    m = _ANGLE.match(s)
    if not m:
        raise ConfigError(f"cannot parse angle {text!r}")
    num = float(m["num"]) if m["num"] else 1.0
    den = float(m["den"]) if m["den"] else 1.0
    if den == 0:
        raise ConfigError(f"zero denominator in {text!r}")
    value = num * math.pi / den
    return -value if m["sign"] == "-" else value


@dataclass(frozen=True)
class SweepRange:
    """Inclusive sweep ``start:stop:count``."""

    start: float
    stop: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("sweep count must be at least 1")
        if self.start > self.stop:
            raise ConfigError(f"sweep {self} is not well ordered")
        if self.count == 1 and self.start != self.stop:
            raise ConfigError("a single-point sweep needs start == stop")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)

    def __str__(self) -> str:
        return f"{self.start:.17g}:{self.stop:.17g}:{self.count}"


def parse_range(text: str) -> SweepRange:
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ConfigError(f"expected start:stop:count, got {text!r}")
    try:
        count = int(parts[2])
    except ValueError:
        raise ConfigError(f"bad count in {text!r}") from None
    return SweepRange(parse_angle(parts[0]), parse_angle(parts[1]), count)


def parse_box(text: str) -> tuple[float, float]:
    """``lo:hi`` without an ordering check; the search reports empty boxes."""
    parts = str(text).split(":")
    if len(parts) != 2:
        raise ConfigError(f"expected lo:hi, got {text!r}")
    return parse_angle(parts[0]), parse_angle(parts[1])


def _parse_int(text) -> int:
    try:
        return int(str(text), 0)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _parse_float(text) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


@dataclass(frozen=True)
class RunConfig:
    command: str
    c: float | None = None
    c_range: SweepRange | None = None
    theta: float | None = None
    theta_range: SweepRange | None = None
    N: int = 500
    realizations: int = 4000
    seed: int = 0
    bins: int = 64
    gamma: float | None = None
    gamma_range: SweepRange | None = None
    I0: float = 1.0
    scheme: str = "postselected"
    grid: int = 128
    c_box: tuple[float, float] = (2.5, 4.5)
    theta_box: tuple[float, float] = (0.5, 1.5)
    bracket: tuple[float, float] = (1.0, 4.0)
    output: str | None = None
    format: str = "csv"
    threads: int = 0

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.N < 3:
            raise ConfigError("N must be at least 3")
        if self.realizations < 1:
            raise ConfigError("realizations must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.bins < 8:
            raise ConfigError("bins must be at least 8")
        if self.I0 <= 0:
            raise ConfigError("I0 must be positive")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {', '.join(SCHEMES)}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.threads < 0:
            raise ConfigError("threads must be non-negative")
        for base in _PAIRED:
            if getattr(self, base) is not None and getattr(self, base + "_range") is not None:
                raise ConfigError(f"give either --{base} or --{base}-range, not both")
        if self.c is not None and self.c < 0:
            raise ConfigError("c must be non-negative")
        if self.c_range is not None and self.c_range.start < 0:
            raise ConfigError("c must be non-negative")
        return self

    def c_values(self) -> np.ndarray:
        if self.c_range is not None:
            return self.c_range.values()
        if self.c is None:
            raise ConfigError(f"{self.command} needs --c or --c-range")
        return np.array([self.c])

    def theta_values(self, default: float = 0.25 * math.pi) -> np.ndarray:
        if self.theta_range is not None:
            return self.theta_range.values()
        return np.array([default if self.theta is None else self.theta])

    def gamma_values(self) -> np.ndarray:
        if self.gamma_range is not None:
            return self.gamma_range.values()
        if self.gamma is not None:
            return np.array([self.gamma])
        return SweepRange(0.0, 2 * math.pi, 65).values()

    def echo(self) -> dict[str, str]:
        """Resolved settings that determine the output, as strings.

        The thread count and destination are left out so that identical
        runs produce identical bytes.
        """
        out = {}
        for f in fields(self):
            if f.name in ("threads", "output"):
                continue
            out[f.name] = _echo_value(getattr(self, f.name))
        return out


def _echo_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, tuple):
        return ":".join(_echo_value(x) for x in v)
    return str(v)


_CONVERTERS: dict[str, Callable] = {
    "c": _parse_float,
    "c_range": parse_range,
    "theta": parse_angle,
    "theta_range": parse_range,
    "N": _parse_int,
    "realizations": _parse_int,
    "seed": _parse_int,
    "bins": _parse_int,
    "gamma": parse_angle,
    "gamma_range": parse_range,
    "I0": _parse_float,
    "scheme": str,
    "grid": _parse_int,
    "c_box": parse_box,
    "theta_box": parse_box,
    "bracket": parse_box,
    "output": str,
    "format": str,
    "threads": _parse_int,
}


def read_config_file(path: str) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment; dashes and underscores are equivalent."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.lstrip("-").replace("-", "_")
            if key not in _CONVERTERS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


class _Parser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1, keeping 2 for partial results."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


HELP_EPILOG = f"""\
angles accept decimal radians or pi fractions such as pi/4 or -3pi/4;
sweeps are inclusive: start:stop:count.

environment:
  {OUTPUT_DIR_ENV}  directory for relative --output paths (and for the
                       default file name <command>.<format> when --output
                       is omitted; without either, data goes to stdout)
  {THREADS_ENV}     worker threads when --threads is 0 (default: up to 8)

exit codes:
  0 ok, 1 usage error, 2 partial result (flagged points),
  3 topology failure, 4 search failure
"""


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="measphase",
        description="Measurement-induced geometric phases: sweeps, Monte Carlo, topology.",
        epilog=HELP_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "postselected": "closed-form postselected phase and probability",
        "distribution": "Monte Carlo phase histogram and averaged phase",
        "chern": "Chern number by endpoint and plaquette methods",
        "critical": "postselected and averaged critical points",
        "interferometer": "drain intensities over a reference-phase sweep",
    }
    for name in COMMANDS:
        p = sub.add_parser(
            name,
            help=helps[name],
            epilog=HELP_EPILOG,
            formatter_class=argparse.RawDescriptionHelpFormatter,
            argument_default=argparse.SUPPRESS,
        )
        p.add_argument("--config", metavar="FILE", help="key=value file; flags override it")
        p.add_argument("--c", help="measurement strength")
        p.add_argument("--c-range", metavar="A:B:N", help="strength sweep")
        p.add_argument("--theta", help="latitude of the parallel (default pi/4)")
        p.add_argument("--theta-range", metavar="A:B:N", help="latitude sweep")
        p.add_argument("--N", help="measurements per sequence (default 500)")
        p.add_argument("--realizations", help="Monte Carlo realizations (default 4000)")
        p.add_argument("--seed", help="master seed, unsigned 64-bit (default 0)")
        p.add_argument("--bins", help="histogram bins (default 64)")
        p.add_argument("--gamma", help="reference-arm phase")
        p.add_argument("--gamma-range", metavar="A:B:N", help="reference-phase sweep (default 0:2pi:65)")
        p.add_argument("--I0", help="input intensity (default 1)")
        p.add_argument("--scheme", help="interferometer: postselected, polarizer or averaged")
        p.add_argument("--grid", help="plaquette lattice size (default 128)")
        p.add_argument("--c-box", metavar="LO:HI", help="averaged search box in c (default 2.5:4.5)")
        p.add_argument("--theta-box", metavar="LO:HI", help="averaged search box in theta (default 0.5:1.5)")
        p.add_argument("--bracket", metavar="LO:HI", help="bisection bracket for c_crit (default 1:4)")
        p.add_argument("--output", help="output file")
        p.add_argument("--format", help="csv or json (default csv)")
        p.add_argument("--threads", help="worker threads, 0 = auto (default 0)")
    return parser


def resolve_config(argv: Sequence[str] | None = None) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    raw = {}
    config_path = ns.pop("config", None)
    if config_path:
        raw.update(read_config_file(config_path))
    raw.update(ns)
    for base in _PAIRED:
        # a flag for either form replaces both forms from the file
        if base in ns or base + "_range" in ns:
            raw = {k: v for k, v in raw.items() if k not in (base, base + "_range") or k in ns}
    values = {k: _CONVERTERS[k](v) for k, v in raw.items()}
    return RunConfig(command=command, **values).validate()


# -- output -----------------------------------------------------------------

@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[dict]
    summary_columns: tuple[str, ...] = ()
    summary: list[dict] | None = None


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def render(config: RunConfig, table: Table) -> str:
    if config.format == "json":
        doc = {
            "schema": SCHEMA_VERSION,
            "version": __version__,
            "config": config.echo(),
            "rows": [{k: _json_value(r.get(k)) for k in table.columns} for r in table.rows],
            "summary": [
                {k: _json_value(r.get(k)) for k in table.summary_columns} for r in table.summary or []
            ],
        }
        return json.dumps(doc, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# measphase {__version__}\n")
    buf.write(f"# schema={SCHEMA_VERSION}\n")
    for k, v in config.echo().items():
        buf.write(f"# {k}={v}\n")
    buf.write(",".join(table.columns) + "\n")
    for r in table.rows:
        buf.write(",".join(_fmt(r.get(k)) for k in table.columns) + "\n")
    if table.summary:
        buf.write("# summary\n")
        buf.write("#" + ",".join(table.summary_columns) + "\n")
        for r in table.summary:
            buf.write("#" + ",".join(_fmt(r.get(k)) for k in table.summary_columns) + "\n")
    return buf.getvalue()


def output_path(config: RunConfig) -> str | None:
    base = os.environ.get(OUTPUT_DIR_ENV)
    path = config.output
    if path is None:
        return os.path.join(base, f"{config.command}.{config.format}") if base else None
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def write_output(config: RunConfig, table: Table, stdout=None) -> str | None:
    text = render(config, table)
    path = output_path(config)
    if path is None:
        (stdout or sys.stdout).write(text)
        return None
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _parallel_map(fn: Callable, items: Iterable, threads: int) -> list:
    """Order-preserving map; results come back in input order."""
    items = list(items)
    workers = min(resolve_threads(threads), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- commands ---------------------------------------------------------------

@dataclass
class Result:
    table: Table
    code: int = EXIT_OK
    messages: list[str] | None = None


def cmd_postselected(config: RunConfig) -> Result:
    thetas = config.theta_values()
    theta_max = float(thetas.max())

    def one_c(c: float) -> list[dict]:
        curve = None
        if theta_max > 0:
            try:
                curve = unfold_phase(c, theta_max=theta_max)
            except PhaseUndefinedAtError:
                curve = None
        rows = []
        for t in thetas:
            amp = postselected_closed_form(c, t)
            row = {"c": float(c), "theta": float(t), "P": amp.probability}
            if amp.phase_defined:
                row["chi"] = amp.phase
                if t == 0:
                    row["chi_unfolded"] = 0.0
                elif curve is not None:
                    try:
                        row["chi_unfolded"] = curve.at(t)
                    except UndefinedPhaseError:
                        row["chi_unfolded"] = math.nan
                else:
                    row["chi_unfolded"] = math.nan
            else:
                row["chi"] = row["chi_unfolded"] = math.nan
            row["flagged"] = not (math.isfinite(row["chi"]) and math.isfinite(row["chi_unfolded"]))
            rows.append(row)
        return rows

    rows = [r for block in _parallel_map(one_c, config.c_values(), config.threads) for r in block]
    flagged = sum(r["flagged"] for r in rows)
    table = Table(("c", "theta", "P", "chi", "chi_unfolded", "flagged"), rows)
    if flagged:
        return Result(table, EXIT_PARTIAL, [f"{flagged} point(s) with undefined phase"])
    return Result(table)


def cmd_distribution(config: RunConfig) -> Result:
    if config.realizations < 100:
        raise ConfigError("distribution needs at least 100 realizations")
    theta = float(config.theta_values()[0])
    rows, summary, messages = [], [], []
    for c in config.c_values():
        protocol = MeasurementProtocol.parallel(float(c), theta, config.N)
        base = {"c": float(c), "theta": theta}
        reference = all_plus(protocol)
        base["chi_all_plus"] = reference.phase if reference.phase_defined else math.nan
        try:
            s = averaged_phase_mc(
                protocol, config.realizations, config.seed, config.threads, bins=config.bins
            )
        except VisibilityZeroError as exc:
            messages.append(f"c={c:.17g}: {exc}")
            summary.append({**base, "chi_bar": math.nan, "alpha": math.nan, "flagged": True})
            continue
        for center, count in zip(s.bin_centers, s.counts):
            rows.append({"c": float(c), "bin_center": float(center), "count": int(count)})
        summary.append(
            {
                **base,
                "chi_bar": s.chi_bar,
                "alpha": s.alpha,
                "accept_rate": s.accept_rate,
                "stderr": s.stderr,
                "flagged": False,
            }
        )
    table = Table(
        ("c", "bin_center", "count"),
        rows,
        ("c", "theta", "chi_bar", "alpha", "accept_rate", "stderr", "chi_all_plus", "flagged"),
        summary,
    )
    return Result(table, EXIT_PARTIAL if messages else EXIT_OK, messages)


def cmd_chern(config: RunConfig) -> Result:
    def one_c(c: float) -> tuple[dict, str | None]:
        row = {"c": float(c)}
        try:
            e = chern_number(c)
            p = chern_via_curvature(c, grid_n=config.grid, n_steps=config.N)
        except PhaseUndefinedAtError as exc:
            return {**row, "flagged": True}, f"c={c:.17g}: {exc} (theta={exc.theta:.12g})"
        except GridTooCoarseError as exc:
            return {**row, "flagged": True}, f"c={c:.17g}: {exc}"
        row.update(
            chern_endpoint=e.chern,
            chern_plaquette=p.chern,
            residual=max(e.residual, p.residual),
            flagged=e.chern != p.chern,
        )
        note = None
        if row["flagged"]:
            note = f"c={c:.17g}: endpoint {e.chern} and plaquette {p.chern} disagree"
        return row, note

    results = _parallel_map(one_c, config.c_values(), config.threads)
    rows = [r for r, _ in results]
    messages = [m for _, m in results if m]
    table = Table(("c", "chern_endpoint", "chern_plaquette", "residual", "flagged"), rows)
    return Result(table, EXIT_TOPOLOGY if messages else EXIT_OK, messages)


def cmd_critical(config: RunConfig) -> Result:
    columns = ("kind", "c", "theta", "residual", "visibility")
    try:
        root = critical_strength(config.bracket)
        averaged = averaged_critical_point(config.c_box, config.theta_box, n_steps=config.N)
    except SearchError as exc:
        return Result(Table(columns, []), EXIT_SEARCH, [str(exc)])
    rows = [
        {
            "kind": "postselected",
            "c": root,
            "theta": 0.5 * math.pi,
            "residual": abs(equator_condition(root)),
            "visibility": postselected_closed_form(root, 0.5 * math.pi).probability ** 0.5,
        },
        {
            "kind": "averaged",
            "c": averaged.c,
            "theta": averaged.theta,
            "residual": averaged.visibility,
            "visibility": averaged.visibility,
        },
    ]
    messages = [
        f"postselected c_crit = {root:.12f} (|condition| = {rows[0]['residual']:.3g})",
        f"averaged critical point c = {averaged.c:.6f}, theta = {averaged.theta:.6f}"
        f" (visibility {averaged.visibility:.3g})",
    ]
    return Result(Table(columns, rows), EXIT_OK, messages)


def cmd_interferometer(config: RunConfig) -> Result:
    if config.c is None:
        raise ConfigError("interferometer needs --c")
    c, theta, I0 = config.c, float(config.theta_values()[0]), config.I0
    gammas = config.gamma_values()
    columns = ("gamma", "I1", "I2")
    summary_columns = ("scheme", "c", "theta", "P", "chi", "chi_bar", "alpha", "expected_total")
    info = {"scheme": config.scheme, "c": c, "theta": theta}
    if config.scheme == "averaged":
        protocol = MeasurementProtocol.parallel(c, theta, config.N)
        try:
            pairs = [averaged_intensities(protocol, g, I0) for g in gammas]
        except VisibilityZeroError as exc:
            return Result(Table(columns, [], summary_columns, [info]), EXIT_PARTIAL, [str(exc)])
        s = averaged_phase_exact(protocol)
        expected = I0 * acceptance_probability(protocol)
        info.update(chi_bar=s.chi_bar, alpha=s.alpha)
    else:
        amp = postselected_closed_form(c, theta)
        info.update(P=amp.probability, chi=amp.phase if amp.phase_defined else math.nan)
        if config.scheme == "postselected":
            pairs = [postselected_intensities(c, theta, g, I0) for g in gammas]
            expected = I0
        else:
            pairs = [polarizer_intensities(c, theta, g, I0) for g in gammas]
            expected = 0.5 * I0 * (1 + amp.probability)
    info["expected_total"] = expected
    worst = max(abs(p.I1 + p.I2 - expected) for p in pairs)
    if worst > CONSERVATION_TOL * max(1.0, I0):
        raise RuntimeError(f"intensity conservation violated by {worst:.3g}")
    rows = [{"gamma": float(p.gamma), "I1": p.I1, "I2": p.I2} for p in pairs]
    return Result(Table(columns, rows, summary_columns, [info]))


HANDLERS: dict[str, Callable[[RunConfig], Result]] = {
    "postselected": cmd_postselected,
    "distribution": cmd_distribution,
    "chern": cmd_chern,
    "critical": cmd_critical,
    "interferometer": cmd_interferometer,
}


def run(config: RunConfig, stdout=None) -> int:
    result = HANDLERS[config.command](config)
    write_output(config, result.table, stdout)
    for msg in result.messages or []:
        print(msg, file=sys.stderr)
    return result.code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = resolve_config(argv)
        return run(config)
    except ConfigError as exc:
        print(f"measphase: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"measphase: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MeasPhaseError as exc:
        print(f"measphase: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


__all__ = [
    "RunConfig",
    "SweepRange",
    "build_parser",
    "main",
    "parse_angle",
    "parse_range",
    "resolve_config",
    "run",
]
