from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, fields
from enum import StrEnum
from pathlib import Path
from typing import Any, Sequence

from ._metadata import __version__
from .domains import OpenBox
from .exceptions import CustomError, MismatchDetected, ValidationError
from .fredholm import TestFunction, local_recover, null_moment_check
from .helpers import to_jsonable
from .kernels import KernelSpec
from .rank import (
    ExpNegOverXFamily, FunctionFamily, PowerFamily, TaylorFunctionFamily, finite_rank_estimate, fullrank_mc, lli_probe
)
from .series import SliceSpec, finite_diff_check
from .types import OutputFormat, SolveMethod, TolerancePolicy

__all__ = [
    'Subcommand', 'ExperimentConfig', 'RunManifest',

    'execute', 'run', 'verify_manifest',
    'build_parser', 'main'
]

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = 'KERNRANK_OUTPUT_DIR'

_KERNEL_SUBCOMMANDS = {'rank-mc', 'finite-rank', 'taylor', 'invert'}


class Subcommand(StrEnum):
    RANK_MC = 'rank-mc'
    FINITE_RANK = 'finite-rank'
    LLI_PROBE = 'lli-probe'
    TAYLOR = 'taylor'
    INVERT = 'invert'
    NULL_CHECK = 'null-check'


class ProbeFamily(StrEnum):
    """Function families the ``lli-probe`` subcommand can build."""

    POWER = 'power'
    EXP_NEG_OVER_X = 'exp-neg-over-x'
    TAYLOR = 'taylor'


class ExportVector(StrEnum):
    FHAT = 'fhat'
    G = 'g'


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment, everything needed to reproduce its payload.

    Fields a subcommand does not use keep their defaults and are ignored.
    """

    subcommand: Subcommand
    kernel: str | None = None
    seed: int = 0

    k: int = 10
    trials: int = 100
    k_max: int = 8
    shared_nodes: bool = False

    rel_threshold: float = 1e-10
    strict_threshold: float = 1e-13
    equilibrate: bool = True

    family: ProbeFamily = ProbeFamily.POWER
    window: tuple[float, float] | None = None
    budget: int = 64

    x: tuple[float, ...] | None = None
    p: tuple[float, ...] | None = None
    direction: tuple[float, ...] | None = None
    order: int = 6
    radius: float = 0.1
    step: float = 0.05

    truth: str = 'gaussian-bump:center=0.5,width=0.15'
    method: SolveMethod = SolveMethod.TIKHONOV
    lam: float | None = None
    r: int | None = None
    noise: float = 0.0
    quad_nodes: int = 64

    grid: tuple[float, ...] = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)
    terms: int = 30

    output: str | None = None
    format: OutputFormat = OutputFormat.JSON
    export: ExportVector = ExportVector.FHAT
    workers: int = 1

    def __post_init__(self) -> None:
        for name, kind in (
            ('subcommand', Subcommand), ('family', ProbeFamily), ('method', SolveMethod),
            ('format', OutputFormat), ('export', ExportVector)
        ):
            try:
                object.__setattr__(self, name, kind(getattr(self, name)))
            except ValueError:
                raise ValidationError(
                    'Invalid {name} "{value}"!', ExperimentConfig, name=name, value=getattr(self, name)
                ) from None

        needs_kernel = self.subcommand in _KERNEL_SUBCOMMANDS or (
            self.subcommand is Subcommand.LLI_PROBE and self.family is ProbeFamily.TAYLOR
        )

        if needs_kernel and self.kernel is None:
            raise ValidationError('{subcommand} needs --kernel!', ExperimentConfig, subcommand=self.subcommand)

        if self.kernel is not None:
            # normalizes the string and rejects unknown kernels up front
            object.__setattr__(self, 'kernel', str(KernelSpec.from_string(self.kernel)))

        if self.window is not None:
            window = tuple(float(v) for v in self.window)

            if len(window) != 2 or not window[0] < window[1]:
                raise ValidationError(
                    'A window is "lo,hi" with lo < hi, got {window}!', ExperimentConfig, window=window
                )

            object.__setattr__(self, 'window', window)

        for name in ('x', 'p', 'direction', 'grid'):
            if (value := getattr(self, name)) is not None:
                object.__setattr__(self, name, tuple(float(v) for v in value))

        if self.subcommand is Subcommand.INVERT:
            TestFunction.from_string(self.truth)

        if self.workers < 1:
            raise ValidationError('Need at least one worker, got {workers}!', ExperimentConfig, workers=self.workers)

    @property
    def spec(self) -> KernelSpec:
        if self.kernel is None:
            raise ValidationError('{subcommand} has no kernel!', ExperimentConfig, subcommand=self.subcommand)

        return KernelSpec.from_string(self.kernel)

    @property
    def policy(self) -> TolerancePolicy:
        return TolerancePolicy(self.rel_threshold, self.strict_threshold, equilibrate=self.equilibrate)

    @property
    def output_path(self) -> Path:
        if self.output is not None:
            return Path(self.output)

        directory = Path(os.environ.get(OUTPUT_DIR_ENV) or Path.cwd())

        return directory / f'{self.subcommand}-seed{self.seed}.{self.format}'

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable(self)  # type: ignore[no-any-return]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}

        if unknown := set(data) - known:
            raise ValidationError('Unknown config keys {keys}!', cls.from_dict, keys=sorted(unknown))

        return cls(**{key: tuple(value) if isinstance(value, list) else value for key, value in data.items()})


@dataclass(frozen=True)
class RunManifest:
    """A config echo with the payload it produced."""

    config: ExperimentConfig
    version: str
    duration: float
    """Wall clock seconds; the only field allowed to differ between runs."""

    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            'config': self.config.to_dict(), 'version': self.version,
            'duration': self.duration, 'payload': self.payload
        }

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> RunManifest:
        try:
            data = json.loads(Path(path).read_text())
            return cls(ExperimentConfig.from_dict(data['config']), data['version'], data['duration'], data['payload'])
        except CustomError:
            raise
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ValidationError('Can not read manifest {path}: {error}', cls.load, path=str(path), error=e) from e


def _probe_family(config: ExperimentConfig) -> FunctionFamily:
    degrees = range(config.k)

    if config.family is ProbeFamily.POWER:
        return PowerFamily.monomials(degrees, OpenBox((-1.0,), (1.0,)))

    if config.family is ProbeFamily.EXP_NEG_OVER_X:
        return ExpNegOverXFamily(tuple(float(s + 1) for s in degrees))

    spec = config.spec
    dim = spec.n if spec.family.is_spherical else spec.domain_v.ambient_dim
    assert dim is not None

    p = config.p or (0.0,) * dim
    direction = config.direction or tuple(float(i == 0) for i in range(dim))

    return TaylorFunctionFamily(spec, p, direction, tuple(degrees), config.radius)


def _slice(config: ExperimentConfig) -> SliceSpec:
    if config.x is None:
        raise ValidationError('taylor needs --x!', _slice)

    p = config.p or (0.0,) * (len(config.x) if config.spec.family.is_spherical else config.spec.domain_v.ambient_dim)
    direction = config.direction or tuple(float(i == 0) for i in range(len(p)))

    return SliceSpec(config.x, p, direction, config.order, config.radius)


def _rows(config: ExperimentConfig, payload: dict[str, Any]) -> tuple[list[str], list[list[Any]]]:
    """Table form of a payload for the csv output format."""

    command = config.subcommand

    if command is Subcommand.RANK_MC:
        return ['rank', 'count'], [[int(k), v] for k, v in payload['rank_histogram'].items()]

    if command is Subcommand.FINITE_RANK:
        return ['k', 'max_rank'], [[k + 1, rank] for k, rank in enumerate(payload['profile'])]

    if command is Subcommand.LLI_PROBE:
        points = payload['search']['points']
        return ['index', *(f'x{i}' for i in range(len(points[0]) if points else 0))], [
            [j, *point] for j, point in enumerate(points)
        ]

    if command is Subcommand.TAYLOR:
        return ['order', 'coefficient', 'finite_diff', 'rel_err'], [
            [row['order'], row['coefficient'], row['finite_diff'], row['rel_err']] for row in payload['rows']
        ]

    if command is Subcommand.INVERT:
        nodes, values = ('nodes_y', 'f_hat') if config.export is ExportVector.FHAT else ('nodes_x', 'g')
        return ['node', 'value'], [list(pair) for pair in zip(payload[nodes], payload[values])]

    return ['x', 'value'], [list(pair) for pair in zip(payload['xs'], payload['values'])]


def execute(config: ExperimentConfig) -> dict[str, Any]:
    """Run the experiment a config describes and return its JSON ready payload."""

    log.debug('execute %s', config)

    command = config.subcommand

    if command is Subcommand.RANK_MC:
        report = fullrank_mc(
            config.spec, config.k, config.trials, config.seed, config.policy,
            shared_nodes=config.shared_nodes, workers=config.workers
        )
    elif command is Subcommand.FINITE_RANK:
        report = finite_rank_estimate(config.spec, config.k_max, config.trials, config.seed, config.policy)
    elif command is Subcommand.LLI_PROBE:
        if config.window is None:
            raise ValidationError('lli-probe needs --window!', execute)

        family = _probe_family(config)
        window = OpenBox.cube(family.domain.ambient_dim, *config.window)
        report = lli_probe(family, window, budget=config.budget, seed=config.seed, policy=config.policy)
    elif command is Subcommand.TAYLOR:
        slc = _slice(config)
        fd = finite_diff_check(config.spec, slc, config.step)

        return to_jsonable({'kernel': config.kernel, 'slice': slc}) | fd.to_dict()  # type: ignore[no-any-return]
    elif command is Subcommand.INVERT:
        lo, hi = config.window or (0.4, 0.6)
        window = OpenBox((lo,), (hi,))
        report = local_recover(
            config.spec, TestFunction.from_string(config.truth), window, config.k, config.method, config.lam,
            config.r, config.quad_nodes, config.seed, config.noise, config.policy
        )
    else:
        report = null_moment_check(config.grid, config.terms, config.quad_nodes)

    return report.to_dict()


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + '\n'


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp = tempfile.mkstemp(prefix=f'.{path.name}.', dir=path.parent)

    try:
        with os.fdopen(fd, 'w', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')

    writer.writerow(header)
    writer.writerows([['' if value is None else value for value in row] for row in rows])

    return buffer.getvalue()


def run(config: ExperimentConfig) -> RunManifest:
    """
    Execute a config and write its report to ``config.output_path``.

    JSON output is the whole manifest, CSV output the table form of the payload. Nothing
    is written unless the experiment succeeds.
    """

    start = time.perf_counter()
    payload = json.loads(_canonical(execute(config)))
    manifest = RunManifest(config, __version__, time.perf_counter() - start, payload)

    path = config.output_path

    if config.format is OutputFormat.JSON:
        _atomic_write(path, _canonical(manifest.to_dict()))
    else:
        _atomic_write(path, _csv_text(*_rows(config, payload)))

    log.info('%s finished in %.2fs, report written to %s', config.subcommand, manifest.duration, path)

    return manifest


def _first_difference(recorded: Any, reproduced: Any, path: str = 'payload') -> tuple[str, Any, Any] | None:
    if isinstance(recorded, dict) and isinstance(reproduced, dict):
        for key in sorted(set(recorded) | set(reproduced)):
            if key not in recorded or key not in reproduced:
                return f'{path}.{key}', recorded.get(key), reproduced.get(key)

            if (diff := _first_difference(recorded[key], reproduced[key], f'{path}.{key}')) is not None:
                return diff

        return None

    if isinstance(recorded, list) and isinstance(reproduced, list):
        if len(recorded) != len(reproduced):
            return f'{path}.length', len(recorded), len(reproduced)

        for i, (a, b) in enumerate(zip(recorded, reproduced)):
            if (diff := _first_difference(a, b, f'{path}[{i}]')) is not None:
                return diff

        return None

    if json.dumps(recorded) != json.dumps(reproduced):
        return path, recorded, reproduced

    return None


def verify_manifest(path: str | os.PathLike[str]) -> RunManifest:
    """
    Re-execute the config embedded in a manifest and compare payloads.

    :raises MismatchDetected:   Naming the first differing field in dotted form.
    """

    manifest = RunManifest.load(path)
    reproduced = json.loads(_canonical(execute(manifest.config)))

    if _canonical(manifest.payload) != _canonical(reproduced):
        field, recorded, value = _first_difference(manifest.payload, reproduced) or ('payload', None, None)
        raise MismatchDetected(verify_manifest, field, recorded=recorded, reproduced=value)

    log.info('%s reproduces its payload', path)

    return manifest


def _floats(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in value.split(',') if v.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f'expected comma separated numbers, got {value!r}') from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='kernrank', description='Kernel rank, Taylor jet and inversion experiments')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='count', default=0, help='-v for info, -vv for debug logging')
    common.add_argument('--seed', type=int, default=0, help='Master seed of every random stream')
    common.add_argument('--output', help=f'Report path, default ${OUTPUT_DIR_ENV} or the current directory')
    common.add_argument('--format', choices=list(OutputFormat), default=OutputFormat.JSON)

    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument('--rel-threshold', type=float, default=1e-10)
    policy.add_argument('--strict-threshold', type=float, default=1e-13)
    policy.add_argument('--no-equilibrate', dest='equilibrate', action='store_false')

    kernel = argparse.ArgumentParser(add_help=False)
    kernel.add_argument('--kernel', help='family[:param=value,...], e.g. sphere-geo-sq:n=2 or dot:exp-neg')

    commands = parser.add_subparsers(dest='subcommand', required=True)

    rank_mc = commands.add_parser(
        Subcommand.RANK_MC, parents=[common, policy, kernel], help='Monte Carlo full-rank probe'
    )
    rank_mc.add_argument('--k', type=int, default=10)
    rank_mc.add_argument('--trials', type=int, default=100)
    rank_mc.add_argument('--shared-nodes', action='store_true', help='Use y_j = x_j')
    rank_mc.add_argument('--workers', type=int, default=1)

    finite = commands.add_parser(Subcommand.FINITE_RANK, parents=[common, policy, kernel], help='Finite rank estimate')
    finite.add_argument('--kmax', dest='k_max', type=int, default=8)
    finite.add_argument('--trials', type=int, default=20, help='Trials per matrix size')

    lli = commands.add_parser(Subcommand.LLI_PROBE, parents=[common, policy, kernel], help='Local independence probe')
    lli.add_argument('--family', choices=list(ProbeFamily), default=ProbeFamily.POWER)
    lli.add_argument('--window', type=_floats, required=True, help='lo,hi of the window on every axis')
    lli.add_argument('--k', type=int, default=5, help='Number of functions')
    lli.add_argument('--budget', type=int, default=64)
    lli.add_argument('--p', type=_floats)
    lli.add_argument('--direction', type=_floats)
    lli.add_argument('--radius', type=float, default=0.1)

    taylor = commands.add_parser(
        Subcommand.TAYLOR, parents=[common, kernel], help='Taylor jet against finite differences'
    )
    taylor.add_argument('--x', type=_floats, required=True, help='Frozen x, chart coordinates for sphere kernels')
    taylor.add_argument('--p', type=_floats)
    taylor.add_argument('--direction', type=_floats)
    taylor.add_argument('--order', type=int, default=6)
    taylor.add_argument('--radius', type=float, default=0.1)
    taylor.add_argument('--step', type=float, default=0.05)

    invert = commands.add_parser(Subcommand.INVERT, parents=[common, policy, kernel], help='Windowed recovery')
    invert.add_argument('--truth', default=ExperimentConfig.truth)
    invert.add_argument('--window', type=_floats, default=(0.4, 0.6))
    invert.add_argument('--k', type=int, default=12)
    invert.add_argument('--method', choices=list(SolveMethod), default=SolveMethod.TIKHONOV)
    invert.add_argument('--lambda', dest='lam', type=float)
    invert.add_argument('--r', type=int)
    invert.add_argument('--noise', type=float, default=0.0)
    invert.add_argument('--quad-nodes', type=int, default=64)
    invert.add_argument('--export', choices=list(ExportVector), default=ExportVector.FHAT)

    null = commands.add_parser(Subcommand.NULL_CHECK, parents=[common], help='Null-example moment check')
    null.add_argument('--grid', type=_floats, default=ExperimentConfig.grid)
    null.add_argument('--terms', type=int, default=30)
    null.add_argument('--quad-nodes', type=int, default=64)

    verify = commands.add_parser('verify', help='Re-run a manifest and compare payloads')
    verify.add_argument('manifest')
    verify.add_argument('-v', '--verbose', action='count', default=0)

    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{key: value for key, value in vars(args).items() if key in known})


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr
    )

    try:
        if args.subcommand == 'verify':
            verify_manifest(args.manifest)
            print(f'{args.manifest}: ok')
        else:
            manifest = run(_config_from_args(args))
            print(manifest.config.output_path)
    except CustomError as e:
        log.error('%s', e)
        return e.exit_code
    except Exception:
        log.exception('Unexpected failure')
        return 1

    return 0
