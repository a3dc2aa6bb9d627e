"""Per-run configuration read from a sectioned key-value file."""

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

from fisherflow.config.settings import OUTER_TOL, OUTPUT_DIR, TRANSPORT_MAX_ITER, TRANSPORT_TOL
from fisherflow.errors import ConfigError

Param = Tuple[str, Union[float, str]]

_STRING_KEYS = {'table', 'path'}
SECTIONS = ('mobility', 'grid', 'initial', 'time', 'cascade', 'solver', 'run')


def _parse_params(section, skip) -> Tuple[Param, ...]:
    params = []
    for key, raw in section.items():
        if key in skip:
            continue
        if key in _STRING_KEYS:
            params.append((key, raw.strip()))
            continue
        try:
            params.append((key, float(raw)))
        except ValueError:
            raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a number")
    return tuple(sorted(params))


def _float(section, key, default=None) -> Optional[float]:
    raw = section.get(key)
    if raw is None or raw.strip() == '':
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a number")


def _int(section, key, default=None) -> Optional[int]:
    value = _float(section, key, None)
    if value is None:
        return default
    if value != int(value):
        raise ConfigError(f"[{section.name}] {key} must be an integer, got {value!r}")
    return int(value)


def _bool(section, key, default=False) -> bool:
    raw = section.get(key)
    if raw is None:
        return default
    lowered = raw.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a boolean")


@dataclass(frozen=True)
class RunConfig:
    mobility_family: str
    mobility_params: Tuple[Param, ...] = ()
    length: float = 1.0
    cells: int = 128
    profile: str = 'cosine_bump'
    profile_params: Tuple[Param, ...] = ()
    mass: Optional[float] = None
    tau: float = 1e-3
    horizon: float = 1e-2
    deltas: Optional[Tuple[float, ...]] = None
    auto_schedule: bool = False
    tol: float = TRANSPORT_TOL
    tol_outer: float = OUTER_TOL
    max_iter: int = TRANSPORT_MAX_ITER
    time_slices: Optional[int] = None
    preconditioner: str = 'metric'
    oracle_tau: Optional[float] = None
    s0: Optional[float] = None
    seed: int = 0
    deterministic: bool = False
    output_dir: str = field(default_factory=lambda: str(OUTPUT_DIR))

    def __post_init__(self):
        for name in ('tol', 'tol_outer', 'tau', 'horizon', 'length'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.horizon < self.tau:
            raise ConfigError(f"horizon T = {self.horizon!r} is shorter than tau = {self.tau!r}")
        if self.cells < 8:
            raise ConfigError(f"grid needs at least 8 cells, got {self.cells}")
        if self.preconditioner not in ('metric', 'none'):
            raise ConfigError(f"preconditioner must be 'metric' or 'none', got {self.preconditioner!r}")

    @property
    def mobility_kwargs(self):
        return dict(self.mobility_params)

    @property
    def profile_kwargs(self):
        return dict(self.profile_params)

    @classmethod
    def from_text(cls, text: str) -> 'RunConfig':
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse run config: {e}")
        for name in parser.sections():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
        if not parser.has_section('mobility') or 'family' not in parser['mobility']:
            raise ConfigError("[mobility] family is required")

        def section(name):
            if not parser.has_section(name):
                parser.add_section(name)
            return parser[name]

        mob, grid, init, time_, casc, solver, run = (section(n) for n in SECTIONS)
        deltas = None
        auto = False
        raw_deltas = casc.get('deltas', '').strip()
        if raw_deltas.lower() == 'auto':
            auto = True
        elif raw_deltas:
            try:
                deltas = tuple(float(d) for d in raw_deltas.split(','))
            except ValueError:
                raise ConfigError(f"[cascade] deltas = {raw_deltas!r} is not a list of numbers")

        kwargs = dict(
            mobility_family=mob['family'].strip().lower(),
            mobility_params=_parse_params(mob, {'family'}),
            length=_float(grid, 'length', 1.0),
            cells=_int(grid, 'cells', 128),
            profile=init.get('profile', 'cosine_bump').strip().lower(),
            profile_params=_parse_params(init, {'profile', 'mass'}),
            mass=_float(init, 'mass'),
            tau=_float(time_, 'tau', 1e-3),
            horizon=_float(time_, 'horizon', 1e-2),
            deltas=deltas,
            auto_schedule=auto,
            tol=_float(solver, 'tol', TRANSPORT_TOL),
            tol_outer=_float(solver, 'tol_outer', OUTER_TOL),
            max_iter=_int(solver, 'max_iter', TRANSPORT_MAX_ITER),
            time_slices=_int(solver, 'time_slices'),
            preconditioner=solver.get('preconditioner', 'metric').strip().lower(),
            oracle_tau=_float(solver, 'oracle_tau'),
            s0=_float(solver, 's0'),
            seed=_int(run, 'seed', 0),
            deterministic=_bool(run, 'deterministic', False),
        )
        if run.get('output_dir'):
            kwargs['output_dir'] = run['output_dir'].strip()
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> 'RunConfig':
        path = Path(path)
        try:
            text = path.read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        return cls.from_text(text)

    def to_text(self) -> str:
        """Canonical text; floats use repr so parsing it back gives an equal config."""
        def fmt(value):
            return value if isinstance(value, str) else repr(float(value))

        lines = ['[mobility]', f'family = {self.mobility_family}']
        lines += [f'{k} = {fmt(v)}' for k, v in self.mobility_params]
        lines += ['', '[grid]', f'length = {self.length!r}', f'cells = {self.cells}']
        lines += ['', '[initial]', f'profile = {self.profile}']
        lines += [f'{k} = {fmt(v)}' for k, v in self.profile_params]
        if self.mass is not None:
            lines.append(f'mass = {self.mass!r}')
        lines += ['', '[time]', f'tau = {self.tau!r}', f'horizon = {self.horizon!r}']
        lines += ['', '[cascade]']
        if self.auto_schedule:
            lines.append('deltas = auto')
        elif self.deltas:
            lines.append('deltas = ' + ', '.join(repr(d) for d in self.deltas))
        lines += ['', '[solver]', f'tol = {self.tol!r}', f'tol_outer = {self.tol_outer!r}',
                  f'max_iter = {self.max_iter}', f'preconditioner = {self.preconditioner}']
        if self.time_slices is not None:
            lines.append(f'time_slices = {self.time_slices}')
        if self.oracle_tau is not None:
            lines.append(f'oracle_tau = {self.oracle_tau!r}')
        if self.s0 is not None:
            lines.append(f's0 = {self.s0!r}')
        lines += ['', '[run]', f'seed = {self.seed}', f'deterministic = {str(self.deterministic).lower()}',
                  f'output_dir = {self.output_dir}', '']
        return '\n'.join(lines)

    def config_hash(self) -> str:
        return hashlib.md5(self.to_text().encode('utf-8')).hexdigest()

    @property
    def has_schedule(self) -> bool:
        return self.auto_schedule or bool(self.deltas)
