"""Experiment configuration loaded from YAML.

A config file may contain only these top-level sections:

    problem:      {f: [{k: [1, 0], a: 1.0, b: 0.0}, ...], mu: [...]}
    tolerances:   any Tolerances field
    lambdas:      [0.05, 0.1, ...]
    output:       directory for report.json, tables/ and witnesses/
    workers:      process pool size
    seed:         seed for the perturbation utilities
    foldtest:     {epsilons: [...], delta: 0.5}
    convergence:  [0.4, 0.2, 0.1, 0.05]
"""
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import yaml
from django.conf import settings

from .exceptions import ConfigError
from .field import Problem, TorusField, Tolerances, default_fields
from .foldtest import DEFAULT_DELTA, DEFAULT_EPSILONS

logger = logging.getLogger(__name__)

SWEEP_LAMBDAS = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 4.0, 8.0)
CONVERGENCE_LAMBDAS = (0.4, 0.2, 0.1, 0.05)
TOP_LEVEL_KEYS = {'problem', 'tolerances', 'lambdas', 'output', 'workers', 'seed', 'foldtest', 'convergence'}


def _tolerances_from(data):
    unknown = set(data) - {fd.name for fd in fields(Tolerances)}
    if unknown:
        raise ConfigError(f"Unknown tolerance keys: {sorted(unknown)}")
    base = Tolerances()
    try:
        values = {k: type(getattr(base, k))(v) for k, v in data.items()}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid tolerance value: {e}") from e
    return replace(base, **values)


def _float_list(data, name):
    if not isinstance(data, (list, tuple)) or not data:
        raise ConfigError(f"'{name}' must be a non-empty list of numbers")
    try:
        return tuple(float(v) for v in data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"'{name}' must be a list of numbers: {e}") from e


@dataclass(frozen=True)
class RunConfig:
    f: TorusField
    mu: TorusField
    tolerances: Tolerances = field(default_factory=Tolerances)
    lambdas: Tuple[float, ...] = SWEEP_LAMBDAS
    output: Optional[str] = None
    workers: int = 1
    seed: int = 0
    fold_epsilons: Tuple[float, ...] = DEFAULT_EPSILONS
    fold_delta: float = DEFAULT_DELTA
    convergence_lambdas: Tuple[float, ...] = CONVERGENCE_LAMBDAS

    @classmethod
    def default(cls):
        f, mu = default_fields()
        return cls(f=f, mu=mu, workers=int(getattr(settings, 'MORSE_WORKERS', 1)))

    @classmethod
    def from_dict(cls, data):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("Config root must be a mapping")
        unknown = set(data) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
        base = cls.default()
        problem = data.get('problem') or {}
        if set(problem) - {'f', 'mu'}:
            raise ConfigError(f"Unknown problem keys: {sorted(set(problem) - {'f', 'mu'})}")
        foldtest = data.get('foldtest') or {}
        if set(foldtest) - {'epsilons', 'delta'}:
            raise ConfigError(f"Unknown foldtest keys: {sorted(set(foldtest) - {'epsilons', 'delta'})}")
        try:
            workers = int(data.get('workers', base.workers))
            seed = int(data.get('seed', 0))
            fold_delta = float(foldtest.get('delta', DEFAULT_DELTA))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid scalar setting: {e}") from e
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        lambdas = _float_list(data['lambdas'], 'lambdas') if 'lambdas' in data else SWEEP_LAMBDAS
        if any(lam <= 0 for lam in lambdas):
            raise ConfigError(f"lambdas must be positive, got {lambdas}")
        return cls(
            f=TorusField.from_json(problem['f']) if 'f' in problem else base.f,
            mu=TorusField.from_json(problem['mu']) if 'mu' in problem else base.mu,
            tolerances=_tolerances_from(data.get('tolerances') or {}),
            lambdas=lambdas,
            output=data.get('output'),
            workers=workers,
            seed=seed,
            fold_epsilons=_float_list(foldtest['epsilons'], 'foldtest.epsilons')
            if 'epsilons' in foldtest else DEFAULT_EPSILONS,
            fold_delta=fold_delta,
            convergence_lambdas=_float_list(data['convergence'], 'convergence')
            if 'convergence' in data else CONVERGENCE_LAMBDAS,
        )

    @classmethod
    def load(cls, path=None):
        """Read a YAML config; no path (and no MORSE_DEFAULT_CONFIG) means the built-in default."""
        path = path or getattr(settings, 'MORSE_DEFAULT_CONFIG', None)
        if not path:
            logger.info("No config file given, using the built-in default problem")
            return cls.default()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        logger.info(f"Loaded config from {path}")
        return cls.from_dict(data)

    def to_dict(self):
        return {
            'problem': {'f': self.f.to_json(), 'mu': self.mu.to_json()},
            'tolerances': asdict(self.tolerances),
            'lambdas': list(self.lambdas),
            'output': self.output,
            'workers': self.workers,
            'seed': self.seed,
            'foldtest': {'epsilons': list(self.fold_epsilons), 'delta': self.fold_delta},
            'convergence': list(self.convergence_lambdas),
        }

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest_data(self):
        """Config content that determines results; workers and output are excluded."""
        data = self.to_dict()
        data.pop('workers')
        data.pop('output')
        return data

    def problem(self):
        return Problem(f=self.f, mu=self.mu, tol=self.tolerances)

    def output_dir(self):
        return Path(self.output or getattr(settings, 'MORSE_OUTPUT_DIR', None) or os.path.join(os.getcwd(), 'runs'))

    def with_overrides(self, **overrides):
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides)

    def rng(self):
        return np.random.default_rng(self.seed)
