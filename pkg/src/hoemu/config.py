"""Run configuration: defaults, validation, JSON round trip and overrides.

Values are resolved in increasing priority: built-in defaults, a JSON
config file, ``HOEMU_<NAME>`` environment variables, then command-line
flags.
"""

import json
import os
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError
from .io import dumps

ENV_PREFIX = "HOEMU_"
SCHEMA = "hoemu.config/1"

FRAMEWORKS = ("output", "loss")
INTERPOLATORS = ("local", "lowrank")
LOSSES = ("euclidean", "mahalanobis")
INIT_MODES = ("pilot", "previous", "default")
DIRECTIONS = ("fibre", "sheet")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a pipeline run.

    Paths default to empty (unset). Counts and seeds are ints, scales and
    tolerances floats.
    """

    # paths
    train: str = ""
    test: str = ""
    observed: str = ""
    emulator: str = ""
    out_dir: str = "."
    # methods
    framework: str = "output"
    interpolator: str = "local"
    loss: str = "euclidean"
    init: str = "pilot"
    log_transform: bool = False
    # design
    n_train: int = 10000
    n_test: int = 100
    skip: int = 1
    lo: float = 0.1
    hi: float = 5.0
    # surrogates
    k: int = 100
    restarts: int = 3
    noise_init: float = 1e-2
    n_r: int = 2000
    rank_output: int = 2000
    rank_loss: int = 1000
    lowrank_seed: int = 0
    sigma: float = 1.0
    # optimizer
    seed: int = 0
    trial_points: int = 2000
    stage_one_points: int = 400
    local_runs: int = 10
    starts: int = 50
    maxiter: int = 100
    fd_step: float = 1e-6
    # uncertainty and curves
    hessian_step: float = 1e-3
    n_samples: int = 1000
    level: float = 0.95
    lambda_min: float = 1.0
    lambda_max: float = 1.3
    n_lambda: int = 31
    # execution
    threads: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        choices = {
            "framework": FRAMEWORKS,
            "interpolator": INTERPOLATORS,
            "loss": LOSSES,
            "init": INIT_MODES,
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name}={getattr(self, name)!r}; choose from {', '.join(allowed)}")
        positive = (
            "n_train", "n_test", "k", "n_r", "rank_output", "rank_loss", "trial_points",
            "stage_one_points", "local_runs", "starts", "maxiter", "n_samples", "n_lambda",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("restarts", "skip", "seed", "lowrank_seed", "threads"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("noise_init", "sigma", "fd_step", "hessian_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lo < self.hi:
            raise ConfigError(f"need lo < hi, got lo={self.lo}, hi={self.hi}")
        if max(self.rank_output, self.rank_loss) > self.n_r:
            raise ConfigError("ranks rank_output and rank_loss cannot exceed n_r")
        if self.stage_one_points > self.trial_points:
            raise ConfigError("stage_one_points cannot exceed trial_points")
        if not 0 < self.level < 1:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if not 1.0 <= self.lambda_min <= self.lambda_max:
            raise ConfigError("need 1 <= lambda_min <= lambda_max")

    def to_dict(self):
        return {"schema": SCHEMA, **asdict(self)}

    def dumps(self):
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        schema = data.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigError(f"unsupported config schema {schema!r}")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k], v, k) for k, v in data.items()})

    @classmethod
    def loads(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.loads(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def with_env(self, environ=None):
        """Overrides from ``HOEMU_<FIELD>`` variables (field name upper-cased)."""
        environ = os.environ if environ is None else environ
        updates = {}
        for f in fields(self):
            key = ENV_PREFIX + f.name.upper()
            if key in environ:
                updates[f.name] = _coerce(f, environ[key], key)
        return replace(self, **updates) if updates else self

    def with_overrides(self, **values):
        """Replace the given fields, ignoring ``None`` values."""
        known = {f.name: f for f in fields(self)}
        updates = {}
        for k, v in values.items():
            if v is None:
                continue
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            updates[k] = _coerce(known[k], v, k)
        return replace(self, **updates) if updates else self


def _coerce(f, value, where):
    kind = f.type if isinstance(f.type, type) else {"str": str, "int": int, "float": float, "bool": bool}[f.type]
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"not an integer: {value!r}")
            return int(value) if not isinstance(value, str) else int(value.strip())
        if kind is float:
            if isinstance(value, bool):
                raise ValueError(f"not a number: {value!r}")
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def resolve(path=None, environ=None, **overrides):
    """Defaults, then ``path``, then the environment, then ``overrides``."""
    cfg = RunConfig.load(path) if path else RunConfig()
    return cfg.with_env(environ).with_overrides(**overrides)
