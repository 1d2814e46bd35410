"""Run configuration: a JSON file mapped onto nested dataclasses.

Every key must be known; type and range violations raise ValidationError
carrying the dotted path of the offending field. ``HERO_SEED`` in the
environment overrides ``seed``.
"""
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

from .errors import ParseError, ValidationError
from .estimator import SolverOptions
from .features.network import Architecture
from .prior import DEFAULT_QC, PriorConfig
from .simworld import SensorParams
from .trainer import TrainConfig

SEED_ENV = "HERO_SEED"


def _items(kind, default):
    return field(default_factory=lambda: tuple(default), metadata={"items": kind})


@dataclass
class ScanSection:
    size: int = 640
    resolution: float = 0.2592
    beta: float = 3.0
    cell_size: int = 32
    min_valid_ratio: float = 0.05

    def check(self, path):
        _positive(self, path, "size", "resolution", "beta", "cell_size")
        if self.size % 2:
            raise ValidationError(f"{path}.size", "must be even")
        if self.size % self.cell_size:
            raise ValidationError(f"{path}.cell_size", "must divide the image size")
        if not 0.0 <= self.min_valid_ratio <= 1.0:
            raise ValidationError(f"{path}.min_valid_ratio", "must lie in [0, 1]")


@dataclass
class ModelSection:
    enc_channels: tuple = _items(int, (8, 16))
    temperature: float = 100.0
    normalize_descriptors: bool = True
    c: float = 1e4

    def check(self, path):
        _positive(self, path, "temperature", "c")
        if not self.enc_channels or any(ch <= 0 for ch in self.enc_channels):
            raise ValidationError(f"{path}.enc_channels", "needs at least one positive channel count")


@dataclass
class PriorSection:
    qc_diag: tuple = _items(float, DEFAULT_QC)

    def check(self, path):
        if len(self.qc_diag) != 6 or any(q <= 0 for q in self.qc_diag):
            raise ValidationError(f"{path}.qc_diag", "must hold 6 positive values")


@dataclass
class SolverSection:
    max_iterations: int = 20
    tolerance: float = 1e-6
    robust: bool = True

    def check(self, path):
        _positive(self, path, "max_iterations", "tolerance")


@dataclass
class TrainSection:
    window_size: int = 4
    learning_rate: float = 1e-5
    max_iterations: int = 2000
    alpha: float = 16.0
    eta: float = 4.0
    aug_max_angle: float = 0.26
    scalar_weight: bool = False
    no_mah_gate: bool = False
    no_masking: bool = False
    no_augmentation: bool = False
    use_eta_filter: bool = True
    checkpoint_every: int = 0

    def check(self, path):
        if self.window_size < 2:
            raise ValidationError(f"{path}.window_size", "must be at least 2")
        _positive(self, path, "alpha")
        for name in ("learning_rate", "max_iterations", "aug_max_angle", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{path}.{name}", "must be non-negative")


@dataclass
class SimSection:
    n_frames: int = 300
    dt: float = 0.25
    n_landmarks: int = 50
    traj_qc: tuple = _items(float, (0.002, 0.0005, 0.0, 0.0, 0.0, 5e-5))
    initial_speed: float = 2.0
    initial_yaw_rate: float = 0.12
    margin: float = 20.0
    n_azimuths: int = 128
    n_bins: int = 256
    range_resolution: float = 0.25
    sigma_bins: float = 1.5
    sigma_azimuth_steps: float = 1.0
    speckle: float = 0.05

    def check(self, path):
        _positive(self, path, "dt", "range_resolution", "sigma_bins", "sigma_azimuth_steps")
        if self.n_frames < 2:
            raise ValidationError(f"{path}.n_frames", "must be at least 2")
        if self.n_landmarks < 4:
            raise ValidationError(f"{path}.n_landmarks", "must be at least 4")
        if self.n_azimuths < 4 or self.n_bins < 8:
            raise ValidationError(f"{path}.n_azimuths", "scan must be at least 4 x 8")
        if len(self.traj_qc) != 6 or any(q < 0 for q in self.traj_qc):
            raise ValidationError(f"{path}.traj_qc", "must hold 6 non-negative values")
        if self.speckle < 0:
            raise ValidationError(f"{path}.speckle", "must be non-negative")

    def sensor(self):
        return SensorParams(self.n_azimuths, self.n_bins, self.range_resolution, self.sigma_bins,
                            self.sigma_azimuth_steps, self.speckle)


@dataclass
class EvalSection:
    lengths: tuple = _items(float, (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0))

    def check(self, path):
        if not self.lengths or any(L <= 0 for L in self.lengths):
            raise ValidationError(f"{path}.lengths", "must be positive")


@dataclass
class RunConfig:
    seed: int = 0
    scan: ScanSection = field(default_factory=ScanSection)
    model: ModelSection = field(default_factory=ModelSection)
    prior: PriorSection = field(default_factory=PriorSection)
    solver: SolverSection = field(default_factory=SolverSection)
    train: TrainSection = field(default_factory=TrainSection)
    sim: SimSection = field(default_factory=SimSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def check(self, path):
        if self.seed < 0:
            raise ValidationError(f"{path}seed", "must be non-negative")
        if self.sim.n_frames < self.train.window_size:
            raise ValidationError("sim.n_frames", "shorter than the window")

    # views for the individual modules
    def architecture(self):
        return Architecture(enc_channels=tuple(self.model.enc_channels),
                            score_channels=1 if self.train.scalar_weight else 3,
                            cell_size=self.scan.cell_size, temperature=self.model.temperature,
                            normalize_descriptors=self.model.normalize_descriptors)

    def train_config(self):
        t = self.train
        return TrainConfig(window_size=t.window_size, learning_rate=t.learning_rate,
                           max_iterations=t.max_iterations, alpha=t.alpha, eta=t.eta,
                           aug_max_angle=t.aug_max_angle, seed=self.seed, scalar_weight=t.scalar_weight,
                           no_mah_gate=t.no_mah_gate, no_masking=t.no_masking,
                           no_augmentation=t.no_augmentation, use_eta_filter=t.use_eta_filter,
                           checkpoint_every=t.checkpoint_every, c=self.model.c,
                           min_valid_ratio=self.scan.min_valid_ratio, beta=self.scan.beta,
                           prior=PriorConfig(tuple(self.prior.qc_diag)),
                           solver=SolverOptions(self.solver.max_iterations, self.solver.tolerance,
                                                self.solver.robust))


def _positive(obj, path, *names):
    for name in names:
        if not getattr(obj, name) > 0:
            raise ValidationError(f"{path}.{name}", "must be positive")


def _coerce(value, kind, path):
    if kind is bool:
        if not isinstance(value, bool):
            raise ValidationError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, f"expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ValidationError(path, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ValidationError(path, "must be finite")
    return float(value)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ValidationError(path or "<root>", "expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in known:
            raise ValidationError(sub, "unknown key")
        f = known[key]
        if dataclasses.is_dataclass(f.default_factory if f.default_factory is not dataclasses.MISSING else None):
            kwargs[key] = _build(f.default_factory, value, sub)
        elif "items" in f.metadata:
            if not isinstance(value, list):
                raise ValidationError(sub, "expected a list")
            kwargs[key] = tuple(_coerce(v, f.metadata["items"], f"{sub}[{i}]") for i, v in enumerate(value))
        else:
            kwargs[key] = _coerce(value, f.type, sub)
    obj = cls(**kwargs)
    obj.check(path)
    return obj


def from_dict(data):
    cfg = _build(RunConfig, data, "")
    for f in dataclasses.fields(cfg):
        sec = getattr(cfg, f.name)
        if dataclasses.is_dataclass(sec):
            sec.check(f.name)
    return cfg


def to_dict(cfg):
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return list(v)
        return v
    return conv(cfg)


def apply_env(cfg, environ=None):
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is not None and raw.strip():
        try:
            seed = int(raw)
        except ValueError as exc:
            raise ValidationError("seed", f"{SEED_ENV}={raw!r} is not an integer") from exc
        if seed < 0:
            raise ValidationError("seed", f"{SEED_ENV} must be non-negative")
        cfg.seed = seed
    return cfg


def loads(text, environ=None):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return apply_env(from_dict(data), environ)


def load_config(path, environ=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8") from exc
    return loads(text, environ)


def dumps(cfg):
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def write_config(path, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg) + "\n")


def simulator_preset():
    """Desk-scale settings used for simulator runs and the acceptance benchmark."""
    cfg = RunConfig()
    cfg.scan = ScanSection(size=128, resolution=0.5, beta=3.0, cell_size=16, min_valid_ratio=0.05)
    cfg.train.learning_rate = 1e-3
    cfg.eval = EvalSection(tuple(float(L) for L in range(10, 81, 10)))
    return cfg
