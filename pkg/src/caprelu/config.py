"""
Experiment configuration: dataclasses with per-kind defaults, TOML loading
and command-line overrides.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .attacks import ATTACK_KINDS, CwConfig, LinfAttackConfig
from .errors import ConfigError

logger = logging.getLogger(__name__)

PERTURBATION_GROWTH = "perturbation-growth"
CAP_SWEEP = "cap-sweep"
CAP_ORDER = "cap-order"
ZERO_GRAD = "zero-grad"
SENSITIVITY = "sensitivity"
ADV_TRAIN_TABLE = "adv-train-table"

EXPERIMENT_KINDS = (PERTURBATION_GROWTH, CAP_SWEEP, CAP_ORDER, ZERO_GRAD, SENSITIVITY, ADV_TRAIN_TABLE)
# report rows of these kinds carry no architecture column
SINGLE_ARCH_KINDS = (PERTURBATION_GROWTH, SENSITIVITY, ADV_TRAIN_TABLE)

UNCAPPED = "uncapped"

# where perturbation-growth takes its adversarial examples from
GROWTH_SOURCES = ("uncapped", "self")

GENERAL_DIMS = [784, 392, 196, 10]
REVERSED_DIMS = [784, 196, 392, 10]
EQUAL_DIMS = [784, 784, 784, 10]
GROWTH_DIMS = [784, 392, 196, 98, 10]


def parse_cap_layers(text):
    """
    "HL1" -> (0,), "HL12" -> (0, 1), "HL123" -> (0, 1, 2), "none" -> ().
    """
    label = str(text).strip()
    if label.lower() in ("none", ""):
        return ()
    if not label.upper().startswith("HL") or not label[2:].isdigit():
        raise ConfigError(f"Bad cap placement '{text}', expected e.g. HL1, HL12, HL123 or none")
    indices = tuple(sorted({int(d) - 1 for d in label[2:]}))
    if indices[0] < 0:
        raise ConfigError(f"Bad cap placement '{text}': hidden layers are numbered from 1")
    return indices


def cap_layers_label(indices):
    indices = sorted(indices)
    return "HL" + "".join(str(i + 1) for i in indices) if indices else "none"


def parse_train_beta(value):
    """A positive cap value, or None for an uncapped (plain ReLU) network"""
    if value is None or (isinstance(value, str) and value.strip().lower() == UNCAPPED):
        return None
    try:
        beta = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Bad train beta '{value}', expected a number or '{UNCAPPED}'")
    if not beta > 0 or not math.isfinite(beta):
        raise ConfigError(f"Train beta must be positive and finite, got {value}")
    return beta


def format_beta(beta):
    return UNCAPPED if beta is None else f"{beta:g}"


@dataclass
class TrainingConfig:
    epochs: int = 20
    lr: float = 0.001
    batch_size: int = 128
    seed: int = 0


@dataclass
class AdvTrainingConfig:
    regimes: Tuple[str, ...] = ("none", "fgsm", "pgd")
    epochs: int = 10
    epsilon: float = 0.1
    step_size: float = 0.01
    max_iter: int = 10
    mixed: bool = False


@dataclass
class SweepConfig:
    start: float = 0.01
    end: float = 0.15
    step: float = 0.01

    def values(self):
        """Evaluation caps from start to end inclusive, rounded to kill float drift"""
        count = int(math.floor((self.end - self.start) / self.step + 1e-9)) + 1
        return [round(self.start + i * self.step, 10) for i in range(count)]


@dataclass
class DataConfig:
    dir: Optional[str] = None
    subset: int = 0
    train_subset: int = 0
    shuffle_seed: int = 0


@dataclass
class ProbeConfig:
    epsilon: float = math.inf
    step_size: float = 2 / 256
    max_iter: int = 200
    grad_tolerance: float = 1e-12

    def to_attack_config(self):
        return LinfAttackConfig(self.epsilon, self.step_size, self.max_iter)


@dataclass
class ExperimentConfig:
    kind: str
    architectures: Dict[str, List[int]]
    cap_layers: List[str]
    train_betas: list
    output_dir: str = "results"
    workers: int = 1
    checkpoint_dir: Optional[str] = None
    data: DataConfig = field(default_factory=DataConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    adv_training: AdvTrainingConfig = field(default_factory=AdvTrainingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    fgsm_epsilon: float = 0.1
    pgd: LinfAttackConfig = field(default_factory=LinfAttackConfig.table_defaults)
    pgd_source: str = "uncapped"
    cw: CwConfig = field(default_factory=CwConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    image_ids: List[int] = field(default_factory=list)
    smap_digit: Optional[int] = 5

    def __post_init__(self):
        self.validate()

    @property
    def placements(self):
        return [(label, parse_cap_layers(label)) for label in self.cap_layers]

    @property
    def betas(self):
        return [parse_train_beta(b) for b in self.train_betas]

    def validate(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"Unknown experiment kind '{self.kind}', expected one of {EXPERIMENT_KINDS}")
        if self.sweep.step <= 0:
            raise ConfigError(f"sweep.step must be > 0, got {self.sweep.step}")
        if self.sweep.start <= 0 or self.sweep.start > self.sweep.end:
            raise ConfigError(
                f"sweep needs 0 < start <= end, got start={self.sweep.start} end={self.sweep.end}"
            )
        if self.workers < 1:
            raise ConfigError(f"experiment.workers must be >= 1, got {self.workers}")
        if self.training.epochs < 0 or self.adv_training.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.training.batch_size < 1:
            raise ConfigError(f"training.batch_size must be >= 1, got {self.training.batch_size}")
        if not self.architectures:
            raise ConfigError("At least one architecture is required")
        if self.kind in SINGLE_ARCH_KINDS and len(self.architectures) != 1:
            raise ConfigError(f"{self.kind} runs on exactly one architecture, got {len(self.architectures)}")
        if self.kind in (SENSITIVITY, ADV_TRAIN_TABLE) and len(self.cap_layers) != 1:
            raise ConfigError(f"{self.kind} takes exactly one cap placement, got {self.cap_layers}")
        for regime in self.adv_training.regimes:
            if regime not in ATTACK_KINDS or regime == "cw":
                raise ConfigError(f"Unknown adversarial-training regime '{regime}'")
        if self.pgd_source not in GROWTH_SOURCES:
            raise ConfigError(f"[attack.pgd].source must be one of {GROWTH_SOURCES}, got '{self.pgd_source}'")
        # cells sharing a key would collide in the report after all the training
        _reject_duplicates("adv_training.regimes", self.adv_training.regimes, str)
        _reject_duplicates("train_betas", self.train_betas, lambda b: format_beta(parse_train_beta(b)))
        _reject_duplicates("cap_layers", self.cap_layers, parse_cap_layers)
        self.probe.to_attack_config()
        for name, dims in self.architectures.items():
            if len(dims) < 3 or any(int(d) <= 0 for d in dims):
                raise ConfigError(f"Architecture '{name}' needs input, hidden and output sizes, got {dims}")
            n_hidden = len(dims) - 2
            for label, indices in self.placements:
                if any(i >= n_hidden for i in indices):
                    raise ConfigError(
                        f"Cap placement {label} refers to a layer missing from '{name}' ({n_hidden} hidden layers)"
                    )

    def to_dict(self):
        return dataclasses.asdict(self)


def _reject_duplicates(name, values, key):
    seen = {}
    for value in values:
        k = key(value)
        if k in seen:
            raise ConfigError(f"{name} lists the same entry twice: {seen[k]!r} and {value!r}")
        seen[k] = value


def _coerce(name, convert, value):
    try:
        return convert(value)
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"Invalid {name} {value!r}: {exc}") from exc


def _as_list(value):
    if not isinstance(value, (list, tuple)):
        raise TypeError("expected a list")
    return list(value)


def _int_list(value):
    return [int(v) for v in _as_list(value)]


def _default_kwargs(kind):
    sweep_betas = [0.01, 0.1, 1.0]
    table_betas = [UNCAPPED, 1.0, 0.1, 0.01]
    if kind == PERTURBATION_GROWTH:
        return dict(architectures={"growth": GROWTH_DIMS},
                    cap_layers=["HL1", "HL2", "HL3", "HL123"],
                    train_betas=[0.01, 0.1, 1.0, 10.0, 100.0],
                    pgd=LinfAttackConfig.growth_defaults())
    if kind == CAP_SWEEP:
        return dict(architectures={"general": GENERAL_DIMS, "reversed": REVERSED_DIMS},
                    cap_layers=["HL1", "HL2", "HL12"], train_betas=sweep_betas)
    if kind == CAP_ORDER:
        return dict(architectures={"equal": EQUAL_DIMS},
                    cap_layers=["HL1", "HL2", "HL12"], train_betas=sweep_betas)
    if kind == ZERO_GRAD:
        return dict(architectures={"general": GENERAL_DIMS, "reversed": REVERSED_DIMS,
                                   "equal": EQUAL_DIMS},
                    cap_layers=["HL1", "HL2", "HL12"], train_betas=sweep_betas)
    if kind == SENSITIVITY:
        return dict(architectures={"general": GENERAL_DIMS}, cap_layers=["HL2"],
                    train_betas=table_betas, data=DataConfig(subset=100))
    if kind == ADV_TRAIN_TABLE:
        return dict(architectures={"general": GENERAL_DIMS}, cap_layers=["HL2"],
                    train_betas=table_betas)
    raise ConfigError(f"Unknown experiment kind '{kind}', expected one of {EXPERIMENT_KINDS}")


def _merge(obj, table, section):
    """Return a copy of dataclass `obj` with the keys of `table` applied"""
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name: f for f in dataclasses.fields(obj)}
    unknown = sorted(set(table) - set(names))
    if unknown:
        raise ConfigError(f"Unknown key(s) in [{section}]: {', '.join(unknown)}")
    values = {}
    try:
        for key, value in table.items():
            current = getattr(obj, key)
            if isinstance(current, tuple):
                value = tuple(value)
            elif isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            values[key] = value
        return dataclasses.replace(obj, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid [{section}]: {exc}") from exc


def read_toml(path):
    path = Path(path)
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Config file {path} is not valid TOML: {exc}") from exc


_TOP_LEVEL_KEYS = {"experiment", "data", "training", "adv_training", "sweep", "attack", "probe",
                   "architectures", "cap_layers", "train_betas", "image_ids", "smap_digit"}


def build_config(raw, kind=None, overrides=None):
    """
    Turn a parsed TOML document into an ExperimentConfig.

    Args:
        raw: dict as returned by tomllib
        kind: experiment kind; falls back to [experiment].kind
        overrides: optional dict of command-line overrides (subset, train_subset,
            cw_iters, cw_searches, epochs, workers, output, seed, data_dir)

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: unknown kind, unknown keys, invalid values
    """
    raw = dict(raw or {})
    unknown = sorted(set(raw) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"Unknown config section(s): {', '.join(unknown)}")
    experiment = dict(raw.get("experiment", {}))
    kind = kind or experiment.pop("kind", None)
    experiment.pop("kind", None)
    if kind is None:
        raise ConfigError("No experiment kind given (argument or [experiment].kind)")

    kwargs = _default_kwargs(kind)
    kwargs["kind"] = kind
    for key in ("output_dir", "checkpoint_dir"):
        if key in experiment:
            kwargs[key] = experiment.pop(key)
    if "workers" in experiment:
        kwargs["workers"] = _coerce("experiment.workers", int, experiment.pop("workers"))
    if experiment:
        raise ConfigError(f"Unknown key(s) in [experiment]: {', '.join(sorted(experiment))}")

    if "architectures" in raw:
        archs = raw["architectures"]
        if not isinstance(archs, dict):
            raise ConfigError(f"architectures must be a table of name = [sizes], got {archs!r}")
        kwargs["architectures"] = {name: _coerce(f"architectures.{name}", _int_list, dims)
                                   for name, dims in archs.items()}
    for key in ("cap_layers", "train_betas"):
        if key in raw:
            kwargs[key] = _coerce(key, _as_list, raw[key])
    if "image_ids" in raw:
        kwargs["image_ids"] = _coerce("image_ids", _int_list, raw["image_ids"])
    if "smap_digit" in raw:
        kwargs["smap_digit"] = _coerce("smap_digit", int, raw["smap_digit"])

    kwargs["data"] = _merge(kwargs.get("data", DataConfig()), raw.get("data", {}), "data")
    kwargs["training"] = _merge(TrainingConfig(), raw.get("training", {}), "training")
    kwargs["adv_training"] = _merge(AdvTrainingConfig(), raw.get("adv_training", {}), "adv_training")
    kwargs["sweep"] = _merge(SweepConfig(), raw.get("sweep", {}), "sweep")
    kwargs["probe"] = _merge(ProbeConfig(), raw.get("probe", {}), "probe")

    attack = raw.get("attack", {})
    unknown = sorted(set(attack) - {"fgsm", "pgd", "cw"})
    if unknown:
        raise ConfigError(f"Unknown attack table(s): {', '.join(unknown)}")
    fgsm_table = dict(attack.get("fgsm", {}))
    if set(fgsm_table) - {"epsilon"}:
        raise ConfigError("[attack.fgsm] only accepts 'epsilon'")
    kwargs["fgsm_epsilon"] = _coerce("[attack.fgsm].epsilon", float, fgsm_table.get("epsilon", 0.1))
    pgd_table = attack.get("pgd", {})
    if isinstance(pgd_table, dict) and "source" in pgd_table:
        pgd_table = dict(pgd_table)
        kwargs["pgd_source"] = str(pgd_table.pop("source"))
    kwargs["pgd"] = _merge(kwargs.get("pgd", LinfAttackConfig.table_defaults()), pgd_table, "attack.pgd")
    kwargs["cw"] = _merge(CwConfig(), attack.get("cw", {}), "attack.cw")

    cfg = _apply_overrides(kwargs, overrides or {})
    logger.debug("loaded %s config: %s", kind, cfg)
    return cfg


def _apply_overrides(kwargs, overrides):
    overrides = {k: v for k, v in overrides.items() if v is not None}
    data_changes = {}
    if "subset" in overrides:
        data_changes["subset"] = int(overrides["subset"])
    if "train_subset" in overrides:
        data_changes["train_subset"] = int(overrides["train_subset"])
    if "data_dir" in overrides:
        data_changes["dir"] = str(overrides["data_dir"])
    if data_changes:
        kwargs["data"] = dataclasses.replace(kwargs["data"], **data_changes)

    cw_changes = {}
    if "cw_iters" in overrides:
        cw_changes["max_iter"] = int(overrides["cw_iters"])
    if "cw_searches" in overrides:
        cw_changes["binary_search_steps"] = int(overrides["cw_searches"])
    if cw_changes:
        try:
            kwargs["cw"] = dataclasses.replace(kwargs["cw"], **cw_changes)
        except ValueError as exc:
            raise ConfigError(f"Invalid CW override: {exc}") from exc

    training_changes = {}
    if "epochs" in overrides:
        training_changes["epochs"] = int(overrides["epochs"])
    if "seed" in overrides:
        training_changes["seed"] = int(overrides["seed"])
    if training_changes:
        kwargs["training"] = dataclasses.replace(kwargs["training"], **training_changes)

    if "workers" in overrides:
        kwargs["workers"] = int(overrides["workers"])
    if "output" in overrides:
        kwargs["output_dir"] = str(overrides["output"])
    return ExperimentConfig(**kwargs)


def load_config(path=None, kind=None, overrides=None):
    """Read a TOML file (or nothing, for pure defaults) into an ExperimentConfig"""
    raw = read_toml(path) if path else {}
    return build_config(raw, kind=kind, overrides=overrides)
