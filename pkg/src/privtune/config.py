"""key=value config files for the CLI.

Lines hold one ``key=value`` pair; ``#`` starts a comment.  Key sets are
closed per subcommand: an unknown or duplicate key is an error rather
than a silently ignored typo.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .training import TrainConfig

TRAIN_KEYS = frozenset({
    "lr", "batch_size", "steps", "clip_c", "sigma", "alpha", "lambda1",
    "lambda2", "delta", "seed", "eval_every", "composition", "controller",
    "dataset_path", "out_dir",
})
_TRAIN_OPTIONAL = frozenset({"composition", "controller"})

SWEEP_KEYS = TRAIN_KEYS | {"lr_list", "batch_list", "replicates"}
ROBUSTNESS_KEYS = (TRAIN_KEYS - {"dataset_path"}) | {"manifest_path", "levels"}
AUDIT_KEYS = frozenset({
    "sigma", "clip_c", "alpha", "batch_size", "n_per_task", "steps",
    "delta", "composition",
})


def parse_kv_file(path, allowed: frozenset[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {stripped!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if key not in allowed:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def _require(values: dict[str, str], keys, path) -> None:
    missing = sorted(k for k in keys if k not in values)
    if missing:
        raise ConfigError(f"{path}: missing required keys: {', '.join(missing)}")


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _parse_controller(text: str) -> float:
    lowered = text.lower()
    if lowered in ("off", "false", "0"):
        return 0.0
    if lowered in ("on", "true"):
        return DEFAULT_CONTROLLER_CEILING
    return float(text)


DEFAULT_CONTROLLER_CEILING = 10.0


@dataclass(frozen=True)
class TrainFileConfig:
    train: TrainConfig
    dataset_path: str
    out_dir: str


def _train_config_from(values: dict[str, str], path) -> TrainConfig:
    _require(values, TRAIN_KEYS - _TRAIN_OPTIONAL - {"dataset_path", "out_dir"}, path)
    try:
        return TrainConfig(
            learning_rate=float(values["lr"]),
            batch_size=int(values["batch_size"]),
            steps=int(values["steps"]),
            clip_c=float(values["clip_c"]),
            sigma=float(values["sigma"]),
            alpha=_float_list(values["alpha"]),
            lambda1=float(values["lambda1"]),
            lambda2=float(values["lambda2"]),
            delta=float(values["delta"]),
            seed=int(values["seed"]),
            eval_every=int(values["eval_every"]),
            composition=values.get("composition", "parallel"),
            controller=_parse_controller(values.get("controller", "off")),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_train_config(path) -> TrainFileConfig:
    values = parse_kv_file(path, TRAIN_KEYS)
    _require(values, ("dataset_path", "out_dir"), path)
    return TrainFileConfig(_train_config_from(values, path),
                           values["dataset_path"], values["out_dir"])


@dataclass(frozen=True)
class SweepFileConfig:
    base: TrainConfig
    dataset_path: str
    out_dir: str
    learning_rates: tuple[float, ...]
    batch_sizes: tuple[int, ...]
    replicates: int


def parse_sweep_config(path) -> SweepFileConfig:
    values = parse_kv_file(path, SWEEP_KEYS)
    _require(values, ("dataset_path", "out_dir", "lr_list", "batch_list", "replicates"), path)
    base = _train_config_from(values, path)
    try:
        return SweepFileConfig(
            base=base,
            dataset_path=values["dataset_path"],
            out_dir=values["out_dir"],
            learning_rates=_float_list(values["lr_list"]),
            batch_sizes=_int_list(values["batch_list"]),
            replicates=int(values["replicates"]),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class RobustnessFileConfig:
    base: TrainConfig
    manifest_path: str
    out_dir: str
    levels: tuple[tuple[float, float], ...]


def _parse_levels(text: str) -> tuple[tuple[float, float], ...]:
    """Semicolon-separated p:b pairs, e.g. ``0:0;0.1:0;0.4:0``."""
    levels = []
    for chunk in text.split(";"):
        p, _, b = chunk.partition(":")
        levels.append((float(p), float(b) if b else 0.0))
    return tuple(levels)


def parse_robustness_config(path) -> RobustnessFileConfig:
    values = parse_kv_file(path, ROBUSTNESS_KEYS)
    _require(values, ("manifest_path", "out_dir", "levels"), path)
    base = _train_config_from(values, path)
    try:
        return RobustnessFileConfig(
            base=base,
            manifest_path=values["manifest_path"],
            out_dir=values["out_dir"],
            levels=_parse_levels(values["levels"]),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class AuditFileConfig:
    sigma: float
    clip_c: float
    alpha: tuple[float, ...]
    batch_size: int
    n_per_task: tuple[int, ...]
    steps: int
    delta: float
    composition: str


def parse_audit_config(path) -> AuditFileConfig:
    values = parse_kv_file(path, AUDIT_KEYS)
    _require(values, AUDIT_KEYS - {"composition"}, path)
    try:
        return AuditFileConfig(
            sigma=float(values["sigma"]),
            clip_c=float(values["clip_c"]),
            alpha=_float_list(values["alpha"]),
            batch_size=int(values["batch_size"]),
            n_per_task=_int_list(values["n_per_task"]),
            steps=int(values["steps"]),
            delta=float(values["delta"]),
            composition=values.get("composition", "parallel"),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
