"""Run configuration and output manifest management."""

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .data import DEFAULT_FRACTIONS, GeneratorParams
from .errors import ConfigError, ReserveSetError
from .evaluation import EvalConfig
from .train import ContextualConfig, TrainConfig

MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"


@dataclass(frozen=True)
class DataConfig:
    params: GeneratorParams = field(default_factory=GeneratorParams)
    n_hours: int = 4096
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS


@dataclass(frozen=True)
class SystemConfig:
    seed: int = 42
    path: str | None = None  # JSON ZonalSystem; overrides the built-in ten-zone system


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    system: SystemConfig = field(default_factory=SystemConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    contextual: ContextualConfig = field(default_factory=ContextualConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


NESTED = {
    RunConfig: {
        "data": DataConfig,
        "system": SystemConfig,
        "train": TrainConfig,
        "contextual": ContextualConfig,
        "eval": EvalConfig,
    },
    DataConfig: {"params": GeneratorParams},
}


def _build(cls: type, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError("Expected a JSON object", prefix or "<root>")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError("Unknown configuration key", path)
        nested = NESTED.get(cls, {}).get(key)
        if nested is not None:
            kwargs[key] = _build(nested, value, path)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ReserveSetError, TypeError, ValueError) as err:
        raise ConfigError(f"Invalid configuration section ({err})", prefix or "<root>") from err


def config_from_dict(data: dict, seed: int | None = None) -> RunConfig:
    config = _build(RunConfig, data, "")
    return with_seed(config, seed) if seed is not None else config


def load_config(path: Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return config_from_dict({}, seed)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON ({err.msg} at line {err.lineno})") from err
    return config_from_dict(data, seed)


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    """Override every section seed."""
    replace = dataclasses.replace
    return replace(
        config,
        data=replace(config.data, params=replace(config.data.params, seed=seed)),
        system=replace(config.system, seed=seed),
        train=replace(config.train, seed=seed),
        contextual=replace(config.contextual, seed=seed),
        eval=replace(config.eval, seed=seed),
    )


def config_to_json(config: RunConfig) -> dict:
    return json.loads(json.dumps(asdict(config)))


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config_to_json(config), sort_keys=True, separators=(",", ":"))
    return f"sha256-{hashlib.sha256(canonical.encode()).hexdigest()}"


def write_config(config: RunConfig, path: Path) -> None:
    path.write_text(json.dumps(config_to_json(config), indent=2) + "\n")


@dataclass
class FileEntry:
    name: str
    integrity: str  # SHA256 of the written file
    size: int


@dataclass
class Manifest:
    version: int = 1
    tool_version: str = __version__
    config_hash: str = ""
    files: dict[str, FileEntry] = field(default_factory=dict)


def compute_integrity(path: Path) -> str:
    return f"sha256-{hashlib.sha256(path.read_bytes()).hexdigest()}"


def read_manifest(path: Path) -> Manifest:
    if not path.exists():
        return Manifest()

    data = json.loads(path.read_text())
    return Manifest(
        version=data.get("version", 1),
        tool_version=data.get("tool_version", ""),
        config_hash=data.get("config_hash", ""),
        files={name: FileEntry(**entry) for name, entry in data.get("files", {}).items()},
    )


def write_manifest(manifest: Manifest, path: Path) -> None:
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")


def record_outputs(directory: Path, config: RunConfig, paths: list[Path]) -> Manifest:
    """Archive the config next to the outputs and write the directory manifest."""
    write_config(config, directory / CONFIG_NAME)
    manifest_path = directory / MANIFEST_NAME
    manifest = read_manifest(manifest_path)
    manifest.tool_version = __version__
    manifest.config_hash = config_hash(config)
    for path in [*paths, directory / CONFIG_NAME]:
        manifest.files[path.name] = FileEntry(path.name, compute_integrity(path), path.stat().st_size)
    manifest.files = dict(sorted(manifest.files.items()))
    write_manifest(manifest, manifest_path)
    return manifest


def verify_manifest(directory: Path) -> list[str]:
    """Names of files whose content no longer matches the manifest."""
    manifest = read_manifest(directory / MANIFEST_NAME)
    return [
        name
        for name, entry in manifest.files.items()
        if not (directory / name).exists() or compute_integrity(directory / name) != entry.integrity
    ]
