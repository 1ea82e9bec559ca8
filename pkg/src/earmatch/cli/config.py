"""Flat key=value configuration shared by every subcommand.

A config file holds one ``key = value`` assignment per line ('#' comments
and blank lines allowed). Values are coerced by the type of the field's
default. Command-line ``--set key=value`` pairs and dedicated flags apply
on top of the file, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from earmatch.errors import ConfigError
from earmatch.meshrender import CameraSpec
from earmatch.net.training import TrainConfig


@dataclass
class PipelineConfig:
    # artifact locations
    images_dir: str = ""
    landmarks_dir: str = ""
    model_path: str = "model.earmodel"
    history_csv: str = ""  # empty: derived from model_path
    factors_csv: str = ""
    cm_table_csv: str = ""
    database_csv: str = ""
    mesh_dir: str = ""
    annotations_dir: str = "annotations"
    out_dir: str = "out"
    # training
    arch: str = "canonical"  # "reduced" keeps desk-scale runs fast
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.0
    epochs: int = 300
    batch_size: int = 64
    shuffle: bool = True
    seed: int = 0
    limit: int = 0  # 0 = use every sample
    augment_train: bool = False
    eval_during_train: bool = False
    pck_threshold_px: float = 10.0
    # augmentation
    rotation_deg: float = 15.0
    # rendering camera
    camera_zoom: float = 1.0
    camera_fov_deg: float = 30.0
    camera_frame_fill: float = 0.8
    camera_distance: float = 0.0  # 0 = auto-framing
    light_x: float = 0.0
    light_y: float = 0.0
    light_z: float = 1.0
    # matching
    side: str = ""  # "", "left" or "right"
    top_k: int = 5
    use_preset_factors: bool = False
    # annotation service
    host: str = "127.0.0.1"
    port: int = 8377
    ui_dir: str = ""

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                learning_rate=self.learning_rate,
                beta1=self.beta1,
                beta2=self.beta2,
                decay=self.decay,
                epochs=self.epochs,
                batch_size=self.batch_size,
                shuffle=self.shuffle,
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def camera_spec(self) -> CameraSpec:
        try:
            return CameraSpec(
                zoom=self.camera_zoom,
                fov_deg=self.camera_fov_deg,
                frame_fill=self.camera_frame_fill,
                distance=self.camera_distance if self.camera_distance > 0 else None,
                light_direction=(self.light_x, self.light_y, self.light_z),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def side_filter(self) -> str | None:
        if self.side == "":
            return None
        if self.side not in ("left", "right"):
            raise ConfigError(f"side must be left, right or empty, got {self.side!r}")
        return self.side

    def history_path(self) -> Path:
        if self.history_csv:
            return Path(self.history_csv)
        model = Path(self.model_path)
        return model.with_name(model.stem + ".history.csv")


_FIELD_TYPES = {f.name: type(f.default) for f in fields(PipelineConfig)}

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(key: str, raw: str, where: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ConfigError(f"{where}: {key} expects true/false, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"{where}: {key} expects {kind.__name__}, got {raw!r}"
        ) from None


def _assign(config: PipelineConfig, key: str, value: str, where: str) -> None:
    key = key.strip()
    if key not in _FIELD_TYPES:
        known = ", ".join(sorted(_FIELD_TYPES))
        raise ConfigError(f"{where}: unknown config key {key!r} (known keys: {known})")
    setattr(config, key, _coerce(key, value, where))


def read_config_file(config: PipelineConfig, path: str | Path) -> None:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        _assign(config, key, value, f"{path}:{line_no}")


def load_config(path: str | None = None, overrides=()) -> PipelineConfig:
    config = PipelineConfig()
    if path:
        read_config_file(config, path)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        _assign(config, key, value, "--set")
    return config


def require_path(value: str, key: str, hint: str, directory: bool = False) -> Path:
    """Actionable startup validation for configured artifact paths."""
    if not value:
        raise ConfigError(f"{key} is not set; {hint}")
    path = Path(value)
    exists = path.is_dir() if directory else path.is_file()
    if not exists:
        kind = "directory" if directory else "file"
        raise ConfigError(f"{key} {kind} {path} does not exist; {hint}")
    return path
