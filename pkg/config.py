"""
ツールチェーン全体の設定（JSON）。読み込み順: 既定値 → 設定ファイル → コマンドラインのフラグ
"""
import json
import logging
import os
from functools import lru_cache
from typing import Optional

from flask import current_app
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from analyser.schemas import Thresholds
from body_model.kinematics import default_tree, load_tree
from camera.schemas import CameraDistribution, CameraIntrinsics, load_camera_distribution
from cli_options import CONFIG_ENV
from errors import ConfigError
from fitter.schemas import FitConfig
from pipeline.schemas import PipelineSettings
from pipeline.workers import PipelineResources
from scene_occlusion.raycast import load_scene
from scene_occlusion.schemas import BodyRadii
from synth_engine.catalogs import build_catalogs

CONFIG_KEY = "TOOLCHAIN"
DEFAULT_REF = "default"


class PathsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tree: Optional[str] = None
    scene: Optional[str] = None
    camera_distribution: Optional[str] = None
    output_dir: str = "out"


class CatalogConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_subjects: int = Field(20, ge=1)
    n_procedural_clips: int = Field(30, ge=0)
    catalog_seed: int = Field(0, ge=0)


class ToolchainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    paths: PathsConfig = PathsConfig()
    thresholds: Thresholds = Thresholds()
    fit: FitConfig = FitConfig()
    pipeline: PipelineSettings = PipelineSettings()
    catalog: CatalogConfig = CatalogConfig()
    body_radii: BodyRadii = BodyRadii()
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    seed: int = Field(0, ge=0)
    log_level: str = "INFO"

    @model_validator(mode="after")
    def check_paths(self):
        for name in ("tree", "scene", "camera_distribution"):
            path = getattr(self.paths, name)
            if path is not None and not os.path.exists(path):
                raise ValueError(f"paths.{name} のファイルが見つかりません: {path}")
        if not isinstance(logging.getLevelName(self.log_level.upper()), int):
            raise ValueError(f"不明なログレベルです: {self.log_level}")
        return self


def _merge(base, overrides):
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _validate(data, source):
    try:
        return ToolchainConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"設定が不正です（{source}）: {e}") from None


def load_config(path=None, overrides=None):
    """設定ファイル（未指定なら環境変数 GTAH_CONFIG）を読み、フラグの上書きを適用する"""
    path = path or os.environ.get(CONFIG_ENV)
    data = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"設定ファイルが見つかりません: {path}")
        with open(path, encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"設定ファイルを解析できません: {e}") from None
    return _validate(_merge(data, overrides or {}), path or "defaults")


def with_overrides(cfg, overrides):
    return _validate(_merge(cfg.model_dump(), overrides), "flags")


def get_config():
    cfg = current_app.config.get(CONFIG_KEY)
    if cfg is None:
        cfg = current_app.config[CONFIG_KEY] = load_config()
    return cfg


def resolve(config_path=None, overrides=None):
    """コマンド用: --config があれば読み直し、フラグを上書きしてアプリに保存する"""
    cfg = load_config(config_path) if config_path else get_config()
    if overrides:
        cfg = with_overrides(cfg, overrides)
    current_app.config[CONFIG_KEY] = cfg
    apply_log_level(cfg)
    return cfg


def apply_log_level(cfg):
    level = cfg.log_level.upper()
    logging.getLogger().setLevel(level)
    current_app.logger.setLevel(level)


def resolve_tree(cfg):
    return load_tree(cfg.paths.tree) if cfg.paths.tree else default_tree()


def resolve_scene(cfg):
    return load_scene(cfg.paths.scene) if cfg.paths.scene else []


def camera_distribution_ref(cfg):
    return cfg.paths.camera_distribution or DEFAULT_REF


@lru_cache(maxsize=32)
def _distribution_from_file(path, mtime):
    return load_camera_distribution(path)


def resolve_camera_distribution(ref):
    """シナリオに記録された参照（'default' またはファイルパス）から分布を得る"""
    if ref in (None, DEFAULT_REF):
        return CameraDistribution()
    if not os.path.exists(ref):
        raise FileNotFoundError(f"カメラ分布ファイルが見つかりません: {ref}")
    return _distribution_from_file(ref, os.path.getmtime(ref))


def resolve_catalogs(cfg, tree):
    return build_catalogs(tree, cfg.catalog.catalog_seed, cfg.catalog.n_subjects, cfg.catalog.n_procedural_clips)


def provenance(cfg, **extra):
    """出力ファイルに残す来歴: マスターシードと解決済み設定の写し"""
    return {"master_seed": cfg.seed, "config": cfg.model_dump(mode="json"), **extra}


def build_resources(cfg):
    """パイプラインのワーカーが共有する資源を設定から組み立てる"""
    tree = resolve_tree(cfg)
    ref = camera_distribution_ref(cfg)
    return PipelineResources(
        tree=tree,
        scene=resolve_scene(cfg),
        catalogs=resolve_catalogs(cfg, tree),
        camera_dist=resolve_camera_distribution(ref),
        intrinsics=cfg.intrinsics,
        radii=cfg.body_radii,
        thresholds=cfg.thresholds,
        fit_config=cfg.fit,
        camera_dist_ref=ref,
        config_echo=cfg.model_dump(mode="json"),
    )
