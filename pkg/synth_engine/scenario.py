"""
シナリオファイル生成: 被写体・アクション・場所・カメラ・天候・時刻をランダムに決める
"""
import json
import math
import os
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from errors import CatalogError, SequenceFormatError

SPEC_FORMAT = "gtah-scenario"
SPEC_VERSION = 1

WEATHER_TAGS = ("clear", "extrasunny", "clouds", "overcast", "rain", "thunder", "foggy", "snow", "blizzard")
LOCATION_CATEGORIES = ("city_street", "suburb", "countryside", "coast", "mountain", "desert")

Weather = Literal["clear", "extrasunny", "clouds", "overcast", "rain", "thunder", "foggy", "snow", "blizzard"]
LocationCategory = Literal["city_street", "suburb", "countryside", "coast", "mountain", "desert"]


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sequence_id: str = Field(min_length=1)
    seed: int = Field(ge=0)
    subject_id: int = Field(ge=0)
    action_id: int = Field(ge=0)
    location: List[float]
    location_category: LocationCategory = "city_street"
    heading: float = 0.0
    camera_seed: int = Field(ge=0)
    camera_distribution: str = "default"
    weather: Weather = "clear"
    time_of_day: float = Field(12.0, ge=0.0, lt=24.0)

    @field_validator("location")
    @classmethod
    def check_location(cls, v):
        if len(v) != 3 or not all(math.isfinite(x) for x in v):
            raise ValueError("location は有限な3成分でなければなりません")
        return v

    def check_catalogs(self, catalogs):
        catalogs.subject(self.subject_id)
        catalogs.action(self.action_id)
        return self


SCENARIO_ATTRIBUTES = (
    "location", "subject", "action", "location_category", "heading", "camera", "weather", "time_of_day",
)


def attribute_streams(seed):
    """シードから属性ごとに独立な乱数列を作る（SeedSequence.spawn）"""
    children = np.random.SeedSequence(seed).spawn(len(SCENARIO_ATTRIBUTES))
    return {name: np.random.default_rng(child) for name, child in zip(SCENARIO_ATTRIBUTES, children)}


def generate_scenario(seed, catalogs, camera_dist="default", sequence_id=None, location_extent=5.0):
    """シードから決定的にシナリオを作る。各属性は独立な乱数列からサンプルする"""
    if not catalogs.subjects or not catalogs.actions:
        raise CatalogError("カタログが空です")
    rng = attribute_streams(seed)
    x, z = rng["location"].uniform(-location_extent, location_extent, size=2)
    spec = ScenarioSpec(
        sequence_id=sequence_id or f"seq_{seed}",
        seed=int(seed),
        subject_id=int(rng["subject"].integers(len(catalogs.subjects))),
        action_id=int(rng["action"].integers(len(catalogs.actions))),
        location=[float(x), 0.0, float(z)],
        location_category=LOCATION_CATEGORIES[int(rng["location_category"].integers(len(LOCATION_CATEGORIES)))],
        heading=float(rng["heading"].uniform(0.0, 2.0 * math.pi)),
        camera_seed=int(rng["camera"].integers(2**31)),
        camera_distribution=camera_dist,
        weather=WEATHER_TAGS[int(rng["weather"].integers(len(WEATHER_TAGS)))],
        time_of_day=float(rng["time_of_day"].uniform(0.0, 24.0)),
    )
    return spec


def scenario_seeds(seed, n):
    """マスターシードから系列ごとの (ID, シード) を作る"""
    seeds = np.random.SeedSequence(seed).generate_state(n) if n else []
    return [(f"seq_{i:06d}", int(s)) for i, s in enumerate(seeds)]


def spec_to_line(spec):
    return json.dumps({"format": SPEC_FORMAT, "version": SPEC_VERSION, **spec.model_dump()})


def spec_from_line(line):
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        raise SequenceFormatError(f"シナリオ行を解析できません: {e}") from None
    if data.pop("format", None) != SPEC_FORMAT:
        raise SequenceFormatError("シナリオ行の形式が不正です")
    data.pop("version", None)
    try:
        return ScenarioSpec(**data)
    except ValidationError as e:
        raise SequenceFormatError(f"シナリオが不正です: {e}") from None


def write_specs(specs, path):
    with open(path, "w", encoding="utf-8") as f:
        for spec in specs:
            f.write(spec_to_line(spec) + "\n")


def read_specs(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"シナリオファイルが見つかりません: {path}")
    with open(path, encoding="utf-8") as f:
        return [spec_from_line(line) for line in f if line.strip()]
