from pydantic import BaseModel, ConfigDict, Field


class Thresholds(BaseModel):
    """データアナライザの判定しきい値（設定ファイルで上書き可）"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    min_speed: float = Field(0.005, ge=0)         # m/frame、inf も可
    max_occluded: float = Field(0.6, ge=0, le=1)
    max_out_of_frame: float = Field(0.3, ge=0, le=1)
