from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class FitConfig(BaseModel):
    """SMPLアノテータの重みと最適化パラメータ"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_data: float = Field(1.0, ge=0)
    lambda_smooth: float = Field(0.1, ge=0)
    lambda_shape_reg: float = Field(1e-3, ge=0)
    max_frame_iterations: int = Field(200, ge=0)
    max_joint_iterations: int = Field(100, ge=0)
    tolerance: float = Field(1e-10, gt=0)
    # joint: 1) 初期化 2) フレーム毎 3) 系列全体の同時最適化 / per_frame: 3) を省略
    schedule: Literal["joint", "per_frame"] = "joint"
    damping_init: float = Field(1e-3, gt=0)
    damping_up: float = Field(4.0, gt=1)
    damping_down: float = Field(3.0, gt=1)
    damping_max: float = Field(1e12, gt=0)
    min_joints: int = Field(4, ge=1)
