from typing import Dict

from pydantic import BaseModel, ConfigDict, Field


class BodyRadii(BaseModel):
    """自己遮蔽判定に使うボーンカプセルの半径（子関節名で上書き可）"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    default: float = Field(0.04, gt=0)
    per_joint: Dict[str, float] = Field(default_factory=dict)

    def radius_for(self, child_name):
        r = self.per_joint.get(child_name, self.default)
        if r <= 0:
            raise ValueError(f"半径は正でなければなりません: {child_name}")
        return r
