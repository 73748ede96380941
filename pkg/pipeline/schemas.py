import enum
from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field


class JobStatus(str, enum.Enum):
    PENDING = "PENDING"
    QUEUED = "QUEUED"
    GENERATED = "GENERATED"
    ANALYSED = "ANALYSED"
    ANALYSIS_FAILED = "ANALYSIS_FAILED"
    ANNOTATED = "ANNOTATED"
    ANNOTATION_FAILED = "ANNOTATION_FAILED"


# 許可される状態遷移
TRANSITIONS = {
    JobStatus.PENDING: {JobStatus.QUEUED},
    JobStatus.QUEUED: {JobStatus.GENERATED, JobStatus.ANALYSIS_FAILED},
    JobStatus.GENERATED: {JobStatus.ANALYSED, JobStatus.ANALYSIS_FAILED},
    JobStatus.ANALYSED: {JobStatus.ANNOTATED, JobStatus.ANNOTATION_FAILED},
    JobStatus.ANALYSIS_FAILED: {JobStatus.QUEUED},
    JobStatus.ANNOTATION_FAILED: {JobStatus.QUEUED},
    JobStatus.ANNOTATED: set(),
}
FAILED_STATES = (JobStatus.ANALYSIS_FAILED, JobStatus.ANNOTATION_FAILED)


def is_legal(current, requested):
    return JobStatus(requested) in TRANSITIONS[JobStatus(current)]


class PipelineSettings(BaseModel):
    """パイプラインのワーカー数・再試行・キューのリース設定"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    sequences: int = Field(10, ge=0)
    gen_workers: int = Field(1, ge=1)
    fit_workers: int = Field(1, ge=1)
    max_attempts: int = Field(3, ge=1)
    lease_seconds: float = Field(600.0, gt=0)
    poll_interval: float = Field(0.01, gt=0)
    claim_batch: int = Field(16, ge=1)
    nack_rate: float = Field(0.0, ge=0, lt=1)
    noise_sigma: float = Field(0.0, ge=0)
    location_extent: float = Field(5.0, ge=0)


class JobRecord(BaseModel):
    sequence_id: str
    seed: int
    status: JobStatus
    attempts: int = 0
    retryable: bool = True
    last_error: Optional[str] = None
    created_at: str
    updated_at: str
    timestamps: Dict[str, str] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    quality: Optional[dict] = None
    wall_time_per_frame: Optional[float] = None


class QueueMessage(BaseModel):
    seq: int
    queue: str
    key: str
    payload: str
    lease_deadline: Optional[float] = None
    lease_token: Optional[str] = None
    delivery_count: int = 0


class PipelineSummary(BaseModel):
    total: int
    counts: Dict[str, int]
    all_terminal: bool
    seed: int
    settings: PipelineSettings
    duplicate_deliveries: int = 0

    def to_dict(self):
        return self.model_dump(mode="json")
