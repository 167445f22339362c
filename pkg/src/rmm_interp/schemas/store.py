# 快照库 manifest.json 的结构
from typing import Any, Dict, List

from pydantic import BaseModel, Field, model_validator

STORE_VERSION = 1


class GridRecord(BaseModel):
    t_points: List[float]
    sq_weights: List[float]

    @model_validator(mode="after")
    def _same_length(self) -> "GridRecord":
        if len(self.t_points) != len(self.sq_weights):
            raise ValueError("t_points 与 sq_weights 长度不一致")
        return self


class SnapshotRecord(BaseModel):
    id: str
    s: List[float]
    state_file: str
    forcing_file: str


class StoreManifest(BaseModel):
    version: int = STORE_VERSION
    state_dim: int = Field(gt=0)
    param_dim: int = Field(gt=0)
    grid: GridRecord
    snapshots: List[SnapshotRecord] = Field(min_length=1)
    # 模型名称、状态排布等附加说明
    metadata: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _unique_ids(self) -> "StoreManifest":
        ids = [record.id for record in self.snapshots]
        if len(set(ids)) != len(ids):
            raise ValueError("快照标识重复")
        return self
