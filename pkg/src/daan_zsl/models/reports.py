"""Result records written by training, evaluation and the experiment runners."""

from pydantic import BaseModel, Field

from daan_zsl.models.data import Modality, Part


class LossBreakdown(BaseModel):
    """Batch-mean values of every loss term."""

    L_t: float = Field(..., ge=0)
    l_rec: float = Field(..., ge=0)
    l_ct: float = Field(..., ge=0)
    l_w: float = Field(..., ge=0)
    L_r: float = Field(..., ge=0)
    total: float = Field(..., ge=0)

    @property
    def composite(self) -> float:
        return self.l_rec + self.l_ct + self.l_w


class ContributionRate(BaseModel):
    modality: Modality
    part: Part
    eta: float
    v_c: float = Field(..., ge=0, lt=1)
    v_o: float = Field(..., ge=0)


class GzslReport(BaseModel):
    """Mean class accuracies in percent."""

    S: float = Field(..., ge=0, le=100)
    U: float = Field(..., ge=0, le=100)
    HM: float = Field(..., ge=0, le=100)
    ZSL: float = Field(..., ge=0, le=100)
    excluded_classes: list[int] = Field(default_factory=list)


class EpochMetrics(BaseModel):
    """One line of metrics.jsonl."""

    epoch: int
    L_t: float
    l_rec: float
    l_ct: float
    l_w: float
    L_r: float
    total: float
    mean_eta: dict[str, float] = Field(default_factory=dict)
    params_digest: str


class AblationRow(BaseModel):
    name: str
    report: GzslReport
    split_digest: str


class SweepPoint(BaseModel):
    param: str
    value: float
    report: GzslReport
