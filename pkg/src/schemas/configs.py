"""
Hyperparameter and result records.

Configuration records are frozen pydantic models; their field constraints carry
the invariants of each record so that a bad value is rejected before any
computation starts.
"""
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

EPSILON_8_255 = 8.0 / 255.0


class NetworkConfig(BaseModel):
    """Input geometry and layer widths of the compact CNN."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    channels: int = Field(3, ge=1, description="Input channels C")
    height: int = Field(32, ge=4, description="Input height H")
    width: int = Field(32, ge=4, description="Input width W")
    num_classes: int = Field(10, ge=2, description="Number of classes")
    conv1_filters: int = Field(16, ge=1)
    conv2_filters: int = Field(32, ge=1)
    feature_dim: int = Field(128, ge=1, description="Width of the extractor output F")

    @model_validator(mode="after")
    def _pools_divide_input(self) -> "NetworkConfig":
        if self.height % 4 or self.width % 4:
            raise ValueError(f"input {self.height}x{self.width} must be divisible by 4 (two 2x2 pools)")
        return self

    @property
    def flat_dim(self) -> int:
        """Width of the flattened second pooling output."""
        return self.conv2_filters * (self.height // 4) * (self.width // 4)


class AttackConfig(BaseModel):
    """L-infinity attack budget and iteration schedule."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epsilon: float = Field(EPSILON_8_255, ge=0.0, le=1.0)
    steps: int = Field(10, ge=1)
    step_size: float = Field(0.007, gt=0.0)
    momentum_decay: float = Field(1.0, ge=0.0, description="MI-FGSM decay mu")
    random_start: bool = True
    seed: int = Field(0, ge=0, description="Seed of the random start")


class LossConfig(BaseModel):
    """Weights and shape parameters of the F2AT objective."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(0.1, ge=0.0, description="Weight of the pattern-dependent loss")
    gamma: float = Field(1.0, ge=0.0, description="Weight of the margin loss")
    tau: float = Field(0.07, gt=0.0, description="Temperature of the pattern-dependent loss")
    upsilon: float = Field(0.995, gt=0.0, description="Soft-margin sharpness")
    margin_mode: Literal["soft", "hard"] = "soft"
    use_patterns: bool = Field(True, description="False: clean batch replaces natural patterns, alpha forced to 0")
    depth: int = Field(8, ge=1, le=16, description="Bit depth R used for slicing")


class TrainConfig(BaseModel):
    """One training run (loop inputs plus the optimizer schedule)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = Field(10, ge=1)
    batch_size: int = Field(128, ge=1)
    seed: int = Field(0, ge=0)
    k: int = Field(2, ge=0, le=16)
    attack: AttackConfig = AttackConfig()
    eval_attack: AttackConfig = AttackConfig(steps=20)
    loss: LossConfig = LossConfig()
    base_lr: float = Field(0.1, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(2e-4, ge=0.0)
    milestones: Tuple[float, ...] = (0.5, 0.75)
    augment: bool = True
    probe_size: int = Field(500, ge=1, description="Eval subset used for per-epoch robust accuracy")
    record_wall_time: bool = False

    @field_validator("milestones")
    @classmethod
    def _milestones_are_fractions(cls, value):
        if any(not 0.0 < m <= 1.0 for m in value) or list(value) != sorted(value):
            raise ValueError(f"milestones must be increasing fractions in (0, 1], got {value}")
        return tuple(value)

    @model_validator(mode="after")
    def _k_fits_depth(self) -> "TrainConfig":
        if self.k > self.loss.depth:
            raise ValueError(f"k={self.k} exceeds the slicing depth R={self.loss.depth}")
        return self


class DataConfig(BaseModel):
    """Where the data comes from and, for the synthetic set, how it is drawn."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dataset: Literal["synth", "cifar10", "idx"] = "synth"
    data_path: Optional[str] = None
    n_train: int = Field(2000, ge=1)
    n_test: int = Field(500, ge=1)
    class_count: int = Field(2, ge=2)
    side: int = Field(16, ge=8)
    channels: int = Field(3, ge=1)
    contrast: float = Field(0.1, gt=0.0, le=0.5, description="Half-width of the template range around 0.5")
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _real_data_needs_path(self) -> "DataConfig":
        if self.dataset != "synth" and not self.data_path:
            raise ValueError(f"dataset '{self.dataset}' needs data_path")
        return self

    @model_validator(mode="after")
    def _synth_side_fits_network(self) -> "DataConfig":
        if self.dataset == "synth" and self.side % 4:
            raise ValueError(f"side {self.side} must be divisible by 4 (two 2x2 pools)")
        return self


class LossRecord(BaseModel):
    """Scalar values of one loss evaluation (or an epoch mean)."""

    ce: float
    pd: float
    mg_soft: float
    total: float


class EpochRecord(BaseModel):
    """Metrics of one completed epoch."""

    epoch: int = Field(..., ge=0)
    lr: float
    loss: LossRecord
    clean_accuracy: float = Field(..., ge=0.0, le=1.0)
    robust_accuracy: float = Field(..., ge=0.0, le=1.0)
    wall_time: Optional[float] = None


class RunMetrics(BaseModel):
    """Per-epoch records of a run, strictly increasing in epoch."""

    records: List[EpochRecord] = Field(default_factory=list)

    @field_validator("records")
    @classmethod
    def _epochs_increase(cls, records):
        epochs = [r.epoch for r in records]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"epoch indices must increase strictly, got {epochs}")
        return records

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(f"epoch {record.epoch} does not follow {self.records[-1].epoch}")
        self.records.append(record)

    def to_jsonl(self, include_wall_time: bool = False) -> str:
        exclude = None if include_wall_time else {"wall_time"}
        return "".join(r.model_dump_json(exclude=exclude) + "\n" for r in self.records)


class RunManifest(BaseModel):
    """Everything needed to replay a CLI run."""

    tool: str = "f2at-lab"
    version: str
    subcommand: str
    seed: int
    options: Dict[str, Any]
    inputs: Dict[str, Optional[str]] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
