"""Phase and schedule descriptions shared by the trainer and the cost model."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .adapt import ResizeMethod
from .compress import CompressionMethod


class StopKind(str, enum.Enum):
    FIXED_EPOCHS = "fixed_epochs"
    SURPASS_BASELINE = "surpass_baseline"
    CONVERGENCE = "convergence"


@dataclass(frozen=True)
class StopCriterion:
    kind: StopKind = StopKind.FIXED_EPOCHS
    target_metric: float | None = None
    patience_epochs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", StopKind(self.kind))
        if self.kind is StopKind.CONVERGENCE and self.patience_epochs < 1:
            raise ValueError("convergence patience must be >= 1")

    @classmethod
    def fixed(cls) -> "StopCriterion":
        return cls(StopKind.FIXED_EPOCHS)

    @classmethod
    def surpass(cls, target: float | None) -> "StopCriterion":
        return cls(StopKind.SURPASS_BASELINE, target_metric=target)

    @classmethod
    def convergence(cls, patience: int) -> "StopCriterion":
        return cls(StopKind.CONVERGENCE, patience_epochs=patience)


@dataclass(frozen=True)
class PhaseConfig:
    method: CompressionMethod = CompressionMethod.NONE
    C: int = 1
    epochs: int = 1
    lr: float = 1e-3
    resize: ResizeMethod | None = None
    lr_decay: float = 1.0
    lr_decay_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", CompressionMethod.parse(self.method))
        if self.resize is not None:
            object.__setattr__(self, "resize", ResizeMethod.parse(self.resize))
        if int(self.C) != self.C or self.C < 1:
            raise ValueError(f"C must be a positive integer, got {self.C}")
        if self.method is CompressionMethod.NONE and self.C != 1:
            raise ValueError("method 'none' requires C=1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    @property
    def resize_method(self) -> ResizeMethod:
        """Kernel resize used when leaving this phase."""
        return self.resize or ResizeMethod.for_method(self.method)

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_every <= 0:
            return self.lr
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass(frozen=True)
class Schedule:
    phases: tuple[PhaseConfig, ...]
    baseline_epochs: int
    stop: StopCriterion = field(default_factory=StopCriterion.fixed)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ValueError("a schedule needs at least one phase")
        for i in range(1, len(self.phases)):
            if self.phases[i].C > self.phases[i - 1].C:
                raise ValueError(
                    f"phase {i}: C values must be non-increasing across phases "
                    f"({self.phases[i - 1].C} -> {self.phases[i].C})"
                )
        if self.phases[-1].C != 1:
            raise ValueError("the final phase must run at full resolution (C=1)")
        if self.baseline_epochs < 0:
            raise ValueError("baseline_epochs must be >= 0")

    @property
    def total_epochs(self) -> int:
        return sum(p.epochs for p in self.phases)


def two_phase(method, C: int, baseline_epochs: int, lr: float = 1e-3, **kw) -> Schedule:
    """``C -> 1`` schedule with the first phase at 25% of the baseline budget."""
    first = round(0.25 * baseline_epochs)
    phases = [PhaseConfig(method, C, first, lr), PhaseConfig(CompressionMethod.NONE, 1, baseline_epochs - first, lr)]
    return Schedule(phases, baseline_epochs, **kw)


def three_phase(method, baseline_epochs: int, lr: float = 1e-3, **kw) -> Schedule:
    """``4 -> 2 -> 1`` schedule; each coarse phase gets 30% of the baseline budget."""
    coarse = round(0.3 * baseline_epochs)
    phases = [
        PhaseConfig(method, 4, coarse, lr),
        PhaseConfig(method, 2, coarse, lr),
        PhaseConfig(CompressionMethod.NONE, 1, baseline_epochs - 2 * coarse, lr),
    ]
    return Schedule(phases, baseline_epochs, **kw)


def baseline_schedule(epochs: int, lr: float = 1e-3, **kw) -> Schedule:
    return Schedule([PhaseConfig(CompressionMethod.NONE, 1, epochs, lr)], epochs, **kw)
