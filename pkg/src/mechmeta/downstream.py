"""Training on a handful of target-language strings after meta-training."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import langs, nn
from .errors import NonFiniteLoss, ScheduleError
from .langs import LanguageSpec
from .nn import AdamState, ModelParams

# n_strings -> (sgd_epochs, adam_epochs)
SCHEDULE_ROWS = {1: (5, 1), 10: (5, 1), 100: (10, 5)}


@dataclass(frozen=True)
class TrainSchedule:
    n_strings: int
    sgd_epochs: int
    adam_epochs: int
    batch_size: int = 32
    sgd_lr: float = 1.0
    adam_lr: float = 5e-4
    lengths: tuple[int, int] = (1, 10)
    clip_norm: float | None = 5.0

    @classmethod
    def for_n(cls, n_strings: int, **overrides) -> "TrainSchedule":
        if n_strings not in SCHEDULE_ROWS and not {"sgd_epochs", "adam_epochs"} <= set(overrides):
            raise ScheduleError(
                f"n_strings={n_strings} has no standard row; pass sgd_epochs and adam_epochs explicitly"
            )
        sgd, adam = SCHEDULE_ROWS.get(n_strings, (None, None))
        params = {"sgd_epochs": sgd, "adam_epochs": adam, **overrides}
        return cls(n_strings=n_strings, **params)

    def __post_init__(self):
        if self.n_strings < 1 or self.batch_size < 1 or self.sgd_epochs < 0 or self.adam_epochs < 0:
            raise ScheduleError(f"invalid schedule {self}")
        object.__setattr__(self, "lengths", tuple(self.lengths))

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.n_strings / self.batch_size)

    @property
    def total_steps(self) -> int:
        return (self.sgd_epochs + self.adam_epochs) * self.batches_per_epoch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lengths"] = list(self.lengths)
        return d


@dataclass
class TrainedModel:
    params: ModelParams
    provenance: dict
    losses: list[float] = field(default_factory=list)


def sample_train_set(lang: LanguageSpec, n: int, rng: np.random.Generator, lengths=(1, 10)) -> list[tuple[int, ...]]:
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = lengths
    return [s.symbols for s in langs.sample_by_length_range(lang, lo, hi, n, rng)]


def train(
    init: ModelParams,
    lang: LanguageSpec,
    schedule: TrainSchedule,
    rng: np.random.Generator,
    *,
    init_id: str = "unmetatrained",
    seed: int | None = None,
    train_set: list[tuple[int, ...]] | None = None,
) -> TrainedModel:
    """SGD epochs, then Adam epochs, over one frozen sample of the language."""
    if train_set is None:
        train_set = sample_train_set(lang, schedule.n_strings, rng, schedule.lengths)
    params = init.copy()
    adam: AdamState | None = None
    losses = []
    phases = [("sgd", schedule.sgd_epochs), ("adam", schedule.adam_epochs)]
    epoch_no = 0
    for phase, epochs in phases:
        for _ in range(epochs):
            order = rng.permutation(len(train_set))
            for b in range(schedule.batches_per_epoch):
                idx = order[b * schedule.batch_size : (b + 1) * schedule.batch_size]
                batch = nn.pad_batch([train_set[i] for i in idx])
                value, grads = nn.loss_and_grad(params, batch)
                if not math.isfinite(value):
                    raise NonFiniteLoss("non-finite downstream loss", {"epoch": epoch_no, "batch": b, "phase": phase})
                losses.append(value)
                grads, _, _ = nn.clip_by_global_norm(grads, schedule.clip_norm)
                if phase == "sgd":
                    params = nn.sgd_step(params, grads, schedule.sgd_lr)
                else:
                    if adam is None:
                        adam = AdamState.zeros(params)
                    adam, params = nn.adam_step(adam, params, grads, schedule.adam_lr)
            epoch_no += 1
    provenance = {
        "init": init_id,
        "target": lang.name,
        "n_strings": schedule.n_strings,
        "seed": seed,
        "schedule": schedule.to_dict(),
        "train_set": [list(s) for s in train_set],
    }
    return TrainedModel(params, provenance, losses)
