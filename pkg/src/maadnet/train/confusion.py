"""Domain-confusion dynamics of the high-level discriminator.

Both settings start from the same detector, briefly trained on labeled
source images only:

* frozen: that feature extractor is fixed and only the domain classifier
  learns, which shows the two domains are separable;
* adversarial: extractor and classifier train together through the
  gradient-reversal layer next to the detection loss, which should push
  held-out domain accuracy back toward chance.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff import Tensor, no_grad
from ..data.spec import SceneSample
from ..maad import bce_discriminator_loss, domain_accuracy
from .config import TrainConfig
from .loop import Networks, Trainer, TrainingData, train_step
from .optim import Adam, ParamGroup

HOLDOUT_PER_DOMAIN = 40


@dataclass
class ConfusionResult:
    frozen_accuracy: float
    adversarial_accuracy: float
    frozen_curve: list[tuple[int, float]] = field(default_factory=list)
    adversarial_curve: list[tuple[int, float]] = field(default_factory=list)


def confusion_config(base: TrainConfig, lambda_had: float = 1.0) -> TrainConfig:
    """HAAD-only MAAD objective with reversal enabled and the given branch weight."""
    obj = dataclasses.replace(base.objective, enable_had=True, enable_lad=False, enable_grl=True, lambda_had=lambda_had)
    return dataclasses.replace(base, method="maad", objective=obj)


def split_holdout(data: TrainingData, source: Sequence[SceneSample], n: int = HOLDOUT_PER_DOMAIN):
    """Training view without the held-out source images, plus the balanced held-out set."""
    if len(source) <= n or len(data.test) < n:
        raise ValueError(f"need more than {n} source images and at least {n} target test images")
    train = dataclasses.replace(data, labeled=list(source[:-n]))
    held = list(source[-n:]) + list(data.test[:n])
    labels = np.array([1.0] * n + [0.0] * n)
    return train, held, labels


def heldout_accuracy(nets: Networks, samples: Sequence[SceneSample], labels: np.ndarray, trainer: Trainer) -> float:
    """Eval-mode HAAD accuracy over held-out images."""
    nets.train(False)
    norm = trainer.data.normalization
    with no_grad():
        logits = []
        for start in range(0, len(samples), 8):
            x = np.stack([norm.apply(s.image) for s in samples[start:start + 8]])
            _, high = nets.detector.backbone(Tensor(x))
            logits.append(nets.haad(high, reverse=False).data)
    nets.train(True)
    return domain_accuracy(np.concatenate(logits), labels)


def _frozen_run(trainer: Trainer, steps: int, eval_every: int, held, labels) -> list[tuple[int, float]]:
    nets = trainer.nets
    classifier_params = nets.haad.parameters()
    opt = Adam([ParamGroup("discriminators", classifier_params, trainer.cfg.lr_discriminators, trainer.cfg.weight_decay)])
    curve, step = [], 0
    while step < steps:
        for batch in trainer.batches():
            nets.detector.train(False)
            with no_grad():
                _, high_s = nets.detector.backbone(Tensor(batch.source))
                _, high_t = nets.detector.backbone(Tensor(batch.target))
            nets.haad.train(True)
            feats = Tensor(np.concatenate([high_s.data, high_t.data]))
            d = np.array([1.0] * len(batch.source) + [0.0] * len(batch.target))
            loss = bce_discriminator_loss(nets.haad(feats, reverse=False), d)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            if step % eval_every == 0 or step == steps:
                curve.append((step, heldout_accuracy(nets, held, labels, trainer)))
            if step == steps:
                break
    return curve


def _run_steps(trainer: Trainer, steps: int) -> None:
    step = 0
    while step < steps:
        for batch in trainer.batches():
            train_step(trainer.nets, batch, trainer.cfg, trainer.optimizer, step / steps)
            step += 1
            if step == steps:
                break


def _adversarial_run(trainer: Trainer, steps: int, eval_every: int, held, labels) -> list[tuple[int, float]]:
    curve, step = [], 0
    while step < steps:
        for batch in trainer.batches():
            train_step(trainer.nets, batch, trainer.cfg, trainer.optimizer, step / steps)
            step += 1
            if step % eval_every == 0 or step == steps:
                curve.append((step, heldout_accuracy(trainer.nets, held, labels, trainer)))
            if step == steps:
                break
    return curve


def run_confusion(
    base: TrainConfig,
    data: TrainingData,
    steps: int = 300,
    eval_every: int = 50,
    warmup_steps: int = 100,
    lambda_had: float = 1.0,
    final_fraction: float = 0.5,
    holdout: int = HOLDOUT_PER_DOMAIN,
) -> ConfusionResult:
    """Held-out HAAD accuracy at the end of both settings.

    The reported accuracy averages the curve points in the last ``final_fraction``
    of the steps: the adversarial game swings the classifier between right and
    wrong from one evaluation to the next, so a single point says little.
    """
    cfg = confusion_config(base, lambda_had)
    train, held, labels = split_holdout(data, data.labeled, holdout)
    warm = Trainer(dataclasses.replace(cfg, method="none"), train)
    _run_steps(warm, warmup_steps)
    runs = []
    for run in (_frozen_run, _adversarial_run):
        trainer = Trainer(cfg, train)
        trainer.nets.detector.load_state_dict(warm.nets.detector.state_dict())
        runs.append(run(trainer, steps, eval_every, held, labels))
    frozen, adversarial = runs

    def final(curve):
        return float(np.mean([a for k, a in curve if k > steps * (1.0 - final_fraction)]))

    return ConfusionResult(final(frozen), final(adversarial), frozen, adversarial)
