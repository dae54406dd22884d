"""Training: networks, batches, the adversarial step, the epoch loop and run reports."""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from ..autodiff import Module, Tensor, no_grad, ops
from ..data.augment import Normalization, augment
from ..data.io import load_dataset
from ..data.spec import SceneSample
from ..detector import BackboneConfig, CenterNet, HeadConfig, encode_targets
from ..detector.losses import combine_terms, detection_loss_terms
from ..maad import (
    AdversarialBranch,
    DomainClassifierConfig,
    MaadObjectiveConfig,
    bce_discriminator_loss,
    domain_accuracy,
    global_average_pool,
    lsq_discriminator_loss,
    mmd_rbf,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .evaluate import evaluate_model
from .optim import Adam, ParamGroup, init_weights, multistep_lr

log = logging.getLogger(__name__)

SOURCE_LABEL = 1.0
TARGET_LABEL = 0.0


class TrainingDiverged(RuntimeError):
    """A loss term became NaN or infinite."""


# -- data -------------------------------------------------------------------------

@dataclass
class TrainingData:
    labeled: list[SceneSample]
    unlabeled: list[SceneSample]  # target-domain training images, labels unused
    test: list[SceneSample]
    val: list[SceneSample]
    normalization: Normalization

    @classmethod
    def from_manifest(cls, manifest: Union[str, Path], label_domain: str = "source") -> "TrainingData":
        source_train = list(load_dataset(manifest, "train", "source"))
        target_train = list(load_dataset(manifest, "train", "target"))
        labeled = source_train if label_domain == "source" else target_train
        if not labeled:
            raise ValueError(f"no {label_domain} training images in {manifest}")
        norm_pool = source_train or labeled
        return cls(
            labeled=labeled,
            unlabeled=target_train,
            test=list(load_dataset(manifest, "test", "target")),
            val=list(load_dataset(manifest, "val", "target")),
            normalization=Normalization.from_images([s.image for s in norm_pool]),
        )


# -- networks ---------------------------------------------------------------------

@dataclass
class Networks:
    detector: CenterNet
    haad: Optional[AdversarialBranch] = None
    laad: Optional[AdversarialBranch] = None

    def modules(self) -> list[Module]:
        return [m for m in (self.detector, self.haad, self.laad) if m is not None]

    def discriminators(self) -> list[Module]:
        return [m for m in (self.haad, self.laad) if m is not None]

    def train(self, mode: bool = True) -> None:
        for m in self.modules():
            m.train(mode)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, m in (("detector", self.detector), ("haad", self.haad), ("laad", self.laad)):
            if m is not None:
                out.update({f"{prefix}.{k}": v for k, v in m.state_dict().items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for prefix, m in (("detector", self.detector), ("haad", self.haad), ("laad", self.laad)):
            if m is not None:
                sub = {k[len(prefix) + 1:]: v for k, v in state.items() if k.startswith(prefix + ".")}
                m.load_state_dict(sub)


def effective_objective(cfg: TrainConfig) -> MaadObjectiveConfig:
    """The discriminator toggles actually used by ``cfg.method``."""
    obj = cfg.objective
    if cfg.method == "dann":
        return MaadObjectiveConfig(obj.lambda_had, 0.0, True, False, True, False, obj.grl)
    if cfg.method != "maad":
        return MaadObjectiveConfig(obj.lambda_had, obj.lambda_lad, False, False, obj.enable_grl, False, obj.grl)
    return obj


def build_networks(cfg: TrainConfig) -> Networks:
    mc = cfg.model
    detector = CenterNet(BackboneConfig(tuple(mc.backbone_channels)), HeadConfig(mc.num_keypoints, mc.head_hidden))
    obj = effective_objective(cfg)
    haad = laad = None
    if obj.enable_had:
        haad = AdversarialBranch(detector.backbone.high_channels, DomainClassifierConfig.high(mc.haad_filters), obj.enable_attention)
    if obj.enable_lad:
        laad = AdversarialBranch(detector.backbone.low_channels, DomainClassifierConfig.low(mc.laad_filters), obj.enable_attention)
    return Networks(detector, haad, laad)


def build_optimizer(nets: Networks, cfg: TrainConfig) -> Adam:
    disc_params = [p for m in nets.discriminators() for p in m.parameters()]
    return Adam([
        ParamGroup("detector", nets.detector.parameters(), cfg.lr_detector, cfg.weight_decay),
        ParamGroup("discriminators", disc_params, cfg.lr_discriminators, cfg.weight_decay),
    ])


@contextlib.contextmanager
def frozen(module: Module) -> Iterator[None]:
    """Treat a module's parameters as constants while building a graph."""
    params = module.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


# -- one optimisation step --------------------------------------------------------------

@dataclass
class Batch:
    source: np.ndarray                 # labeled images, N x 3 x H x W
    targets: object                    # EncodedTargets for ``source``
    target: Optional[np.ndarray] = None  # unlabeled target-domain images


@dataclass
class StepResult:
    total: float
    det: float
    det_terms: dict[str, float]
    haad: Optional[float] = None
    lad: Optional[float] = None
    mmd: Optional[float] = None
    acc_haad: Optional[float] = None
    acc_lad: Optional[float] = None


def _adversarial_term(branch: AdversarialBranch, feats: Tensor, labels: np.ndarray, loss_fn, obj: MaadObjectiveConfig, lambda_p: float):
    """Loss to add to the objective, the logged discriminator loss and its logits.

    The attention module sits upstream of the reversal, so it plays on the
    feature-extractor side. Without reversal the same split is kept GAN-style:
    the classifier learns from detached attended features, while the extractor
    and attention learn from a flipped-label loss through the frozen classifier.
    """
    if obj.enable_grl:
        logits = branch(feats, lambda_p, reverse=True)
        loss = loss_fn(logits, labels)
        return loss, loss, logits
    attended = branch.attention(feats)[1] if branch.attention is not None else feats
    logits = branch.classifier(attended.detach())
    d_loss = loss_fn(logits, labels)
    with frozen(branch.classifier):
        g_loss = loss_fn(branch.classifier(attended), 1.0 - labels)
    return d_loss + g_loss, d_loss, logits


def compute_losses(nets: Networks, batch: Batch, cfg: TrainConfig, progress: float = 0.0) -> tuple[Tensor, StepResult]:
    """Training-mode forward of one batch: the total loss graph plus logged per-term values.

    Source and target images go through the backbone in separate passes; only
    the source features reach the heads, so target images never affect the
    detection loss.
    """
    nets.train(True)
    obj = effective_objective(cfg)
    needs_target = cfg.uses_target_images
    if needs_target and batch.target is None:
        raise ValueError(f"method {cfg.method} needs target images in the batch")
    ns = batch.source.shape[0]
    low_s, high_s = nets.detector.backbone(Tensor(batch.source))
    outputs = nets.detector.heads(high_s)
    terms = detection_loss_terms(outputs, batch.targets)
    l_det = combine_terms(terms, cfg.loss_weights)
    result = StepResult(0.0, l_det.item(), {k: v.item() for k, v in terms.items()})

    total = l_det
    if needs_target:
        # separate pass: batch statistics of the target half never touch the source features
        low_t, high_t = nets.detector.backbone(Tensor(batch.target))
        low, high = ops.concat([low_s, low_t]), ops.concat([high_s, high_t])
        nt = batch.target.shape[0]
        labels = np.array([SOURCE_LABEL] * ns + [TARGET_LABEL] * nt)
        lambda_p = obj.grl.value(progress)
        if nets.haad is not None and obj.enable_had:
            loss, d_loss, logits = _adversarial_term(nets.haad, high, labels, bce_discriminator_loss, obj, lambda_p)
            total = total + obj.lambda_had * loss
            result.haad = d_loss.item()
            result.acc_haad = domain_accuracy(logits.data, labels)
        if nets.laad is not None and obj.enable_lad:
            loss, d_loss, logits = _adversarial_term(nets.laad, low, labels, lsq_discriminator_loss, obj, lambda_p)
            total = total + obj.lambda_lad * loss
            result.lad = d_loss.item()
            result.acc_lad = domain_accuracy(logits.data, labels)
        if cfg.method == "mmd":
            pooled = global_average_pool(high)
            l_mmd = mmd_rbf(pooled[:ns], pooled[ns:])
            total = total + cfg.mmd_weight * l_mmd
            result.mmd = l_mmd.item()

    result.total = total.item()
    return total, result


def train_step(nets: Networks, batch: Batch, cfg: TrainConfig, optimizer: Adam, progress: float = 0.0) -> StepResult:
    """Forward, loss, a single backward and one optimizer step over both parameter groups."""
    total, result = compute_losses(nets, batch, cfg, progress)
    if not math.isfinite(result.total):
        dump = {"total": result.total, "det": result.det, **result.det_terms, "haad": result.haad, "lad": result.lad, "mmd": result.mmd}
        raise TrainingDiverged(f"non-finite loss: {json.dumps(dump)}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return result


# -- reports ---------------------------------------------------------------------------------

EPOCH_FIELDS = ("epoch", "det", "haad", "lad", "mmd", "acc_haad", "acc_lad", "lr_detector", "lr_discriminators")
METRIC_FIELDS = ("mAP50_OBB", "mAP50_95_OKS", "mAP50_95_POKS", "mAP50_95_POKS_stem", "mAP50_95_POKS_vein")


@dataclass
class RunReport:
    config: dict
    seed: int
    epochs: list[dict] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    # kept out of to_dict so that reports of identical runs compare bitwise equal
    wall_clock_s: Optional[float] = None

    def to_dict(self) -> dict:
        return {"config": self.config, "seed": self.seed, "epochs": self.epochs, "metrics": self.metrics}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("row",) + EPOCH_FIELDS + METRIC_FIELDS)
        for e in self.epochs:
            writer.writerow(("epoch",) + tuple(_fmt(e.get(k)) for k in EPOCH_FIELDS) + ("",) * len(METRIC_FIELDS))
        writer.writerow(("final",) + ("",) * len(EPOCH_FIELDS) + tuple(_fmt(self.metrics.get(k)) for k in METRIC_FIELDS))
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(d["config"], d["seed"], d.get("epochs", []), d.get("metrics", {}))


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


# -- trainer -------------------------------------------------------------------------------

class Trainer:
    def __init__(self, cfg: TrainConfig, data: TrainingData):
        self.cfg = cfg
        self.data = data
        self.nets = build_networks(cfg)
        init_weights(self.nets.detector, self.nets.discriminators(), np.random.default_rng([cfg.seed, 1]))
        self.optimizer = build_optimizer(self.nets, cfg)
        self.rng = np.random.default_rng([cfg.seed, 0])
        self.epoch = 0
        self.report = RunReport(cfg.to_dict(), cfg.seed)
        if cfg.uses_target_images and not data.unlabeled:
            raise ValueError(f"method {cfg.method} needs unlabeled target training images")

    # batches
    def _prepare(self, samples: Sequence[SceneSample]) -> tuple[np.ndarray, list]:
        imgs, anns = [], []
        for s in samples:
            aug = augment(s, self.cfg.augment, self.rng)
            imgs.append(self.data.normalization.apply(aug.image))
            anns.append(aug.annotations)
        return np.stack(imgs), anns

    def batches(self) -> Iterator[Batch]:
        half = self.cfg.half_batch
        order = self.rng.permutation(len(self.data.labeled))
        n_steps = math.ceil(len(order) / half)
        if self.cfg.max_steps_per_epoch:
            n_steps = min(n_steps, self.cfg.max_steps_per_epoch)
        tgt_order = self.rng.permutation(len(self.data.unlabeled)) if self.cfg.uses_target_images else None
        tpos = 0
        for step in range(n_steps):
            idx = order[step * half:(step + 1) * half]
            src_imgs, anns = self._prepare([self.data.labeled[i] for i in idx])
            targets = encode_targets(anns, src_imgs.shape[2:], self.cfg.model.num_keypoints)
            tgt = None
            if tgt_order is not None:
                picks = []
                for _ in range(half):
                    if tpos == len(tgt_order):
                        tgt_order = self.rng.permutation(len(self.data.unlabeled))
                        tpos = 0
                    picks.append(self.data.unlabeled[tgt_order[tpos]])
                    tpos += 1
                tgt, _ = self._prepare(picks)
            yield Batch(src_imgs, targets, tgt)

    def current_lrs(self, epoch: int) -> dict[str, float]:
        c = self.cfg
        return {
            "detector": multistep_lr(c.lr_detector, epoch, c.epochs, c.lr_milestones, c.lr_factor),
            "discriminators": multistep_lr(c.lr_discriminators, epoch, c.epochs, c.lr_milestones, c.lr_factor),
        }

    def train_epoch(self) -> dict:
        lrs = self.current_lrs(self.epoch)
        self.optimizer.set_lrs(lrs)
        steps = []
        batches = list(self.batches())
        for i, batch in enumerate(batches):
            progress = (self.epoch + i / len(batches)) / self.cfg.epochs
            steps.append(train_step(self.nets, batch, self.cfg, self.optimizer, progress))
        row = {
            "epoch": self.epoch,
            "det": _mean_or_none([s.det for s in steps]),
            "haad": _mean_or_none([s.haad for s in steps]),
            "lad": _mean_or_none([s.lad for s in steps]),
            "mmd": _mean_or_none([s.mmd for s in steps]),
            "acc_haad": _mean_or_none([s.acc_haad for s in steps]),
            "acc_lad": _mean_or_none([s.acc_lad for s in steps]),
            "lr_detector": lrs["detector"],
            "lr_discriminators": lrs["discriminators"],
        }
        self.epoch += 1
        return row

    def evaluate(self, split: str = "test") -> dict[str, float]:
        samples = self.data.test if split == "test" else self.data.val
        if not samples:
            raise ValueError(f"split '{split}' has no target images")
        return evaluate_model(self.nets.detector, samples, self.data.normalization, self.cfg.evaluation, self.cfg.model.num_keypoints)

    def fit(self, out_dir: Optional[Union[str, Path]] = None) -> RunReport:
        start = time.perf_counter()
        while self.epoch < self.cfg.epochs:
            row = self.train_epoch()
            if self.cfg.eval_every and self.epoch % self.cfg.eval_every == 0 and self.epoch < self.cfg.epochs and self.data.val:
                row["val"] = self.evaluate("val")
            self.report.epochs.append(row)
            log.info("epoch %d det %.4f haad %s lad %s", row["epoch"], row["det"], row["haad"], row["lad"])
        self.report.metrics = self.evaluate("test") if self.data.test else {}
        self.report.wall_clock_s = time.perf_counter() - start
        if out_dir is not None:
            self.write_outputs(out_dir)
        return self.report

    # persistence
    def write_outputs(self, out_dir: Union[str, Path]) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.save(out / "model.ckpt")
        (out / "report.json").write_text(self.report.to_json())
        (out / "report.csv").write_text(self.report.to_csv())
        (out / "timing.json").write_text(json.dumps({"wall_clock_s": self.report.wall_clock_s}))

    def save(self, path: Union[str, Path]) -> None:
        arrays = {f"model.{k}": v for k, v in self.nets.state_dict().items()}
        arrays.update({f"optim.{k}": v for k, v in self.optimizer.state_arrays().items()})
        meta = {
            "config": self.cfg.to_dict(),
            "epoch": self.epoch,
            "adam_step": self.optimizer.step_count,
            "rng_state": self.rng.bit_generator.state,
            "normalization": {"mean": list(self.data.normalization.mean), "std": list(self.data.normalization.std)},
        }
        save_checkpoint(path, arrays, meta)


def restore_networks(path: Union[str, Path]) -> tuple[TrainConfig, Networks, Normalization, dict]:
    arrays, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    nets = build_networks(cfg)
    nets.load_state_dict({k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")})
    norm = Normalization(tuple(meta["normalization"]["mean"]), tuple(meta["normalization"]["std"]))
    return cfg, nets, norm, meta


def resume_trainer(path: Union[str, Path], data: TrainingData) -> Trainer:
    arrays, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    trainer = Trainer(cfg, data)
    trainer.nets.load_state_dict({k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")})
    trainer.optimizer.load_state_arrays({k[len("optim."):]: v for k, v in arrays.items() if k.startswith("optim.")}, meta["adam_step"])
    trainer.rng.bit_generator.state = meta["rng_state"]
    trainer.epoch = meta["epoch"]
    return trainer


def run_training(cfg: TrainConfig, manifest: Union[str, Path], out_dir: Optional[Union[str, Path]] = None) -> RunReport:
    data = TrainingData.from_manifest(manifest, cfg.label_domain)
    return Trainer(cfg, data).fit(out_dir)
