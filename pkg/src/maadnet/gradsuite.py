"""Finite-difference checks for every differentiable op and the composed adversarial branch."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import GradCheckReport, Tensor, grad_check, ops
from .maad import AdversarialBranch, DomainClassifierConfig, bce_discriminator_loss, lsq_discriminator_loss

OP_TOLERANCE = 1e-4
COMPOSED_TOLERANCE = 1e-3

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor], dict]]


def _rand(rng, *shape):
    return rng.uniform(-2.0, 2.0, size=shape)


def _var(rng, *shape) -> Tensor:
    return Tensor(_rand(rng, *shape), requires_grad=True)


def _unary(fn) -> Case:
    def case(rng):
        x, c = _var(rng, 3, 4), Tensor(_rand(rng, 3, 4))
        return (lambda: (fn(x) * c).sum()), {"x": x}, {}
    return case


def _conv(rng):
    x, w, b = _var(rng, 2, 2, 5, 5), _var(rng, 3, 2, 3, 3), _var(rng, 3)
    c = Tensor(_rand(rng, 2, 3, 3, 3))
    return (lambda: (ops.conv2d(x, w, b, stride=2, padding=1) * c).sum()), {"x": x, "w": w, "b": b}, {}


def _conv_pointwise(rng):
    x, w = _var(rng, 2, 3, 4, 4), _var(rng, 2, 3, 1, 1)
    c = Tensor(_rand(rng, 2, 2, 4, 4))
    return (lambda: (ops.conv2d(x, w) * c).sum()), {"x": x, "w": w}, {}


def _batch_norm(training: bool) -> Case:
    def case(rng):
        x, g, b = _var(rng, 3, 2, 3, 3), _var(rng, 2), _var(rng, 2)
        c = Tensor(_rand(rng, 3, 2, 3, 3))
        rm, rv = _rand(rng, 2), rng.uniform(0.5, 2.0, 2)
        if training:
            # running buffers are updated on every call; give each call its own copy
            return (lambda: (ops.batch_norm2d(x, g, b, rm.copy(), rv.copy(), True) * c).sum()), {"x": x, "gamma": g, "beta": b}, {}
        return (lambda: (ops.batch_norm2d(x, g, b, rm, rv, False) * c).sum()), {"x": x, "gamma": g, "beta": b}, {}
    return case


def _channel_pool(rng):
    x, c = _var(rng, 2, 4, 3, 3), Tensor(_rand(rng, 2, 2, 3, 3))
    return (lambda: (ops.channel_pool(x) * c).sum()), {"x": x}, {}


def _elementwise(rng):
    a = _var(rng, 2, 3, 4, 1)
    b = Tensor(rng.uniform(0.5, 2.0, (2, 1, 4, 5)), requires_grad=True)
    return (lambda: ((a + b) * (a - b) / b + a ** 3).mean()), {"a": a, "b": b}, {}


def _reductions(rng):
    x = _var(rng, 2, 3, 4)
    return (lambda: (x.sum(axis=1) * x.mean(axis=(0, 2)).reshape(1, 3)[:, :1]).sum()), {"x": x}, {}


def _structure(rng):
    a, b = _var(rng, 2, 3), _var(rng, 3, 2)
    return (lambda: (ops.transpose(ops.concat([a @ b, a[:, :2]], axis=1), (1, 0)) ** 2).sum()), {"a": a, "b": b}, {}


def _grad_reverse(rng):
    x, c = _var(rng, 2, 3), Tensor(_rand(rng, 2, 3))
    return (lambda: (ops.grad_reverse(x, 0.5) * c).sum()), {"x": x}, {"x": -0.5}


OP_CASES: dict[str, Case] = {
    "conv2d": _conv,
    "conv2d_pointwise": _conv_pointwise,
    "batch_norm_train": _batch_norm(True),
    "batch_norm_eval": _batch_norm(False),
    "sigmoid": _unary(ops.sigmoid),
    "relu": _unary(ops.relu),
    "leaky_relu": _unary(lambda t: ops.leaky_relu(t, 0.2)),
    "exp": _unary(ops.exp),
    "log": _unary(lambda t: ops.log(t * t + 0.5)),
    "abs": _unary(ops.abs),
    "clamp": _unary(lambda t: ops.clamp(t, -1.0, 1.0)),
    "channel_pool": _channel_pool,
    "elementwise": _elementwise,
    "reductions": _reductions,
    "concat_matmul_slice": _structure,
    "grad_reverse": _grad_reverse,
}


def _branch_case(kind: str) -> Case:
    """Attention -> GRL -> classifier with frozen (eval-mode) batch norm."""
    def case(rng):
        filters = (4, 5, 3, 1)
        cfg = DomainClassifierConfig.high(filters) if kind == "haad" else DomainClassifierConfig.low(filters)
        loss = bce_discriminator_loss if kind == "haad" else lsq_discriminator_loss
        branch = AdversarialBranch(3, cfg, use_attention=True)
        for p in branch.parameters():
            p.data = rng.normal(0.0, 0.5, size=p.shape)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)), requires_grad=True)
        branch.train()
        branch(x)  # populate running statistics
        branch.eval()
        params = {"features": x, **dict(branch.named_parameters())}
        # everything upstream of the reversal sees the gradient scaled by -lambda_p
        scale = {n: -0.7 for n in params if n == "features" or n.startswith("attention")}
        return (lambda: loss(branch(x, 0.7), [1, 0])), params, scale
    return case


COMPOSED_CASES: dict[str, Case] = {"haad_branch": _branch_case("haad"), "laad_branch": _branch_case("laad")}


@dataclass
class SuiteResult:
    name: str
    tolerance: float
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def run_suite(seeds: Sequence[int] = range(3)) -> tuple[list[SuiteResult], float]:
    """Check every case for every seed; returns per-case worst results and the elapsed seconds."""
    start = time.perf_counter()
    results = []
    for cases, tol in ((OP_CASES, OP_TOLERANCE), (COMPOSED_CASES, COMPOSED_TOLERANCE)):
        for name, build in cases.items():
            worst = None
            for seed in seeds:
                fn, tensors, scale = build(np.random.default_rng(seed))
                report = grad_check(fn, tensors, tolerance=tol, expected_scale=scale)
                if worst is None or not report.passed or report.max_error > worst.max_error:
                    worst = report
                if not report.passed:
                    break
            results.append(SuiteResult(name, tol, worst))
    return results, time.perf_counter() - start
