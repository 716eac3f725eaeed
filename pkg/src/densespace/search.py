"""Two-stage alternating search and the random-search baseline.

Stage 1 (warmup) trains only the evaluator's internal state while the
architecture parameters stay frozen at initialization. Stage 2
alternates per epoch between evaluator training and gradient descent on
the regularized loss (evaluator loss + lambda * log_tau of the chained
cost). Real-data super-network training is out of scope; the Evaluator
interface isolates it and SyntheticEvaluator provides a differentiable,
seedable stand-in whose optimum is known by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .cost import CostTable, Grads, chain_backward, chain_forward, chained_cost, cost_gradients, regularized_loss
from .derive import DerivedArchitecture, derive
from .params import (
    ArchParams,
    LayerKey,
    apply_sampled_update,
    init_params,
    sample_ops,
    validate_binding,
)
from .space import SuperNetworkSpec

E = math.e


class SearchError(ValueError):
    """Invalid search configuration or a failed search-time contract."""


@dataclass(frozen=True)
class SearchConfig:
    total_epochs: int = 60
    warmup_epochs: int = 20
    steps_per_epoch: int = 2
    lr_alpha_beta: float = 0.3
    lr_weights: float = 0.3
    lam: float = 0.1  # not from any published setting; desk-scale default
    tau: float = E
    seed: int = 0
    drop_path: bool = False

    def validate(self) -> None:
        if not (0 < self.warmup_epochs <= self.total_epochs):
            raise SearchError(
                f"need 0 < warmup_epochs <= total_epochs, got {self.warmup_epochs}/{self.total_epochs}"
            )
        if self.steps_per_epoch < 1:
            raise SearchError("steps_per_epoch must be >= 1")
        if self.lr_alpha_beta <= 0 or self.lr_weights <= 0:
            raise SearchError("learning rates must be positive")
        if self.tau <= 1:
            raise SearchError("tau must exceed 1")
        if self.lam < 0:
            raise SearchError("lambda must be non-negative")

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SearchConfig":
        known = {f for f in cls.__dataclass_fields__}
        cfg = cls(**{k: v for k, v in obj.items() if k in known})
        cfg.validate()
        return cfg

    def to_json(self) -> dict[str, Any]:
        return {
            "total_epochs": self.total_epochs,
            "warmup_epochs": self.warmup_epochs,
            "steps_per_epoch": self.steps_per_epoch,
            "lr_alpha_beta": self.lr_alpha_beta,
            "lr_weights": self.lr_weights,
            "lam": self.lam,
            "tau": self.tau,
            "seed": self.seed,
            "drop_path": self.drop_path,
        }


class Evaluator(Protocol):
    """Stand-in for super-network training and validation."""

    def train_step(
        self,
        spec: SuperNetworkSpec,
        params: ArchParams,
        rng: np.random.Generator,
        sampled: dict[LayerKey, tuple[int, ...]] | None = None,
    ) -> float:
        """Update internal trainable state; returns the training loss."""
        ...

    def task_loss(
        self, spec: SuperNetworkSpec, params: ArchParams, rng: np.random.Generator
    ) -> float:
        ...

    def loss_and_grads(
        self, spec: SuperNetworkSpec, params: ArchParams, rng: np.random.Generator
    ) -> tuple[float, Grads]:
        """Task loss and its gradients w.r.t. alpha and beta."""
        ...

    def score_architecture(self, arch: DerivedArchitecture) -> float:
        """Higher is better; used by the random-search baseline."""
        ...


class SyntheticEvaluator:
    """Latent per-candidate qualities drawn once from a seeded normal
    distribution. The expected quality of the relaxed network reuses the
    exact probability algebra of the cost recursion with quality in
    place of cost; task loss = -(expected quality) plus optional
    observation noise.

    Internal state is a quality estimate that starts at zero and is
    pulled toward the latent values by train_step, so warmup epochs
    matter the way operation-weight pretraining does.
    """

    def __init__(
        self,
        spec: SuperNetworkSpec,
        seed: int,
        quality_scale: float = 1.0,
        noise_sigma: float = 0.0,
        learn_rate: float = 0.3,
    ):
        self.spec = spec
        self.noise_sigma = float(noise_sigma)
        self.learn_rate = float(learn_rate)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        template = init_params(spec)
        self.q_true: dict[LayerKey, np.ndarray] = {
            key: quality_scale * rng.standard_normal(len(template.alpha(key)))
            for key in sorted(template.layer_keys())
        }
        self.q_hat: dict[LayerKey, np.ndarray] = {k: np.zeros_like(v) for k, v in self.q_true.items()}

    @classmethod
    def planted(
        cls,
        spec: SuperNetworkSpec,
        seed: int,
        gap: float = 5.0,
        sigma: float = 0.5,
        noise_sigma: float = 0.0,
    ) -> tuple["SyntheticEvaluator", dict[LayerKey, int]]:
        """One clearly dominant candidate per layer: the dominant quality
        exceeds every other candidate's by at least `gap`."""
        ev = cls(spec, seed, quality_scale=sigma, noise_sigma=noise_sigma)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
        dominant: dict[LayerKey, int] = {}
        for key in sorted(ev.q_true):
            idx = int(rng.integers(len(ev.q_true[key])))
            ev.q_true[key][idx] = ev.q_true[key].max() + gap
            dominant[key] = idx
        return ev, dominant

    def _chain_state(self, params: ArchParams, values: dict[LayerKey, np.ndarray]):
        return chain_forward(self.spec, params, lambda key: values[key], lambda src: 0.0, 0.0)

    def expected_quality(self, params: ArchParams, true_values: bool = False) -> float:
        values = self.q_true if true_values else self.q_hat
        return self._chain_state(params, values).total

    def expected_quality_and_grads(
        self, params: ArchParams, true_values: bool = False
    ) -> tuple[float, Grads]:
        values = self.q_true if true_values else self.q_hat
        state = self._chain_state(params, values)
        return state.total, chain_backward(self.spec, params, state)

    def train_step(self, spec, params, rng, sampled=None) -> float:
        for key, q in self.q_true.items():
            if sampled is None:
                self.q_hat[key] += self.learn_rate * (q - self.q_hat[key])
            else:
                idx = np.asarray(sampled[key], dtype=np.intp)
                self.q_hat[key][idx] += self.learn_rate * (q[idx] - self.q_hat[key][idx])
        return self.task_loss(spec, params, rng)

    def task_loss(self, spec, params, rng) -> float:
        noise = self.noise_sigma * float(rng.standard_normal()) if self.noise_sigma else 0.0
        return -self.expected_quality(params) + noise

    def loss_and_grads(self, spec, params, rng) -> tuple[float, Grads]:
        quality, grads = self.expected_quality_and_grads(params)
        noise = self.noise_sigma * float(rng.standard_normal()) if self.noise_sigma else 0.0
        return -quality + noise, grads.scaled(-1.0)

    def score_architecture(self, arch: DerivedArchitecture) -> float:
        """Sum of latent qualities of the chosen candidates along the path."""
        total = 0.0
        for blk in arch.blocks:
            if blk.align_choice is None or blk.basic_choices is None:
                raise SearchError("architecture lacks candidate-choice provenance")
            total += float(self.q_true[("a", blk.src, blk.index)][blk.align_choice])
            for l, c in enumerate(blk.basic_choices):
                total += float(self.q_true[("b", blk.index, l)][c])
        return total


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    task_loss: float
    est_cost: float
    reg_loss: float
    params_sha256: str

    def to_json(self) -> dict[str, Any]:
        return {
            "epoch": self.epoch,
            "task_loss": self.task_loss,
            "est_cost": self.est_cost,
            "reg_loss": self.reg_loss,
            "params_sha256": self.params_sha256,
        }


@dataclass
class SearchTrace:
    records: list[EpochRecord]

    def to_jsonl(self) -> str:
        from .ioutil import canonical_json

        return "".join(canonical_json(r.to_json()) + "\n" for r in self.records)


def _descend(
    params: ArchParams,
    grads: Grads,
    lr: float,
    sampled: dict[LayerKey, tuple[int, ...]] | None,
) -> None:
    if sampled is None:
        for k in params.alpha_basic:
            params.alpha_basic[k] = params.alpha_basic[k] - lr * grads.alpha_basic[k]
        for k in params.alpha_align:
            params.alpha_align[k] = params.alpha_align[k] - lr * grads.alpha_align[k]
    else:
        # Dropping-path: only sampled entries move, and the re-balancing
        # bias keeps every unsampled operation's softmax weight fixed.
        for key in params.layer_keys():
            alpha = params.alpha(key)
            idx = np.asarray(sampled[key], dtype=np.intp)
            updated = alpha[idx] - lr * grads.alpha(key)[idx]
            params.set_alpha(key, apply_sampled_update(alpha, tuple(sampled[key]), updated))
    for e in params.beta:
        params.beta[e] = params.beta[e] - lr * grads.beta[e]


def search(
    spec: SuperNetworkSpec,
    config: SearchConfig,
    evaluator: Evaluator,
    table: CostTable,
) -> tuple[ArchParams, SearchTrace]:
    """Run the two-stage search; fully deterministic for fixed seeds."""
    config.validate()
    params = init_params(spec)
    validate_binding(spec, params)

    ss = np.random.SeedSequence(config.seed)
    eval_ss, sample_ss = ss.spawn(2)
    rng_eval = np.random.default_rng(eval_ss)
    rng_sample = np.random.default_rng(sample_ss)

    records: list[EpochRecord] = []
    for epoch in range(config.total_epochs):
        for _ in range(config.steps_per_epoch):
            sampled = sample_ops(spec, params, rng_sample, 1) if config.drop_path else None
            loss = evaluator.train_step(spec, params, rng_eval, sampled)
            if not math.isfinite(loss):
                raise SearchError(f"evaluator returned non-finite training loss at epoch {epoch}")

        if epoch >= config.warmup_epochs:
            for _ in range(config.steps_per_epoch):
                loss, grads = evaluator.loss_and_grads(spec, params, rng_eval)
                if not math.isfinite(loss):
                    raise SearchError(f"evaluator returned non-finite loss at epoch {epoch}")
                if config.lam > 0:
                    total_cost, cgrads = cost_gradients(spec, params, table)
                    coef = config.lam / (math.log(config.tau) * total_cost)
                    grads = grads.add_scaled(cgrads, coef)
                sampled2 = sample_ops(spec, params, rng_sample, 2) if config.drop_path else None
                _descend(params, grads, config.lr_alpha_beta, sampled2)

        task_loss = evaluator.task_loss(spec, params, rng_eval)
        est_cost, _ = chained_cost(spec, params, table)
        reg_loss = regularized_loss(task_loss, est_cost, config.lam, config.tau)
        records.append(EpochRecord(epoch, float(task_loss), est_cost, reg_loss, params.sha256()))

    return params, SearchTrace(records)


class RandomSearchError(RuntimeError):
    """Acceptance rate too low for the requested cost band."""


def random_params(spec: SuperNetworkSpec, rng: np.random.Generator) -> ArchParams:
    """i.i.d. standard-normal alpha and beta."""
    params = init_params(spec)
    for k in sorted(params.alpha_basic):
        params.alpha_basic[k] = rng.standard_normal(len(params.alpha_basic[k]))
    for k in sorted(params.alpha_align):
        params.alpha_align[k] = rng.standard_normal(len(params.alpha_align[k]))
    for e in sorted(params.beta):
        params.beta[e] = float(rng.standard_normal())
    return params


def random_search(
    spec: SuperNetworkSpec,
    table: CostTable,
    evaluator: Evaluator,
    n_samples: int,
    cost_target: float,
    tolerance: float,
    rng: np.random.Generator,
    max_attempts: int | None = None,
) -> tuple[DerivedArchitecture, list[tuple[DerivedArchitecture, float, float]]]:
    """Rejection-sample architectures near a cost target, evaluate the
    accepted ones, return the best scorer (plus all accepted samples as
    (architecture, exact cost, score) for reporting)."""
    from .cost import exact_cost

    if n_samples < 1:
        raise SearchError("n_samples must be >= 1")
    if cost_target <= 0:
        raise SearchError("cost_target must be positive")
    cap = max_attempts if max_attempts is not None else 2000 * n_samples

    accepted: list[tuple[DerivedArchitecture, float, float]] = []
    attempts = 0
    while len(accepted) < n_samples:
        if attempts >= cap:
            raise RandomSearchError(
                f"accepted only {len(accepted)}/{n_samples} architectures in {attempts} attempts "
                f"for target {cost_target:g} (+/- {tolerance:g} relative)"
            )
        attempts += 1
        params = random_params(spec, rng)
        arch = derive(spec, params)
        c = exact_cost(arch, table)
        if abs(c - cost_target) <= tolerance * cost_target:
            accepted.append((arch, c, evaluator.score_architecture(arch)))

    best = max(accepted, key=lambda t: t[2])
    return best[0], accepted
