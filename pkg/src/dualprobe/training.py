"""Actor-critic training of the dynamic-probe policy, transfer learning and gradient checks."""

from __future__ import annotations

import copy
import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .appd import Plan
from .dppd import (
    ACTOR,
    CRITIC,
    EMBEDDING,
    Batch,
    Instance,
    PolicyModel,
    build_instance,
    greedy_plans,
    rollout,
)
from .metrics import DEFAULT_BITMAP, compute_metrics, weighted_revenue
from .probes import ProbeKind, label_size
from .topo import gen_random_topology, select_service_network

log = logging.getLogger(__name__)

DEFAULT_LABEL_BYTES = label_size(ProbeKind.DYNAMIC, DEFAULT_BITMAP)


class TrainingError(RuntimeError):
    pass


@dataclass
class Hyperparams:
    epochs: int = 50
    batch: int = 1280
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    instance_count: int = 64000
    seed: int = 0
    optimizer: str = "adam"
    max_grad_norm: float | None = 1.0
    stop_on_convergence: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch", "lr_actor", "lr_critic", "instance_count"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    mean_reward: float
    critic_loss: float
    greedy_cost: float


@dataclass
class TrainRecord:
    rows: list[EpochStats] = field(default_factory=list)

    @property
    def greedy_costs(self) -> list[float]:
        return [r.greedy_cost for r in self.rows]

    def epochs_to_convergence(self, tol: float = 0.01, window: int = 3) -> int:
        return epochs_to_convergence(self.greedy_costs, tol, window)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "mean_reward", "critic_loss", "greedy_cost"])
        for r in self.rows:
            w.writerow([r.epoch, f"{r.mean_reward:.6f}", f"{r.critic_loss:.6f}", f"{r.greedy_cost:.6f}"])
        return buf.getvalue()


def epochs_to_convergence(costs: Sequence[float], tol: float = 0.01, window: int = 3) -> int:
    """First epoch after which ``window`` more epochs improve the best cost by less than ``tol``.

    Returns the last epoch index when the run never settles.
    """
    best = list(np.minimum.accumulate(costs))
    for e in range(len(costs) - window):
        if best[e] - best[e + window] < tol * abs(best[e]):
            return e
    return len(costs) - 1


# --------------------------------------------------------------------------- instances and reward


def generate_instances(count: int, n: int, seed: int = 0, fraction: float = 1.0,
                       edge_prob: float | None = None) -> list[Instance]:
    seeds = np.random.default_rng(seed).integers(2**31, size=count)
    out = []
    for s in seeds:
        topo = gen_random_topology(n, edge_prob, int(s))
        out.append(build_instance(topo, select_service_network(topo, fraction, int(s))))
    return out


def episode_cost(plan: Plan, instance: Instance, weights, label_bytes: int = DEFAULT_LABEL_BYTES) -> tuple[float, float]:
    """Weighted cost C of a plan and the training reward r = -C."""
    metrics = compute_metrics(plan, instance.topology, instance.demanded, label_bytes)
    c = weighted_revenue(metrics, weights)
    return c, -c


def greedy_cost(model: PolicyModel, instances: Sequence[Instance], weights,
                label_bytes: int = DEFAULT_LABEL_BYTES) -> list[float]:
    plans = greedy_plans(model, instances)
    return [episode_cost(p, i, weights, label_bytes)[0] for p, i in zip(plans, instances)]


def policy_losses(log_prob: torch.Tensor, value: torch.Tensor, rewards: torch.Tensor):
    """Actor loss -mean(adv * log P) and critic loss mean((R - V)^2)."""
    adv = rewards - value.detach()
    actor = -(adv * log_prob).mean()
    critic = ((rewards - value) ** 2).mean()
    return actor, critic


# --------------------------------------------------------------------------- training loop


def _optimizer(params, lr, kind):
    if not params:
        return None
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr)
    return torch.optim.SGD(params, lr=lr)


def train(model: PolicyModel, instances: Sequence[Instance], hp: Hyperparams, weights,
          eval_instances: Sequence[Instance] | None = None, groups=("embedding", "actor", "critic"),
          label_bytes: int = DEFAULT_LABEL_BYTES) -> tuple[PolicyModel, TrainRecord]:
    """Train in place with sampled rollouts and a critic baseline.

    One epoch is a shuffled pass over ``instances`` in mini-batches of
    ``hp.batch``. Row 0 of the record evaluates the untrained model.
    """
    eval_instances = list(eval_instances) if eval_instances is not None else list(instances[:128])
    gen = torch.Generator().manual_seed(hp.seed)
    order_rng = np.random.default_rng(hp.seed)
    trainable = set(groups)
    for name in ("embedding", "actor", "critic"):
        for p in model.group(name):
            p.requires_grad_(name in trainable)
    actor_params = [p for g in ("embedding", "actor") if g in trainable for p in model.group(g)]
    critic_params = model.group("critic") if "critic" in trainable else []
    opt_actor = _optimizer(actor_params, hp.lr_actor, hp.optimizer)
    opt_critic = _optimizer(critic_params, hp.lr_critic, hp.optimizer)
    dtype = next(model.parameters()).dtype

    record = TrainRecord()
    with torch.no_grad():
        roll = rollout(model, Batch.of(eval_instances, dtype), "sample", gen)
        rewards = torch.tensor([episode_cost(p, i, weights, label_bytes)[1]
                                for p, i in zip(roll.plans(), eval_instances)], dtype=dtype)
        _, closs = policy_losses(roll.log_prob, roll.value, rewards)
    record.rows.append(EpochStats(0, float(rewards.mean()), float(closs),
                                  float(np.mean(greedy_cost(model, eval_instances, weights, label_bytes)))))

    for epoch in range(1, hp.epochs + 1):
        perm = order_rng.permutation(len(instances))
        rew_sum, closs_sum, batches = 0.0, 0.0, 0
        for start in range(0, len(perm), hp.batch):
            chunk = [instances[i] for i in perm[start:start + hp.batch]]
            roll = rollout(model, Batch.of(chunk, dtype), "sample", gen)
            rewards = torch.tensor([episode_cost(p, i, weights, label_bytes)[1]
                                    for p, i in zip(roll.plans(), chunk)], dtype=dtype)
            actor_loss, critic_loss = policy_losses(roll.log_prob, roll.value, rewards)
            for opt in (opt_actor, opt_critic):
                if opt is not None:
                    opt.zero_grad()
            loss = (actor_loss if actor_params else 0.0) + (critic_loss if critic_params else 0.0)
            loss.backward()
            for p in actor_params + critic_params:
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {batches}")
            if hp.max_grad_norm:
                if actor_params:
                    torch.nn.utils.clip_grad_norm_(actor_params, hp.max_grad_norm)
                if critic_params:
                    torch.nn.utils.clip_grad_norm_(critic_params, hp.max_grad_norm)
            for opt in (opt_actor, opt_critic):
                if opt is not None:
                    opt.step()
            rew_sum += float(rewards.mean())
            closs_sum += float(critic_loss.detach())
            batches += 1
        cost = float(np.mean(greedy_cost(model, eval_instances, weights, label_bytes)))
        record.rows.append(EpochStats(epoch, rew_sum / batches, closs_sum / batches, cost))
        log.info("epoch %d reward %.4f critic %.5f greedy %.4f", epoch, rew_sum / batches,
                 closs_sum / batches, cost)
        if hp.stop_on_convergence and len(record.rows) > 3 and \
                record.epochs_to_convergence() < len(record.rows) - 3:
            break
    for p in model.parameters():
        p.requires_grad_(True)
    return model, record


# --------------------------------------------------------------------------- transfer learning


def _fresh_with(pretrained: PolicyModel, n_features: int, keep: Sequence[str], seed: int) -> PolicyModel:
    model = PolicyModel(n_features, pretrained.d, pretrained.D, seed=seed)
    src = dict(pretrained.named_parameters())
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name in keep:
                p.copy_(src[name])
    return model


def transfer_for_reward(pretrained: PolicyModel, instances: Sequence[Instance], hp: Hyperparams, weights,
                        eval_instances: Sequence[Instance] | None = None,
                        label_bytes: int = DEFAULT_LABEL_BYTES) -> tuple[PolicyModel, TrainRecord]:
    """Start from the pretrained embedding with a fresh actor and critic, then train everything."""
    if instances[0].n_features != pretrained.n_features:
        raise ValueError(f"instances have {instances[0].n_features} features, "
                         f"pretrained embedding expects {pretrained.n_features}")
    model = _fresh_with(pretrained, pretrained.n_features, EMBEDDING, hp.seed)
    return train(model, instances, hp, weights, eval_instances, label_bytes=label_bytes)


def transfer_for_dataset(pretrained: PolicyModel, instances: Sequence[Instance], hp: Hyperparams, weights,
                         eval_instances: Sequence[Instance] | None = None, d: int | None = None,
                         label_bytes: int = DEFAULT_LABEL_BYTES) -> tuple[PolicyModel, TrainRecord]:
    """Start from the pretrained actor and critic with a fresh embedding sized for the new instances."""
    if d is not None and d != pretrained.d:
        raise ValueError(f"embedding width {d} incompatible with pretrained width {pretrained.d}")
    model = _fresh_with(pretrained, instances[0].n_features, ACTOR + CRITIC, hp.seed)
    return train(model, instances, hp, weights, eval_instances, label_bytes=label_bytes)


# --------------------------------------------------------------------------- gradient check


def gradient_check(model: PolicyModel, instance: Instance, epsilon: float = 1e-4,
                   actions: Sequence[int] | None = None, reward: float = 0.0,
                   params: Sequence[str] | None = None, floor: float = 1e-6) -> float:
    """Max relative error between autograd and central differences.

    Actor parameters are checked on log P(actions | instance); critic
    parameters on (reward - V)^2. Runs in float64 on a copy of ``model``.
    The error is |a - n| / max(|a|, |n|, floor); the floor keeps entries
    whose true gradient is ~0 from reporting pure round-off as error.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    m = copy.deepcopy(model).double()
    batch = Batch.of([instance], torch.float64)
    if actions is None:
        with torch.no_grad():
            actions = rollout(m, batch, "greedy").actions[0]
    actions = [list(actions)]
    names = list(params) if params is not None else [k for k, _ in m.named_parameters()]
    by_name = dict(m.named_parameters())

    def objectives():
        out = rollout(m, batch, "forced", actions=actions)
        return out.log_prob[0], (reward - out.value[0]) ** 2

    logp, closs = objectives()
    m.zero_grad()
    (logp + closs).backward()
    worst = 0.0
    for name in names:
        # the critic sees detached embeddings, so each group has its own objective
        pick = 1 if name in CRITIC else 0
        p = by_name[name]
        grad = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        flat = p.data.view(-1)
        for k in range(flat.numel()):
            orig = float(flat[k])
            with torch.no_grad():
                flat[k] = orig + epsilon
                up = objectives()[pick]
                flat[k] = orig - epsilon
                down = objectives()[pick]
                flat[k] = orig
            num = float(up - down) / (2 * epsilon)
            ana = float(grad.view(-1)[k])
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst
