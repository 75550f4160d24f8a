"""Dynamic-probe path planning: the covering MDP and the attention policy that solves it.

Actions are node indices 1..n plus the virtual action 0, which closes the open
path. From a node the policy may move along a still-demanded link or close
the path; after a close it may start at any endpoint of a remaining demanded
link. An episode ends once every demanded link is covered.

The policy embeds each node's input row with a shared linear map (a kernel-1
convolution), feeds the embedding of the last action into a GRU cell, and
scores every action with one attention glimpse followed by a pointer layer.
Infeasible actions get logit -inf.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .appd import Plan
from .topo import Link, Topology, canon, canon_set


class EnvError(ValueError):
    pass


class DecodeError(RuntimeError):
    pass


# --------------------------------------------------------------------------- environment


@dataclass(frozen=True)
class Instance:
    topology: Topology
    demanded: frozenset[Link]
    adjacency: np.ndarray  # (n, n) 0/1
    latency: np.ndarray  # (n, n) effective latency / max effective latency, 0 off-link
    demand: np.ndarray  # (n, n) 0/1 demanded links

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def n_features(self) -> int:
        return 3 * self.topology.n

    def features(self, remaining: Iterable[Link] | None = None) -> np.ndarray:
        """Per-node input rows [adjacency | latency | remaining demand], shape (n, 3n)."""
        demand = self.demand if remaining is None else _link_matrix(self.n, remaining)
        return np.concatenate([self.adjacency, self.latency, demand], axis=1)


def _link_matrix(n: int, links: Iterable[Link]) -> np.ndarray:
    m = np.zeros((n, n))
    for u, v in links:
        m[u - 1, v - 1] = m[v - 1, u - 1] = 1.0
    return m


def build_instance(topology: Topology, demanded: Iterable[Link] | None = None) -> Instance:
    demanded = topology.link_set if demanded is None else canon_set(demanded)
    if not demanded:
        raise EnvError("demanded link set is empty")
    if not demanded <= topology.link_set:
        raise EnvError(f"demanded links not in topology: {sorted(demanded - topology.link_set)}")
    n = topology.n
    adj = _link_matrix(n, topology.links)
    lat = np.zeros((n, n))
    for u, v in topology.links:
        lat[u - 1, v - 1] = lat[v - 1, u - 1] = topology.effective_latency(u, v)
    lat /= lat.max()
    return Instance(topology, frozenset(demanded), adj, lat, _link_matrix(n, demanded))


@dataclass(frozen=True)
class EnvState:
    current: int
    remaining: frozenset[Link]
    paths: tuple[tuple[int, ...], ...] = ()
    steps: int = 0

    @property
    def terminal(self) -> bool:
        return not self.remaining

    def plan(self) -> Plan:
        return Plan.of(p for p in self.paths if len(p) > 1)


def initial_state(instance: Instance) -> EnvState:
    return EnvState(0, instance.demanded)


def feasible_actions(state: EnvState) -> set[int]:
    if state.terminal:
        raise EnvError("no actions in a terminal state")
    if state.current == 0:
        return {x for link in state.remaining for x in link}
    acts = {v if u == state.current else u for u, v in state.remaining if state.current in (u, v)}
    if len(state.paths[-1]) > 1:
        acts.add(0)
    return acts


def action_mask(state: EnvState, n: int) -> np.ndarray:
    mask = np.zeros(n + 1, dtype=bool)
    mask[sorted(feasible_actions(state))] = True
    return mask


def transition(state: EnvState, action: int) -> EnvState:
    if action not in feasible_actions(state):
        raise EnvError(f"action {action} infeasible at node {state.current}")
    paths = state.paths
    if action == 0:
        return EnvState(0, state.remaining, paths, state.steps + 1)
    if state.current == 0:
        return EnvState(action, state.remaining, paths + ((action,),), state.steps + 1)
    paths = paths[:-1] + (paths[-1] + (action,),)
    return EnvState(action, state.remaining - {canon(state.current, action)}, paths, state.steps + 1)


def actions_to_plan(actions: Sequence[int]) -> Plan:
    paths: list[list[int]] = []
    current = 0
    for a in actions:
        if a == 0:
            current = 0
        elif current == 0:
            paths.append([a])
            current = a
        else:
            paths[-1].append(a)
            current = a
    return Plan.of(paths)


# --------------------------------------------------------------------------- model

EMBEDDING = ("embed.weight", "embed.bias", "virtual")
ACTOR = ("cell.weight_ih", "cell.weight_hh", "cell.bias_ih", "cell.bias_hh",
         "glimpse_W.weight", "glimpse_v", "pointer_W.weight", "pointer_v")
CRITIC = ("critic_dense.weight", "critic_dense.bias", "critic_out.weight", "critic_out.bias")
PARAM_ORDER = EMBEDDING + ACTOR + CRITIC


class PolicyModel(nn.Module):
    def __init__(self, n_features: int, d: int = 128, D: int = 128, seed: int = 0):
        super().__init__()
        self.n_features, self.d, self.D = n_features, d, D
        gen = torch.Generator().manual_seed(seed)
        self.embed = nn.Conv1d(n_features, d, kernel_size=1)
        self.virtual = nn.Parameter(torch.empty(d))
        self.cell = nn.GRUCell(d, D)
        self.glimpse_W = nn.Linear(d + D, d, bias=False)
        self.glimpse_v = nn.Parameter(torch.empty(d))
        self.pointer_W = nn.Linear(2 * d, d, bias=False)
        self.pointer_v = nn.Parameter(torch.empty(d))
        self.critic_dense = nn.Linear(d, d)
        self.critic_out = nn.Linear(d, 1)
        self.reset_parameters(PARAM_ORDER, gen)

    def reset_parameters(self, names: Iterable[str], gen: torch.Generator) -> None:
        params = dict(self.named_parameters())
        with torch.no_grad():
            for name in names:
                p = params[name]
                if name in ("embed.weight", "embed.bias"):
                    bound = self.n_features ** -0.5
                elif name.startswith("cell."):
                    bound = self.D ** -0.5
                elif name == "glimpse_W.weight":
                    bound = (self.d + self.D) ** -0.5
                elif name == "pointer_W.weight":
                    bound = (2 * self.d) ** -0.5
                else:
                    bound = self.d ** -0.5
                p.uniform_(-bound, bound, generator=gen)

    def group(self, name: str) -> list[nn.Parameter]:
        names = {"embedding": EMBEDDING, "actor": ACTOR, "critic": CRITIC}[name]
        params = dict(self.named_parameters())
        return [params[k] for k in names]

    # -- forward pieces

    def embed_inputs(self, features: torch.Tensor) -> torch.Tensor:
        """(B, n, F) node rows -> (B, n+1, d) embeddings, row 0 is the virtual node."""
        if features.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features per node, got {features.shape[-1]}")
        emb = self.embed(features.transpose(1, 2)).transpose(1, 2)
        virt = self.virtual.expand(emb.shape[0], 1, self.d)
        return torch.cat([virt, emb], dim=1)

    def attend(self, emb: torch.Tensor, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Log-probabilities over actions; masked entries are -inf."""
        if not bool(mask.any(dim=-1).all()):
            raise ValueError("every row needs at least one feasible action")
        d = self.d
        # W[x; y] computed as W_x x + W_y y to avoid materialising the concatenation
        Wg, Wp = self.glimpse_W.weight, self.pointer_W.weight
        u = torch.tanh(emb @ Wg[:, :d].T + (h @ Wg[:, d:].T).unsqueeze(1)) @ self.glimpse_v
        align = torch.softmax(u.masked_fill(~mask, float("-inf")), dim=-1)
        ctx = torch.bmm(align.unsqueeze(1), emb).squeeze(1)
        logits = torch.tanh(emb @ Wp[:, :d].T + (ctx @ Wp[:, d:].T).unsqueeze(1)) @ self.pointer_v
        return torch.log_softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)

    def critic_value(self, emb: torch.Tensor, probs: torch.Tensor) -> torch.Tensor:
        pooled = (probs.unsqueeze(-1) * emb).sum(dim=1)
        return self.critic_out(torch.relu(self.critic_dense(pooled))).squeeze(-1)


# --------------------------------------------------------------------------- batched rollouts


@dataclass
class Batch:
    instances: list[Instance]
    static: torch.Tensor  # (B, n, 2n) adjacency | latency
    demand: torch.Tensor  # (B, n+1, n+1) bool, row/col 0 unused

    @classmethod
    def of(cls, instances: Sequence[Instance], dtype=torch.float32) -> "Batch":
        ns = {inst.n for inst in instances}
        if len(ns) != 1:
            raise ValueError("a batch needs instances of one size")
        static = np.stack([np.concatenate([i.adjacency, i.latency], axis=1) for i in instances])
        dem = np.stack([np.pad(i.demand, ((1, 0), (1, 0))) for i in instances]) > 0
        return cls(list(instances), torch.as_tensor(static, dtype=dtype), torch.as_tensor(dem))

    def __len__(self):
        return len(self.instances)


@dataclass
class Rollout:
    actions: list[list[int]]
    log_prob: torch.Tensor  # (B,) sum of log-probabilities of the chosen actions
    value: torch.Tensor  # (B,) critic estimate from step-0 probabilities
    step_log_probs: list[list[float]] = field(default_factory=list)

    def plans(self) -> list[Plan]:
        return [actions_to_plan(a) for a in self.actions]


def _features(static: torch.Tensor, demand: torch.Tensor) -> torch.Tensor:
    return torch.cat([static, demand[:, 1:, 1:].to(static.dtype)], dim=-1)


def _mask(demand: torch.Tensor, current: torch.Tensor, fresh: torch.Tensor, done: torch.Tensor) -> torch.Tensor:
    B = demand.shape[0]
    at_node = demand[torch.arange(B), current].clone()  # row 0 is all False
    at_node[:, 0] = ~fresh
    endpoints = demand.any(dim=-1)
    mask = torch.where((current == 0).unsqueeze(-1), endpoints, at_node)
    idle = torch.zeros_like(mask)
    idle[:, 0] = True
    return torch.where(done.unsqueeze(-1), idle, mask)


def rollout(model: PolicyModel, batch: Batch, mode: str = "greedy", generator: torch.Generator | None = None,
            actions: Sequence[Sequence[int]] | None = None, step_limit: int | None = None,
            record_steps: bool = False) -> Rollout:
    """Run the MDP for every instance in ``batch``.

    ``mode`` is "greedy" (argmax, lowest index on ties), "sample", or
    "forced" (replay the given ``actions``, used for gradient checks).
    """
    if mode not in ("greedy", "sample", "forced"):
        raise ValueError(f"unknown decode mode {mode!r}")
    B = len(batch)
    demand = batch.demand.clone()
    sizes = demand.flatten(1).sum(dim=1) // 2
    limit = step_limit if step_limit is not None else int(10 * sizes.max())
    current = torch.zeros(B, dtype=torch.long)
    fresh = torch.zeros(B, dtype=torch.bool)  # path just opened, closing it would be a no-op
    done = torch.zeros(B, dtype=torch.bool)
    rows = torch.arange(B)
    h = torch.zeros(B, model.D, dtype=batch.static.dtype)
    emb = model.embed_inputs(_features(batch.static, demand))
    x_in = emb[:, 0]
    log_prob = torch.zeros(B, dtype=batch.static.dtype)
    chosen: list[list[int]] = [[] for _ in range(B)]
    step_lp: list[list[float]] = [[] for _ in range(B)]
    value = None
    t = 0
    while not bool(done.all()):
        if t >= limit:
            raise DecodeError(f"step limit {limit} exceeded; masking must be broken")
        h = model.cell(x_in, h)
        mask = _mask(demand, current, fresh, done)
        logp = model.attend(emb, h, mask)
        if t == 0:
            value = model.critic_value(emb.detach(), logp.exp().detach())
        if mode == "greedy":
            a = logp.argmax(dim=-1)
        elif mode == "sample":
            a = torch.multinomial(logp.exp().detach(), 1, generator=generator).squeeze(-1)
        else:
            a = torch.tensor([seq[t] if t < len(seq) else 0 for seq in actions])
            if not bool(mask[rows, a].all()):
                raise EnvError(f"forced action infeasible at step {t}")
        picked = logp[rows, a]
        log_prob = log_prob + torch.where(done, torch.zeros_like(picked), picked)
        active = (~done).tolist()
        for b, (on, act) in enumerate(zip(active, a.tolist())):
            if on:
                chosen[b].append(act)
                if record_steps:
                    step_lp[b].append(float(picked[b].detach()))
        move = (~done) & (current > 0) & (a > 0)
        hit = torch.zeros_like(demand)
        hit[rows, current, a] = True
        hit = (hit | hit.transpose(1, 2)) & move.view(B, 1, 1)
        demand = demand & ~hit
        fresh = (current == 0) & (a > 0)
        current = torch.where(done, current, a)
        done = ~demand.flatten(1).any(dim=1)
        emb = model.embed_inputs(_features(batch.static, demand))
        x_in = emb[rows, current]
        t += 1
    return Rollout(chosen, log_prob, value, step_lp)


def decode(model: PolicyModel, instance: Instance, mode: str = "greedy", rng: torch.Generator | None = None,
           step_limit: int | None = None) -> tuple[Plan, float]:
    """Single-instance decode; returns the plan and the sequence log-probability."""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = rollout(model, Batch.of([instance], dtype), mode, rng, step_limit=step_limit)
    return out.plans()[0], float(out.log_prob[0])


def greedy_plans(model: PolicyModel, instances: Sequence[Instance], batch_size: int = 256) -> list[Plan]:
    dtype = next(model.parameters()).dtype
    plans: list[Plan] = []
    with torch.no_grad():
        for i in range(0, len(instances), batch_size):
            plans += rollout(model, Batch.of(instances[i:i + batch_size], dtype), "greedy").plans()
    return plans


# --------------------------------------------------------------------------- checkpoints

MAGIC = b"DPPD"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")


class CheckpointError(ValueError):
    pass


def save_model(model: PolicyModel, path_or_buf) -> None:
    params = dict(model.named_parameters())
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, model.n_features, model.d, model.D))
    for name in PARAM_ORDER:
        buf.write(params[name].detach().to(torch.float32).numpy().astype("<f4").tobytes())
    data = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(data)
    else:
        with open(path_or_buf, "wb") as fh:
            fh.write(data)


def load_model(path_or_buf) -> PolicyModel:
    if hasattr(path_or_buf, "read"):
        data = path_or_buf.read()
    else:
        with open(path_or_buf, "rb") as fh:
            data = fh.read()
    if len(data) < _HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, nf, d, D = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a DPPD checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    model = PolicyModel(nf, d, D)
    params = dict(model.named_parameters())
    pos = _HEADER.size
    with torch.no_grad():
        for name in PARAM_ORDER:
            p = params[name]
            nbytes = 4 * p.numel()
            if len(data) < pos + nbytes:
                raise CheckpointError(f"truncated checkpoint at {name}")
            arr = np.frombuffer(data, dtype="<f4", count=p.numel(), offset=pos)
            p.copy_(torch.from_numpy(arr.copy()).view_as(p))
            pos += nbytes
    if pos != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    return model
