"""Deep-Q selection agent: replay buffer, target network, nucleus (top-p)
action sampling, and the offline-pretraining / online-refinement workflow.

The network emits one Q value per device (lower is better; this package
minimizes cost). A round's selection is the nucleus of the softmax over
negated Q values, so the agent exploits known-good devices while still
exploring the tail.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .core import EnvState, Placement, RoundReport, Transition, as_placement
from .cost import CostBreakdown
from .env import OnDemandEnv

_INIT_TAG, _SAMPLE_TAG = 101, 211


@dataclass(frozen=True)
class AgentConfig:
    """Selection-agent hyperparameters.

    temperature is relative: the agent rescales it by the spread of the
    current Q-values before sampling, so nucleus behavior does not depend on
    the absolute cost scale (which grows with the discount horizon).
    """

    gamma: float = 0.9
    alpha: float = 0.01
    top_p: float = 0.9
    temperature: float = 1.0
    replay_capacity: int = 5000
    batch_size: int = 32
    target_sync_interval: int = 100
    max_selected: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.replay_capacity < self.batch_size:
            raise ValueError("replay_capacity must be >= batch_size")
        if self.target_sync_interval < 1:
            raise ValueError("target_sync_interval must be >= 1")
        if self.max_selected is not None and self.max_selected < 1:
            raise ValueError("max_selected must be >= 1 when set")


class ReplayBuffer:
    """Bounded FIFO of transitions; eviction is oldest-first."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, index: int) -> Transition:
        return self._items[index]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform sample without replacement within the batch."""
        if len(self._items) < batch_size:
            raise ValueError(
                f"buffer holds {len(self._items)} transitions, need {batch_size}"
            )
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[int(i)] for i in idx]


def encode_state(state: EnvState, n: int, num_areas: int, horizon: int) -> np.ndarray:
    """[k bits, ac, r/horizon, requested-area multi-hot] -> length n+2+num_areas."""
    vec = np.zeros(n + 2 + num_areas)
    vec[:n] = state.k
    vec[n] = state.ac
    vec[n + 1] = state.r / horizon
    for area in state.da:
        vec[n + 2 + area] = 1.0
    return vec


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def select_action_top_p(
    q: np.ndarray,
    config: AgentConfig,
    rng: np.random.Generator,
    max_selected: int | None = None,
) -> Placement:
    """Nucleus selection over per-device Q values.

    Probabilities are softmax(-q / temperature) (low Q is good); the selection
    is the minimal descending-probability prefix whose mass reaches top_p,
    truncated to the max_selected most probable members. Ties break toward the
    lower device id. The current rule is deterministic given q, but selection
    remains seeded for drop-in stochastic variants.
    """
    del rng  # kept in the signature for interface stability
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    probs = _softmax(-q / config.temperature)
    order = np.lexsort((np.arange(n), -probs))
    cumulative = np.cumsum(probs[order])
    size = int(np.searchsorted(cumulative, config.top_p - 1e-12)) + 1
    cap = max_selected if max_selected is not None else (config.max_selected or n)
    chosen = order[: min(size, cap)]
    k = np.zeros(n, dtype=int)
    k[chosen] = 1
    return tuple(int(b) for b in k)


@dataclass
class EpisodeTrace:
    """Per-round outcomes of one episode."""

    costs: list[CostBreakdown] = field(default_factory=list)
    reports: list[RoundReport] = field(default_factory=list)
    transitions: list[Transition] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    volumes: list[tuple[int, ...]] = field(default_factory=list)

    def mean_cost(self) -> float:
        return float(np.mean([c.total for c in self.costs]))

    def accepted_fraction(self) -> float:
        return float(np.mean([r.accepted for r in self.reports]))


class DqnAgent:
    """Q-network, target network, replay buffer, and the training step."""

    def __init__(
        self,
        n: int,
        num_areas: int,
        horizon: int,
        config: AgentConfig | None = None,
        hidden: Sequence[int] = (128, 256, 128),
        seed: int = 0,
    ) -> None:
        self.n = n
        self.num_areas = num_areas
        self.horizon = horizon
        self.config = config or AgentConfig()
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = seed
        spec = nn.NetworkSpec.mlp(n + 2 + num_areas, self.hidden, n)
        self.theta = nn.init(
            spec, np.random.default_rng(np.random.SeedSequence([seed, _INIT_TAG]))
        )
        self.theta_target = nn.clone_parameters(self.theta)
        self.adam = nn.init_adam(self.theta, alpha=self.config.alpha)
        self.buffer = ReplayBuffer(self.config.replay_capacity)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, _SAMPLE_TAG]))
        self.step_count = 0

    # ------------------------------------------------------------- inference

    def encode(self, state: EnvState) -> np.ndarray:
        return encode_state(state, self.n, self.num_areas, self.horizon)

    def q_values(self, state: EnvState, target: bool = False) -> np.ndarray:
        params = self.theta_target if target else self.theta
        out, _ = nn.forward(params, self.encode(state))
        return out

    def select_action(self, state: EnvState) -> Placement:
        q = self.q_values(state)
        scale = float(q.std())
        config = self.config
        if scale > 0:
            config = replace(config, temperature=config.temperature * scale)
        return select_action_top_p(q, config, self.rng)

    # -------------------------------------------------------------- learning

    def store(self, transition: Transition) -> None:
        self.buffer.push(transition)

    def sample_minibatch(self) -> list[Transition]:
        return self.buffer.sample(self.config.batch_size, self.rng)

    def td_target(self, transition: Transition) -> float:
        """cost + gamma * min over target-network Q at the next state; episode
        ends truncate the bootstrap."""
        if transition.s_next.r >= self.horizon:
            return transition.c
        q_next = self.q_values(transition.s_next, target=True)
        return transition.c + self.config.gamma * float(q_next.min())

    def train_step(self, batch: Sequence[Transition]) -> float:
        """Regress every selected head toward the scalar TD target (masked
        mse), take one Adam step, and sync the target network on schedule."""
        if not batch:
            raise ValueError("train_step needs a nonempty batch")
        inputs = np.stack([self.encode(t.s) for t in batch])
        targets = np.array([self.td_target(t) for t in batch])
        mask = np.array([t.a for t in batch], dtype=bool)
        preds, cache = nn.forward(self.theta, inputs)
        target_matrix = np.where(mask, targets[:, None], preds)
        loss, out_grad = nn.loss_mse(preds, target_matrix, mask)
        if not np.isfinite(loss):
            raise ValueError("non-finite training loss")
        grads = nn.backward(self.theta, cache, out_grad)
        self.theta, self.adam = nn.adam_step(self.theta, grads, self.adam, inplace=True)
        self.step_count += 1
        if self.step_count % self.config.target_sync_interval == 0:
            self.theta_target = nn.clone_parameters(self.theta)
        return loss


def run_episode(agent: DqnAgent, env: OnDemandEnv, train: bool = True) -> EpisodeTrace:
    """One full pass of the selection loop over a freshly reset environment:
    Q values -> nucleus selection -> env step -> store -> replay training."""
    state = env.state
    if state.r != 0:
        raise ValueError("environment must be freshly reset")
    trace = EpisodeTrace()
    for _ in range(env.config.rounds):
        action = agent.select_action(state)
        next_state, cost, report = env.step(action)
        transition = Transition(s=state, a=action, c=cost.total, s_next=next_state)
        agent.store(transition)
        if train and len(agent.buffer) >= agent.config.batch_size:
            trace.losses.append(agent.train_step(agent.sample_minibatch()))
        trace.costs.append(cost)
        trace.reports.append(report)
        trace.transitions.append(transition)
        trace.volumes.append(env.snapshot_data_volume())
        state = next_state
    return trace


def pretrain_master(
    transitions: Iterable[Transition], agent: DqnAgent, epochs: int
) -> list[float]:
    """Offline pretraining from a transition log; no environment interaction.

    Fills the replay buffer from the log and runs one buffer's worth of
    minibatch steps per epoch, fitted-Q style: the target network is rolled
    forward at each epoch boundary, so every epoch regresses against a frozen
    target. Returns the mean loss per epoch.
    """
    count = 0
    for transition in transitions:
        agent.store(transition)
        count += 1
    if count == 0:
        raise ValueError("transition log is empty")
    epoch_losses: list[float] = []
    steps_per_epoch = max(1, len(agent.buffer) // agent.config.batch_size)
    for _ in range(epochs):
        losses = [
            agent.train_step(agent.sample_minibatch()) for _ in range(steps_per_epoch)
        ]
        agent.theta_target = nn.clone_parameters(agent.theta)
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def refine_joiner(
    agent: DqnAgent, env: OnDemandEnv, episodes: int, start_episode: int = 0
) -> list[EpisodeTrace]:
    """Online continuation of a (typically pretrained) agent: the same
    selection loop, repeated over fresh episodes."""
    traces = []
    for episode in range(start_episode, start_episode + episodes):
        env.reset(episode)
        traces.append(run_episode(agent, env, train=True))
    return traces


# ----------------------------------------------------------------- artifacts

FORMAT_VERSION = 1


def save_agent(path: str, agent: DqnAgent) -> None:
    """Versioned JSON envelope holding the mature parameters and config."""
    envelope = {
        "format_version": FORMAT_VERSION,
        "spec": {
            "n": agent.n,
            "num_areas": agent.num_areas,
            "horizon": agent.horizon,
            "hidden": list(agent.hidden),
        },
        "params": nn.parameters_to_jsonable(agent.theta),
        "config": asdict(agent.config),
    }
    with open(path, "w") as fh:
        json.dump(envelope, fh)


def load_agent(path: str, seed: int = 0) -> DqnAgent:
    """Rebuild an agent from its envelope; both networks start at the stored
    mature parameters."""
    with open(path) as fh:
        envelope = json.load(fh)
    if envelope.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format: {envelope.get('format_version')!r}")
    spec = envelope["spec"]
    agent = DqnAgent(
        n=int(spec["n"]),
        num_areas=int(spec["num_areas"]),
        horizon=int(spec["horizon"]),
        config=AgentConfig(**envelope["config"]),
        hidden=tuple(spec["hidden"]),
        seed=seed,
    )
    agent.theta = nn.parameters_from_jsonable(envelope["params"])
    agent.theta_target = nn.clone_parameters(agent.theta)
    agent.adam = nn.init_adam(agent.theta, alpha=agent.config.alpha)
    return agent


# ------------------------------------------------------------ transition log


def _state_to_jsonable(state: EnvState) -> dict:
    return {
        "k": list(state.k),
        "ac": state.ac,
        "r": state.r,
        "da": sorted(state.da),
    }


def _state_from_jsonable(obj: dict) -> EnvState:
    return EnvState(
        k=tuple(obj["k"]), ac=float(obj["ac"]), r=int(obj["r"]),
        da=frozenset(obj["da"]),
    )


def append_transitions(path: str, transitions: Iterable[Transition]) -> None:
    """Append transitions to a JSONL log, one per line."""
    with open(path, "a") as fh:
        for t in transitions:
            fh.write(
                json.dumps(
                    {
                        "s": _state_to_jsonable(t.s),
                        "a": list(t.a),
                        "c": t.c,
                        "s_next": _state_to_jsonable(t.s_next),
                    }
                )
            )
            fh.write("\n")


def read_transitions(path: str) -> list[Transition]:
    """Parse a JSONL transition log; fails fast naming the offending line."""
    out: list[Transition] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(
                    Transition(
                        s=_state_from_jsonable(obj["s"]),
                        a=as_placement(obj["a"]),
                        c=float(obj["c"]),
                        s_next=_state_from_jsonable(obj["s_next"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"corrupt transition log at line {lineno}") from exc
    return out
