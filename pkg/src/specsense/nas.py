"""Tabular Q-learning search over chain-structured 1-D CNN architectures.

States are ``[l, t, p1, p2, p_p]`` plus the current signal length, where
``t`` is the type of layer ``l`` (1 conv, 2 pool, 0 GAP/terminal, -1 for
the input state), ``(p1, p2)`` is ``(n_f, s_f)`` for conv and ``(s_p, 0)``
for pool, and ``p_p`` is the pooling permission flag. Actions are
``(t, p1, p2)`` triples for the next layer; GAP is ``(0, 0, 0)``.

The agent places up to ``max_layers`` conv/pool layers and must then close
the network with GAP. Episodes are sampled epsilon-greedily and the table is
updated backward from the terminal step with step size 1/N.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .cnn import ArchSpec, LayerSpec

CONV, POOL, TERMINAL, INPUT = 1, 2, 0, -1

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NasConfig:
    max_layers: int = 8
    min_length: int = 8
    input_length: int = 100
    filter_counts: tuple = (8, 16, 32, 64)
    filter_sizes: tuple = (3, 5)
    pool_sizes: tuple = (2, 4)
    n_episodes: int = 1000
    q_init: float = 0.5
    discount: float = 1.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.0
    decay_fraction: float = 0.9
    reevaluate: bool = False

    def __post_init__(self):
        if self.max_layers < 1:
            raise ValueError("max_layers must be at least 1")
        if self.min_length < 1 or self.input_length < 1:
            raise ValueError("lengths must be positive")
        if not (self.filter_counts and self.filter_sizes):
            raise ValueError("conv menus must be non-empty")
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be at least 1")
        if not 0 < self.decay_fraction <= 1:
            raise ValueError("decay_fraction must lie in (0, 1]")
        for name in ("filter_counts", "filter_sizes", "pool_sizes"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def epsilon(self, episode: int) -> float:
        """Linear decay from epsilon_start to epsilon_end over decay_fraction of the budget."""
        frac = min(episode / (self.decay_fraction * self.n_episodes), 1.0)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


@dataclass(frozen=True, order=True)
class NasAction:
    type: int
    p1: int = 0
    p2: int = 0

    @property
    def key(self):
        return (self.type, self.p1, self.p2)

    @property
    def layer(self) -> LayerSpec:
        if self.type == CONV:
            return LayerSpec("conv", self.p1, self.p2)
        if self.type == POOL:
            return LayerSpec("pool", pool_size=self.p1)
        return LayerSpec("gap")


GAP_ACTION = NasAction(TERMINAL)


@dataclass(frozen=True)
class NasState:
    layer: int
    type: int
    p1: int
    p2: int
    pool_ok: int
    length: int

    @property
    def key(self):
        return (self.layer, self.type, self.p1, self.p2, self.pool_ok, self.length)

    @property
    def terminal(self) -> bool:
        return self.type == TERMINAL


def initial_state(config: NasConfig) -> NasState:
    return NasState(0, INPUT, 0, 0, int(config.input_length >= config.min_length), config.input_length)


def conv_actions(config: NasConfig) -> list:
    return [NasAction(CONV, f, s) for f in sorted(config.filter_counts) for s in sorted(config.filter_sizes)]


def legal_actions(state: NasState, config: NasConfig) -> list:
    """Legal next layers, sorted by canonical key (GAP first)."""
    return list(_legal(state, config))


@lru_cache(maxsize=65536)
def _legal(state: NasState, config: NasConfig) -> tuple:
    if state.terminal:
        raise ValueError("terminal states have no actions")
    if state.layer == 0:
        return tuple(conv_actions(config))
    if state.layer >= config.max_layers:
        return (GAP_ACTION,)
    actions = [GAP_ACTION] + conv_actions(config)
    if state.pool_ok:
        actions += [NasAction(POOL, s) for s in sorted(config.pool_sizes) if state.length >= s]
    return tuple(actions)


def transition(state: NasState, action: NasAction, config: NasConfig) -> NasState:
    if action not in _legal(state, config):
        raise ValueError(f"action {action.key} is not legal in state {state.key}")
    l = state.layer + 1
    if action.type == CONV:
        return NasState(l, CONV, action.p1, action.p2, state.pool_ok, state.length)
    if action.type == POOL:
        n = state.length // action.p1
        return NasState(l, POOL, action.p1, 0, int(state.pool_ok and n >= config.min_length), n)
    # terminal encoding keeps the previous layer's fields
    return NasState(l, TERMINAL, state.p1, state.p2, state.pool_ok, state.length)


# ---------------------------------------------------------------------------
# Q table


class QTable:
    """Map from (state key, action key) to ``[q, visits]``; unseen entries read as q_init.

    Terminal states are never stored: their value is 0 by definition.
    """

    def __init__(self, q_init: float = 0.5):
        self.q_init = float(q_init)
        self.entries = {}

    def __len__(self):
        return len(self.entries)

    def q(self, state: NasState, action: NasAction) -> float:
        entry = self.entries.get((state.key, action.key))
        return self.q_init if entry is None else entry[0]

    def visits(self, state: NasState, action: NasAction) -> int:
        entry = self.entries.get((state.key, action.key))
        return 0 if entry is None else entry[1]

    def greedy(self, state: NasState, config: NasConfig) -> NasAction:
        """Highest-valued legal action; ties go to the smallest canonical key."""
        best, best_q = None, -math.inf
        for a in _legal(state, config):
            q = self.q(state, a)
            if q > best_q:
                best, best_q = a, q
        return best

    def max_value(self, state: NasState, config: NasConfig) -> float:
        if state.terminal:
            return 0.0
        return max(self.q(state, a) for a in _legal(state, config))

    def update(self, state: NasState, action: NasAction, target: float) -> float:
        entry = self.entries.setdefault((state.key, action.key), [self.q_init, 0])
        entry[1] += 1
        entry[0] += (target - entry[0]) / entry[1]
        return entry[0]

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "q_init": self.q_init,
            "entries": [[list(s), list(a), q, n] for (s, a), (q, n) in sorted(self.entries.items())],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QTable":
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
        table = cls(data["q_init"])
        for s, a, q, n in data["entries"]:
            table.entries[(tuple(s), tuple(a))] = [float(q), int(n)]
        return table


# ---------------------------------------------------------------------------
# episodes


@dataclass
class Trajectory:
    steps: list  # (NasState, NasAction) pairs
    reward: float | None = None

    @property
    def architecture(self) -> ArchSpec:
        return ArchSpec(tuple(a.layer for _, a in self.steps))

    def __len__(self):
        return len(self.steps)


def egreedy_probabilities(qtable: QTable, state: NasState, epsilon: float, config: NasConfig):
    actions = legal_actions(state, config)
    greedy = qtable.greedy(state, config)
    p = np.full(len(actions), epsilon / len(actions))
    p[actions.index(greedy)] += 1.0 - epsilon
    return actions, p


def sample_episode(qtable: QTable, epsilon: float, config: NasConfig, rng) -> Trajectory:
    """Walk from the input state to GAP with an epsilon-greedy behavior policy."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    state = initial_state(config)
    steps = []
    while not state.terminal:
        actions = _legal(state, config)
        if rng.random() < epsilon:
            action = actions[rng.integers(len(actions))]
        else:
            action = qtable.greedy(state, config)
        steps.append((state, action))
        state = transition(state, action, config)
    return Trajectory(steps)


def update_q(qtable: QTable, trajectory: Trajectory, reward: float, config: NasConfig) -> QTable:
    """Backward pass from the terminal step: Q += (1/N)(r + discount * max Q(s') - Q)."""
    if not 0 <= reward <= 1:
        raise ValueError("reward must lie in [0, 1]")
    last = len(trajectory.steps) - 1
    for i in range(last, -1, -1):
        state, action = trajectory.steps[i]
        nxt = transition(state, action, config)
        r = reward if i == last else 0.0
        qtable.update(state, action, r + config.discount * qtable.max_value(nxt, config))
    trajectory.reward = reward
    return qtable


def extract_best(qtable: QTable, config: NasConfig) -> ArchSpec:
    state = initial_state(config)
    layers = []
    while not state.terminal:
        action = qtable.greedy(state, config)
        layers.append(action.layer)
        state = transition(state, action, config)
    return ArchSpec(tuple(layers))


@dataclass
class EpisodeRecord:
    episode: int
    epsilon: float
    arch: str
    reward: float


@dataclass
class SearchResult:
    qtable: QTable
    log: list = field(default_factory=list)
    cache: dict = field(default_factory=dict)

    def best(self, config: NasConfig) -> ArchSpec:
        return extract_best(self.qtable, config)


class SearchError(RuntimeError):
    pass


def run_search(
    config: NasConfig,
    evaluator: Callable[[ArchSpec], float],
    seed=None,
    qtable: QTable | None = None,
    start_episode: int = 0,
    epsilon_schedule: Callable[[int], float] | None = None,
) -> SearchResult:
    """Run ``config.n_episodes`` episodes of sample, evaluate, update.

    Passing an existing ``qtable`` resumes a previous search; visit counts keep
    accumulating. Unless ``config.reevaluate`` is set, an architecture seen
    before reuses its first reward.
    """
    rng = np.random.default_rng(seed)
    table = qtable if qtable is not None else QTable(config.q_init)
    schedule = epsilon_schedule or config.epsilon
    result = SearchResult(table)
    for n in range(start_episode, start_episode + config.n_episodes):
        eps = float(schedule(n - start_episode))
        traj = sample_episode(table, eps, config, rng)
        arch = traj.architecture
        key = str(arch)
        if key in result.cache and not config.reevaluate:
            reward = result.cache[key]
        else:
            try:
                reward = float(evaluator(arch))
            except Exception as exc:
                raise SearchError(f"evaluator failed at episode {n} on {key}: {exc}") from exc
            result.cache.setdefault(key, reward)
        update_q(table, traj, reward, config)
        result.log.append(EpisodeRecord(n, eps, key, reward))
    return result


# ---------------------------------------------------------------------------
# search-space size


def count_search_space(config: NasConfig) -> int:
    """Number of distinct terminating trajectories, by DP over (l, p_p, length)."""
    n_conv = len(config.filter_counts) * len(config.filter_sizes)

    @lru_cache(maxsize=None)
    def completions(l, pool_ok, length):
        if l == 0:
            return n_conv * completions(1, pool_ok, length)
        if l >= config.max_layers:
            return 1
        total = 1 + n_conv * completions(l + 1, pool_ok, length)
        if pool_ok:
            for s in config.pool_sizes:
                if length >= s:
                    n = length // s
                    total += completions(l + 1, int(n >= config.min_length), n)
        return total

    s0 = initial_state(config)
    return completions(0, s0.pool_ok, s0.length)


def enumerate_architectures(config: NasConfig):
    """Every terminating trajectory's architecture, by explicit tree walk."""

    def walk(state, prefix):
        for action in legal_actions(state, config):
            nxt = transition(state, action, config)
            if nxt.terminal:
                yield ArchSpec(tuple(prefix + [action.layer]))
            else:
                yield from walk(nxt, prefix + [action.layer])

    yield from walk(initial_state(config), [])


# ---------------------------------------------------------------------------
# evaluators


def planted_evaluator(target: ArchSpec, floor: float = 0.1, ceiling: float = 0.5):
    """Synthetic reward: 1 for ``target``; otherwise at most ``ceiling``, rising with shared prefix."""
    target_tokens = target.tokens

    def evaluate(arch: ArchSpec) -> float:
        tokens = arch.tokens
        if tokens == target_tokens:
            return 1.0
        shared = 0
        for a, b in zip(tokens, target_tokens):
            if a != b:
                break
            shared += 1
        return floor + (ceiling - floor) * shared / len(target_tokens)

    return evaluate


def cnn_evaluator(dataset, k=10, epochs=15, seed=0, **train_kw):
    """Reward = mean K-fold accuracy of the architecture trained on ``dataset``."""
    from .cnn import kfold_accuracy

    def evaluate(arch: ArchSpec) -> float:
        return kfold_accuracy(arch, dataset, k=k, epochs=epochs, seed=seed, **train_kw)

    return evaluate


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(qtable: QTable, path, log=None) -> None:
    """Q table as versioned JSON; the episode log (if given) goes to ``<path>.log.csv``."""
    path = Path(path)
    path.write_text(json.dumps(qtable.to_dict(), indent=1) + "\n")
    if log is not None:
        write_episode_log(log, path.with_suffix(".log.csv"))


def load_checkpoint(path) -> QTable:
    return QTable.from_dict(json.loads(Path(path).read_text()))


def write_episode_log(log, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["episode", "epsilon", "arch_tokens", "reward"])
        for r in log:
            w.writerow([r.episode, f"{r.epsilon:.6g}", r.arch, f"{r.reward:.6g}"])
