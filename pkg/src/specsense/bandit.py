"""Sensing-time selection as a non-stationary multi-armed bandit.

Each frame of length ``T_f`` the secondary user picks a sensing time, runs a
detector, and earns throughput only when the channel was idle and declared
idle; a missed detection costs an interference penalty, and every frame pays
a complexity cost proportional to the sensing time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detectors import calibrate_threshold, get_statistic, pd_curve, simulate_stats
from .signals import H0, H1, T_SAMPLE, DatasetSpec, NoiseSpec, received_batch, seed_sequence

D0, D1 = 0, 1


@dataclass(frozen=True)
class SensingAction:
    id: int
    sensing_time: float  # microseconds
    sample_count: int

    @classmethod
    def from_time(cls, id: int, sensing_time: float, sample_interval: float = T_SAMPLE) -> "SensingAction":
        return cls(id, float(sensing_time), int(round(sensing_time * 1e-6 / sample_interval)))

    @property
    def label(self) -> str:
        return f"{self.sensing_time:g}us"


def make_actions(times_us, sample_interval: float = T_SAMPLE) -> tuple:
    return tuple(SensingAction.from_time(i, t, sample_interval) for i, t in enumerate(times_us))


A2_TIMES = (8.0, 32.0)
A4_TIMES = (8.0, 16.0, 24.0, 32.0)


@dataclass(frozen=True)
class RewardWeights:
    """Reward constants; only the products lambda1*R_SU, lambda2*xi, lambda3 matter."""

    lambda1: float = 0.1
    r_su: float = 1.0
    lambda2: float = 20.0
    xi: float = 1.0
    lambda3: float = 1.0 / 32.0
    frame_time: float = 80.0
    p_fa: float = 0.01

    def __post_init__(self):
        for name in ("lambda1", "r_su", "lambda2", "xi", "lambda3", "frame_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.p_fa <= 1:
            raise ValueError("p_fa must lie in [0, 1]")

    @property
    def throughput_rate(self) -> float:
        return self.lambda1 * self.r_su

    @property
    def interference(self) -> float:
        return self.lambda2 * self.xi

    def check_ordering(self, max_sensing_time: float) -> bool:
        return self.interference > self.throughput_rate * self.frame_time > self.lambda3 * max_sensing_time

    def validate(self, actions) -> None:
        for a in actions:
            if not 0 < a.sensing_time < self.frame_time:
                raise ValueError(f"sensing time {a.sensing_time} must lie in (0, {self.frame_time})")


def frame_reward(true_state: int, decision: int, action: SensingAction, weights: RewardWeights) -> float:
    r = -weights.lambda3 * action.sensing_time
    if decision == D0:
        if true_state == H0:
            r += weights.throughput_rate * (weights.frame_time - action.sensing_time)
        else:
            r -= weights.interference
    return r


def expected_reward(action: SensingAction, hypothesis: int, pd: float, weights: RewardWeights) -> float:
    """Closed-form mean reward; ``pd`` is ignored under H0, where p_fa applies."""
    if not 0 <= pd <= 1:
        raise ValueError("pd must lie in [0, 1]")
    if hypothesis == H0:
        p_d0 = 1.0 - weights.p_fa
        return p_d0 * frame_reward(H0, D0, action, weights) + weights.p_fa * frame_reward(H0, D1, action, weights)
    return (1.0 - pd) * frame_reward(H1, D0, action, weights) + pd * frame_reward(H1, D1, action, weights)


# ---------------------------------------------------------------------------
# agents


@dataclass
class BanditAgent:
    """Policy state. ``policy`` is "egreedy", "gb" or "fixed" (always ``fixed_action``)."""

    n_actions: int
    policy: str = "egreedy"
    epsilon: float = 0.15
    alpha_lr: float = 0.15
    alpha_pr: float = 0.1
    fixed_action: int = 0
    estimates: np.ndarray = None
    preferences: np.ndarray = None

    def __post_init__(self):
        if self.n_actions < 1:
            raise ValueError("need at least one action")
        if self.policy not in ("egreedy", "gb", "fixed"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not (0 < self.alpha_lr <= 1 and 0 < self.alpha_pr <= 1):
            raise ValueError("step sizes must lie in (0, 1]")
        if not 0 <= self.fixed_action < self.n_actions:
            raise ValueError("fixed_action out of range")
        if self.estimates is None:
            self.estimates = np.zeros(self.n_actions)
        if self.preferences is None:
            self.preferences = np.zeros(self.n_actions)
        self.estimates = np.asarray(self.estimates, dtype=np.float64).copy()
        self.preferences = np.asarray(self.preferences, dtype=np.float64).copy()

    @property
    def name(self) -> str:
        return self.policy


def egreedy_probabilities(agent: BanditAgent) -> np.ndarray:
    n = agent.n_actions
    p = np.full(n, agent.epsilon / n)
    p[int(np.argmax(agent.estimates))] += 1.0 - agent.epsilon
    return p


def egreedy_select(agent: BanditAgent, actions, rng) -> SensingAction:
    """Greedy arm (lowest id on ties) with probability 1 - eps, otherwise uniform."""
    if not actions:
        raise ValueError("actions must be non-empty")
    if rng.random() < agent.epsilon:
        return actions[int(rng.integers(len(actions)))]
    return actions[int(np.argmax(agent.estimates))]


def update_estimate(agent: BanditAgent, action: SensingAction, reward: float) -> BanditAgent:
    agent.estimates[action.id] += agent.alpha_lr * (reward - agent.estimates[action.id])
    return agent


def gb_probabilities(preferences) -> np.ndarray:
    h = np.asarray(preferences, dtype=np.float64)
    e = np.exp(h - h.max())
    return e / e.sum()


def gb_select(agent: BanditAgent, actions, rng) -> SensingAction:
    return actions[int(rng.choice(len(actions), p=gb_probabilities(agent.preferences)))]


def gb_update(agent: BanditAgent, action: SensingAction, reward: float) -> BanditAgent:
    """Preference step against per-arm baselines, then the chosen arm's baseline refresh."""
    pi = gb_probabilities(agent.preferences)
    adv = reward - agent.estimates
    step = -agent.alpha_pr * adv * pi
    a = action.id
    step[a] = agent.alpha_pr * adv[a] * (1.0 - pi[a])
    agent.preferences += step
    return update_estimate(agent, action, reward)


def select_action(agent: BanditAgent, actions, rng) -> SensingAction:
    if agent.policy == "fixed":
        return actions[agent.fixed_action]
    if agent.policy == "gb":
        return gb_select(agent, actions, rng)
    return egreedy_select(agent, actions, rng)


def learn(agent: BanditAgent, action: SensingAction, reward: float) -> BanditAgent:
    if agent.policy == "gb":
        return gb_update(agent, action, reward)
    if agent.policy == "egreedy":
        return update_estimate(agent, action, reward)
    return agent


# ---------------------------------------------------------------------------
# frame plans and detector banks


@dataclass(frozen=True)
class Section:
    frames: int
    hypothesis: int
    gsnr_db: float = math.nan


@dataclass(frozen=True)
class FramePlan:
    sections: tuple

    def __post_init__(self):
        if not self.sections:
            raise ValueError("a plan needs at least one section")
        for s in self.sections:
            if s.frames < 1:
                raise ValueError("section lengths must be at least 1")
            if s.hypothesis not in (H0, H1):
                raise ValueError("hypothesis must be H0 or H1")
            if s.hypothesis == H1 and not math.isfinite(s.gsnr_db):
                raise ValueError("H1 sections need a finite GSNR")

    @classmethod
    def h1_then_h0(cls, gsnrs, frames: int) -> "FramePlan":
        return cls(tuple(Section(frames, H1, float(g)) for g in gsnrs) + (Section(frames, H0),))

    @property
    def n_frames(self) -> int:
        return sum(s.frames for s in self.sections)

    @property
    def h1_gsnrs(self) -> list:
        return [s.gsnr_db for s in self.sections if s.hypothesis == H1]


FIG11_PLAN = FramePlan.h1_then_h0((15, 8, 0, -5), 200)
FIG12_PLAN = FramePlan.h1_then_h0((30, 25, 20, 15, 10, 5, 0), 100)


@dataclass
class AnalyticBank:
    """Pd per action on a GSNR grid (linear interpolation inside it), plus a shared p_fa."""

    gsnr_grid: np.ndarray
    pd: np.ndarray  # shape (n_actions, len(gsnr_grid))
    p_fa: float

    def __post_init__(self):
        self.gsnr_grid = np.asarray(self.gsnr_grid, dtype=np.float64)
        self.pd = np.atleast_2d(np.asarray(self.pd, dtype=np.float64))
        if self.pd.shape[1] != self.gsnr_grid.size:
            raise ValueError("pd table width must match the GSNR grid")
        if np.any(np.diff(self.gsnr_grid) <= 0):
            raise ValueError("GSNR grid must be strictly increasing")
        if np.any((self.pd < 0) | (self.pd > 1)) or not 0 <= self.p_fa <= 1:
            raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def constant(cls, pds, p_fa: float) -> "AnalyticBank":
        """Same Pd at every GSNR; handy for single-condition checks."""
        pds = np.asarray(pds, dtype=np.float64)[:, None]
        return cls(np.array([-np.inf, np.inf]), np.hstack([pds, pds]), p_fa)

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.pd, axis=0) >= 0))

    def covers(self, gsnr_db: float) -> bool:
        return self.gsnr_grid[0] <= gsnr_db <= self.gsnr_grid[-1]

    def detection_probability(self, action: SensingAction, gsnr_db: float) -> float:
        if not self.covers(gsnr_db):
            raise ValueError(f"GSNR {gsnr_db} dB is outside the bank's grid")
        row = self.pd[action.id]
        if not np.all(np.isfinite(self.gsnr_grid)):
            return float(row[0])
        return float(np.interp(gsnr_db, self.gsnr_grid, row))

    def decide(self, action: SensingAction, hypothesis: int, gsnr_db: float, rng) -> int:
        # one uniform per frame whatever the action, so policies sharing an
        # environment stream see identical channel luck
        u = rng.random()
        p = self.p_fa if hypothesis == H0 else self.detection_probability(action, gsnr_db)
        return D1 if u < p else D0


def dataset2_recipe(n_samples: int) -> DatasetSpec:
    """OFDM burst, EPA fading, SaS(1.25) noise: the recipe behind the sensing-time banks."""
    return DatasetSpec(
        signal_kind="ofdm",
        noise=NoiseSpec("sas", alpha=1.25, dispersion=1.0),
        channel_kind="epa",
        n_samples=n_samples,
        snr_grid_db=(0.0,),
        n_h0=1,
        n_h1=1,
    )


def calibrated_bank(
    actions,
    gsnr_grid,
    detector: str = "cauchy",
    target_pfa: float = 0.01,
    trials: int = 2000,
    seed=0,
    monotone: bool = True,
    calibration_trials: int | None = None,
    recipe=dataset2_recipe,
    **detector_params,
) -> AnalyticBank:
    """Monte Carlo Pd table for each action's sample count.

    With ``monotone`` the table is replaced by its running maximum over
    increasing sensing time, so a longer window never reports lower Pd.
    """
    statistic = get_statistic(detector, **detector_params)
    seeds = seed_sequence(seed).spawn(len(actions))
    rows = []
    for a, s in zip(actions, seeds):
        _, points = pd_curve(
            recipe(a.sample_count), statistic, gsnr_grid, target_pfa, trials, calibration_trials, seed=s
        )
        rows.append([p.pd for p in points])
    pd = np.array(rows)
    if monotone:
        order = np.argsort([a.sensing_time for a in actions], kind="stable")
        pd[order] = np.maximum.accumulate(pd[order], axis=0)
    return AnalyticBank(np.asarray(gsnr_grid, dtype=np.float64), pd, target_pfa)


def logistic_bank(actions, midpoints_db, width_db: float = 2.5, p_fa: float = 0.01, gsnr_grid=None) -> AnalyticBank:
    """Smooth three-interval Pd model: p_fa + (1 - p_fa) * sigmoid((g - m_a) / width)."""
    if width_db <= 0:
        raise ValueError("width_db must be positive")
    m = np.asarray(midpoints_db, dtype=np.float64)
    if m.size != len(actions):
        raise ValueError("one midpoint per action is required")
    grid = np.arange(-30.0, 40.5, 0.5) if gsnr_grid is None else np.asarray(gsnr_grid, dtype=np.float64)
    z = (grid[None, :] - m[:, None]) / width_db
    return AnalyticBank(grid, p_fa + (1.0 - p_fa) * 0.5 * (1.0 + np.tanh(z / 2.0)), p_fa)


def logistic_midpoint(pd: float, at_db: float, width_db: float = 2.5, p_fa: float = 0.01) -> float:
    """Midpoint that puts the logistic model through ``pd`` at ``at_db``."""
    q = (pd - p_fa) / (1.0 - p_fa)
    if not 0 < q < 1:
        raise ValueError("pd must lie strictly between p_fa and 1")
    return at_db - width_db * math.log(q / (1.0 - q))


# Trained-CNN operating points at 10 dB GSNR: Pd 0.7 with 8 us, 0.9 with 32 us.
CNN_ANCHORS = {8.0: 0.7, 32.0: 0.9}


def cnn_reference_bank(actions=None, width_db: float = 2.5, p_fa: float = 0.01) -> AnalyticBank:
    """Logistic stand-in for the trained CNN detectors of the two-action experiment."""
    actions = actions or make_actions(A2_TIMES)
    mids = [logistic_midpoint(CNN_ANCHORS[a.sensing_time], 10.0, width_db, p_fa) for a in actions]
    return logistic_bank(actions, mids, width_db, p_fa)


@dataclass
class LiveBank:
    """Runs a calibrated detector on a freshly generated window every frame."""

    statistic: object
    thresholds: dict  # action id -> DetectorThreshold
    recipes: dict  # action id -> DatasetSpec
    p_fa: float

    def covers(self, gsnr_db: float) -> bool:
        return math.isfinite(gsnr_db)

    def decide(self, action: SensingAction, hypothesis: int, gsnr_db: float, rng) -> int:
        x = received_batch(self.recipes[action.id], hypothesis, gsnr_db, 1, rng)
        return D1 if self.thresholds[action.id].decide(self.statistic(x))[0] else D0


def live_bank(actions, detector="cauchy", target_pfa=0.01, calibration_trials=5000, seed=0, recipe=dataset2_recipe, **params):
    statistic = get_statistic(detector, **params)
    seeds = seed_sequence(seed).spawn(len(actions))
    thresholds, recipes = {}, {}
    for a, s in zip(actions, seeds):
        recipes[a.id] = recipe(a.sample_count)
        h0 = simulate_stats(recipes[a.id], statistic, H0, math.nan, calibration_trials, s)
        thresholds[a.id] = calibrate_threshold(h0, target_pfa)
    return LiveBank(statistic, thresholds, recipes, target_pfa)


# ---------------------------------------------------------------------------
# simulation


SMOOTHING_WINDOW = 20


def smooth(rewards, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing moving average; the first frames average over what is available."""
    r = np.asarray(rewards, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(r)])
    idx = np.arange(1, r.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


@dataclass
class ScenarioTrace:
    policy: str
    section: np.ndarray
    gsnr_db: np.ndarray
    hypothesis: np.ndarray
    action_id: np.ndarray
    decision: np.ndarray
    reward: np.ndarray
    smoothed: np.ndarray = field(init=False)

    def __post_init__(self):
        self.smoothed = smooth(self.reward)

    @property
    def mean_average_reward(self) -> float:
        return float(np.mean(self.reward))

    def rows(self):
        for i in range(self.reward.size):
            yield (
                i,
                int(self.section[i]),
                float(self.gsnr_db[i]),
                int(self.hypothesis[i]),
                int(self.action_id[i]),
                int(self.decision[i]),
                float(self.reward[i]),
                float(self.smoothed[i]),
            )


TRACE_COLUMNS = ("frame", "section", "gsnr_db", "hypothesis", "action_id", "decision", "reward", "smoothed_reward")


def run_scenario(plan: FramePlan, agent: BanditAgent, actions, bank, weights: RewardWeights, seed=None) -> ScenarioTrace:
    """Play every frame of ``plan``; feedback arrives within the same frame.

    The policy and the environment draw from separate streams derived from
    ``seed``, so two policies run with the same seed face the same channel.
    """
    if agent.n_actions != len(actions):
        raise ValueError("agent and action set disagree on the number of actions")
    weights.validate(actions)
    for g in plan.h1_gsnrs:
        if not bank.covers(g):
            raise ValueError(f"plan GSNR {g} dB is not covered by the detector bank")
    if isinstance(seed, np.random.Generator):
        policy_rng, env_rng = seed.spawn(2)
    else:
        policy_rng, env_rng = (np.random.default_rng(s) for s in seed_sequence(seed).spawn(2))
    n = plan.n_frames
    section = np.empty(n, dtype=np.int64)
    gsnr = np.empty(n)
    hyp = np.empty(n, dtype=np.int64)
    act = np.empty(n, dtype=np.int64)
    dec = np.empty(n, dtype=np.int64)
    rew = np.empty(n)
    i = 0
    for k, sec in enumerate(plan.sections):
        for _ in range(sec.frames):
            a = select_action(agent, actions, policy_rng)
            d = bank.decide(a, sec.hypothesis, sec.gsnr_db, env_rng)
            r = frame_reward(sec.hypothesis, d, a, weights)
            learn(agent, a, r)
            section[i], gsnr[i], hyp[i], act[i], dec[i], rew[i] = k, sec.gsnr_db, sec.hypothesis, a.id, d, r
            i += 1
    return ScenarioTrace(agent.policy, section, gsnr, hyp, act, dec, rew)


def standard_policies(actions, epsilon=0.15, alpha_lr=0.15, alpha_pr=0.1) -> dict:
    """Named agent factories: egreedy, gb and one "always-<T>" per action."""
    n = len(actions)
    pols = {
        "egreedy": lambda: BanditAgent(n, "egreedy", epsilon, alpha_lr, alpha_pr),
        "gb": lambda: BanditAgent(n, "gb", epsilon, alpha_lr, alpha_pr),
    }
    for a in actions:
        pols[f"always-{a.label}"] = lambda a=a: BanditAgent(n, "fixed", epsilon, alpha_lr, alpha_pr, fixed_action=a.id)
    return pols


def compare_policies(plan, actions, bank, weights, seed=0, runs: int = 1, **agent_kw) -> dict:
    """Mean average reward per policy, averaged over ``runs`` seeded scenarios."""
    seeds = seed_sequence(seed).spawn(runs)
    out = {}
    for name, make in standard_policies(actions, **agent_kw).items():
        vals = [run_scenario(plan, make(), actions, bank, weights, s).mean_average_reward for s in seeds]
        out[name] = float(np.mean(vals))
    return out
