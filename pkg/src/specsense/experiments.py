"""Dispatch validated configs to the library and record what was written."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from . import bandit as B
from . import nas as Q
from .cnn import ArchSpec, build_network, count_cost, grad_check, kfold_scores, save_network, train
from .config import ExperimentConfig
from .detectors import calibrate_threshold, get_statistic, pd_curve, roc_curve, simulate_stats
from .io import RunManifest, emit_csv, sha256_file
from .signals import H0, H1, DatasetSpec, NoiseSpec, build_dataset, write_dataset


def dataset_spec(p: dict, seed) -> DatasetSpec:
    n = p["noise"]
    return DatasetSpec(
        signal_kind=p["signal"],
        noise=NoiseSpec(n["kind"], n["variance"], n["alpha"], n["dispersion"]),
        channel_kind=p["channel"],
        n_samples=p["n_samples"],
        snr_grid_db=tuple(p["snr_db"]),
        n_h0=p["n_h0"],
        n_h1=p["n_h1"],
        seed=seed,
    )


def detector_from(p: dict):
    name = p["name"]
    kw = {"flom": {"p": p["p"]}, "cauchy": {"gamma": p["gamma"]}}.get(name, {})
    return get_statistic(name, **kw)


def _work_seed(seed: int):
    # independent of the dataset stream, which uses ``seed`` directly
    return np.random.SeedSequence([seed, 1])


@contextmanager
def _mapper(threads: int):
    if threads <= 1:
        yield map
    else:
        with ThreadPoolExecutor(threads) as pool:
            yield pool.map


# ---------------------------------------------------------------------------
# commands; each returns the list of files it wrote


def cmd_gen_data(cfg, out, threads):
    ds = build_dataset(dataset_spec(cfg.params["dataset"], cfg.seed))
    path = out / "dataset.cgsd"
    write_dataset(ds, path)
    return [path]


def cmd_train(cfg, out, threads):
    p = cfg.params
    ds = build_dataset(dataset_spec(p["dataset"], cfg.seed))
    arch = ArchSpec.parse(p["arch"])
    kw = {"batch_size": p["batch_size"], "lr": p["learning_rate"]}
    kfold_seed, init_seed, shuffle_seed = _work_seed(cfg.seed).spawn(3)
    files = []
    if p["k"] >= 2:
        with _mapper(threads) as m:
            scores = kfold_scores(arch, ds, p["k"], p["epochs"], kfold_seed, map_fn=m, **kw)
        rows = [(i, s) for i, s in enumerate(scores)] + [("mean", float(np.mean(scores)))]
        files.append(emit_csv(rows, out / "kfold.csv", ["fold", "accuracy"]))
    net = build_network(arch, ds.to_iq().shape[2], init_seed)
    result = train(net, ds, p["epochs"], shuffle_seed, **kw)
    files.append(emit_csv(result.log_records(), out / "train_log.csv", ["epoch", "loss", "val_accuracy"]))
    save_network(net, out / "network.ssnet")
    files.append(out / "network.ssnet")
    return files


def nas_config(p: dict, input_length: int) -> Q.NasConfig:
    return Q.NasConfig(input_length=input_length, **p)


def cmd_nas_search(cfg, out, threads):
    p = cfg.params
    ev = p["evaluator"]
    spec = dataset_spec(p["dataset"], cfg.seed)
    conf = nas_config(p["nas"], spec.n_samples)
    if ev["kind"] == "planted":
        evaluator = Q.planted_evaluator(ArchSpec.parse(ev["target"]))
    elif ev["kind"] == "cnn":
        evaluator = Q.cnn_evaluator(build_dataset(spec), ev["k"], ev["epochs"], seed=_work_seed(cfg.seed))
    else:
        raise ValueError(f"unknown evaluator kind {ev['kind']!r}")
    table, start = None, 0
    if p["resume"]:
        table = Q.load_checkpoint(p["resume"])
        start = _resumed_episodes(p["resume"])
    result = Q.run_search(conf, evaluator, seed=np.random.SeedSequence([cfg.seed, 2, start]), qtable=table, start_episode=start)
    ckpt = out / "checkpoint.json"
    Q.save_checkpoint(result.qtable, ckpt, result.log)
    best = result.best(conf)
    best_reward = result.cache.get(str(best), math.nan)
    files = [ckpt, ckpt.with_suffix(".log.csv")]
    files.append(emit_csv([(str(best), best_reward)], out / "best.csv", ["arch_tokens", "reward"]))
    return files


def _resumed_episodes(path) -> int:
    log = Path(path).with_suffix(".log.csv")
    if not log.exists():
        return 0
    with open(log) as f:
        return max(sum(1 for _ in f) - 1, 0)


def make_bank(p: dict, actions, seed):
    kind = p["kind"]
    if kind == "cnn-reference":
        return B.cnn_reference_bank(actions, p["width_db"], 0.01)
    if kind == "logistic":
        if p["midpoints_db"] is None:
            raise ValueError("logistic bank needs midpoints_db")
        return B.logistic_bank(actions, p["midpoints_db"], p["width_db"])
    kw = {"flom": {"p": p["p"]}, "cauchy": {"gamma": p["gamma"]}}.get(p["detector"], {})
    if kind == "calibrated":
        return B.calibrated_bank(
            actions,
            p["gsnr_db"],
            p["detector"],
            trials=p["trials"],
            calibration_trials=p["calibration_trials"],
            seed=seed,
            monotone=p["monotone"],
            **kw,
        )
    if kind == "live":
        return B.live_bank(actions, p["detector"], calibration_trials=p["calibration_trials"], seed=seed, **kw)
    raise ValueError(f"unknown bank kind {kind!r}")


def _sub_bank(bank, ids):
    if isinstance(bank, B.AnalyticBank):
        return B.AnalyticBank(bank.gsnr_grid, bank.pd[list(ids)], bank.p_fa)
    return B.LiveBank(
        bank.statistic,
        {new: bank.thresholds[old] for new, old in enumerate(ids)},
        {new: bank.recipes[old] for new, old in enumerate(ids)},
        bank.p_fa,
    )


def policy_runs(p: dict, actions, bank):
    """(name, action set, bank, agent factory) for every requested policy."""
    a = p["agent"]
    n = len(actions)
    out = []
    for name in p["policies"]:
        if name == "egreedy":
            out.append((name, actions, bank, lambda: B.BanditAgent(n, "egreedy", **a)))
        elif name == "gb":
            out.append((name, actions, bank, lambda: B.BanditAgent(n, "gb", **a)))
        elif name == "egreedy-a2":
            ids = (0, n - 1)
            sub = tuple(B.SensingAction(i, actions[j].sensing_time, actions[j].sample_count) for i, j in enumerate(ids))
            out.append((name, sub, _sub_bank(bank, ids), lambda: B.BanditAgent(2, "egreedy", **a)))
        elif name == "fixed":
            for act in actions:
                out.append((f"always-{act.label}", actions, bank, lambda i=act.id: B.BanditAgent(n, "fixed", fixed_action=i, **a)))
        elif name.startswith("always-"):
            match = [act for act in actions if f"always-{act.label}" == name]
            if not match:
                raise ValueError(f"policy {name!r} names no configured action")
            i = match[0].id
            out.append((name, actions, bank, lambda i=i: B.BanditAgent(n, "fixed", fixed_action=i, **a)))
        else:
            raise ValueError(f"unknown policy {name!r}")
    return out


def plan_from(sections) -> B.FramePlan:
    secs = []
    for s in sections:
        hyp = {"H0": H0, "H1": H1}.get(s["hypothesis"])
        if hyp is None:
            raise ValueError(f"hypothesis must be H0 or H1, got {s['hypothesis']!r}")
        g = math.nan if s["gsnr_db"] is None else float(s["gsnr_db"])
        secs.append(B.Section(s["frames"], hyp, g))
    return B.FramePlan(tuple(secs))


def cmd_bandit_sim(cfg, out, threads):
    p = cfg.params
    if p["runs"] < 1:
        raise ValueError("runs must be at least 1")
    actions = B.make_actions(p["actions_us"])
    weights = B.RewardWeights(**p["weights"])
    plan = plan_from(p["plan"])
    bank_seed, run_seed = _work_seed(cfg.seed).spawn(2)
    bank = make_bank(p["bank"], actions, bank_seed)
    seeds = run_seed.spawn(p["runs"])
    files = []
    if isinstance(bank, B.AnalyticBank):
        grid = sorted(set(map(float, p["bank"]["gsnr_db"])) | set(plan.h1_gsnrs))
        rows = [(a.id, a.sensing_time, g, bank.detection_probability(a, g)) for a in actions for g in grid if bank.covers(g)]
        files.append(emit_csv(rows, out / "bank.csv", ["action_id", "sensing_time_us", "gsnr_db", "pd"]))
    summary = []
    with _mapper(threads) as m:
        for name, acts, bk, make in policy_runs(p, actions, bank):
            traces = list(m(lambda s: B.run_scenario(plan, make(), acts, bk, weights, s), seeds))
            summary.append((name, float(np.mean([t.mean_average_reward for t in traces]))))
            files.append(emit_csv(traces[0].rows(), out / f"trace_{name}.csv", B.TRACE_COLUMNS))
    files.append(emit_csv(summary, out / "summary.csv", ["policy", "mean_average_reward"]))
    return files


RATE_COLUMNS = ["detector", "n_samples", "snr_db", "pfa", "pd"]


def cmd_roc(cfg, out, threads):
    p = cfg.params
    spec = dataset_spec(p["dataset"], cfg.seed)
    stat = detector_from(p["detector"])
    s0, s1 = _work_seed(cfg.seed).spawn(2)
    h0 = simulate_stats(spec, stat, H0, math.nan, p["trials"], s0)
    h1 = simulate_stats(spec, stat, H1, p["snr_db"], p["trials"], s1)
    pts = roc_curve(h0, h1, p["n_points"])
    name, n = p["detector"]["name"], spec.n_samples
    rows = [(name, n, p["snr_db"], x.pfa, x.pd) for x in pts]
    return [emit_csv(rows, out / "roc.csv", RATE_COLUMNS)]


def cmd_pd_curve(cfg, out, threads):
    p = cfg.params
    spec = dataset_spec(p["dataset"], cfg.seed)
    _, pts = pd_curve(
        spec,
        detector_from(p["detector"]),
        p["snr_db"],
        p["target_pfa"],
        p["trials"],
        p["calibration_trials"],
        seed=_work_seed(cfg.seed),
    )
    name, n = p["detector"]["name"], spec.n_samples
    rows = [(name, n, x.snr_db, x.pfa, x.pd) for x in pts]
    return [emit_csv(rows, out / "pd_curve.csv", RATE_COLUMNS)]


def cmd_cost(cfg, out, threads):
    rows = []
    for item in cfg.params["architectures"]:
        c = count_cost(ArchSpec.parse(item["arch"]), item["input_length"])
        rows.append((item["arch"], item["input_length"], c.rrm, c.weights, c.rrm_millions, c.weights_thousands))
    cols = ["arch_tokens", "input_length", "rrm", "weights", "rrm_millions", "weights_thousands"]
    return [emit_csv(rows, out / "cost.csv", cols)]


class SelfCheckFailed(RuntimeError):
    pass


def selfcheck_rows(trials: int, seed) -> list:
    from .cnn import TABLE_IV
    from .signals import OFDM_CP, OFDM_NFFT, gen_ofdm_burst, gen_sas_noise

    rows = []
    expected = {"dataset1": ("0.038", "0.5"), "dataset2": ("4.854", "30.6"), "dataset3": ("27.075", "42.7")}
    for key, n in (("dataset1", 100), ("dataset2", 160), ("dataset3", 640)):
        c = count_cost(TABLE_IV[key], n)
        rows.append((f"cost-{key}", (c.rrm_millions, c.weights_thousands) == expected[key], f"{c.rrm_millions}M/{c.weights_thousands}K"))
    size = Q.count_search_space(Q.NasConfig())
    rows.append(("search-space-bound", 8**8 <= size <= 11**8, size))
    small = Q.NasConfig(max_layers=3)
    rows.append(("search-space-brute-force", Q.count_search_space(small) == sum(1 for _ in Q.enumerate_architectures(small)), Q.count_search_space(small)))
    s_sas, s_ed, s_net, s_ofdm = np.random.SeedSequence(seed).spawn(4)
    w = gen_sas_noise(100000, 1.25, 1.0, s_sas).samples
    t = np.array([0.5, 1.0, 2.0])
    err = float(np.max(np.abs(np.mean(np.exp(1j * np.real(np.conj(t[:, None]) * w[None, :])), axis=1) - np.exp(-np.abs(t) ** 1.25))))
    rows.append(("sas-characteristic-function", err < 0.02, err))
    spec = DatasetSpec(n_samples=100)
    a, b = s_ed.spawn(2)
    thr = calibrate_threshold(simulate_stats(spec, get_statistic("energy"), H0, math.nan, 20000, a), 0.01)
    pfa = float(np.mean(simulate_stats(spec, get_statistic("energy"), H0, math.nan, trials, b) > thr.value))
    rows.append(("energy-detector-pfa", 0.005 <= pfa <= 0.015, pfa))
    net = build_network(ArchSpec.parse("C8x3,P2,C4x5,GAP"), 16, s_net)
    rng = np.random.default_rng(s_net)
    for p in net.parameters():  # the head starts at zero, which would hide the conv gradients
        p[...] = rng.normal(scale=0.5, size=p.shape)
    ge = grad_check(net, rng.standard_normal((4, 2, 16)), np.array([0, 1, 1, 0.0]))
    rows.append(("cnn-gradient-check", ge < 1e-5, ge))
    burst = gen_ofdm_burst(4, s_ofdm).samples.reshape(4, OFDM_NFFT + OFDM_CP)
    rows.append(("ofdm-cyclic-prefix", bool(np.allclose(burst[:, :OFDM_CP], burst[:, -OFDM_CP:])), 4))
    return rows


def cmd_selfcheck(cfg, out, threads):
    rows = selfcheck_rows(cfg.params["trials"], cfg.seed)
    path = emit_csv(rows, out / "selfcheck.csv", ["check", "passed", "value"])
    failed = [r[0] for r in rows if not r[1]]
    if failed:
        raise SelfCheckFailed(f"self-check failed: {', '.join(failed)}")
    return [path]


COMMAND_FUNCS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "nas-search": cmd_nas_search,
    "bandit-sim": cmd_bandit_sim,
    "roc": cmd_roc,
    "pd-curve": cmd_pd_curve,
    "cost": cmd_cost,
    "selfcheck": cmd_selfcheck,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> RunManifest:
    """Run ``cfg`` into ``cfg.output_dir`` and write ``manifest.json`` last."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = COMMAND_FUNCS[cfg.command](cfg, out, max(int(threads), 1))
    manifest = RunManifest(
        command=cfg.command,
        config=cfg.to_dict(),
        seed=cfg.seed,
        version=__version__,
        duration_s=round(time.perf_counter() - t0, 3),
        outputs={Path(f).name: sha256_file(f) for f in files},
    )
    manifest.write(out)
    return manifest
