"""Benchmark harness: baseline policy, paired-seed matrix runs, reports.

Every method sees byte-identical tasks per (n_arms, difficulty, episode)
cell. Episodes marked successful are re-simulated densely afterwards; a
single re-simulation violation fails the soundness gate. Reports are a
fixed-column CSV plus JSON-lines episode records, both carrying the config
digest.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import observation as obs
from .collision import WorldBounds, find_first_collision
from .config import RunConfig, config_digest, morphology_digest
from .controller import (
    EpisodeResult,
    WorldState,
    goal_reached,
    make_world,
    run_episode,
    segment_has_collision,
)
from .datasets import Dataset, compute_norm_stats, episode_windows
from .diffusion import Policy, load_checkpoint, policy_from_state, train
from .kinematics import BasePose, forward_kinematics, make_arm, pos_distance, wrap_angle
from .nets import DenoiserMLP
from .planner import plan_cost_terms
from .seeding import METHOD_IDS, TAG_EPISODE, TAG_TASK, TAG_TOY, substream
from .tasks import DIFFICULTIES, TaskSpec, generate_task, task_digest

METHODS = ("dgmap", "decentralized")


# ---------------------------------------------------------------------------
# Decentralized baseline: greedy per-arm sampling, no conflict resolution.
# ---------------------------------------------------------------------------

def _best_own_plan(arm, q, goal, history, policy: Policy, cfg: RunConfig,
                   rng, bounds) -> np.ndarray:
    plans = policy.sample_plans(obs.flatten(history), cfg.planner.batch, rng,
                                cfg.controller.delta_limit)
    best, best_score = None, None
    for plan in plans:
        conflict = find_first_collision([arm], [q], [plan],
                                        delta_limit=cfg.controller.delta_limit,
                                        bounds=bounds)
        score = plan_cost_terms(arm, q, plan, goal, cfg.controller.delta_limit)
        if conflict is not None:
            score += cfg.planner.collision_penalty
        if best_score is None or score < best_score:
            best, best_score = plan, score
    return best


def baseline_decentralized(world: WorldState, single: Policy, cfg: RunConfig,
                           seed: int, trace_path=None) -> EpisodeResult:
    """Each arm executes its own best sample every cycle; a collision ends
    the episode as failure, exactly like the executor's safety assertion."""
    ctrl = cfg.controller
    bounds = WorldBounds(cfg.world.x_min, cfg.world.x_max, cfg.world.y_min,
                         cfg.world.y_max)
    n = len(world.arms)
    result = EpisodeResult(False, 0, [], [])
    best_pos = None
    no_progress = 0

    def residuals():
        pos, rot = [], []
        for arm, q, goal in zip(world.arms, world.configs, world.goals):
            pose = forward_kinematics(arm, q)
            pos.append(pos_distance(pose, goal))
            rot.append(abs(float(wrap_angle(pose.orientation - goal.orientation))))
        return pos, rot

    def finish(success):
        result.success = success
        result.residual_pos, result.residual_rot = residuals()
        result.steps = world.step
        return result

    best_pos, _ = residuals()
    if all(goal_reached(world, i, ctrl.pos_tol, ctrl.rot_tol) for i in range(n)):
        return finish(True)

    cycle = 0
    while world.step < ctrl.step_limit:
        plans = []
        for i in range(n):
            if goal_reached(world, i, ctrl.pos_tol, ctrl.rot_tol):
                plans.append(np.zeros((single.pred_horizon, world.arms[i].dof)))
                continue
            rng = substream(seed, TAG_EPISODE, cycle, i)
            history = obs.build_history(world.histories[i], single.obs_horizon)
            plans.append(_best_own_plan(world.arms[i], world.configs[i],
                                        world.goals[i], history, single, cfg, rng,
                                        bounds))
        result.planner_calls += 1
        cycle += 1
        chunk = min(ctrl.baseline_chunk, ctrl.step_limit - world.step)
        executed = 0
        outcome = None
        for s in range(chunk):
            prev = [q.copy() for q in world.configs]
            for i in range(n):
                delta = np.clip(plans[i][s], -ctrl.delta_limit, ctrl.delta_limit)
                world.configs[i] = np.clip(world.configs[i] + delta,
                                           world.arms[i].lower_limits,
                                           world.arms[i].upper_limits)
            world.step += 1
            executed += 1
            if segment_has_collision(world.arms, prev, world.configs, bounds,
                                     ctrl.exec_subsamples):
                result.collision = True
                outcome = "collision"
                break
            for i in range(n):
                world.histories[i].append(obs.build_frame(
                    world.arms[i], world.configs[i], world.goals[i]))
            pos_now, _ = residuals()
            progressed = any(best_pos[i] - pos_now[i] >= ctrl.stall_eps
                             for i in range(n))
            best_pos = [min(b, p) for b, p in zip(best_pos, pos_now)]
            no_progress = 0 if progressed else no_progress + 1
            if all(goal_reached(world, i, ctrl.pos_tol, ctrl.rot_tol)
                   for i in range(n)):
                outcome = "success"
                break
            if no_progress >= ctrl.stall_window:
                result.stall = True
                outcome = "stall"
                break
        result.chunks.append(executed)
        if outcome == "success":
            return finish(True)
        if outcome in ("collision", "stall"):
            return finish(False)
    return finish(False)


# ---------------------------------------------------------------------------
# Dense post-hoc re-simulation.
# ---------------------------------------------------------------------------

def resimulate_trajectory(arms, configs_per_step, bounds: WorldBounds,
                          subsamples: int) -> bool:
    """True when the whole recorded trajectory is collision-free under dense
    interpolation. Written against the raw geometry predicates only."""
    for prev, new in zip(configs_per_step[:-1], configs_per_step[1:]):
        if segment_has_collision(arms, list(prev), list(new), bounds, subsamples):
            return False
    return True


def run_episode_with_resim(task: TaskSpec, method: str, policies, cfg: RunConfig,
                           seed: int, trace_path=None):
    world = make_world(task.arms, task.starts, task.goals)
    if method == "dgmap":
        result = run_episode(world, policies["single"], policies.get("dual"), cfg,
                             seed, trace_path)
    elif method == "decentralized":
        result = baseline_decentralized(world, policies["single"], cfg, seed,
                                        trace_path)
    else:
        raise ValueError(f"unknown method {method!r}")

    # The per-arm histories record one frame per executed step (plus the
    # initial frame); their joint-angle slots reconstruct the trajectory.
    joint_slices = [[f[: arm.dof] for f in world.histories[i]]
                    for i, arm in enumerate(task.arms)]
    steps_recorded = min(len(js) for js in joint_slices)
    recorded = [[np.asarray(js[t]) for js in joint_slices]
                for t in range(steps_recorded)]

    bounds = WorldBounds(cfg.world.x_min, cfg.world.x_max, cfg.world.y_min,
                         cfg.world.y_max)
    resim_ok = True
    if result.success:
        resim_ok = resimulate_trajectory(task.arms, recorded, bounds,
                                         cfg.bench.resim_subsamples)
    return result, resim_ok


# ---------------------------------------------------------------------------
# Matrix runner.
# ---------------------------------------------------------------------------

@dataclass
class BenchReport:
    cells: dict
    episodes: list
    config_digest: str
    seed: int
    gates: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.gates.values())


_WORKER_STATE: dict = {}


def _worker_init(cfg_dict, single_path, dual_path):
    from .config import load_config
    import tempfile, yaml, os
    fd, path = tempfile.mkstemp(suffix=".yaml")
    with os.fdopen(fd, "w") as fh:
        yaml.safe_dump(cfg_dict, fh)
    cfg = load_config(path)
    os.unlink(path)
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["policies"] = {
        "single": load_checkpoint(single_path),
        "dual": load_checkpoint(dual_path) if dual_path else None,
    }


def _worker_episode(job):
    method, n_arms, difficulty, episode, master_seed = job
    cfg = _WORKER_STATE["cfg"]
    policies = _WORKER_STATE["policies"]
    return _run_one(method, n_arms, difficulty, episode, master_seed, cfg, policies)


def _run_one(method, n_arms, difficulty, episode, master_seed, cfg, policies):
    diff_idx = DIFFICULTIES.index(difficulty)
    task_rng = substream(master_seed, TAG_TASK, n_arms, diff_idx, episode)
    task = generate_task(n_arms, difficulty, task_rng, cfg, seed=episode)
    ep_seed = int(substream(master_seed, TAG_EPISODE, METHOD_IDS[method], n_arms,
                            diff_idx, episode).integers(0, 2 ** 62))
    result, resim_ok = run_episode_with_resim(task, method, policies, cfg, ep_seed)
    record = {
        "method": method,
        "n_arms": n_arms,
        "difficulty": difficulty,
        "episode": episode,
        "task_digest": task_digest(task),
        "resim_ok": bool(resim_ok),
    }
    record.update(result.to_json())
    return record


def run_benchmark(cfg: RunConfig, policies, methods, out_dir: str | Path,
                  workers: int = 1) -> BenchReport:
    """Run the full matrix and write report.csv + episodes.jsonl."""
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)
    master_seed = cfg.seed

    jobs = [(method, n, diff, ep, master_seed)
            for method in methods
            for n in cfg.bench.n_arms
            for diff in cfg.bench.difficulties
            for ep in range(cfg.bench.episodes_per_cell)]

    if workers > 1 and policies.get("paths"):
        from .config import as_dict
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(as_dict(cfg), policies["paths"]["single"],
                                           policies["paths"].get("dual"))) as pool:
            records = list(pool.map(_worker_episode, jobs, chunksize=4))
    else:
        records = [_run_one(m, n, d, e, s, cfg, policies) for m, n, d, e, s in jobs]

    records.sort(key=lambda r: (r["method"], r["n_arms"],
                                DIFFICULTIES.index(r["difficulty"]), r["episode"]))

    cells: dict = {}
    for rec in records:
        key = (rec["method"], rec["n_arms"], rec["difficulty"])
        cells.setdefault(key, []).append(rec)

    summary = {}
    for key, recs in cells.items():
        n_eps = len(recs)
        successes = [r for r in recs if r["success"]]
        rate = len(successes) / n_eps if n_eps else 0.0
        mean_steps = (sum(r["steps"] for r in successes) / len(successes)
                      if successes else None)
        summary[key] = {"success_rate": rate, "mean_steps": mean_steps,
                        "episodes": n_eps}

    report = BenchReport(summary, records, digest, master_seed)
    report.gates = evaluate_gates(cfg, report, methods)
    write_report(report, cfg, methods, out_dir)
    return report


def evaluate_gates(cfg: RunConfig, report: BenchReport, methods) -> dict:
    gates = {}
    if cfg.bench.gate_soundness:
        gates["soundness"] = all(r["resim_ok"] for r in report.episodes
                                 if r["success"])
    margin = cfg.bench.gate_trend_margin
    if margin is not None and set(("dgmap", "decentralized")) <= set(methods):
        ok = True
        for n in cfg.bench.n_arms:
            if n < 3:
                continue
            pair = []
            for method in ("dgmap", "decentralized"):
                cells = [report.cells.get((method, n, d)) for d in ("medium", "hard")]
                cells = [c for c in cells if c]
                if not cells:
                    break
                pair.append(sum(c["success_rate"] for c in cells) / len(cells))
            if len(pair) == 2 and pair[0] - pair[1] < margin:
                ok = False
        gates["trend"] = ok
    floor = cfg.bench.gate_easy_floor
    if floor is not None and "dgmap" in methods:
        rates = [c["success_rate"] for key, c in report.cells.items()
                 if key[0] == "dgmap" and key[2] == "easy"]
        gates["easy_floor"] = bool(rates) and sum(rates) / len(rates) >= floor
    return gates


def write_report(report: BenchReport, cfg: RunConfig, methods, out_dir: Path) -> None:
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# config_digest={report.config_digest} seed={report.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "n_arms", "difficulty", "success_rate",
                         "mean_steps", "episodes"])
        for method in methods:
            for n in cfg.bench.n_arms:
                for diff in cfg.bench.difficulties:
                    cell = report.cells.get((method, n, diff))
                    if cell is None:
                        continue
                    mean = ("" if cell["mean_steps"] is None
                            else f"{cell['mean_steps']:.2f}")
                    writer.writerow([method, n, diff,
                                     f"{cell['success_rate']:.4f}", mean,
                                     cell["episodes"]])
    jsonl_path = out_dir / "episodes.jsonl"
    with open(jsonl_path, "w") as fh:
        fh.write(json.dumps({"type": "meta", "config_digest": report.config_digest,
                             "seed": report.seed, "methods": list(methods)},
                            sort_keys=True) + "\n")
        for rec in report.episodes:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def verify_task_pairing(report: BenchReport, methods) -> bool:
    """Hash-verified: all methods saw identical task sequences per cell."""
    digests: dict = {}
    for rec in report.episodes:
        key = (rec["n_arms"], rec["difficulty"], rec["episode"])
        digests.setdefault(key, set()).add(rec["task_digest"])
    return all(len(v) == 1 for v in digests.values())


# ---------------------------------------------------------------------------
# Toy 1-dof suite: trains a tiny model on straight-to-goal experts.
# ---------------------------------------------------------------------------

def toy_arm():
    return make_arm((1.0,), BasePose(0.0, 0.0, 0.0), 0.05)


def toy_expert_path(q0: float, goal_q: float, delta: float) -> np.ndarray:
    path = [np.array([q0])]
    q = q0
    while abs(goal_q - q) > 1e-12:
        q = q + float(np.clip(goal_q - q, -delta, delta))
        path.append(np.array([q]))
    return np.stack(path)


def _toy_endpoints(rng):
    """Start/goal pairs whose straight angular path is also the shortest one,
    so the wrapped goal pose in the observation determines the behavior."""
    goal_q = rng.uniform(-np.pi * 0.95, np.pi * 0.95)
    lo = max(-np.pi * 0.95, goal_q - np.pi * 0.9)
    hi = min(np.pi * 0.95, goal_q + np.pi * 0.9)
    return float(rng.uniform(lo, hi)), float(goal_q)


def toy_dataset(cfg: RunConfig, seed: int) -> Dataset:
    arm = toy_arm()
    delta = cfg.controller.delta_limit
    t_o, t_p = cfg.diffusion.obs_horizon, cfg.diffusion.pred_horizon
    obs_rows, act_rows = [], []
    for ep in range(cfg.toy.episodes):
        rng = substream(seed, TAG_TOY, ep)
        q0, goal_q = _toy_endpoints(rng)
        path = toy_expert_path(float(q0), float(goal_q), delta)
        goal_pose = forward_kinematics(arm, np.array([goal_q]))
        frames = [obs.build_frame(arm, q, goal_pose) for q in path]
        deltas = np.diff(path, axis=0)
        for o, a in episode_windows(frames, deltas, t_o, t_p, 1):
            obs_rows.append(o)
            act_rows.append(a)
    observations = np.stack(obs_rows).astype(np.float32)
    actions = np.stack(act_rows).astype(np.float32)
    norm = compute_norm_stats(observations, actions)
    return Dataset("single", t_o, t_p, obs.frame_width(1), 1, observations, actions,
                   norm, {"seed": seed, "episodes": cfg.toy.episodes, "skipped": 0,
                          "morphology_digest": "toy"})


def goal_directed_fraction(policy_like, cfg: RunConfig, seed: int,
                           n_eval: int | None = None) -> float:
    """Fraction of sampled plans whose rollout approaches the goal without
    ever retreating by more than the slack."""
    arm = toy_arm()
    delta = cfg.controller.delta_limit
    t_p = cfg.diffusion.pred_horizon
    slack = cfg.toy.monotone_slack
    n_eval = n_eval if n_eval is not None else cfg.toy.eval_samples
    rng = substream(seed, TAG_TOY, 10_000)
    hits = 0
    for trial in range(n_eval):
        q0, goal_q = _toy_endpoints(rng)
        goal_pose = forward_kinematics(arm, np.array([goal_q]))
        frame = obs.build_frame(arm, np.array([q0]), goal_pose)
        history = obs.build_history([frame], cfg.diffusion.obs_horizon)
        plan = policy_like.sample_plans(obs.flatten(history), 1, rng, delta)[0]
        if _plan_goal_directed(arm, float(q0), goal_pose, plan, delta, slack,
                               cfg.controller.pos_tol):
            hits += 1
    return hits / n_eval


def dataset_goal_directed_fraction(dataset: Dataset, cfg: RunConfig) -> float:
    """The metric applied to the stored expert windows themselves."""
    from .kinematics import EEPose
    arm = toy_arm()
    delta = cfg.controller.delta_limit
    slack = cfg.toy.monotone_slack
    width = obs.frame_width(1)
    hits = 0
    for row, act in zip(dataset.observations, dataset.actions):
        newest = row[-width:]
        q0 = float(newest[0])
        goal = newest[obs.slot(1, "goal_pose")]
        goal_pose = EEPose(np.array(goal[:2], dtype=float), float(goal[2]))
        plan = act.reshape(dataset.t_p, 1).astype(float)
        if _plan_goal_directed(arm, q0, goal_pose, plan, delta, slack,
                               cfg.controller.pos_tol):
            hits += 1
    return hits / len(dataset.observations)


def _plan_goal_directed(arm, q0, goal_pose, plan, delta, slack, pos_tol) -> bool:
    from .collision import rollout
    traj = rollout(arm, np.array([q0]), plan, delta)
    dists = [pos_distance(forward_kinematics(arm, q), goal_pose) for q in traj]
    for a, b in zip(dists[:-1], dists[1:]):
        if b > a + slack and b > pos_tol:
            return False
    if dists[0] <= pos_tol:
        return True
    return dists[-1] <= dists[0] - min(0.05, 0.5 * dists[0])


class _UntrainedPolicy:
    """Fresh random-weight model wrapped with the dataset normalization."""

    def __init__(self, dataset: Dataset, cfg: RunConfig, seed: int):
        from .diffusion import cosine_schedule
        self._schedule = cosine_schedule(cfg.diffusion.denoise_steps)
        rng = substream(seed, TAG_TOY, 77)
        self._model = DenoiserMLP("single", dataset.actions.shape[1],
                                  dataset.obs_width, cfg.toy.hidden_dims,
                                  cfg.diffusion.embed_dim,
                                  cfg.diffusion.denoise_steps, rng)
        self._norm = dataset.norm
        self._t_p = dataset.t_p
        self._dim = dataset.action_dim

    def sample_plans(self, obs_vec, count, rng, delta_limit):
        from .diffusion import sample
        return sample(self._schedule, self._model, obs_vec, count, rng, self._norm,
                      delta_limit, self._t_p, self._dim)


def toy_pointmass_suite(cfg: RunConfig, seed: int | None = None, log=None) -> dict:
    """Train the tiny single-arm model and report goal-directedness."""
    import dataclasses
    seed = cfg.seed if seed is None else seed
    dataset = toy_dataset(cfg, seed)
    dcfg = dataclasses.replace(cfg.diffusion, epochs=cfg.toy.epochs,
                               batch_size=cfg.toy.batch_size,
                               learning_rate=cfg.toy.learning_rate)
    state = train(dataset, "single", dcfg, seed, hidden_dims=cfg.toy.hidden_dims,
                  log=log)
    policy = policy_from_state(state, "single", dataset, "toy", {"suite": "toy"})
    return {
        "expert_fraction": dataset_goal_directed_fraction(dataset, cfg),
        "untrained_fraction": goal_directed_fraction(
            _UntrainedPolicy(dataset, cfg, seed), cfg, seed),
        "trained_fraction": goal_directed_fraction(policy, cfg, seed),
        "records": len(dataset),
    }
