"""Paired evaluation of policies and baseline controllers, plus the
observation-configuration ablation study.

Episode k of an evaluation always draws its initial conditions from the
stream seeded by (seed, k), so different controllers evaluated with the
same seed see exactly the same falls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics, nets, ppo, trainer
from .baselines import BASELINE_KINDS, BaselineController
from .env import FallEnv, obs_scales
from .robot import resolve_robot
from .runconfig import RunConfig


class EvalError(RuntimeError):
    pass


class PolicyEval:
    """Deterministic-mode policy with its critic for the value-error metric."""

    def __init__(self, actor: nets.MlpParams, critic: nets.MlpParams,
                 actor_scale: np.ndarray, critic_scale: np.ndarray,
                 meta: dict, name: str = "policy"):
        self.actor = actor
        self.critic = critic
        self.actor_scale = actor_scale.astype(np.float32)
        self.critic_scale = critic_scale.astype(np.float32)
        self.meta = meta
        self.name = name

    @staticmethod
    def from_checkpoint(path: str | Path, cfg: RunConfig, name: str | None = None) -> "PolicyEval":
        actor, critic, _, _, _, _, meta = nets.load_checkpoint(path)
        if meta.get("obs_config") != cfg.episode.obs_config:
            raise EvalError(
                f"checkpoint {path} was trained with obs_config {meta.get('obs_config')}, "
                f"but the evaluation config selects {cfg.episode.obs_config}")
        a_scale = np.asarray(meta.get("actor_scale"), dtype=np.float32)
        c_scale = np.asarray(meta.get("critic_scale"), dtype=np.float32)
        return PolicyEval(actor, critic, a_scale, c_scale, meta,
                          name=name or Path(path).stem)

    def act(self, actor_obs: np.ndarray) -> np.ndarray:
        mean, _ = nets.forward(self.actor, actor_obs.astype(np.float32) * self.actor_scale)
        return mean.astype(np.float64)

    def value(self, critic_obs: np.ndarray) -> np.ndarray:
        v, _ = nets.forward(self.critic, critic_obs.astype(np.float32) * self.critic_scale)
        return v[:, 0].astype(np.float64)


def resolve_controller(spec, cfg: RunConfig):
    if isinstance(spec, (BaselineController, PolicyEval)):
        return spec
    if isinstance(spec, str) and spec in BASELINE_KINDS:
        model = resolve_robot(cfg.run.robot)
        return (BaselineController.freeze(model) if spec == "freeze"
                else BaselineController.damp(model))
    return PolicyEval.from_checkpoint(spec, cfg)


def run_eval(controller, cfg: RunConfig, episodes: int = 2560, seed: int = 0,
             n_envs: int = 256, log=None) -> metrics.MetricsReport:
    """Evaluate a controller on `episodes` paired falls; returns the full
    metrics report. Observation noise is off during evaluation (it is a
    training-robustness mechanism)."""
    if episodes <= 0:
        raise EvalError("episodes must be positive")
    controller = resolve_controller(controller, cfg)
    model = resolve_robot(cfg.run.robot)
    epi_cfg = replace(cfg.episode, noise_scale=0.0)
    n = min(n_envs, episodes)
    env = FallEnv(model, epi_cfg, cfg.reward, n_envs=n, seed=seed, auto_reset=False)
    steps = epi_cfg.steps_per_episode
    gamma = cfg.ppo.gamma
    rounds = (episodes + n - 1) // n

    imp = np.zeros((episodes, steps))
    acc = np.zeros((episodes, steps))
    internal = np.zeros((episodes, steps))
    heights = np.zeros((episodes, steps))
    torque_sum = np.zeros((episodes, model.n_joints))
    returns = np.zeros(episodes)
    success = np.zeros(episodes, dtype=bool)
    v_start = np.zeros(episodes)
    disc = np.zeros(episodes)

    is_policy = isinstance(controller, PolicyEval)
    for r in range(rounds):
        ids = np.array([r * n + i for i in range(n)])
        for i in range(n):
            env.reseed(i, np.random.SeedSequence([seed, int(ids[i])]))
            env.reset_env(i)
        keep = ids < episodes
        kept = ids[keep]
        if is_policy:
            v_start[kept] = controller.value(env.observe_critic())[keep]
        elif hasattr(controller, "begin_episodes"):
            controller.begin_episodes(n, model.n_joints)
        gamma_pow = np.ones(n)
        for t in range(steps):
            if is_policy:
                res = env.control_step(controller.act(env.observe_actor()))
            else:
                active = env.elapsed_steps >= env.init_steps
                newly = np.flatnonzero(active & ~controller._captured_mask)
                controller.on_switch(newly, env.state.joint_angles(env.arrays))
                res = env.control_step(torque_fn=controller.torques)
            imp[kept, t] = res.base_impulse[keep]
            acc[kept, t] = res.base_accel[keep]
            internal[kept, t] = res.internal_peak[keep]
            heights[kept, t] = res.base_height[keep]
            torque_sum[kept] += res.torque_abs[keep]
            returns[kept] += res.reward[keep]
            disc[kept] += (gamma_pow * res.reward)[keep]
            gamma_pow *= gamma
            if t == steps - 1:
                success[kept] = res.final_success[keep]
        if log is not None:
            log(f"eval {controller.name}: round {r + 1}/{rounds} done")
    env.close()

    thr = metrics.impulse_threshold_for(model.total_mass)
    nonzero = imp[imp > metrics.IMPULSE_FLOOR]
    above = nonzero[nonzero > thr]
    hi = float(above.max()) if above.size else thr * 2
    i_counts, i_edges = np.histogram(above, bins=np.linspace(thr, hi, 41))
    peak_internal = internal.max(axis=1)
    n_counts, n_edges = np.histogram(peak_internal, bins=40)
    grid, t_edges, h_edges = metrics.height_distribution_grid(heights, epi_cfg.control_dt)
    report = metrics.MetricsReport(
        controller=controller.name,
        seed=seed,
        episodes=episodes,
        steps=steps,
        control_dt=epi_cfg.control_dt,
        task=epi_cfg.task,
        obs_config=epi_cfg.obs_config,
        impulse_threshold=thr,
        impulse_samples=np.sort(nonzero),
        impulse_hist_edges=i_edges,
        impulse_hist_counts=i_counts,
        accel_mean_curve=acc.mean(axis=0),
        accel_p95_curve=metrics.percentile_curve(acc, 95.0),
        internal_peak_per_episode=peak_internal,
        internal_hist_edges=n_edges,
        internal_hist_counts=n_counts,
        internal_p95_curve=metrics.percentile_curve(internal, 95.0),
        success=success,
        torque_mean_per_drive=torque_sum.sum(axis=0) / (episodes * steps),
        leg_drives=~model.arm_mask,
        height_grid=grid,
        height_edges_t=t_edges,
        height_edges_h=h_edges,
        time_to_90=metrics.time_to_90_final(heights, epi_cfg.control_dt),
        episode_returns=returns,
        value_error=float(np.mean((v_start - disc) ** 2)) if is_policy else None,
    )
    return report


@dataclass
class AblationResult:
    """Per-observation-configuration returns and value errors over seeds."""

    seeds: tuple[int, ...]
    iterations: int
    returns: dict          # config id -> list of per-seed mean returns
    value_errors: dict     # config id -> list of per-seed value errors

    def __post_init__(self):
        if len(self.seeds) < 3:
            raise ValueError("ablation requires at least 3 seeds")

    def mean_return(self, config: int) -> float:
        return float(np.mean(self.returns[config]))

    def mean_value_error(self, config: int) -> float:
        return float(np.mean(self.value_errors[config]))

    def seed_spread(self, config: int) -> float:
        vals = self.returns[config]
        return float(np.max(vals) - np.min(vals))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "schema": "planarfall-ablation-v1",
            "seeds": list(self.seeds),
            "iterations": self.iterations,
            "returns": {str(k): v for k, v in self.returns.items()},
            "value_errors": {str(k): v for k, v in self.value_errors.items()},
        }))

    @staticmethod
    def from_json(path: str | Path) -> "AblationResult":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != "planarfall-ablation-v1":
            raise ValueError(f"{path}: not an ablation result")
        return AblationResult(
            seeds=tuple(doc["seeds"]), iterations=doc["iterations"],
            returns={int(k): v for k, v in doc["returns"].items()},
            value_errors={int(k): v for k, v in doc["value_errors"].items()})


def ablation_suite(cfg: RunConfig, out_dir: str | Path, seeds: int = 3,
                   iterations: int | None = None, eval_episodes: int = 128,
                   eval_seed: int = 9000, configs: tuple[int, ...] = (1, 2, 3, 4),
                   log=None) -> AblationResult:
    """Train every observation configuration over `seeds` seeds at the
    configured (desk-scale) budget, then evaluate returns and value error."""
    if seeds < 3:
        raise ValueError("ablation requires at least 3 seeds")
    out_dir = Path(out_dir)
    iters = iterations if iterations is not None else cfg.ppo.iterations
    seed_list = tuple(cfg.run.seed + k for k in range(seeds))
    returns = {c: [] for c in configs}
    value_errors = {c: [] for c in configs}
    for c in configs:
        for s in seed_list:
            run_cfg = cfg
            run_cfg = replace(run_cfg, episode=replace(cfg.episode, obs_config=c),
                              run=replace(cfg.run, seed=s),
                              ppo=replace(cfg.ppo, iterations=iters))
            run_dir = out_dir / f"config{c}_seed{s}"
            if log is not None:
                log(f"ablation: training config {c} seed {s} ({iters} iterations)")
            ckpt, _ = trainer.train(run_cfg, run_dir, log=None)
            report = run_eval(ckpt, run_cfg, episodes=eval_episodes, seed=eval_seed,
                              n_envs=min(128, eval_episodes))
            returns[c].append(float(report.episode_returns.mean()))
            value_errors[c].append(float(report.value_error))
            if log is not None:
                log(f"ablation: config {c} seed {s}: return "
                    f"{returns[c][-1]:.1f}, value error {value_errors[c][-1]:.4f}")
    result = AblationResult(seeds=seed_list, iterations=iters,
                            returns=returns, value_errors=value_errors)
    result.to_json(out_dir / "ablation.json")
    return result
