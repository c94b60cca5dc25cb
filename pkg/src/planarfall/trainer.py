"""Training orchestration: alternating collect/update with CSV stats
streaming, periodic checkpoints, and resume."""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from . import nets, ppo
from .env import FallEnv, obs_scales
from .robot import resolve_robot
from .runconfig import RunConfig, write_config


def set_threads(threads: int) -> None:
    """Pin the numba worker count; 0 keeps the library default."""
    if threads > 0:
        import numba

        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))


def build_networks(cfg: RunConfig, actor_dim: int, critic_dim: int, action_dim: int,
                   rng: np.random.Generator):
    actor = nets.MlpParams.create(
        rng, (actor_dim, *cfg.ppo.actor_hidden, action_dim),
        with_log_std=True, init_log_std=cfg.ppo.init_log_std)
    critic = nets.MlpParams.create(rng, (critic_dim, *cfg.ppo.critic_hidden, 1), out_scale=1.0)
    actor_opt = nets.AdamState.for_params(actor.parameter_list(), lr=cfg.ppo.lr)
    critic_opt = nets.AdamState.for_params(critic.parameter_list(), lr=cfg.ppo.lr)
    return actor, critic, actor_opt, critic_opt


def checkpoint_meta(cfg: RunConfig, actor_scale, critic_scale) -> dict:
    return {
        "obs_config": cfg.episode.obs_config,
        "task": cfg.episode.task,
        "arm_frozen": cfg.episode.arm_frozen,
        "robot": cfg.run.robot,
        "actor_scale": [float(v) for v in actor_scale],
        "critic_scale": [float(v) for v in critic_scale],
    }


def train(cfg: RunConfig, out_dir: str | Path, resume: str | Path | None = None,
          log=None, iterations: int | None = None) -> tuple[Path, list[ppo.TrainStats]]:
    """Run the configured training; returns (final checkpoint path, stats).

    Writes stats.csv (one row per iteration), the resolved config snapshot
    and periodic checkpoints into `out_dir`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_threads(1 if cfg.run.deterministic and cfg.run.threads == 0 else cfg.run.threads)
    write_config(cfg, out_dir / "resolved.toml")

    model = resolve_robot(cfg.run.robot)
    env = FallEnv(model, cfg.episode, cfg.reward, n_envs=cfg.ppo.envs, seed=cfg.run.seed)
    actor_scale, critic_scale = obs_scales(cfg.episode)
    trainer_rng = np.random.default_rng(np.random.SeedSequence([cfg.run.seed, 0x7_11]))

    start_iter = 0
    if resume is not None:
        actor, critic, actor_opt, critic_opt, start_iter, rng_state, meta = nets.load_checkpoint(resume)
        if meta.get("obs_config") != cfg.episode.obs_config:
            raise nets.CheckpointError(
                f"checkpoint obs_config {meta.get('obs_config')} differs from "
                f"configured {cfg.episode.obs_config}")
        if rng_state is not None:
            trainer_rng.bit_generator.state = rng_state
    else:
        actor, critic, actor_opt, critic_opt = build_networks(
            cfg, cfg.episode.actor_dim(), cfg.episode.critic_dim(), model.n_joints, trainer_rng)

    total_iters = cfg.ppo.iterations if iterations is None else iterations
    stats_path = out_dir / "stats.csv"
    fresh = start_iter == 0 or not stats_path.exists()
    stats_file = open(stats_path, "w" if fresh else "a", newline="")
    writer = csv.writer(stats_file)
    if fresh:
        writer.writerow(ppo.TrainStats.csv_header())

    incidents = out_dir / "incidents.log"
    meta = checkpoint_meta(cfg, actor_scale, critic_scale)
    all_stats: list[ppo.TrainStats] = []
    trackers: dict = {}
    t0 = time.time()
    steps_per_iter = cfg.ppo.envs * cfg.ppo.steps

    for it in range(start_iter, total_iters):
        buffer, records, info = ppo.collect(
            env, actor, critic, cfg.ppo.steps, cfg.ppo.gamma,
            actor_scale, critic_scale, trackers)
        upd = ppo.ppo_update(buffer, actor, critic, actor_opt, critic_opt,
                             cfg.ppo, trainer_rng)
        if upd["aborted"]:
            with open(incidents, "a") as f:
                f.write(f"iteration {it + 1}: non-finite loss, parameters restored\n")
        row = ppo.TrainStats(
            iteration=it + 1,
            env_steps=(it + 1) * steps_per_iter,
            wall_time=time.time() - t0,
            mean_return=float(np.mean([r.episode_return for r in records])) if records else float("nan"),
            success_rate=float(np.mean([r.success for r in records])) if records else float("nan"),
            value_error=ppo.value_error(records) if records else float("nan"),
            policy_loss=upd["policy_loss"],
            value_loss=upd["value_loss"],
            entropy=upd["entropy"],
            clip_fraction=upd["clip_fraction"],
            mean_terms=info["term_totals"] / steps_per_iter,
            faults=info["faults"],
            aborted=upd["aborted"],
        )
        all_stats.append(row)
        writer.writerow(row.csv_row())
        stats_file.flush()
        if log is not None and ((it + 1) % 25 == 0 or it == 0 or not np.isnan(row.mean_return)):
            log(f"iter {it + 1}/{total_iters} return={row.mean_return:.1f} "
                f"success={row.success_rate:.2f} verr={row.value_error:.4f} "
                f"entropy={row.entropy:.2f} [{row.wall_time:.0f}s]")
        if (it + 1) % cfg.ppo.checkpoint_every == 0 and (it + 1) < total_iters:
            nets.save_checkpoint(out_dir / f"ckpt_{it + 1:06d}.bin", actor, critic,
                                 actor_opt, critic_opt, it + 1,
                                 trainer_rng.bit_generator.state, meta)

    final = out_dir / "ckpt_final.bin"
    nets.save_checkpoint(final, actor, critic, actor_opt, critic_opt, total_iters,
                         trainer_rng.bit_generator.state, meta)
    stats_file.close()
    env.close()
    return final, all_stats
