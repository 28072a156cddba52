"""Training and evaluation loops: parallel rollouts, joint updates, metrics.

Each iteration runs one full episode in every environment instance under a
frozen parameter snapshot, computes advantages, then performs the configured
number of update epochs over the collected batch (grouped per agent so arrays
stay rectangular), stepping Adam once per minibatch. The persistence pairings
computed during the rollout are reused across the update epochs; gradients
flow through the filtration values under the frozen pairing.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import engine as eg
from . import policy as pol
from .backbone import (BackboneParams, BatchInputs, TGNState, build_backbone_params,
                       forward_batch)
from .config import RunConfig
from .errors import PipelineError
from .network import (D0, RoadNetwork, TrafficObservation, receptive_lanes)
from .simulator import SimConfig, Simulator

METRIC_COLUMNS = ["iteration", "mean_reward", "mean_travel_time_s", "mean_delay_s",
                  "vehicles_completed", "teleports", "tgn_mse"]


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class AgentStatic:
    """Static per-agent graph layout, precomputed once per scenario."""

    agent: str
    lanes: list[str]
    n: int
    adj: np.ndarray                        # (N, N) int8
    edge_conns: list[tuple[str, int, int, int]]  # (intersection, movement, j, k)
    in_flags: np.ndarray
    out_flags: np.ndarray


def build_static(network: RoadNetwork, agent: str) -> AgentStatic:
    lanes = receptive_lanes(network, agent)
    index = {l: i for i, l in enumerate(lanes)}
    spec = network.intersections[agent]
    n = len(lanes)
    adj = np.zeros((n, n), dtype=np.int8)
    conns = []
    for iid in network.intersections:
        for c in network.movements[iid].values():
            j, k = index.get(c.from_lane), index.get(c.to_lane)
            if j is None or k is None:
                continue
            adj[j, k] = 1
            conns.append((iid, c.movement, j, k))
    in_flags = np.array([1.0 if l in set(spec.incoming) else 0.0 for l in lanes])
    out_flags = np.array([1.0 if l in set(spec.outgoing) else 0.0 for l in lanes])
    return AgentStatic(agent, lanes, n, adj, conns, in_flags, out_flags)


def assemble_features(st: AgentStatic, obs: TrafficObservation) -> tuple[np.ndarray, np.ndarray]:
    """Per-lane feature rows and dense edge features from one snapshot."""
    feats = np.zeros((st.n, D0))
    for i, lane in enumerate(st.lanes):
        feats[i, :5] = obs.lane_state[lane]
    feats[:, 5] = st.in_flags
    feats[:, 6] = st.out_flags
    ef = np.zeros((st.n, st.n, 2))
    for iid, m, j, k in st.edge_conns:
        ef[j, k, 0] = 1.0 if obs.permitted.get((iid, m), False) else 0.0
        ef[j, k, 1] = obs.phase_age.get(iid, 0.0)
    return feats, ef


class GlobalFeatures:
    """Fast map-level feature matrix (flags precomputed)."""

    def __init__(self, network: RoadNetwork):
        self.lanes = sorted(network.lanes)
        incoming = {l for s in network.intersections.values() for l in s.incoming}
        outgoing = {l for s in network.intersections.values() for l in s.outgoing}
        self.flags = np.zeros((len(self.lanes), 2))
        for i, lane in enumerate(self.lanes):
            self.flags[i, 0] = 1.0 if lane in incoming else 0.0
            self.flags[i, 1] = 1.0 if lane in outgoing else 0.0

    def matrix(self, obs: TrafficObservation) -> np.ndarray:
        feats = np.zeros((len(self.lanes), D0))
        for i, lane in enumerate(self.lanes):
            feats[i, :5] = obs.lane_state[lane]
        feats[:, 5:7] = self.flags
        return feats


@dataclass
class ModelBundle:
    """Every trainable piece plus its configuration."""

    cfg: RunConfig
    store: eg.ParameterStore
    backbone: BackboneParams
    policy_head: pol.HeadParams
    value_head: pol.HeadParams


def build_model(cfg: RunConfig, seed: int) -> ModelBundle:
    store = eg.ParameterStore(shared=cfg.shared_params)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1017]))
    backbone = build_backbone_params(store, cfg, rng)
    policy_head = pol.build_head_params(store, "policy", cfg.actions, cfg, rng)
    value_head = pol.build_head_params(store, "value", 1, cfg, rng)
    return ModelBundle(cfg, store, backbone, policy_head, value_head)


class Trainer:
    def __init__(self, cfg: RunConfig, network: RoadNetwork, seed: int,
                 n_envs: int | None = None):
        self.cfg = cfg
        self.network = network
        self.seed = seed
        self.n_envs = n_envs if n_envs is not None else cfg.envs
        self.model = build_model(cfg, seed)
        self.adam = eg.AdamState(lr=cfg.lr)
        self.agents = network.agent_ids()
        self.statics = {a: build_static(network, a) for a in self.agents}
        self.globals = GlobalFeatures(network)
        self.sim_cfg = SimConfig(cfg.control_interval, cfg.teleport_threshold,
                                 cfg.yellow, cfg.episode_len)
        self.envs = [Simulator(network, self.sim_cfg, derive_seed(seed, 1, e))
                     for e in range(self.n_envs)]
        self.policy_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAC7]))
        self.shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F]))
        self.steps_per_episode = cfg.episode_len // cfg.control_interval

    # -- rollout -------------------------------------------------------------

    def rollout(self, iteration: int) -> tuple[dict, dict]:
        cfg = self.cfg
        n_envs = self.n_envs
        t_steps = self.steps_per_episode
        obs_now = [env.reset(derive_seed(self.seed, 2, iteration, e))
                   for e, env in enumerate(self.envs)]
        global_now = np.stack([self.globals.matrix(o).mean(axis=0) for o in obs_now])
        global_prev = global_now.copy()   # at t0 the freshest map mean is t0's own
        states = {(e, a): TGNState() for e in range(n_envs) for a in self.agents}

        # the buffer keeps every per-step array in the forward pass's internal
        # (content-canonical) vertex order so update epochs skip the reordering
        buf = {a: {
            "features": np.zeros((n_envs, t_steps, st.n, D0)),
            "prev": np.zeros((n_envs, t_steps, st.n, cfg.d)),
            "edge_feats": np.zeros((n_envs, t_steps, st.n, st.n, 2)),
            "adj": np.zeros((n_envs, t_steps, st.n, st.n), dtype=np.int8),
            "global_prev": np.zeros((n_envs, t_steps, D0)),
            "local_mf": np.zeros((n_envs, t_steps, D0)),
            "perm": np.zeros((n_envs, t_steps, st.n), dtype=np.int64),
            "death_idx": np.zeros((n_envs, t_steps, st.n + 1, cfg.filtrations), dtype=np.int64),
            "targets": np.zeros((n_envs, t_steps, st.n + 1, D0)),
            "actions": np.zeros((n_envs, t_steps), dtype=np.int64),
            "logp_old": np.zeros((n_envs, t_steps)),
            "values_old": np.zeros((n_envs, t_steps)),
        } for a, st in self.statics.items()}
        rewards = np.zeros((n_envs, t_steps))
        reward_sum = 0.0

        with eg.no_grad():
            for t in range(t_steps):
                actions_per_env = [dict() for _ in range(n_envs)]
                for a in self.agents:
                    st = self.statics[a]
                    feats = np.zeros((n_envs, st.n, D0))
                    efs = np.zeros((n_envs, st.n, st.n, 2))
                    prev = np.zeros((n_envs, st.n, cfg.d))
                    for e in range(n_envs):
                        f, ef = assemble_features(st, obs_now[e])
                        feats[e] = f
                        efs[e] = ef
                        prev[e] = states[(e, a)].hidden_rows(st.lanes, f)
                    if not np.isfinite(feats).all():
                        raise PipelineError("rollout", f"non-finite observation for agent {a}")
                    local = feats.mean(axis=1)
                    batch = BatchInputs(feats, prev, st.adj, efs, global_prev, local)
                    res = forward_batch(self.model.backbone, batch, cfg)
                    logits = pol.tmoe_policy_forward(res.obs, self.model.policy_head, cfg)
                    values = pol.tmoe_policy_forward(res.obs, self.model.value_head, cfg)
                    acts = pol.sample_actions(logits.data, self.policy_rng)
                    logp_all = eg.log_softmax(logits, axis=-1).data
                    b = buf[a]
                    b["features"][:, t] = feats
                    b["prev"][:, t] = prev
                    b["edge_feats"][:, t] = efs
                    b["global_prev"][:, t] = global_prev
                    b["local_mf"][:, t] = local
                    b["perm"][:, t] = res.perm
                    b["death_idx"][:, t] = res.death_idx
                    b["actions"][:, t] = acts
                    b["logp_old"][:, t] = logp_all[np.arange(n_envs), acts]
                    b["values_old"][:, t] = values.data.reshape(-1)
                    for e in range(n_envs):
                        states[(e, a)].update(st.lanes, res.pred_original[e, :st.n])
                        actions_per_env[e][a] = int(acts[e])
                global_prev = global_now
                for e, env in enumerate(self.envs):
                    obs_now[e] = env.step(actions_per_env[e])
                    rewards[e, t] = env.global_reward(cfg.alpha, cfg.beta)
                global_now = np.stack([self.globals.matrix(o).mean(axis=0) for o in obs_now])
                for a in self.agents:
                    st = self.statics[a]
                    b = buf[a]
                    for e in range(n_envs):
                        f, _ = assemble_features(st, obs_now[e])
                        b["targets"][e, t, :st.n] = f
                        b["targets"][e, t, st.n] = global_now[e]
                reward_sum += rewards[:, t].mean()

        dones = np.zeros((n_envs, t_steps))
        dones[:, -1] = 1.0
        for a in self.agents:
            b = buf[a]
            adv = np.zeros((n_envs, t_steps))
            for e in range(n_envs):
                est = pol.gae(rewards[e], b["values_old"][e], dones[e],
                              cfg.gamma, cfg.gae_lambda)
                adv[e] = est.advantages
            b["advantages"] = adv
        metrics = self._collect_env_metrics()
        metrics["mean_reward"] = reward_sum / t_steps
        return buf, metrics

    def _collect_env_metrics(self) -> dict:
        travel, delay, completed, teleports = [], [], 0, 0
        for env in self.envs:
            m = env.episode_metrics()
            travel += m.travel_times
            delay += m.delays
            completed += m.completed
            teleports += m.teleport_events
        return {
            "mean_travel_time_s": float(np.mean(travel)) if travel else float("nan"),
            "mean_delay_s": float(np.mean(delay)) if delay else float("nan"),
            "vehicles_completed": completed,
            "teleports": teleports,
        }

    # -- update --------------------------------------------------------------

    def update(self, buf: dict) -> dict:
        cfg = self.cfg
        losses = {"policy": [], "value": [], "entropy": [], "tgn": []}
        for _ in range(cfg.sgd_epochs):
            order = list(self.agents)
            self.shuffle_rng.shuffle(order)
            for a in order:
                st = self.statics[a]
                b = buf[a]
                n_envs, t_steps = b["actions"].shape
                bsz = n_envs * t_steps

                def flat(key, tail):
                    return b[key].reshape((bsz,) + tail)

                batch = BatchInputs(
                    flat("features", (st.n, D0)), flat("prev", (st.n, cfg.d)), st.adj,
                    flat("edge_feats", (st.n, st.n, 2)), flat("global_prev", (D0,)),
                    flat("local_mf", (D0,)), flat("targets", (st.n + 1, D0)))
                res = forward_batch(self.model.backbone, batch, cfg,
                                    death_idx=flat("death_idx", (st.n + 1, cfg.filtrations)),
                                    perm=flat("perm", (st.n,)))
                logits = pol.tmoe_policy_forward(res.obs, self.model.policy_head, cfg)
                v_new = eg.reshape(pol.tmoe_policy_forward(res.obs, self.model.value_head, cfg),
                                   (bsz,))
                actions = b["actions"].reshape(-1)
                logp_new = pol.action_log_probs(logits, actions)
                adv = b["advantages"].reshape(-1)
                if cfg.adv_norm:
                    adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
                else:
                    adv_n = adv
                j_pi = pol.policy_loss(logp_new, b["logp_old"].reshape(-1), adv_n, cfg.clip_eps)
                j_v = pol.value_loss(v_new, b["values_old"].reshape(-1), adv)
                ent = eg.tmean(pol.entropy(logits))
                loss = pol.joint_objective(j_pi, j_v, ent, res.repr_loss,
                                           cfg.entropy_coeff, cfg.repr_loss_coeff)
                self.model.store.zero_grad()
                loss.backward()
                eg.adam_step(self.model.store, self.adam)
                losses["policy"].append(j_pi.item())
                losses["value"].append(j_v.item())
                losses["entropy"].append(ent.item())
                losses["tgn"].append(res.repr_loss.item())
        return {k: float(np.mean(v)) for k, v in losses.items()}

    # -- driver --------------------------------------------------------------

    def train(self, iterations: int, log=None) -> list[dict]:
        rows = []
        for it in range(iterations):
            t0 = time.time()
            buf, metrics = self.rollout(it)
            loss_metrics = self.update(buf)
            row = {"iteration": it,
                   "mean_reward": metrics["mean_reward"],
                   "mean_travel_time_s": metrics["mean_travel_time_s"],
                   "mean_delay_s": metrics["mean_delay_s"],
                   "vehicles_completed": metrics["vehicles_completed"],
                   "teleports": metrics["teleports"],
                   "tgn_mse": loss_metrics["tgn"]}
            rows.append(row)
            if log:
                log(f"iter {it:4d} reward {row['mean_reward']:.4f} "
                    f"delay {row['mean_delay_s']:.1f}s tgn {row['tgn_mse']:.4f} "
                    f"({time.time() - t0:.1f}s)")
        return rows


# ---------------------------------------------------------------------------
# evaluation


def evaluate(network: RoadNetwork, cfg: RunConfig, model: ModelBundle, seed: int,
             episodes: int = 1, control_interval: int | None = None,
             collect_embeddings: bool = False) -> dict:
    """Run the greedy policy; returns metrics (and optional embedding rows)."""
    sim_cfg = SimConfig(control_interval or cfg.control_interval,
                        cfg.teleport_threshold, cfg.yellow, cfg.episode_len)
    agents = network.agent_ids()
    statics = {a: build_static(network, a) for a in agents}
    glob = GlobalFeatures(network)
    travel, delay, completed, teleports, rewards = [], [], 0, 0, []
    embeddings = []
    with eg.no_grad():
        for ep in range(episodes):
            env = Simulator(network, sim_cfg, derive_seed(seed, 3, ep))
            obs = env.reset()
            states = {a: TGNState() for a in agents}
            global_prev = glob.matrix(obs).mean(axis=0)[None]
            steps = cfg.episode_len // sim_cfg.control_interval
            for t in range(steps):
                actions = {}
                global_now = glob.matrix(obs).mean(axis=0)[None]
                for a in agents:
                    st = statics[a]
                    f, ef = assemble_features(st, obs)
                    prev = states[a].hidden_rows(st.lanes, f)
                    batch = BatchInputs(f[None], prev[None], st.adj, ef[None],
                                        global_prev, f.mean(axis=0)[None])
                    res = forward_batch(model.backbone, batch, cfg)
                    logits = pol.tmoe_policy_forward(res.obs, model.policy_head, cfg)
                    act = int(np.argmax(logits.data[0]))
                    actions[a] = act
                    states[a].update(st.lanes, res.pred_original[0, :st.n])
                    if collect_embeddings:
                        embeddings.append((env.t, a, act, res.obs.data[0].copy()))
                global_prev = global_now
                obs = env.step(actions)
                rewards.append(env.global_reward(cfg.alpha, cfg.beta))
            m = env.episode_metrics()
            travel += m.travel_times
            delay += m.delays
            completed += m.completed
            teleports += m.teleport_events
    out = {
        "mean_travel_time_s": float(np.mean(travel)) if travel else float("nan"),
        "mean_delay_s": float(np.mean(delay)) if delay else float("nan"),
        "vehicles_completed": completed,
        "teleports": teleports,
        "mean_reward": float(np.mean(rewards)),
    }
    if collect_embeddings:
        out["embeddings"] = embeddings
    return out


# ---------------------------------------------------------------------------
# artifacts


def scenario_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(out_dir, cfg: RunConfig, seed: int, extra: dict | None = None):
    doc = {
        "config": cfg.to_dict(),
        "seed": seed,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_metrics_csv(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRIC_COLUMNS})
