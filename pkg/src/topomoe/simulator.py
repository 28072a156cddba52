"""Deterministic queue-based traffic micro-simulator.

Point-queue dynamics on the scenario's lane graph: vehicles spawn from
per-entry-lane Poisson demand, traverse each lane in free-flow time, then wait
in a FIFO stop-line queue until a green movement discharges them (one vehicle
per movement per second). Switch actions trigger a yellow interlock before the
next phase in the cycle; phases also advance on their own when they reach
their maximum duration. Vehicles whose stop-line wait reaches the teleport
threshold are advanced along their route and tracked separately.

Waits are accounted lazily (arrival timestamps instead of per-tick counters),
so a tick costs O(lanes + events) rather than O(vehicles).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .network import RoadNetwork, TrafficObservation

SATURATION_FLOW = 1  # vehicles per second per green movement


@dataclass
class SimConfig:
    control_interval: int = 10
    teleport_threshold: float = 60.0
    yellow: float = 3.0
    episode_len: int = 300

    def __post_init__(self):
        if self.control_interval < 1:
            raise ConfigurationError("control interval must be at least 1 s")
        if self.teleport_threshold <= self.yellow:
            raise ConfigurationError("teleport threshold must exceed the yellow duration")
        if self.episode_len < 1:
            raise ConfigurationError("episode length must be positive")


class _Vehicle:
    __slots__ = ("vid", "route", "pos", "spawn_t", "stop_t", "teleports")

    def __init__(self, vid: int, route: tuple[int, ...]):
        self.vid = vid
        self.route = route
        self.pos = 0
        self.spawn_t = -1
        self.stop_t = -1
        self.teleports = 0


@dataclass
class EpisodeMetrics:
    spawned: int = 0
    completed: int = 0
    teleport_events: int = 0
    teleported_finished: int = 0
    on_network: int = 0
    pending_demand: int = 0
    travel_times: list = field(default_factory=list)
    delays: list = field(default_factory=list)

    @property
    def mean_travel_time(self) -> float:
        return float(np.mean(self.travel_times)) if self.travel_times else float("nan")

    @property
    def mean_delay(self) -> float:
        return float(np.mean(self.delays)) if self.delays else float("nan")


class Simulator:
    """One environment instance; single-threaded, bit-deterministic per seed."""

    def __init__(self, network: RoadNetwork, config: SimConfig, seed: int = 0):
        self.network = network
        self.config = config
        self.lane_ids = sorted(network.lanes)
        self.lane_index = {l: i for i, l in enumerate(self.lane_ids)}
        self.capacity = np.array([network.lanes[l].capacity for l in self.lane_ids])
        self.ff_time = np.array([network.lanes[l].free_flow_time for l in self.lane_ids])
        self.x_max = network.max_capacity
        self.agents = network.agent_ids()
        # static movement tables: per intersection, movement -> (from, to) lane indices
        self.movements = {
            iid: {m: (self.lane_index[c.from_lane], self.lane_index[c.to_lane])
                  for m, c in network.movements[iid].items()}
            for iid in self.agents
        }
        self.in_lanes = {iid: [self.lane_index[l] for l in network.intersections[iid].incoming]
                         for iid in self.agents}
        self.out_lanes = {iid: [self.lane_index[l] for l in network.intersections[iid].outgoing]
                          for iid in self.agents}
        self._route_cache = {
            arr.lane: [tuple(self.lane_index[l] for l in rc.lanes) for rc in arr.routes]
            for arr in network.arrivals
        }
        self.reset(seed)

    # -- lifecycle -----------------------------------------------------------

    def reset(self, seed: int | None = None) -> TrafficObservation:
        if seed is not None:
            self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xA221]))
        self.t = 0
        n = len(self.lane_ids)
        self.transit: list[deque] = [deque() for _ in range(n)]   # (ready_time, vehicle)
        self.queue: list[deque] = [deque() for _ in range(n)]
        self.stop_sum = np.zeros(n)          # sum of stop_t over queued vehicles per lane
        self.phase_idx = {iid: 0 for iid in self.agents}
        self.elapsed = {iid: 0.0 for iid in self.agents}
        self.in_yellow = {iid: False for iid in self.agents}
        self.yellow_left = {iid: 0.0 for iid in self.agents}
        self.metrics = EpisodeMetrics()
        # demand and route choices are pre-drawn so that paired runs under
        # different controllers see identical arrival streams
        self._demand = {}
        self._routes = {}
        self._pending = {}
        self._spawn_ptr = {}
        vid = 0
        for arr in sorted(self.network.arrivals, key=lambda a: a.lane):
            counts = rng.poisson(arr.rate, size=self.config.episode_len)
            total = int(counts.sum())
            weights = np.array([rc.weight for rc in arr.routes], dtype=float)
            weights /= weights.sum()
            choices = rng.choice(len(arr.routes), size=total, p=weights)
            routes = self._route_cache[arr.lane]
            self._demand[arr.lane] = counts
            self._routes[arr.lane] = [
                _Vehicle(vid + i, routes[c]) for i, c in enumerate(choices)]
            vid += total
            self._pending[arr.lane] = 0
            self._spawn_ptr[arr.lane] = 0
        return self.observe()

    @property
    def done(self) -> bool:
        return self.t >= self.config.episode_len

    # -- dynamics ------------------------------------------------------------

    def step(self, actions: dict[str, int]) -> TrafficObservation:
        """Advance one control interval; actions latch at the boundary."""
        self._validate_actions(actions)
        self._apply_actions(actions)
        for _ in range(self.config.control_interval):
            if self.done:
                break
            self._tick()
        return self.observe()

    def _validate_actions(self, actions: dict[str, int]):
        if set(actions) != set(self.agents):
            raise ConfigurationError(
                f"actions must cover exactly the agents {self.agents}, got {sorted(actions)}")
        for a, v in actions.items():
            if v not in (0, 1):
                raise ConfigurationError(f"action for {a} must be 0 or 1, got {v!r}")

    def _apply_actions(self, actions: dict[str, int]):
        for iid in self.agents:
            if actions[iid] != 1 or self.in_yellow[iid]:
                continue
            phase = self.network.phases[iid][self.phase_idx[iid]]
            if self.elapsed[iid] >= phase.min_duration:
                self._start_yellow(iid)

    def _start_yellow(self, iid: str):
        if self.config.yellow > 0:
            self.in_yellow[iid] = True
            self.yellow_left[iid] = self.config.yellow
        else:
            self._advance_phase(iid)

    def _advance_phase(self, iid: str):
        self.phase_idx[iid] = (self.phase_idx[iid] + 1) % len(self.network.phases[iid])
        self.elapsed[iid] = 0.0
        self.in_yellow[iid] = False
        self.yellow_left[iid] = 0.0

    def _tick(self):
        t = self.t
        # signal timers
        for iid in self.agents:
            if self.in_yellow[iid]:
                self.yellow_left[iid] -= 1.0
                if self.yellow_left[iid] <= 0:
                    self._advance_phase(iid)
            else:
                self.elapsed[iid] += 1.0
                phase = self.network.phases[iid][self.phase_idx[iid]]
                if self.elapsed[iid] >= phase.max_duration:
                    self._start_yellow(iid)
        # transit completions: join the stop-line queue or finish the trip
        for li in range(len(self.lane_ids)):
            tr = self.transit[li]
            while tr and tr[0][0] <= t:
                ready, veh = tr[0]
                if veh.pos == len(veh.route) - 1:
                    tr.popleft()
                    self._finish(veh, ready)
                elif len(self.queue[li]) < self.capacity[li]:
                    tr.popleft()
                    veh.stop_t = t
                    self.queue[li].append(veh)
                    self.stop_sum[li] += t
                else:
                    break
        # green discharges, one vehicle per movement per second
        for iid in self.agents:
            if self.in_yellow[iid]:
                continue
            phase = self.network.phases[iid][self.phase_idx[iid]]
            for m in sorted(phase.movements):
                src, dst = self.movements[iid][m]
                q = self.queue[src]
                if not q:
                    continue
                head = q[0]
                if head.route[head.pos + 1] != dst:
                    continue
                if len(self.transit[dst]) + len(self.queue[dst]) >= self.capacity[dst]:
                    continue
                q.popleft()
                self.stop_sum[src] -= head.stop_t
                self._enter_lane(head, dst, t)
        # arrivals from pre-drawn demand
        for lane in sorted(self._demand):
            li = self.lane_index[lane]
            if t < self.config.episode_len:
                self._pending[lane] += int(self._demand[lane][t])
            while (self._pending[lane] > 0
                   and len(self.transit[li]) + len(self.queue[li]) < self.capacity[li]):
                veh = self._routes[lane][self._spawn_ptr[lane]]
                self._spawn_ptr[lane] += 1
                self._pending[lane] -= 1
                veh.spawn_t = t
                self.metrics.spawned += 1
                self.transit[li].append((t + self.ff_time[li], veh))
        self.t = t + 1
        # teleport sweep: stop-line waits are capped at the threshold
        for li in range(len(self.lane_ids)):
            q = self.queue[li]
            while q and (self.t - q[0].stop_t) >= self.config.teleport_threshold:
                veh = q.popleft()
                self.stop_sum[li] -= veh.stop_t
                veh.teleports += 1
                self.metrics.teleport_events += 1
                nxt = veh.route[veh.pos + 1]
                self._enter_lane(veh, nxt, self.t)  # exempt from the capacity gate

    def _enter_lane(self, veh: _Vehicle, lane: int, t: float):
        veh.pos += 1
        veh.stop_t = -1
        self.transit[lane].append((t + self.ff_time[lane], veh))

    def _finish(self, veh: _Vehicle, exit_t: float):
        if veh.teleports:
            self.metrics.teleported_finished += 1
            return
        self.metrics.completed += 1
        travel = exit_t - veh.spawn_t
        ff = sum(self.ff_time[l] for l in veh.route)
        self.metrics.travel_times.append(float(travel))
        self.metrics.delays.append(float(travel - ff))

    # -- accounting ----------------------------------------------------------

    def vehicles_on_network(self) -> int:
        return sum(len(tr) + len(q) for tr, q in zip(self.transit, self.queue))

    def conservation_counts(self) -> dict[str, int]:
        m = self.metrics
        m.on_network = self.vehicles_on_network()
        m.pending_demand = sum(self._pending.values())
        return {
            "spawned": m.spawned,
            "on_network": m.on_network,
            "completed": m.completed,
            "teleported_finished": m.teleported_finished,
        }

    def episode_metrics(self) -> EpisodeMetrics:
        self.conservation_counts()
        return self.metrics

    # -- rewards -------------------------------------------------------------

    def reward_sta(self, agent: str) -> float:
        din = sum(len(self.queue[l]) for l in self.in_lanes[agent]) / self.x_max
        dout = sum(len(self.queue[l]) for l in self.out_lanes[agent]) / self.x_max
        return abs(din - dout)

    def reward_wait(self, agent: str) -> float:
        total = 0
        wait_sum = 0.0
        for l in self.in_lanes[agent]:
            total += len(self.transit[l]) + len(self.queue[l])
            wait_sum += len(self.queue[l]) * self.t - self.stop_sum[l]
        if total == 0:
            return 0.0
        return wait_sum / (total * self.config.teleport_threshold)

    def total_reward(self, agent: str, alpha: float = 1.0, beta: float = 1.0) -> float:
        return -alpha * self.reward_sta(agent) - beta * self.reward_wait(agent)

    def global_reward(self, alpha: float = 1.0, beta: float = 1.0) -> float:
        """Shared reward: mean of the per-agent terms."""
        return float(np.mean([self.total_reward(a, alpha, beta) for a in self.agents]))

    # -- observations --------------------------------------------------------

    def observe(self) -> TrafficObservation:
        lane_state = {}
        net = self.network
        for li, lane in enumerate(self.lane_ids):
            nq = len(self.queue[li])
            ntr = len(self.transit[li])
            occ = nq + ntr
            queue_norm = nq / self.x_max
            speed_norm = 1.0 if occ == 0 else ntr / occ
            count_norm = min(1.0, occ / self.capacity[li])
            code, remaining = self._signal_state(lane)
            lane_state[lane] = (queue_norm, speed_norm, count_norm, code, remaining)
        permitted = {}
        phase_age = {}
        for iid in self.agents:
            phase = net.phases[iid][self.phase_idx[iid]]
            yellow = self.in_yellow[iid]
            for m in net.movements[iid]:
                permitted[(iid, m)] = (not yellow) and m in phase.movements
            if yellow:
                phase_age[iid] = (self.config.yellow - self.yellow_left[iid]) / self.config.yellow
            else:
                phase_age[iid] = min(1.0, self.elapsed[iid] / phase.max_duration)
        return TrafficObservation(self.t, lane_state, permitted, phase_age)

    def _signal_state(self, lane: str) -> tuple[float, float]:
        net = self.network
        iid = net.out_controller.get(lane)
        facing_out = iid is not None
        if iid is None:
            iid = net.in_feeder.get(lane)
        if iid is None:
            return 0.0, 1.0
        if self.in_yellow[iid]:
            return 0.5, self.yellow_left[iid] / self.config.yellow
        phase = net.phases[iid][self.phase_idx[iid]]
        li = self.lane_index[lane]
        if facing_out:
            green = any(m in phase.movements and src == li
                        for m, (src, _) in self.movements[iid].items())
        else:
            green = any(m in phase.movements and dst == li
                        for m, (_, dst) in self.movements[iid].items())
        remaining = max(0.0, phase.max_duration - self.elapsed[iid]) / phase.max_duration
        return (0.0 if green else 1.0), remaining

    def observe_flat(self, agent: str, max_lanes: int) -> np.ndarray:
        """Aligned flat state vector for baseline controllers: padded per-lane
        rows followed by a validity mask."""
        from .network import build_subgraph
        g = build_subgraph(self.network, agent, self.observe())
        rows = np.zeros((max_lanes, g.features.shape[1]))
        mask = np.zeros(max_lanes)
        n = min(g.n_vertices, max_lanes)
        rows[:n] = g.features[:n]
        mask[:n] = 1.0
        return np.concatenate([rows.reshape(-1), mask])


def run_baseline(network: RoadNetwork, config: SimConfig, controller: str,
                 seed: int = 0) -> EpisodeMetrics:
    """Run one episode under FixedTime (never switch; phases roll over at their
    maximum duration) or Random (switch with probability 0.5 per control step)."""
    if controller not in ("FixedTime", "Random"):
        raise ConfigurationError(f"unknown baseline controller: {controller}")
    sim = Simulator(network, config, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    while not sim.done:
        if controller == "Random":
            actions = {a: int(rng.integers(0, 2)) for a in sim.agents}
        else:
            actions = {a: 0 for a in sim.agents}
        sim.step(actions)
    return sim.episode_metrics()
