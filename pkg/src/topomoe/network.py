"""Road-network scenarios and per-agent dynamic sub-graphs.

A scenario is a JSON document with top-level keys ``lanes``, ``intersections``,
``connections``, ``phases`` and ``arrivals`` (durations in seconds, lengths in
meters; unknown keys are rejected). Each traffic-light agent observes a
sub-graph whose vertices are lanes and whose directed edges are the permitted
movements between lanes, plus a virtual mean-field vertex connected to every
local vertex.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError

D0 = 7  # per-lane feature width

# feature row layout:
#   0 queue length / global max capacity
#   1 mean vehicle speed / free-flow speed
#   2 vehicles on lane / lane capacity
#   3 signal code: 0 green, 0.5 yellow, 1 red
#   4 remaining time of the current signal state, normalized
#   5 lane is incoming to the agent's intersection
#   6 lane is outgoing from the agent's intersection

MF_VERTEX = "__mf__"
MF_EDGE_FEATURE = (1.0, 0.0)  # virtual edges: treated as permitted, zero phase age


@dataclass(frozen=True)
class LaneSpec:
    id: str
    length: float
    capacity: int
    free_flow_time: float


@dataclass(frozen=True)
class IntersectionSpec:
    id: str
    incoming: tuple[str, ...]
    outgoing: tuple[str, ...]


@dataclass(frozen=True)
class Connection:
    from_lane: str
    to_lane: str
    intersection: str
    movement: int


@dataclass(frozen=True)
class Phase:
    movements: frozenset[int]
    min_duration: float
    max_duration: float


@dataclass(frozen=True)
class RouteChoice:
    lanes: tuple[str, ...]
    weight: float


@dataclass(frozen=True)
class ArrivalSpec:
    lane: str
    rate: float
    routes: tuple[RouteChoice, ...]


@dataclass
class RoadNetwork:
    lanes: dict[str, LaneSpec]
    intersections: dict[str, IntersectionSpec]
    connections: list[Connection]
    phases: dict[str, list[Phase]]
    arrivals: list[ArrivalSpec]

    def __post_init__(self):
        self._validate()
        self.max_capacity = max(l.capacity for l in self.lanes.values())
        # controlling intersection of each lane's outflow (at most one)
        self.out_controller: dict[str, str] = {}
        for c in self.connections:
            prev = self.out_controller.get(c.from_lane)
            if prev is not None and prev != c.intersection:
                raise ConfigurationError(
                    f"lane {c.from_lane} is controlled by both {prev} and {c.intersection}")
            self.out_controller[c.from_lane] = c.intersection
        self.in_feeder: dict[str, str] = {}
        for c in self.connections:
            self.in_feeder.setdefault(c.to_lane, c.intersection)
        self.movements: dict[str, dict[int, Connection]] = {i: {} for i in self.intersections}
        for c in self.connections:
            self.movements[c.intersection][c.movement] = c

    def _validate(self):
        if not self.lanes:
            raise ConfigurationError("scenario has no lanes")
        members: set[str] = set()
        for spec in self.intersections.values():
            for lane in spec.incoming + spec.outgoing:
                if lane not in self.lanes:
                    raise ConfigurationError(f"intersection {spec.id} references unknown lane {lane}")
                members.add(lane)
        orphans = set(self.lanes) - members
        if orphans:
            raise ConfigurationError(f"lanes belong to no intersection: {sorted(orphans)}")
        seen_movements: dict[str, set[int]] = {i: set() for i in self.intersections}
        for c in self.connections:
            if c.from_lane not in self.lanes or c.to_lane not in self.lanes:
                raise ConfigurationError(f"connection {c} references unknown lanes")
            if c.intersection not in self.intersections:
                raise ConfigurationError(f"connection {c} references unknown intersection")
            if c.movement in seen_movements[c.intersection]:
                raise ConfigurationError(
                    f"duplicate movement index {c.movement} at {c.intersection}")
            seen_movements[c.intersection].add(c.movement)
        for iid in self.intersections:
            cycle = self.phases.get(iid)
            if not cycle:
                raise ConfigurationError(f"intersection {iid} has an empty phase cycle")
            covered: set[int] = set()
            for ph in cycle:
                unknown = ph.movements - seen_movements[iid]
                if unknown:
                    raise ConfigurationError(f"phase at {iid} uses unknown movements {sorted(unknown)}")
                if ph.min_duration < 0 or ph.max_duration < ph.min_duration:
                    raise ConfigurationError(f"bad phase durations at {iid}")
                covered |= ph.movements
            missing = seen_movements[iid] - covered
            if missing:
                raise ConfigurationError(f"movements {sorted(missing)} at {iid} appear in no phase")
        for arr in self.arrivals:
            if arr.lane not in self.lanes:
                raise ConfigurationError(f"arrival references unknown lane {arr.lane}")
            if arr.rate < 0:
                raise ConfigurationError("arrival rate must be non-negative")
            for rc in arr.routes:
                if rc.lanes[0] != arr.lane:
                    raise ConfigurationError(f"route {rc.lanes} does not start at {arr.lane}")
                for a, b in zip(rc.lanes, rc.lanes[1:]):
                    if not any(c.from_lane == a and c.to_lane == b for c in self.connections):
                        raise ConfigurationError(f"route step {a} -> {b} has no connection")

    def agent_ids(self) -> list[str]:
        return sorted(self.intersections)

    def neighbor_agents(self, agent: str) -> list[str]:
        mine = set(self.intersections[agent].incoming) | set(self.intersections[agent].outgoing)
        out = []
        for other, spec in self.intersections.items():
            if other == agent:
                continue
            if mine & (set(spec.incoming) | set(spec.outgoing)):
                out.append(other)
        return sorted(out)


def _only_keys(obj: dict, allowed: set[str], where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys {sorted(unknown)} in {where}")


def load_scenario(path) -> RoadNetwork:
    """Parse and validate a scenario file."""
    with open(path) as fh:
        doc = json.load(fh)
    return scenario_from_dict(doc)


def scenario_from_dict(doc: dict) -> RoadNetwork:
    _only_keys(doc, {"lanes", "intersections", "connections", "phases", "arrivals"}, "scenario")
    lanes = {}
    for item in doc.get("lanes", []):
        _only_keys(item, {"id", "length", "capacity", "free_flow_time"}, "lane")
        lanes[item["id"]] = LaneSpec(item["id"], float(item["length"]),
                                     int(item["capacity"]), float(item["free_flow_time"]))
    intersections = {}
    for item in doc.get("intersections", []):
        _only_keys(item, {"id", "incoming", "outgoing"}, "intersection")
        intersections[item["id"]] = IntersectionSpec(
            item["id"], tuple(item["incoming"]), tuple(item["outgoing"]))
    connections = []
    for item in doc.get("connections", []):
        _only_keys(item, {"from", "to", "intersection", "movement"}, "connection")
        connections.append(Connection(item["from"], item["to"],
                                      item["intersection"], int(item["movement"])))
    phases = {}
    for iid, cycle in doc.get("phases", {}).items():
        out = []
        for item in cycle:
            _only_keys(item, {"movements", "min_duration", "max_duration"}, f"phase of {iid}")
            out.append(Phase(frozenset(int(m) for m in item["movements"]),
                             float(item["min_duration"]), float(item["max_duration"])))
        phases[iid] = out
    arrivals = []
    for item in doc.get("arrivals", []):
        _only_keys(item, {"lane", "rate", "routes"}, "arrival")
        routes = []
        for rc in item["routes"]:
            _only_keys(rc, {"lanes", "weight"}, "route")
            routes.append(RouteChoice(tuple(rc["lanes"]), float(rc.get("weight", 1.0))))
        arrivals.append(ArrivalSpec(item["lane"], float(item["rate"]), tuple(routes)))
    return RoadNetwork(lanes, intersections, connections, phases, arrivals)


# ---------------------------------------------------------------------------
# dynamic observation snapshot (produced by the simulator each control step)


@dataclass
class TrafficObservation:
    """Per-lane dynamic state shared by all agents at one timestamp.

    ``lane_state`` rows carry the first five feature components (the in/out
    flags are agent-relative and filled in by :func:`build_subgraph`).
    """

    t: int
    lane_state: dict[str, tuple[float, float, float, float, float]]
    permitted: dict[tuple[str, int], bool]
    phase_age: dict[str, float]


def empty_observation(network: RoadNetwork) -> TrafficObservation:
    """Zero-traffic snapshot at t=0 (free-flow speeds, first phase active)."""
    lane_state = {}
    permitted = {}
    for iid, cycle in network.phases.items():
        for m in network.movements[iid]:
            permitted[(iid, m)] = m in cycle[0].movements
    for lane in network.lanes.values():
        iid = network.out_controller.get(lane.id) or network.in_feeder.get(lane.id)
        code, remaining = 0.0, 1.0
        if iid is not None:
            current = network.phases[iid][0].movements
            if lane.id in network.intersections[iid].incoming or network.out_controller.get(lane.id) == iid:
                green = any(c.from_lane == lane.id and c.movement in current
                            for c in network.movements[iid].values())
            else:
                green = any(c.to_lane == lane.id and c.movement in current
                            for c in network.movements[iid].values())
            code = 0.0 if green else 1.0
        lane_state[lane.id] = (0.0, 1.0, 0.0, code, remaining)
    return TrafficObservation(0, lane_state, permitted, {i: 0.0 for i in network.intersections})


# ---------------------------------------------------------------------------
# sub-graphs


@dataclass
class SubGraph:
    """Per-agent lane graph: vertices are lanes, edges permitted movements."""

    agent: str
    vertices: list[str]
    features: np.ndarray          # (N, D0)
    adjacency: np.ndarray         # (N, N) 0/1, entry (j, k) marks edge j -> k
    edge_features: np.ndarray     # (N, N, 2); zero rows off-edges
    t: int

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edge_list(self) -> list[tuple[int, int]]:
        j, k = np.nonzero(self.adjacency)
        return list(zip(j.tolist(), k.tolist()))

    def undirected_edges(self) -> list[tuple[int, int]]:
        seen = sorted({(min(j, k), max(j, k)) for j, k in self.edge_list()})
        return seen


@dataclass
class AugmentedSubGraph:
    """Sub-graph plus a virtual mean-field vertex linked from every base vertex."""

    base: SubGraph
    mf_feature: np.ndarray        # (D0,)

    def __post_init__(self):
        if self.mf_feature.shape != (D0,):
            raise ShapeError(f"mean-field vector must have shape ({D0},), got {self.mf_feature.shape}")
        if self.base.n_vertices == 0:
            raise ConfigurationError("cannot augment an empty sub-graph")
        n = self.base.n_vertices
        self.vertices = self.base.vertices + [MF_VERTEX]
        self.features = np.vstack([self.base.features, self.mf_feature[None, :]])
        adj = np.zeros((n + 1, n + 1), dtype=np.int8)
        adj[:n, :n] = self.base.adjacency
        adj[:n, n] = 1
        self.adjacency = adj
        ef = np.zeros((n + 1, n + 1, 2))
        ef[:n, :n] = self.base.edge_features
        ef[:n, n] = MF_EDGE_FEATURE
        self.edge_features = ef

    @property
    def n_vertices(self) -> int:
        return self.base.n_vertices + 1

    @property
    def t(self) -> int:
        return self.base.t

    def edge_list(self) -> list[tuple[int, int]]:
        j, k = np.nonzero(self.adjacency)
        return list(zip(j.tolist(), k.tolist()))

    def undirected_edges(self) -> list[tuple[int, int]]:
        return sorted({(min(j, k), max(j, k)) for j, k in self.edge_list()})


def receptive_lanes(network: RoadNetwork, agent: str) -> list[str]:
    """The agent's own lanes plus one-hop neighbor lanes feeding shared lanes."""
    if agent not in network.intersections:
        raise ConfigurationError(f"unknown agent id: {agent}")
    spec = network.intersections[agent]
    own = set(spec.incoming) | set(spec.outgoing)
    lanes = set(own)
    for other in network.neighbor_agents(agent):
        shared = own & (set(network.intersections[other].incoming)
                        | set(network.intersections[other].outgoing))
        for c in network.movements[other].values():
            if c.from_lane in shared:
                lanes.add(c.to_lane)
            if c.to_lane in shared:
                lanes.add(c.from_lane)
    return sorted(lanes)


def build_subgraph(network: RoadNetwork, agent: str, obs: TrafficObservation) -> SubGraph:
    """Assemble the agent's sub-graph from a traffic snapshot."""
    lanes = receptive_lanes(network, agent)
    index = {lane: i for i, lane in enumerate(lanes)}
    spec = network.intersections[agent]
    incoming, outgoing = set(spec.incoming), set(spec.outgoing)

    feats = np.zeros((len(lanes), D0))
    for lane, i in index.items():
        row = obs.lane_state[lane]
        feats[i, :5] = row
        feats[i, 5] = 1.0 if lane in incoming else 0.0
        feats[i, 6] = 1.0 if lane in outgoing else 0.0

    n = len(lanes)
    adj = np.zeros((n, n), dtype=np.int8)
    ef = np.zeros((n, n, 2))
    for iid in network.intersections:
        age = obs.phase_age.get(iid, 0.0)
        for c in network.movements[iid].values():
            j = index.get(c.from_lane)
            k = index.get(c.to_lane)
            if j is None or k is None:
                continue
            adj[j, k] = 1
            ef[j, k, 0] = 1.0 if obs.permitted.get((iid, c.movement), False) else 0.0
            ef[j, k, 1] = age
    return SubGraph(agent, lanes, feats, adj, ef, obs.t)


def augment_with_mf(g: SubGraph, mf: np.ndarray) -> AugmentedSubGraph:
    """Attach the virtual mean-field vertex (one new vertex, |N| new edges)."""
    return AugmentedSubGraph(g, np.asarray(mf, dtype=np.float64))


def global_feature_matrix(network: RoadNetwork, obs: TrafficObservation) -> np.ndarray:
    """Feature rows for every lane in the map, in sorted-lane order.

    The in/out flags here are map-level: a lane counts as incoming (outgoing)
    if it is incoming to (outgoing from) any intersection.
    """
    lanes = sorted(network.lanes)
    incoming = {l for spec in network.intersections.values() for l in spec.incoming}
    outgoing = {l for spec in network.intersections.values() for l in spec.outgoing}
    feats = np.zeros((len(lanes), D0))
    for i, lane in enumerate(lanes):
        feats[i, :5] = obs.lane_state[lane]
        feats[i, 5] = 1.0 if lane in incoming else 0.0
        feats[i, 6] = 1.0 if lane in outgoing else 0.0
    return feats


def compute_global_mf(all_vertex_features: np.ndarray) -> np.ndarray:
    """Component-wise mean over every lane feature row in the map."""
    if all_vertex_features.ndim != 2 or all_vertex_features.shape[0] == 0:
        raise ConfigurationError("global mean-field needs at least one vertex row")
    return all_vertex_features.mean(axis=0)


def compute_local_mf(g: SubGraph) -> np.ndarray:
    """Component-wise mean over the agent's own sub-graph vertices."""
    if g.n_vertices == 0:
        raise ConfigurationError("local mean-field needs at least one vertex")
    return g.features.mean(axis=0)
