"""Per-request time-expanded movement graphs.

Each train request gets a DAG whose nodes are (block, time interval, speed
state) triples and whose arcs are elementary movements: traversing one block
under one of four speed scenarios (at-speed / stopped at entry x exit),
standing at a station, departing, terminating, or the null arc that skips
the train entirely. Every arc that touches the line occupies exactly one
block over one contiguous interval of time steps, extended by the headway;
that makes path occupancy a sum of ranges and lets price lookups run off
per-block prefix sums.

Node identity is positional: the same (block, time, Stopped) label can
appear twice, once as an arrival point (outgoing arcs: dwells) and once as
a ready-to-depart point (outgoing arcs: traversals). Splitting the two
enforces the compulsory minimum dwell and keeps any single station visit
on one dwell arc, so occupancy counts never double inside one visit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from .instance import Block, BlockKind, Direction, Instance, TrainRequest, path_value

__all__ = [
    "SpeedState",
    "ArcKind",
    "Scenario",
    "NodeId",
    "MovementArc",
    "MovementGraph",
    "PathOccupancy",
    "build_graph",
    "path_occupancy",
    "verify_topological_order",
]


class SpeedState(str, Enum):
    FULL_SPEED = "F"
    STOPPED = "S"


class ArcKind(str, Enum):
    TRAVERSE = "traverse"
    DWELL = "dwell"
    SOURCE = "source"
    SINK = "sink"
    NULL = "null"


class Scenario(str, Enum):
    """Speed profile over one block: entry state then exit state."""

    FF = "FF"
    SF = "SF"
    FS = "FS"
    SS = "SS"


@dataclass(frozen=True)
class NodeId:
    block: int  # block id, -1 for the virtual source/sink
    time: int  # interval index, -1 for source, T for sink
    state: SpeedState


@dataclass(frozen=True)
class MovementArc:
    """View of one arc; occupation expands the stored range on demand."""

    index: int
    tail: NodeId
    head: NodeId
    kind: ArcKind
    scenario: Scenario | None
    occ_block: int  # -1 when the arc occupies nothing
    occ_start: int
    occ_end: int  # half-open

    @property
    def occupation(self) -> tuple[tuple[int, int], ...]:
        if self.occ_block < 0:
            return ()
        return tuple((self.occ_block, t) for t in range(self.occ_start, self.occ_end))


@dataclass
class PathOccupancy:
    """Block-time usage counts of one path (includes headway extension)."""

    entries: dict[tuple[int, int], int] = field(default_factory=dict)

    def flat(self, n_intervals: int) -> tuple[np.ndarray, np.ndarray]:
        """(sorted flattened block*T+t indices, counts) as float64 values."""
        if not self.entries:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        keys = sorted(self.entries)
        idx = np.array([b * n_intervals + t for b, t in keys], dtype=np.int64)
        val = np.array([self.entries[k] for k in keys], dtype=np.float64)
        return idx, val


_SRC_NODE = -2  # sentinel positions in the node table
_SNK_NODE = -1


class MovementGraph:
    """Immutable time-expanded DAG for one request.

    Arcs are stored in topological order as parallel arrays; `arc(i)` gives
    a typed view. `departure_values` maps source-arc index -> path value of
    departing at that instant.
    """

    def __init__(
        self,
        request_id: int,
        n_blocks: int,
        n_intervals: int,
        node_labels: list[NodeId],
        tails: np.ndarray,
        heads: np.ndarray,
        kinds: list[ArcKind],
        scenarios: list[Scenario | None],
        occ_blocks: np.ndarray,
        occ_starts: np.ndarray,
        occ_ends: np.ndarray,
        arc_values: np.ndarray,
        departure_values: dict[int, float],
        warning: str | None = None,
    ):
        self.request_id = request_id
        self.n_blocks = n_blocks
        self.n_intervals = n_intervals
        self.nodes = node_labels  # index 0 = source, last = sink
        self.tails = tails
        self.heads = heads
        self.kinds = kinds
        self.scenarios = scenarios
        self.occ_blocks = occ_blocks
        self.occ_starts = occ_starts
        self.occ_ends = occ_ends
        self.arc_values = arc_values  # departure value minus travel penalty
        self.departure_values = departure_values
        self.warning = warning
        self.source = 0
        self.sink = len(node_labels) - 1
        self.null_arc = int(np.flatnonzero(np.array([k == ArcKind.NULL for k in kinds]))[0])

    @property
    def n_arcs(self) -> int:
        return len(self.kinds)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def arc(self, index: int) -> MovementArc:
        return MovementArc(
            index=index,
            tail=self.nodes[self.tails[index]],
            head=self.nodes[self.heads[index]],
            kind=self.kinds[index],
            scenario=self.scenarios[index],
            occ_block=int(self.occ_blocks[index]),
            occ_start=int(self.occ_starts[index]),
            occ_end=int(self.occ_ends[index]),
        )

    def arcs(self) -> Iterator[MovementArc]:
        for i in range(self.n_arcs):
            yield self.arc(i)

    def out_arcs(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.tails == node)

    def dump_csv(self) -> str:
        """Debug arc listing; not a stable format."""
        lines = ["from_block,from_t,from_state,to_block,to_t,to_state,kind,n_occ"]
        for a in self.arcs():
            n_occ = max(0, a.occ_end - a.occ_start) if a.occ_block >= 0 else 0
            lines.append(
                f"{a.tail.block},{a.tail.time},{a.tail.state.value},"
                f"{a.head.block},{a.head.time},{a.head.state.value},"
                f"{a.kind.value},{n_occ}"
            )
        return "\n".join(lines) + "\n"


def verify_topological_order(graph: MovementGraph) -> bool:
    """True iff every arc goes from a lower node index to a higher one."""
    return bool(np.all(graph.tails < graph.heads))


def path_occupancy(graph: MovementGraph, path: list[int] | tuple[int, ...]) -> PathOccupancy:
    """Element-wise sum of the path's arc occupations.

    The arcs must form a connected source-to-sink walk of the graph.
    """
    if not path:
        raise ValueError("empty arc list")
    if graph.tails[path[0]] != graph.source:
        raise ValueError("path does not start at the source")
    for prev, nxt in zip(path, path[1:]):
        if graph.heads[prev] != graph.tails[nxt]:
            raise ValueError(f"arcs {prev} and {nxt} are not connected")
    if graph.heads[path[-1]] != graph.sink:
        raise ValueError("path does not end at the sink")
    occ = PathOccupancy()
    for a in path:
        b = int(graph.occ_blocks[a])
        if b < 0:
            continue
        for t in range(int(graph.occ_starts[a]), int(graph.occ_ends[a])):
            key = (b, t)
            occ.entries[key] = occ.entries.get(key, 0) + 1
    return occ


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

# Node tags during construction; arrival and ready stops are distinct so a
# station visit is always exactly one dwell arc (or a terminating sink).
_TAG_F = 0
_TAG_ARR = 1
_TAG_RDY = 2


def _scenario_steps(block: Block, instance: Instance) -> dict[Scenario, int]:
    g, r = instance.grid, instance.rules
    nom = block.nominal_traversal
    return {
        Scenario.FF: g.steps_up(nom),
        Scenario.SF: g.steps_up(nom + r.accel_penalty),
        Scenario.FS: g.steps_up(nom + r.decel_penalty),
        Scenario.SS: g.steps_up(nom + r.accel_penalty + r.decel_penalty),
    }


def build_graph(
    instance: Instance,
    request: TrainRequest,
    *,
    allow_signal_wait: bool = False,
    signal_wait_cap: int = 10,
    max_dwell_steps: int | None = None,
) -> MovementGraph:
    """Build the movement DAG for one request.

    Generates, for every departure step inside the request's window, all
    block traversals reachable before the latest arrival: at-speed and
    stop-at-next-station variants, station dwells in one-step increments
    from the compulsory minimum, and the null arc. Occupation of each arc
    extends `headway` beyond the physical interval. When no timed path
    fits, the graph still exists and carries only the null arc plus a
    warning.

    `allow_signal_wait` additionally emits traversals of signalling blocks
    slowed by up to `signal_wait_cap` steps of extra occupation (waiting on
    the open track); off by default since meets belong in stations.
    """
    grid, rules = instance.grid, instance.rules
    T = grid.intervals
    pos = instance.position_of
    o_pos, d_pos = pos(request.origin), pos(request.destination)
    if request.direction == Direction.UP:
        route = [instance.blocks[i] for i in range(o_pos, d_pos + 1)]
    else:
        route = [instance.blocks[i] for i in range(o_pos, d_pos - 1, -1)]
    L = len(route)
    steps = [_scenario_steps(b, instance) for b in route]
    headway_steps = grid.steps_up(rules.headway)
    min_dwell_steps = max(1, grid.steps_up(rules.min_dwell))
    stops = request.compulsory_stops

    # Exact minimal remaining steps to completion, by entry point and state.
    # at_speed[p]: entering route[p] at speed; ready[p]: standing, cleared to
    # go; arrive[p]: just stopped (owes the minimum dwell unless terminal).
    INF = 10 * T + 10
    at_speed = [INF] * L
    ready = [INF] * L
    arrive = [INF] * L
    arrive[L - 1] = 0
    for p in range(L - 2, -1, -1):
        nxt = route[p + 1]
        into_stop = arrive[p + 1] if p + 1 == L - 1 else (
            min_dwell_steps + ready[p + 1] if nxt.kind == BlockKind.STATION else INF
        )
        if p + 1 == L - 1 or nxt.kind == BlockKind.STATION:
            pass  # stopping allowed
        else:
            into_stop = INF
        at_full = at_speed[p + 1] if p + 1 < L - 1 else INF
        if nxt.id in stops or p + 1 == L - 1:
            at_full = INF  # must stop there
        at_speed[p] = min(steps[p][Scenario.FF] + at_full, steps[p][Scenario.FS] + into_stop)
        ready[p] = min(steps[p][Scenario.SF] + at_full, steps[p][Scenario.SS] + into_stop)
        if p + 1 < L - 1 and nxt.kind == BlockKind.STATION:
            arrive[p + 1] = min_dwell_steps + ready[p + 1]

    latest_step = min(T - 1, request.latest_arrival // grid.step)
    dep_lo = -(-(request.ideal_departure - request.departure_window_half) // grid.step)
    dep_hi = (request.ideal_departure + request.departure_window_half) // grid.step
    dep_lo = max(0, dep_lo)
    dep_hi = min(dep_hi, latest_step)

    node_key: dict[tuple[int, int, int], int] = {}
    node_list: list[tuple[int, int, int]] = []  # (route pos, time, tag)

    def intern(p: int, t: int, tag: int) -> int:
        key = (p, t, tag)
        idx = node_key.get(key)
        if idx is None:
            idx = len(node_list)
            node_key[key] = idx
            node_list.append(key)
        return idx

    # arcs as (tail_key_idx, head_key_idx or -1 for sink, kind, scenario,
    # occ_block, occ_start, occ_end, value)
    raw_arcs: list[tuple[int, int, ArcKind, Scenario | None, int, int, int, float]] = []
    source_arcs: list[tuple[int, float]] = []  # (head node, departure value)

    from collections import deque

    queue: deque[int] = deque()
    seeded = False
    for t_dep in range(dep_lo, dep_hi + 1):
        if t_dep + ready[0] > latest_step:
            continue
        value = path_value(request, t_dep * grid.step)
        head = intern(0, t_dep, _TAG_RDY)
        source_arcs.append((head, value))
        if head == len(node_list) - 1:
            queue.append(head)
        seeded = True

    penalty = rules.travel_penalty_per_step

    def emit(tail: int, head: int, kind: ArcKind, scen: Scenario | None,
             block: int, t0: int, t1: int) -> None:
        occ_end = min(t1 + headway_steps, T)
        dur = t1 - t0
        raw_arcs.append((tail, head, kind, scen, block, t0, occ_end, -penalty * dur))

    processed: set[int] = set()
    while queue:
        node = queue.popleft()
        if node in processed:
            continue
        processed.add(node)
        p, t, tag = node_list[node]
        block = route[p]

        if tag == _TAG_ARR:
            if p == L - 1:
                raise AssertionError("terminal arrivals take sink arcs, not dwells")
            cap = latest_step - t - ready[p]
            if max_dwell_steps is not None:
                cap = min(cap, max_dwell_steps)
            for d in range(min_dwell_steps, cap + 1):
                head = intern(p, t + d, _TAG_RDY)
                emit(node, head, ArcKind.DWELL, None, block.id, t, t + d)
                if head not in processed:
                    queue.append(head)
            continue

        # tag F or RDY: traverse route[p]
        entry_full = tag == _TAG_F
        scen_full = Scenario.FF if entry_full else Scenario.SF
        scen_stop = Scenario.FS if entry_full else Scenario.SS
        nxt = route[p + 1] if p + 1 < L else None
        assert nxt is not None
        waits = [0]
        if allow_signal_wait and block.kind == BlockKind.SIGNALLING:
            waits = list(range(0, signal_wait_cap + 1))

        for w in waits:
            # continue at speed into route[p+1]
            if p + 1 < L - 1 and nxt.id not in stops:
                dur = steps[p][scen_full] + w
                t2 = t + dur
                if t2 + at_speed[p + 1] <= latest_step:
                    head = intern(p + 1, t2, _TAG_F)
                    emit(node, head, ArcKind.TRAVERSE, scen_full, block.id, t, t2)
                    if head not in processed:
                        queue.append(head)
            # brake to a stop at the entry of route[p+1]
            if nxt.kind == BlockKind.STATION or p + 1 == L - 1:
                dur = steps[p][scen_stop] + w
                t2 = t + dur
                if p + 1 == L - 1:
                    if t2 <= latest_step:
                        head = intern(p + 1, t2, _TAG_ARR)
                        emit(node, head, ArcKind.TRAVERSE, scen_stop, block.id, t, t2)
                        if head not in processed:
                            queue.append(head)
                elif t2 + arrive[p + 1] <= latest_step:
                    head = intern(p + 1, t2, _TAG_ARR)
                    emit(node, head, ArcKind.TRAVERSE, scen_stop, block.id, t, t2)
                    if head not in processed:
                        queue.append(head)

    # Assemble: order nodes by (time, route pos, tag); source first, sink last.
    interior_order = sorted(range(len(node_list)), key=lambda i: (node_list[i][1], node_list[i][0], node_list[i][2]))
    renumber = {old: new + 1 for new, old in enumerate(interior_order)}
    n_nodes = len(node_list) + 2
    sink_idx = n_nodes - 1

    labels: list[NodeId] = [NodeId(block=-1, time=-1, state=SpeedState.STOPPED)]
    for old in interior_order:
        p, t, tag = node_list[old]
        state = SpeedState.FULL_SPEED if tag == _TAG_F else SpeedState.STOPPED
        labels.append(NodeId(block=route[p].id, time=t, state=state))
    labels.append(NodeId(block=-1, time=T, state=SpeedState.STOPPED))

    # Arc emission order: null, then source arcs by departure time, then
    # interior arcs grouped by tail in node order, then sink arcs by tail.
    tails: list[int] = [0]
    heads: list[int] = [sink_idx]
    kinds: list[ArcKind] = [ArcKind.NULL]
    scenarios: list[Scenario | None] = [None]
    occ_b: list[int] = [-1]
    occ_s: list[int] = [0]
    occ_e: list[int] = [0]
    values: list[float] = [0.0]
    departure_values: dict[int, float] = {}

    for head, value in source_arcs:
        if head not in processed:
            continue
        departure_values[len(tails)] = value
        tails.append(0)
        heads.append(renumber[head])
        kinds.append(ArcKind.SOURCE)
        scenarios.append(None)
        occ_b.append(-1)
        occ_s.append(0)
        occ_e.append(0)
        values.append(value)

    by_tail: dict[int, list[int]] = {}
    for i, arc in enumerate(raw_arcs):
        by_tail.setdefault(arc[0], []).append(i)
    sink_tails: list[int] = []
    for new_pos, old in enumerate(interior_order):
        p, t, tag = node_list[old]
        if p == L - 1 and tag == _TAG_ARR:
            sink_tails.append(old)
        for i in by_tail.get(old, ()):
            _, head, kind, scen, b, t0, t1, val = raw_arcs[i]
            tails.append(renumber[old])
            heads.append(renumber[head])
            kinds.append(kind)
            scenarios.append(scen)
            occ_b.append(b)
            occ_s.append(t0)
            occ_e.append(t1)
            values.append(val)
    for old in sink_tails:
        tails.append(renumber[old])
        heads.append(sink_idx)
        kinds.append(ArcKind.SINK)
        scenarios.append(None)
        occ_b.append(-1)
        occ_s.append(0)
        occ_e.append(0)
        values.append(0.0)

    warning = None
    if not sink_tails:
        warning = (
            f"request {request.id}: no timed path fits the departure window and "
            f"latest arrival; only the null path exists"
        )

    return MovementGraph(
        request_id=request.id,
        n_blocks=instance.n_blocks,
        n_intervals=T,
        node_labels=labels,
        tails=np.array(tails, dtype=np.int32),
        heads=np.array(heads, dtype=np.int32),
        kinds=kinds,
        scenarios=scenarios,
        occ_blocks=np.array(occ_b, dtype=np.int32),
        occ_starts=np.array(occ_s, dtype=np.int32),
        occ_ends=np.array(occ_e, dtype=np.int32),
        arc_values=np.array(values, dtype=np.float64),
        departure_values=departure_values,
        warning=warning,
    )
