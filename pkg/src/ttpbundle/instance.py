"""Problem instances: line topology, time grid, train requests.

An instance is a linear single-track line discretized into blocks (station
blocks where trains may meet, signalling blocks of capacity one where they
may not), a uniform time grid, and a list of train requests valued by a
triangular departure-time preference.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, BinaryIO, Iterable, Union

import numpy as np

__all__ = [
    "BlockKind",
    "Block",
    "TimeGrid",
    "TrainRequest",
    "Direction",
    "Rules",
    "Instance",
    "InstanceError",
    "load_instance",
    "save_instance",
    "generate_instance",
    "path_value",
    "TEMPLATES",
]


class InstanceError(ValueError):
    """Raised for schema or semantic violations; message carries a field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class BlockKind(str, Enum):
    STATION = "station"
    SIGNALLING = "signalling"


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class Block:
    id: int
    kind: BlockKind
    capacity: int
    nominal_traversal: int  # seconds at full speed, both ends at speed

    def check(self, path: str) -> None:
        if self.capacity < 1:
            raise InstanceError(f"{path}.capacity", "must be a positive integer")
        if self.kind == BlockKind.SIGNALLING and self.capacity != 1:
            raise InstanceError(
                f"{path}.capacity", "signalling blocks must have capacity 1"
            )
        if self.nominal_traversal <= 0:
            raise InstanceError(f"{path}.nominal_traversal_s", "must be > 0")


@dataclass(frozen=True)
class TimeGrid:
    step: int  # seconds
    horizon: int  # seconds

    def __post_init__(self):
        if self.step <= 0:
            raise InstanceError("grid.step_s", "must be > 0")
        if self.horizon <= 0 or self.horizon % self.step != 0:
            raise InstanceError(
                "grid.horizon_s", "must be a positive integer multiple of step_s"
            )

    @property
    def intervals(self) -> int:
        """Number of time intervals T."""
        return self.horizon // self.step

    def steps_up(self, seconds: int) -> int:
        """Duration in whole steps, rounded up (never understates occupation)."""
        return -(-seconds // self.step)


@dataclass(frozen=True)
class Rules:
    min_dwell: int = 120  # seconds, compulsory waiting when stopped at a station
    headway: int = 180  # seconds of extra block occupation after a movement
    accel_penalty: int = 60  # seconds added when starting from standstill
    decel_penalty: int = 60  # seconds added when braking to a stop
    travel_penalty_per_step: float = 0.0  # optional value penalty per occupied step

    def check(self) -> None:
        for name in ("min_dwell", "headway", "accel_penalty", "decel_penalty"):
            if getattr(self, name) < 0:
                raise InstanceError(f"rules.{name}_s", "must be >= 0")
        if self.travel_penalty_per_step < 0:
            raise InstanceError("rules.travel_penalty_per_step", "must be >= 0")


@dataclass(frozen=True)
class TrainRequest:
    id: int
    origin: int  # station block id
    destination: int  # station block id
    direction: Direction
    ideal_departure: int  # seconds from horizon start
    departure_window_half: int  # seconds
    latest_arrival: int  # seconds from horizon start
    peak_value: float
    compulsory_stops: frozenset[int] = frozenset()

    def check(self, path: str) -> None:
        if self.origin == self.destination:
            raise InstanceError(f"{path}.destination", "must differ from origin")
        if self.latest_arrival <= self.ideal_departure:
            raise InstanceError(
                f"{path}.latest_arrival_s", "must be greater than ideal_departure_s"
            )
        if self.peak_value <= 0:
            raise InstanceError(f"{path}.peak_value", "must be > 0")
        if self.departure_window_half < 0:
            raise InstanceError(f"{path}.window_half_s", "must be >= 0")


@dataclass(frozen=True)
class Instance:
    blocks: tuple[Block, ...]
    grid: TimeGrid
    requests: tuple[TrainRequest, ...]
    rules: Rules = field(default_factory=Rules)

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise InstanceError("blocks", "must not be empty")
        ids = [b.id for b in self.blocks]
        if len(set(ids)) != len(ids):
            raise InstanceError("blocks", "block ids must be unique")
        for i, b in enumerate(self.blocks):
            b.check(f"blocks[{i}]")
        if self.blocks[0].kind != BlockKind.STATION:
            raise InstanceError("blocks[0].kind", "line must start with a station")
        if self.blocks[-1].kind != BlockKind.STATION:
            raise InstanceError(
                f"blocks[{len(self.blocks) - 1}].kind", "line must end with a station"
            )
        self.rules.check()
        station_ids = {b.id for b in self.blocks if b.kind == BlockKind.STATION}
        pos = self.position_of
        for i, r in enumerate(self.requests):
            r.check(f"requests[{i}]")
            for fname in ("origin", "destination"):
                bid = getattr(r, fname)
                if bid not in station_ids:
                    raise InstanceError(
                        f"requests[{i}].{fname}", f"block {bid} is not a station"
                    )
            expected = (
                Direction.UP if pos(r.origin) < pos(r.destination) else Direction.DOWN
            )
            if r.direction != expected:
                raise InstanceError(
                    f"requests[{i}].direction",
                    "inconsistent with origin/destination order along the line",
                )
            for s in sorted(r.compulsory_stops):
                if s not in station_ids:
                    raise InstanceError(
                        f"requests[{i}].stops", f"block {s} is not a station"
                    )
                lo, hi = sorted((pos(r.origin), pos(r.destination)))
                if not (lo < pos(s) < hi):
                    raise InstanceError(
                        f"requests[{i}].stops",
                        f"block {s} is not strictly between origin and destination",
                    )

    @property
    def position_of(self):
        """Map block id -> index along the line."""
        table = {b.id: i for i, b in enumerate(self.blocks)}
        return table.__getitem__

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_stations(self) -> int:
        return sum(1 for b in self.blocks if b.kind == BlockKind.STATION)

    def capacities(self) -> np.ndarray:
        """Per-block capacities in line order."""
        return np.array([b.capacity for b in self.blocks], dtype=np.float64)

    def block_by_id(self, bid: int) -> Block:
        return self.blocks[self.position_of(bid)]


def path_value(request: TrainRequest, actual_departure: int) -> float:
    """Utility of a path departing at the given instant (seconds).

    Triangular: peak at the ideal departure, linearly decreasing to zero at
    the edges of the departure window. Departures outside the window are
    the caller's bug and are rejected.
    """
    offset = abs(actual_departure - request.ideal_departure)
    half = request.departure_window_half
    if offset > half:
        raise ValueError(
            f"departure {actual_departure} outside window of request {request.id}"
        )
    if half == 0:
        return float(request.peak_value)
    return request.peak_value * (1.0 - offset / half)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

_GRID_KEYS = {"step_s", "horizon_s"}
_BLOCK_KEYS = {"id", "kind", "capacity", "nominal_traversal_s"}
_RULES_KEYS = {
    "min_dwell_s",
    "headway_s",
    "accel_penalty_s",
    "decel_penalty_s",
    "travel_penalty_per_step",  # optional, defaults to 0
}
_REQUEST_KEYS = {
    "id",
    "origin",
    "destination",
    "ideal_departure_s",
    "window_half_s",
    "latest_arrival_s",
    "peak_value",
    "stops",
}
_TOP_KEYS = {"grid", "blocks", "rules", "requests"}


def _require(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        raise InstanceError(f"{path}.{key}", "missing required field")
    return obj[key]


def _as_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InstanceError(path, f"expected an integer, got {type(value).__name__}")
    return value


def _as_number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceError(path, f"expected a number, got {type(value).__name__}")
    return float(value)


def _reject_unknown(obj: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise InstanceError(f"{path}.{unknown[0]}", "unknown field")


def load_instance(source: Union[bytes, BinaryIO]) -> Instance:
    """Parse and validate an instance from a UTF-8 JSON byte stream."""
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InstanceError("$", f"not valid UTF-8 JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise InstanceError("$", "top level must be an object")
    _reject_unknown(doc, _TOP_KEYS, "$")

    grid_obj = _require(doc, "grid", "$")
    if not isinstance(grid_obj, dict):
        raise InstanceError("grid", "must be an object")
    _reject_unknown(grid_obj, _GRID_KEYS, "grid")
    grid = TimeGrid(
        step=_as_int(_require(grid_obj, "step_s", "grid"), "grid.step_s"),
        horizon=_as_int(_require(grid_obj, "horizon_s", "grid"), "grid.horizon_s"),
    )

    blocks_obj = _require(doc, "blocks", "$")
    if not isinstance(blocks_obj, list):
        raise InstanceError("blocks", "must be an array")
    blocks = []
    for i, b in enumerate(blocks_obj):
        path = f"blocks[{i}]"
        if not isinstance(b, dict):
            raise InstanceError(path, "must be an object")
        _reject_unknown(b, _BLOCK_KEYS, path)
        kind_raw = _require(b, "kind", path)
        try:
            kind = BlockKind(kind_raw)
        except ValueError:
            raise InstanceError(
                f"{path}.kind", f"must be 'station' or 'signalling', got {kind_raw!r}"
            ) from None
        blocks.append(
            Block(
                id=_as_int(_require(b, "id", path), f"{path}.id"),
                kind=kind,
                capacity=_as_int(_require(b, "capacity", path), f"{path}.capacity"),
                nominal_traversal=_as_int(
                    _require(b, "nominal_traversal_s", path),
                    f"{path}.nominal_traversal_s",
                ),
            )
        )

    rules_obj = _require(doc, "rules", "$")
    if not isinstance(rules_obj, dict):
        raise InstanceError("rules", "must be an object")
    _reject_unknown(rules_obj, _RULES_KEYS, "rules")
    rules = Rules(
        min_dwell=_as_int(_require(rules_obj, "min_dwell_s", "rules"), "rules.min_dwell_s"),
        headway=_as_int(_require(rules_obj, "headway_s", "rules"), "rules.headway_s"),
        accel_penalty=_as_int(
            _require(rules_obj, "accel_penalty_s", "rules"), "rules.accel_penalty_s"
        ),
        decel_penalty=_as_int(
            _require(rules_obj, "decel_penalty_s", "rules"), "rules.decel_penalty_s"
        ),
        travel_penalty_per_step=_as_number(
            rules_obj.get("travel_penalty_per_step", 0.0),
            "rules.travel_penalty_per_step",
        ),
    )

    requests_obj = _require(doc, "requests", "$")
    if not isinstance(requests_obj, list):
        raise InstanceError("requests", "must be an array")
    block_pos = {b.id: i for i, b in enumerate(blocks)}
    requests = []
    for i, r in enumerate(requests_obj):
        path = f"requests[{i}]"
        if not isinstance(r, dict):
            raise InstanceError(path, "must be an object")
        _reject_unknown(r, _REQUEST_KEYS, path)
        origin = _as_int(_require(r, "origin", path), f"{path}.origin")
        dest = _as_int(_require(r, "destination", path), f"{path}.destination")
        for fname, bid in (("origin", origin), ("destination", dest)):
            if bid not in block_pos:
                raise InstanceError(f"{path}.{fname}", f"unknown block id {bid}")
        stops_raw = _require(r, "stops", path)
        if not isinstance(stops_raw, list):
            raise InstanceError(f"{path}.stops", "must be an array")
        stops = frozenset(_as_int(s, f"{path}.stops[{j}]") for j, s in enumerate(stops_raw))
        for s in sorted(stops):
            if s not in block_pos:
                raise InstanceError(f"{path}.stops", f"unknown block id {s}")
        direction = (
            Direction.UP if block_pos[origin] < block_pos[dest] else Direction.DOWN
        )
        requests.append(
            TrainRequest(
                id=_as_int(_require(r, "id", path), f"{path}.id"),
                origin=origin,
                destination=dest,
                direction=direction,
                ideal_departure=_as_int(
                    _require(r, "ideal_departure_s", path), f"{path}.ideal_departure_s"
                ),
                departure_window_half=_as_int(
                    _require(r, "window_half_s", path), f"{path}.window_half_s"
                ),
                latest_arrival=_as_int(
                    _require(r, "latest_arrival_s", path), f"{path}.latest_arrival_s"
                ),
                peak_value=_as_number(
                    _require(r, "peak_value", path), f"{path}.peak_value"
                ),
                compulsory_stops=stops,
            )
        )

    req_ids = [r.id for r in requests]
    if len(set(req_ids)) != len(req_ids):
        raise InstanceError("requests", "request ids must be unique")
    return Instance(blocks=tuple(blocks), grid=grid, requests=tuple(requests), rules=rules)


def save_instance(instance: Instance) -> bytes:
    """Serialize to canonical UTF-8 JSON (stable key order, 2-space indent)."""
    doc: dict[str, Any] = {
        "grid": {"step_s": instance.grid.step, "horizon_s": instance.grid.horizon},
        "blocks": [
            {
                "id": b.id,
                "kind": b.kind.value,
                "capacity": b.capacity,
                "nominal_traversal_s": b.nominal_traversal,
            }
            for b in instance.blocks
        ],
        "rules": {
            "min_dwell_s": instance.rules.min_dwell,
            "headway_s": instance.rules.headway,
            "accel_penalty_s": instance.rules.accel_penalty,
            "decel_penalty_s": instance.rules.decel_penalty,
        },
        "requests": [
            {
                "id": r.id,
                "origin": r.origin,
                "destination": r.destination,
                "ideal_departure_s": r.ideal_departure,
                "window_half_s": r.departure_window_half,
                "latest_arrival_s": r.latest_arrival,
                "peak_value": r.peak_value if r.peak_value % 1 else int(r.peak_value),
                "stops": sorted(r.compulsory_stops),
            }
            for r in instance.requests
        ],
    }
    if instance.rules.travel_penalty_per_step:
        doc["rules"]["travel_penalty_per_step"] = instance.rules.travel_penalty_per_step
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Template generator
# ---------------------------------------------------------------------------

#: (stations, total blocks) per named template of increasing line length.
TEMPLATES: dict[str, tuple[int, int]] = {
    "s1": (5, 14),
    "s2": (7, 23),
    "s3": (14, 51),
    "s4": (19, 70),
}

_GENERATOR_DEFAULTS: dict[str, Any] = {
    "step_s": 30,
    "horizon_s": 24 * 3600,
    "station_capacity": 2,
    "station_nominal_range": (60, 180),
    "signal_nominal_range": (120, 360),
    "min_dwell_s": 120,
    "headway_s": 180,
    "accel_penalty_s": 60,
    "decel_penalty_s": 60,
    "n_requests": 32,
    "n_passenger": 6,
    "peak_freight": 500,
    "peak_passenger": 1000,
    "window_half_s": 1800,
    # latest_arrival = ideal + latest_slack_factor * (fastest route time) + window_half
    "latest_slack_factor": 2.0,
    "stations": None,  # custom template only
    "blocks": None,  # custom template only
}


def _station_layout(n_stations: int, n_blocks: int) -> list[BlockKind]:
    """Linear layout: stations at both ends, signalling blocks split across gaps."""
    if n_stations < 2 or n_blocks < n_stations:
        raise InstanceError("template", "need >= 2 stations and blocks >= stations")
    gaps = n_stations - 1
    n_sig = n_blocks - n_stations
    base, rem = divmod(n_sig, gaps)
    kinds: list[BlockKind] = [BlockKind.STATION]
    for g in range(gaps):
        run = base + (1 if g < rem else 0)
        kinds.extend([BlockKind.SIGNALLING] * run)
        kinds.append(BlockKind.STATION)
    assert len(kinds) == n_blocks
    return kinds


def generate_instance(template: str, seed: int, overrides: dict[str, Any] | None = None) -> Instance:
    """Build a deterministic synthetic instance for a named line template.

    Block traversal times are drawn from a seeded generator within the
    configured ranges; requests run between the line termini with ideal
    departures spread across the horizon. Identical (template, seed,
    overrides) always produce byte-identical instances.
    """
    key = template.lower()
    if key != "custom" and key not in TEMPLATES:
        raise InstanceError("template", f"unknown template {template!r}")
    params = dict(_GENERATOR_DEFAULTS)
    for name, value in (overrides or {}).items():
        if name not in params:
            raise InstanceError(f"overrides.{name}", "unknown override")
        params[name] = value

    if key == "custom":
        if not params["stations"] or not params["blocks"]:
            raise InstanceError(
                "overrides.stations", "custom template requires stations and blocks"
            )
        n_stations, n_blocks = int(params["stations"]), int(params["blocks"])
    else:
        n_stations, n_blocks = TEMPLATES[key]

    n_requests = int(params["n_requests"])
    n_passenger = int(params["n_passenger"])
    if n_requests < 1 or not (0 <= n_passenger <= n_requests):
        raise InstanceError("overrides.n_requests", "invalid request counts")
    for rng_name in ("station_nominal_range", "signal_nominal_range"):
        lo, hi = params[rng_name]
        if not (0 < lo <= hi):
            raise InstanceError(f"overrides.{rng_name}", "invalid range")
    if int(params["station_capacity"]) < 1:
        raise InstanceError("overrides.station_capacity", "must be >= 1")

    rng = np.random.default_rng(seed)
    grid = TimeGrid(step=int(params["step_s"]), horizon=int(params["horizon_s"]))
    kinds = _station_layout(n_stations, n_blocks)

    blocks = []
    for i, kind in enumerate(kinds):
        lo, hi = (
            params["station_nominal_range"]
            if kind == BlockKind.STATION
            else params["signal_nominal_range"]
        )
        nominal = int(rng.integers(lo, hi + 1))
        capacity = int(params["station_capacity"]) if kind == BlockKind.STATION else 1
        blocks.append(Block(id=i, kind=kind, capacity=capacity, nominal_traversal=nominal))

    rules = Rules(
        min_dwell=int(params["min_dwell_s"]),
        headway=int(params["headway_s"]),
        accel_penalty=int(params["accel_penalty_s"]),
        decel_penalty=int(params["decel_penalty_s"]),
    )

    # Fastest possible end-to-end run: accelerate once, brake once.
    route_fast = (
        sum(b.nominal_traversal for b in blocks)
        + rules.accel_penalty
        + rules.decel_penalty
    )
    window_half = int(params["window_half_s"])
    slack = int(math.ceil(float(params["latest_slack_factor"]) * route_fast))
    first, last = blocks[0].id, blocks[-1].id

    # Passenger slots spread evenly through the request list, as on a mixed
    # traffic day; departures drawn uniformly inside the feasible band.
    passenger_slots = set(
        int(round(i * n_requests / n_passenger)) for i in range(n_passenger)
    ) if n_passenger else set()
    latest_margin = slack + window_half
    dep_lo = window_half
    dep_hi = max(dep_lo + 1, grid.horizon - latest_margin - window_half)
    requests = []
    for i in range(n_requests):
        ideal = int(rng.integers(dep_lo, dep_hi))
        up = bool(rng.integers(0, 2))
        origin, dest = (first, last) if up else (last, first)
        is_passenger = i in passenger_slots
        requests.append(
            TrainRequest(
                id=i,
                origin=origin,
                destination=dest,
                direction=Direction.UP if up else Direction.DOWN,
                ideal_departure=ideal,
                departure_window_half=window_half,
                latest_arrival=min(grid.horizon, ideal + latest_margin),
                peak_value=float(
                    params["peak_passenger"] if is_passenger else params["peak_freight"]
                ),
                compulsory_stops=frozenset(),
            )
        )

    return Instance(blocks=tuple(blocks), grid=grid, requests=tuple(requests), rules=rules)
