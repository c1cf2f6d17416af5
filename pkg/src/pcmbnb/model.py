"""PCM instance data: generators, lines, renewable farms and load profiles.

Instances are immutable once built. ``generate_instance`` derives perturbed
copies of a base instance, ``pjm5_base`` and ``ieee118_template`` build the
bundled systems.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

SCHEMA = "pcm-instance/1"


class InstanceError(ValueError):
    """Raised for malformed or inconsistent instance data."""


def _frozen(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise InstanceError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Generator:
    p_max: float
    p_min: float
    ramp_up: float
    ramp_down: float
    t_on: int
    t_off: int
    marginal_cost: float
    bus_id: int
    name: str = ""

    def __post_init__(self):
        if not 0 <= self.p_min <= self.p_max:
            raise InstanceError(f"generator {self.name}: need 0 <= p_min <= p_max")
        if self.ramp_up <= 0 or self.ramp_down <= 0:
            raise InstanceError(f"generator {self.name}: ramp rates must be positive")
        if self.t_on < 1 or self.t_off < 1:
            raise InstanceError(f"generator {self.name}: t_on/t_off must be >= 1")


@dataclass(frozen=True)
class Line:
    p_min: float
    p_max: float
    from_bus: int
    to_bus: int
    susceptance: float = 1.0

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise InstanceError("line: p_min > p_max")


@dataclass(frozen=True, eq=False)
class RenewableFarm:
    kind: str
    bus_id: int
    forecast: np.ndarray
    curtail_penalty: float

    def __post_init__(self):
        if self.kind not in ("wind", "solar"):
            raise InstanceError(f"unknown farm kind {self.kind!r}")
        object.__setattr__(self, "forecast", _frozen(self.forecast, 1))
        if np.any(self.forecast < 0):
            raise InstanceError("farm forecast must be non-negative")


@dataclass(frozen=True, eq=False)
class PcmInstance:
    horizon_T: int
    buses: tuple
    generators: tuple
    lines: tuple
    farms: tuple
    load: np.ndarray  # bus x T
    reserve_up: np.ndarray
    reserve_down: np.ndarray
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        for attr in ("buses", "generators", "lines", "farms"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        object.__setattr__(self, "load", _frozen(self.load, 2))
        object.__setattr__(self, "reserve_up", _frozen(self.reserve_up, 1))
        object.__setattr__(self, "reserve_down", _frozen(self.reserve_down, 1))
        T = self.horizon_T
        if T < 1:
            raise InstanceError("horizon must be >= 1")
        if self.load.shape != (len(self.buses), T):
            raise InstanceError(f"load shape {self.load.shape} != ({len(self.buses)}, {T})")
        if np.any(self.load < 0):
            raise InstanceError("load must be non-negative")
        if len(self.reserve_up) != T or len(self.reserve_down) != T:
            raise InstanceError("reserve series must have length T")
        bus_set = set(self.buses)
        if len(bus_set) != len(self.buses):
            raise InstanceError("duplicate bus ids")
        for g in self.generators:
            if g.bus_id not in bus_set:
                raise InstanceError(f"generator {g.name} on unknown bus {g.bus_id}")
        for ln in self.lines:
            if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
                raise InstanceError("line references unknown bus")
        for f in self.farms:
            if f.bus_id not in bus_set:
                raise InstanceError("farm on unknown bus")
            if len(f.forecast) != T:
                raise InstanceError("farm forecast length must equal T")

    @property
    def system_load(self) -> np.ndarray:
        """D_t, the load summed over buses."""
        return self.load.sum(axis=0)

    @property
    def total_capacity(self) -> float:
        return float(sum(g.p_max for g in self.generators))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "name": self.name,
            "horizon_T": self.horizon_T,
            "seed": self.seed,
            "buses": list(self.buses),
            "generators": [
                {
                    "name": g.name, "p_max": g.p_max, "p_min": g.p_min,
                    "ramp_up": g.ramp_up, "ramp_down": g.ramp_down,
                    "t_on": g.t_on, "t_off": g.t_off,
                    "marginal_cost": g.marginal_cost, "bus_id": g.bus_id,
                }
                for g in self.generators
            ],
            "lines": [
                {"p_min": ln.p_min, "p_max": ln.p_max, "from_bus": ln.from_bus,
                 "to_bus": ln.to_bus, "susceptance": ln.susceptance}
                for ln in self.lines
            ],
            "farms": [
                {"kind": f.kind, "bus_id": f.bus_id, "curtail_penalty": f.curtail_penalty,
                 "forecast": f.forecast.tolist()}
                for f in self.farms
            ],
            "load": self.load.tolist(),
            "reserve_up": self.reserve_up.tolist(),
            "reserve_down": self.reserve_down.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcmInstance":
        if d.get("schema") != SCHEMA:
            raise InstanceError(f"unsupported instance schema {d.get('schema')!r}")
        try:
            return cls(
                horizon_T=int(d["horizon_T"]),
                buses=[int(b) for b in d["buses"]],
                generators=[Generator(**g) for g in d["generators"]],
                lines=[Line(**ln) for ln in d["lines"]],
                farms=[RenewableFarm(**f) for f in d["farms"]],
                load=d["load"],
                reserve_up=d["reserve_up"],
                reserve_down=d["reserve_down"],
                seed=int(d.get("seed", 0)),
                name=d.get("name", ""),
            )
        except (KeyError, TypeError) as exc:
            raise InstanceError(f"malformed instance document: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load_file(cls, path) -> "PcmInstance":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def __eq__(self, other):
        if not isinstance(other, PcmInstance):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def generate_instance(base: PcmInstance, noise_sigma: float, seed: int) -> PcmInstance:
    """Perturb load and renewable forecasts by truncated multiplicative noise.

    Each cell is multiplied by ``max(0, 1 + N(0, noise_sigma))``. Loads are drawn
    first (bus-major), then each farm's forecast in farm order.
    """
    if noise_sigma < 0:
        raise InstanceError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    load_mult = np.maximum(0.0, 1.0 + rng.normal(0.0, noise_sigma, size=base.load.shape))
    farms = []
    for f in base.farms:
        mult = np.maximum(0.0, 1.0 + rng.normal(0.0, noise_sigma, size=f.forecast.shape))
        farms.append(replace(f, forecast=f.forecast * mult))
    return replace(base, load=base.load * load_mult, farms=tuple(farms), seed=seed)


def _read_template(name: str) -> dict:
    text = resources.files("pcmbnb").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def _tile(profile: Sequence[float], T: int) -> np.ndarray:
    p = np.asarray(profile, dtype=float)
    reps = -(-T // len(p))
    return np.tile(p, reps)[:T]


def pjm5_base(T: int) -> PcmInstance:
    """The 5-bus PJM system with five thermal generators, two renewable farms and six lines.

    Ramp percentages in the template are percent of ``p_max`` per hour. The
    bundled 24-hour profiles are repeated to fill the horizon.
    """
    if T < 2:
        raise InstanceError("pjm5_base needs T >= 2")
    tpl = _read_template("pjm5")
    gens = [
        Generator(
            p_max=g["p_max"], p_min=g["p_min"],
            ramp_up=g["p_max"] * g["ramp_up_pct"] / 100.0,
            ramp_down=g["p_max"] * g["ramp_down_pct"] / 100.0,
            t_on=g["t_on"], t_off=g["t_off"],
            marginal_cost=g["marginal_cost"], bus_id=g["bus_id"], name=g["name"],
        )
        for g in tpl["generators"]
    ]
    lines = [Line(**ln) for ln in tpl["lines"]]
    system = _tile(tpl["profiles"]["load"], T)
    share = np.asarray(tpl["load_share"], dtype=float)
    load = np.outer(share, system)
    farms = [
        RenewableFarm(kind=f["kind"], bus_id=f["bus_id"],
                      forecast=_tile(tpl["profiles"][f["profile"]], T),
                      curtail_penalty=f["curtail_penalty"])
        for f in tpl["farms"]
    ]
    return PcmInstance(
        horizon_T=T, buses=tpl["buses"], generators=gens, lines=lines, farms=farms,
        load=load,
        reserve_up=tpl["reserve_up_frac"] * system,
        reserve_down=tpl["reserve_down_frac"] * system,
        seed=0, name="pjm5",
    )


IEEE118_CAPACITY = 9966.2


def ieee118_template(T: int) -> PcmInstance:
    """Synthetic system with the IEEE 118-bus case dimensions.

    118 buses, 54 generators, 186 branches, a wind farm at bus 26 and a solar
    farm at bus 55. The network and unit data are generated deterministically;
    this template exists for problem-size checks, not for realistic dispatch.
    """
    if T < 2:
        raise InstanceError("ieee118_template needs T >= 2")
    rng = np.random.default_rng(118)
    buses = list(range(1, 119))
    raw = rng.uniform(50.0, 400.0, size=54)
    caps = np.round(raw / raw.sum() * IEEE118_CAPACITY, 1)
    caps[-1] = round(IEEE118_CAPACITY - caps[:-1].sum(), 1)
    gen_buses = sorted(rng.choice(buses, size=54, replace=False).tolist())
    gens = [
        Generator(
            p_max=float(c), p_min=round(0.2 * float(c), 1),
            ramp_up=0.4 * float(c), ramp_down=0.4 * float(c),
            t_on=int(rng.integers(1, 4)), t_off=int(rng.integers(1, 4)),
            marginal_cost=round(float(rng.uniform(10.0, 45.0)), 2),
            bus_id=int(b), name=f"G{i + 1}",
        )
        for i, (c, b) in enumerate(zip(caps, gen_buses))
    ]
    lines = [Line(p_min=-500.0, p_max=500.0, from_bus=b, to_bus=b % 118 + 1) for b in buses]
    chords = 186 - len(lines)
    for k in range(chords):
        a = 1 + (k * 7) % 118
        b = 1 + (a - 1 + 13 + k % 29) % 118
        lines.append(Line(p_min=-300.0, p_max=300.0, from_bus=a, to_bus=b))
    hours = np.arange(T)
    daily = 0.75 + 0.2 * np.sin(2 * np.pi * (hours - 8) / 24.0)
    system = 0.3 * IEEE118_CAPACITY * 2.0 * daily
    share = rng.uniform(0.5, 1.5, size=118)
    share /= share.sum()
    load = np.outer(share, system)
    wind = 200.0 + 60.0 * np.cos(2 * np.pi * hours / 24.0)
    solar = np.maximum(0.0, 300.0 * np.sin(np.pi * (hours % 24 - 6) / 12.0))
    farms = [
        RenewableFarm(kind="wind", bus_id=26, forecast=wind, curtail_penalty=50.0),
        RenewableFarm(kind="solar", bus_id=55, forecast=solar, curtail_penalty=50.0),
    ]
    return PcmInstance(
        horizon_T=T, buses=buses, generators=gens, lines=lines, farms=farms, load=load,
        reserve_up=0.1 * system, reserve_down=0.05 * system, seed=118, name="ieee118",
    )


def tiny_instance(n_gen: int, T: int, seed: int) -> PcmInstance:
    """Random single-bus instance small enough for exhaustive enumeration.

    Used by the oracle checks and the quick-start examples. Instances are built
    to be feasible with every unit committed in every hour.
    """
    rng = np.random.default_rng(seed)
    gens = []
    for i in range(n_gen):
        p_max = float(rng.uniform(80.0, 200.0))
        p_min = round(p_max * float(rng.uniform(0.2, 0.5)), 3)
        gens.append(Generator(
            p_max=round(p_max, 3), p_min=p_min,
            ramp_up=round(p_max * float(rng.uniform(0.5, 1.0)), 3),
            ramp_down=round(p_max * float(rng.uniform(0.5, 1.0)), 3),
            t_on=int(rng.integers(1, 3)), t_off=int(rng.integers(1, 3)),
            marginal_cost=round(float(rng.uniform(10.0, 40.0)), 3),
            bus_id=0, name=f"G{i + 1}",
        ))
    cap = sum(g.p_max for g in gens)
    pmin = sum(g.p_min for g in gens)
    lo, hi = max(pmin * 1.2, 0.3 * cap), 0.75 * cap
    load = np.round(rng.uniform(lo, hi, size=(1, T)), 3)
    return PcmInstance(
        horizon_T=T, buses=[0], generators=gens, lines=[], farms=[], load=load,
        reserve_up=np.round(0.05 * load[0], 3), reserve_down=np.round(0.02 * load[0], 3),
        seed=seed, name=f"tiny{n_gen}x{T}",
    )
