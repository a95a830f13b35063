"""World specification: herds, tiles, badger densities and the movement graph.

JSON layout::

    {
      "n_tiles": 4,
      "tile_groups": [2.0, 0.5, 0.0, 1.0],        # expected badger groups per tile
      "badger_group_size": 8,
      "badger_initial_prevalence": 0.1,
      "initial_environment": 0.0,
      "herds": [{"id": "H1", "size": 80, "tile": 0, "area": "default",
                 "initial_T": 0, "initial_I": 1, "first_test_day": 30}, ...],
      "movements": [{"src": 0, "dst": 1, "rate": 0.01, "batch": 2}, ...]
    }

``first_test_day`` is optional; herds without one get a seeded offset within
their routine interval. ``hex_grid`` (``{"width_m", "height_m", "size_m"}``)
together with ``density_grid`` (path to an easting,northing,density CSV)
may replace ``n_tiles``/``tile_groups``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .hexgrid import aggregate_density, expected_groups, hex_grid_covering, read_density_grid


@dataclass(frozen=True)
class HerdSpec:
    id: str
    size: int
    tile: int
    area: str = "default"
    initial_T: int = 0
    initial_I: int = 0
    first_test_day: Optional[int] = None

    def __post_init__(self):
        if self.size < 0 or self.initial_T < 0 or self.initial_I < 0:
            raise ValueError(f"herd {self.id}: counts must be >= 0")
        if self.initial_T + self.initial_I > self.size:
            raise ValueError(f"herd {self.id}: more initial infections than animals")


@dataclass(frozen=True)
class MovementEdge:
    src: int
    dst: int
    rate: float
    batch: int = 1

    def __post_init__(self):
        if self.rate < 0 or self.batch < 1:
            raise ValueError("movement rate must be >= 0 and batch >= 1")
        if self.src == self.dst:
            raise ValueError("movement edge must join two different herds")


@dataclass
class WorldSpec:
    herds: list
    n_tiles: int
    tile_groups: np.ndarray
    movements: list = field(default_factory=list)
    badger_group_size: int = 8
    badger_initial_prevalence: float = 0.0
    initial_environment: float = 0.0

    def __post_init__(self):
        self.tile_groups = np.asarray(self.tile_groups, dtype=np.float64)
        if self.tile_groups.shape != (self.n_tiles,):
            raise ValueError("tile_groups must have one entry per tile")
        if np.any(self.tile_groups < 0):
            raise ValueError("badger densities must be >= 0")
        for h in self.herds:
            if not 0 <= h.tile < self.n_tiles:
                raise ValueError(f"herd {h.id} is on missing tile {h.tile}")
        for m in self.movements:
            if not (0 <= m.src < len(self.herds) and 0 <= m.dst < len(self.herds)):
                raise ValueError(f"movement edge {m} references a missing herd")
        if not 0 <= self.badger_initial_prevalence <= 1:
            raise ValueError("badger_initial_prevalence must lie in [0, 1]")

    @property
    def n_herds(self) -> int:
        return len(self.herds)

    def to_dict(self) -> dict:
        return {
            "n_tiles": self.n_tiles,
            "tile_groups": [float(v) for v in self.tile_groups],
            "badger_group_size": self.badger_group_size,
            "badger_initial_prevalence": self.badger_initial_prevalence,
            "initial_environment": self.initial_environment,
            "herds": [dataclasses.asdict(h) for h in self.herds],
            "movements": [dataclasses.asdict(m) for m in self.movements],
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "WorldSpec":
        d = dict(d)
        herds = [HerdSpec(**h) for h in d.pop("herds")]
        moves = [MovementEdge(**m) for m in d.pop("movements", [])]
        if "hex_grid" in d:
            g = d.pop("hex_grid")
            grid = hex_grid_covering(g["width_m"], g["height_m"], g["size_m"])
            path = Path(d.pop("density_grid"))
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            e, n, dens = read_density_grid(path)
            d["n_tiles"] = grid.n_tiles
            d["tile_groups"] = expected_groups(grid, aggregate_density(grid, e, n, dens, g.get("cell_m", 500.0)))
        known = {f.name for f in dataclasses.fields(cls)} - {"herds", "movements"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown world fields: {sorted(unknown)}")
        return cls(herds=herds, movements=moves, **d)

    @classmethod
    def from_json(cls, path) -> "WorldSpec":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def demo_world(
    n_herds: int = 50,
    mean_size: int = 40,
    n_tiles: int = 10,
    seed: int = 0,
    initial_infected_herds: int = 10,
    movement_rate: float = 0.01,
    groups_per_tile: float = 1.0,
    badger_initial_prevalence: float = 0.2,
) -> WorldSpec:
    """Small synthetic world: herds scattered over tiles, a random sparse
    movement graph and a few herds seeded with infectious animals."""
    rng = np.random.default_rng(seed)
    sizes = np.maximum(5, rng.poisson(mean_size, n_herds))
    tiles = rng.integers(0, n_tiles, n_herds)
    infected = set(rng.choice(n_herds, size=min(initial_infected_herds, n_herds), replace=False).tolist())
    herds = [
        HerdSpec(id=f"H{i + 1:04d}", size=int(sizes[i]), tile=int(tiles[i]),
                 initial_I=2 if i in infected else 0, initial_T=1 if i in infected else 0)
        for i in range(n_herds)
    ]
    moves = []
    for i in range(n_herds):
        for j in rng.choice(n_herds, size=2, replace=False):
            if int(j) != i:
                moves.append(MovementEdge(src=i, dst=int(j), rate=movement_rate, batch=int(rng.integers(1, 4))))
    return WorldSpec(
        herds=herds,
        n_tiles=n_tiles,
        tile_groups=np.full(n_tiles, groups_per_tile),
        movements=moves,
        badger_initial_prevalence=badger_initial_prevalence,
    )
