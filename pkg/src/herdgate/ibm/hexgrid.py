"""Hexagonal tiles and aggregation of a square density grid onto them.

Tiles are pointy-top hexagons with circumradius ``size_m`` addressed by
axial coordinates ``(q, r)``; tile ids follow row-major order of creation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import Polygon, box

_SQRT3 = np.sqrt(3.0)


@dataclass
class HexGrid:
    size_m: float
    q: np.ndarray
    r: np.ndarray

    @property
    def n_tiles(self) -> int:
        return len(self.q)

    @property
    def tile_area_m2(self) -> float:
        return 1.5 * _SQRT3 * self.size_m**2

    def center(self, tile: int) -> tuple[float, float]:
        q, r = self.q[tile], self.r[tile]
        return float(self.size_m * _SQRT3 * (q + r / 2.0)), float(self.size_m * 1.5 * r)

    def polygon(self, tile: int) -> Polygon:
        cx, cy = self.center(tile)
        angles = np.deg2rad(30 + 60 * np.arange(6))
        return Polygon(zip(cx + self.size_m * np.cos(angles), cy + self.size_m * np.sin(angles)))

    def locate(self, x, y) -> np.ndarray:
        """Tile id containing each point, or -1 outside the grid."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        qf = (x * _SQRT3 / 3 - y / 3) / self.size_m
        rf = (2.0 / 3.0 * y) / self.size_m
        # cube rounding
        xs, zs = qf, rf
        ys = -xs - zs
        rx, ry, rz = np.round(xs), np.round(ys), np.round(zs)
        dx, dy, dz = np.abs(rx - xs), np.abs(ry - ys), np.abs(rz - zs)
        fix_x = (dx > dy) & (dx > dz)
        fix_z = ~fix_x & ~(dy > dz)
        rx = np.where(fix_x, -ry - rz, rx)
        rz = np.where(fix_z, -rx - ry, rz)
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(self.q, self.r))}
        return np.array([lookup.get((int(a), int(b)), -1) for a, b in zip(rx, rz)], dtype=np.int64)


def hex_grid_covering(width_m: float, height_m: float, size_m: float) -> HexGrid:
    """Hexagons whose centres fall in ``[0, width] x [0, height]``."""
    if size_m <= 0 or width_m <= 0 or height_m <= 0:
        raise ValueError("grid dimensions must be positive")
    qs, rs = [], []
    n_rows = int(np.floor(height_m / (1.5 * size_m))) + 1
    for r in range(n_rows):
        y = 1.5 * size_m * r
        if y > height_m:
            break
        q_lo = int(np.ceil(-r / 2.0))
        q = q_lo
        while size_m * _SQRT3 * (q + r / 2.0) <= width_m:
            qs.append(q)
            rs.append(r)
            q += 1
    return HexGrid(size_m=float(size_m), q=np.array(qs, dtype=np.int64), r=np.array(rs, dtype=np.int64))


def read_density_grid(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CSV with columns easting, northing (cell centres, metres), density (groups per km^2)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"easting", "northing", "density"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns easting,northing,density")
        rows = [(float(r["easting"]), float(r["northing"]), float(r["density"])) for r in reader]
    if not rows:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    e, n, d = (np.array(c) for c in zip(*rows))
    if np.any(d < 0):
        raise ValueError("densities must be >= 0")
    return e, n, d


def aggregate_density(grid: HexGrid, easting, northing, density, cell_m: float = 500.0) -> np.ndarray:
    """Area-weighted mean density (per km^2) of the grid cells overlapping each tile."""
    e = np.asarray(easting, dtype=np.float64)
    n = np.asarray(northing, dtype=np.float64)
    d = np.asarray(density, dtype=np.float64)
    half = cell_m / 2.0
    cells = np.array([box(x - half, y - half, x + half, y + half) for x, y in zip(e, n)], dtype=object)
    tree = shapely.STRtree(cells)
    out = np.empty(grid.n_tiles)
    for t in range(grid.n_tiles):
        poly = grid.polygon(t)
        idx = tree.query(poly, predicate="intersects")
        areas = shapely.area(shapely.intersection(cells[idx], poly)) if len(idx) else np.zeros(0)
        covered = areas.sum()
        if covered <= 0:
            raise ValueError(f"density grid does not cover tile {t}")
        out[t] = float(np.dot(areas, d[idx]) / covered)
    return out


def expected_groups(grid: HexGrid, density_per_km2) -> np.ndarray:
    """Expected badger groups per tile from a per-km^2 density."""
    return np.asarray(density_per_km2, dtype=np.float64) * grid.tile_area_m2 / 1e6
