"""Regenerate the built-in world files under src/mrsearch/worlds/."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from mrsearch.geometry import Pose2D
from mrsearch.world import FREE, OCCUPIED, Geofence, GroundTruthWorld, OccupancyGrid, format_world, \
    parse_world

OUT = Path(__file__).resolve().parent.parent / "src" / "mrsearch" / "worlds"
RES = 0.1


class Canvas:
    def __init__(self, width_m: float, height_m: float):
        self.w = int(round(width_m / RES))
        self.h = int(round(height_m / RES))
        self.cells = np.full((self.h, self.w), FREE, dtype=np.int8)
        self.box(0, 0, width_m, height_m)

    def fill(self, x0, y0, x1, y1, state=OCCUPIED):
        ix0, ix1 = int(round(x0 / RES)), int(round(x1 / RES))
        iy0, iy1 = int(round(y0 / RES)), int(round(y1 / RES))
        self.cells[max(iy0, 0):min(iy1, self.h), max(ix0, 0):min(ix1, self.w)] = state

    def box(self, x0, y0, x1, y1, t=0.1):
        self.fill(x0, y0, x1, y0 + t)
        self.fill(x0, y1 - t, x1, y1)
        self.fill(x0, y0, x0 + t, y1)
        self.fill(x1 - t, y0, x1, y1)

    def hwall(self, y, x0, x1, doors=(), t=0.2):
        self.fill(x0, y - t / 2, x1, y + t / 2)
        for a, b in doors:
            self.fill(a, y - t / 2, b, y + t / 2, FREE)

    def vwall(self, x, y0, y1, doors=(), t=0.2):
        self.fill(x - t / 2, y0, x + t / 2, y1)
        for a, b in doors:
            self.fill(x - t / 2, a, x + t / 2, b, FREE)

    def world(self, robots, victims=(), seed=0) -> GroundTruthWorld:
        grid = OccupancyGrid(RES, self.cells.copy())
        fence = Geofence(0.0, 0.0, self.w * RES, self.h * RES)
        return GroundTruthWorld(grid, fence, list(victims), [Pose2D(*r) for r in robots], seed)


def two_room() -> GroundTruthWorld:
    c = Canvas(10, 10)
    c.vwall(5.0, 0, 10, doors=[(4.4, 5.6)])
    return c.world([(1.0, 1.0, 0.0), (1.0, 2.0, 0.0), (2.0, 1.0, math.pi / 2)])


def desk_maze() -> GroundTruthWorld:
    c = Canvas(12, 12)
    c.hwall(4.0, 0, 8, doors=[(1.5, 2.5), (6.4, 7.4)])
    c.hwall(8.0, 4, 12, doors=[(5.0, 6.0), (9.5, 10.5)])
    c.vwall(6.0, 0, 4, doors=[(1.0, 2.0)])
    c.vwall(4.0, 4, 12, doors=[(5.5, 6.5), (9.0, 10.0)])
    c.vwall(9.0, 0, 8, doors=[(2.5, 3.5), (5.5, 6.5)])
    # desks
    c.fill(2.5, 1.8, 3.7, 2.4)
    c.fill(1.2, 6.0, 2.4, 6.6)
    c.fill(6.5, 5.2, 7.7, 5.8)
    c.fill(7.0, 10.0, 8.2, 10.6)
    c.fill(10.2, 9.0, 10.8, 10.2)
    c.fill(10.0, 5.5, 11.0, 6.1)
    victims = [(7.5, 1.0), (11.0, 2.0), (1.0, 10.5), (6.0, 11.0), (11.2, 11.2), (7.0, 7.2)]
    return c.world([(1.0, 1.0, 0.0), (1.0, 2.0, 0.0), (2.0, 1.0, math.pi / 2)], victims)


def doubled_corridor() -> GroundTruthWorld:
    # a rectangular loop: two 1.2 m corridors joined at both ends
    c = Canvas(14, 4)
    c.fill(1.3, 1.3, 12.7, 2.7)
    return c.world([(0.7, 0.7, 0.0)])


def tepper_maze() -> GroundTruthWorld:
    c = Canvas(17, 20)
    c.hwall(5.0, 0, 12, doors=[(2.0, 3.0), (9.0, 10.0)])
    c.hwall(10.0, 5, 17, doors=[(6.0, 7.0), (14.0, 15.0)])
    c.hwall(15.0, 0, 12, doors=[(3.0, 4.0), (10.0, 11.0)])
    c.vwall(5.0, 5, 15, doors=[(7.0, 8.0), (12.0, 13.0)])
    c.vwall(12.0, 0, 5, doors=[(2.0, 3.0)])
    c.vwall(12.0, 15, 20, doors=[(17.0, 18.0)])
    c.vwall(9.0, 10, 15, doors=[(12.0, 13.0)])
    victims = [(14.5, 2.0), (2.0, 8.0), (8.0, 7.5), (15.0, 12.5), (7.0, 12.5), (2.0, 17.5),
               (14.5, 18.0), (10.5, 17.5), (3.0, 12.0), (7.5, 2.5), (15.5, 7.5), (11.0, 12.5)]
    return c.world([(1.0, 1.0, 0.0), (1.0, 2.0, 0.0), (2.0, 1.0, math.pi / 2)], victims)


def tiny() -> GroundTruthWorld:
    c = Canvas(4, 3)
    c.vwall(2.0, 0, 1.8)
    return c.world([(0.5, 0.5, 0.0)], [(3.5, 0.5)])


WORLDS = {"two_room": two_room, "desk_maze": desk_maze, "doubled_corridor": doubled_corridor,
          "tepper_maze": tepper_maze, "tiny": tiny}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, make in WORLDS.items():
        text = format_world(make())
        parse_world(text)  # validates robots and victims against the grid
        (OUT / f"{name}.world").write_text(text)
        print(f"wrote {name}.world")


if __name__ == "__main__":
    main()
