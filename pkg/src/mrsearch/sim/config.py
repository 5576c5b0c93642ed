"""Mission configuration: a ``key = value`` text file plus loop-closure lines."""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..baselines import PolicyKind

BUILTIN_PREFIX = "builtin:"
WORLDS_DIR = Path(__file__).resolve().parent.parent / "worlds"


class ConfigError(ValueError):
    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


@dataclass(frozen=True)
class LoopClosureSpec:
    tick: int
    first: int
    last: int
    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0

    def format(self) -> str:
        return (f"loopclosure tick={self.tick} verts={self.first}..{self.last} "
                f"dx={self.dx!r} dy={self.dy!r} dtheta={self.dtheta!r}")


@dataclass
class MissionConfig:
    world: str
    policy: PolicyKind = PolicyKind.HIGH
    robots: int = 3
    camera_radius: float = 1.5      # m
    utility_scale: float = 2.0      # weight of the spreading utility in the reward, m
    sensor_range: float = 4.0       # laser range, m
    laser_fov_deg: float = 145.0
    laser_rays: int = 120
    camera_rays: int = 128
    speed: float = 0.3
    min_frontier_gain: float = 0.15
    bandwidth: float = 1.5
    step_size: float = 1.0
    max_coverage_tasks: int = 20
    min_view_area: float = math.pi * 0.25
    visibility_cap: float = 1.5     # clamp for the visibility radius, m
    coverage_min_gain: float = 0.0  # coverage candidates below this gain are not offered
    miss_penalty: float = 1000.0
    assignment_period: float = 5.0
    sample_size: int = 15
    nbvp_discount: float = 0.5
    dt: float = 0.1
    expansion_budget: int = 50
    planner_period: float = 1.0
    vertex_spacing: float = 0.5
    drift_sigma: float = 0.0        # xy random walk, m per sqrt(m)
    drift_bias: float = 0.0         # x bias, m per m
    seed: int = 0
    time_limit: float = 600.0
    stop_coverage: float = 0.0      # end early once this covered fraction is reached (0 = off)
    series_every: int = 1
    loop_closures: list[LoopClosureSpec] = field(default_factory=list)
    base_dir: Optional[str] = None  # directory relative world paths resolve against

    def validate(self) -> MissionConfig:
        positive = ["robots", "camera_radius", "utility_scale", "sensor_range", "laser_fov_deg", "laser_rays",
                    "camera_rays", "speed", "bandwidth", "step_size", "max_coverage_tasks", "assignment_period",
                    "sample_size", "dt", "planner_period", "vertex_spacing", "time_limit", "series_every"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ["min_frontier_gain", "min_view_area", "miss_penalty", "expansion_budget", "drift_sigma",
                     "coverage_min_gain", "stop_coverage", "nbvp_discount"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.laser_rays < 4 or self.camera_rays < 4:
            raise ConfigError("ray counts must be at least 4")
        for lc in self.loop_closures:
            if lc.tick < 0 or lc.first < 0 or lc.last < lc.first:
                raise ConfigError(f"invalid loop closure {lc.format()}")
        return self

    def with_(self, **changes) -> MissionConfig:
        return dataclasses.replace(self, **changes).validate()

    def world_path(self) -> Path:
        if self.world.startswith(BUILTIN_PREFIX):
            name = self.world[len(BUILTIN_PREFIX):]
            return WORLDS_DIR / (name if name.endswith(".world") else name + ".world")
        p = Path(self.world)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if isinstance(v, PolicyKind):
                v = v.value
            elif f.name == "loop_closures":
                v = [lc.format() for lc in v]
            out[f.name] = v
        return out


_KEYS = {f.name: f for f in dataclasses.fields(MissionConfig)
         if f.name not in ("loop_closures", "base_dir")}
_LC_RE = re.compile(r"^(\w+)=(\S+)$")


def _convert(name: str, text: str):
    kind = _KEYS[name].type
    if name == "policy":
        return PolicyKind.parse(text)
    if name == "world":
        return text
    if kind in ("int", int):
        return int(text)
    return float(text)


def _parse_loop_closure(tokens: list[str], lineno: int) -> LoopClosureSpec:
    vals = {}
    for tok in tokens:
        m = _LC_RE.match(tok)
        if not m:
            raise ConfigError(f"bad loopclosure field {tok!r}", lineno)
        vals[m.group(1)] = m.group(2)
    unknown = set(vals) - {"tick", "verts", "dx", "dy", "dtheta"}
    if unknown:
        raise ConfigError(f"unknown loopclosure fields {sorted(unknown)}", lineno)
    if "tick" not in vals or "verts" not in vals:
        raise ConfigError("loopclosure needs tick= and verts=", lineno)
    try:
        a, b = vals["verts"].split("..")
        return LoopClosureSpec(int(vals["tick"]), int(a), int(b), float(vals.get("dx", 0)),
                               float(vals.get("dy", 0)), float(vals.get("dtheta", 0)))
    except ValueError:
        raise ConfigError("malformed loopclosure line", lineno) from None


def parse_config(text: str, base_dir: Optional[str] = None, **overrides) -> MissionConfig:
    values: dict = {}
    closures: list[LoopClosureSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("loopclosure"):
            closures.append(_parse_loop_closure(line.split()[1:], lineno))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _convert(key, val)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {val!r}", lineno) from None
    if "world" not in values:
        raise ConfigError("missing 'world'")
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown override {key!r}")
        values[key] = _convert(key, val) if isinstance(val, str) else val
    return MissionConfig(loop_closures=closures, base_dir=base_dir, **values).validate()


def load_config(path, **overrides) -> MissionConfig:
    p = Path(path)
    return parse_config(p.read_text(), base_dir=str(p.resolve().parent), **overrides)


def format_config(cfg: MissionConfig) -> str:
    lines = []
    for name, value in cfg.as_dict().items():
        if name == "loop_closures":
            continue
        lines.append(f"{name} = {value!r}" if isinstance(value, float) else f"{name} = {value}")
    lines += [lc.format() for lc in cfg.loop_closures]
    return "\n".join(lines) + "\n"
