"""Configuration schema, named profiles, and YAML loading.

Unknown keys are rejected; cross-field constraints (e.g. the slice thickness
staying below the in-plane footprint at the deepest level) are validated at
construction time.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .estimator import FilterConfig
from .optimize import OptimConfig
from .raster import RasterSettings


@dataclass
class MapConfig:
    root_len: float = 0.06
    max_level: int = 2
    leaf_capacity: int = 1


@dataclass
class InitConfig:
    # kappa = 0.5 leaves surfaces translucent between voxel samples; 0.8
    # makes neighbouring footprints overlap enough to blend opaquely
    kappa: float = 0.8
    delta: float = 1e-3
    opacity: float = 0.9
    sh_degree: int = 0


@dataclass
class RasterConfig:
    near: float = 0.01
    dilation: float = 0.3
    alpha_clamp: float = 0.99
    transmittance_min: float = 1e-4
    footprint_sigma: float = 6.0
    alpha_cut: float = 0.00392156862745098  # 1/255; pipeline speed/quality trade
    background: tuple = (0.0, 0.0, 0.0)


@dataclass
class WindowConfig:
    capacity: int = 100_000


@dataclass
class SimConfig:
    fx: float = 120.0
    fy: float = 120.0
    cx: float = 64.0
    cy: float = 54.0
    width: int = 128
    height: int = 108
    imu_rate: float = 200.0
    frame_rate: float = 10.0
    lidar_azimuth: int = 72
    lidar_elevation: int = 24
    lidar_azimuth_span: float = 6.283185307179586   # spinning scanner
    lidar_elevation_span: float = 1.3962634015954636  # 80 deg
    gyro_noise: float = 0.0
    accel_noise: float = 0.0
    range_noise: float = 0.0


@dataclass
class Config:
    map: MapConfig = field(default_factory=MapConfig)
    init: InitConfig = field(default_factory=InitConfig)
    raster: RasterConfig = field(default_factory=RasterConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    render_every: int = 0    # periodic PPM dumps from the replay driver

    def validate(self) -> "Config":
        m, i = self.map, self.init
        if m.root_len <= 0:
            raise ConfigError("map.root_len must be positive")
        if m.max_level < 0 or m.max_level > 8:
            raise ConfigError("map.max_level out of range")
        if m.leaf_capacity != 1:
            raise ConfigError("leaf_capacity must be 1 for the window pipeline")
        if not (0 <= i.sh_degree <= 3):
            raise ConfigError("init.sh_degree must be in [0, 3]")
        leaf = m.root_len / (1 << m.max_level)
        if i.delta > i.kappa * leaf:
            raise ConfigError(
                f"init.delta={i.delta} exceeds the in-plane footprint "
                f"{i.kappa * leaf} at level {m.max_level}"
            )
        if not (0 < i.opacity <= 1):
            raise ConfigError("init.opacity must be in (0, 1]")
        if self.window.capacity <= 0:
            raise ConfigError("window.capacity must be positive")
        if self.raster.footprint_sigma < 1.0:
            raise ConfigError("raster.footprint_sigma must be >= 1")
        if self.optim.loss not in ("l1", "l2"):
            raise ConfigError("optim.loss must be 'l1' or 'l2'")
        return self

    def raster_settings(self) -> RasterSettings:
        r = self.raster
        return RasterSettings(
            near=r.near,
            dilation=r.dilation,
            alpha_clamp=r.alpha_clamp,
            transmittance_min=r.transmittance_min,
            footprint_sigma=r.footprint_sigma,
            alpha_cut=r.alpha_cut,
            background=tuple(r.background),
            sh_degree=self.init.sh_degree,
        )


PROFILES = {
    "indoor": {"map": {"root_len": 0.06, "max_level": 2}},
    "outdoor": {"map": {"root_len": 0.5, "max_level": 2}},
    "mapping-fine": {"map": {"root_len": 0.03, "max_level": 2}},
    "low-resource": {
        "window": {"capacity": 20_000},
        "sim": {"width": 256, "height": 216, "cx": 128.0, "cy": 108.0},
    },
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        sub = _SECTION_TYPES.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    (Config, "map"): MapConfig,
    (Config, "init"): InitConfig,
    (Config, "raster"): RasterConfig,
    (Config, "window"): WindowConfig,
    (Config, "optim"): OptimConfig,
    (Config, "filter"): FilterConfig,
    (Config, "sim"): SimConfig,
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, profile: str = None, overrides: dict = None) -> Config:
    data: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; have {sorted(PROFILES)}")
        data = _merge(data, PROFILES[profile])
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        data = _merge(data, loaded)
    if overrides:
        data = _merge(data, overrides)
    return _build(Config, data, "config").validate()
