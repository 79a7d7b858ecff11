"""Pipeline configuration: packaged INI defaults, a user file, then overrides."""
from __future__ import annotations

import configparser
import hashlib
import itertools
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

from .depth_estimator import GbtConfig
from .errors import ConfigError
from .event_synth import KnnRule
from .point_generator import CopulaConfig


def default_config_text() -> str:
    return resources.files("floodgen").joinpath("default_config.ini").read_text()


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _opt_int(text: str) -> int | None:
    text = text.strip()
    return int(text) if text else None


@dataclass(frozen=True)
class PipelineConfig:
    mesh: Path
    events: Path
    work_dir: Path
    split_ratio: tuple[int, int, int]
    validation_fraction: float
    class_bounds_inches: tuple[float, float]
    split_sample_size: int | None
    split_seed: int
    heavy_threshold_in: float
    gbt: GbtConfig
    gbt_grid: tuple[GbtConfig, ...]
    generator_backend: str
    generator_grid: tuple[CopulaConfig, ...]
    selection_sample_size: int
    cloud_size: int
    max_attempt_factor: float
    allow_dry: bool
    generator_seed: int
    theta1: float
    theta2: float
    knn: KnnRule
    n_events: int
    base_seed: int
    workers: int
    metric_repeats: int
    metric_sort: bool
    metric_seed: int
    thresholds_ft: tuple[float, ...]
    raster_width: int
    formats: tuple[str, ...]
    digest: str

    def path(self, *parts) -> Path:
        return self.work_dir.joinpath(*parts)


def _parse_grid(base: GbtConfig, text: str) -> tuple[GbtConfig, ...]:
    text = text.strip()
    if not text:
        return (base,)
    axes = []
    for item in text.split(";"):
        if not item.strip():
            continue
        key, _, vals = item.partition("=")
        key = key.strip()
        if key not in GbtConfig.__dataclass_fields__:
            raise ConfigError(f"unknown estimator grid key {key!r}")
        kind = type(getattr(base, key))
        axes.append([(key, kind(float(v)) if kind is int else kind(v)) for v in vals.split(",") if v.strip()])
    return tuple(replace(base, **dict(combo)) for combo in itertools.product(*axes))


def load_config(path=None, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Read config; ``overrides`` are ``section.key=value`` strings."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read_string(default_config_text())
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"bad config file: {exc}") from exc
        base_dir = path.parent
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if not cp.has_section(section):
            raise ConfigError(f"unknown config section {section!r}")
        if not cp.has_option(section, option.strip()):
            raise ConfigError(f"unknown config key {key!r}")
        cp.set(section, option.strip(), value.strip())

    text = "\n".join(f"{s}.{k}={v}" for s in cp.sections() for k, v in sorted(cp.items(s)))
    digest = hashlib.sha256(text.encode()).hexdigest()
    try:
        resolve = lambda p: (base_dir / p) if not Path(p).is_absolute() else Path(p)  # noqa: E731
        g = cp["estimator"]
        gbt = GbtConfig(g.getint("n_trees"), g.getint("max_depth"), g.getfloat("learning_rate"),
                        g.getfloat("subsample"), g.getfloat("l1_alpha"), g.getfloat("l2_lambda"),
                        g.getint("min_leaf"), g.getint("seed"))
        gen = cp["generator"]
        gen_seed = gen.getint("seed")
        generator_grid = tuple(
            CopulaConfig(j, s, gen_seed)
            for j in _floats(gen.get("marginal_jitter")) for s in _floats(gen.get("correlation_shrinkage")))
        k = cp["knn"]
        ratio = tuple(int(v) for v in _floats(cp["split"]["ratio"]))
        bounds = tuple(_floats(cp["split"]["class_bounds_inches"]))
        if len(ratio) != 3 or len(bounds) != 2:
            raise ConfigError("split.ratio needs 3 values and split.class_bounds_inches 2")
        return PipelineConfig(
            mesh=resolve(cp["paths"]["mesh"]),
            events=resolve(cp["paths"]["events"]),
            work_dir=resolve(cp["paths"]["work_dir"]),
            split_ratio=ratio,
            validation_fraction=cp["split"].getfloat("validation_fraction"),
            class_bounds_inches=bounds,
            split_sample_size=_opt_int(cp["split"]["sample_size"]),
            split_seed=cp["split"].getint("seed"),
            heavy_threshold_in=cp["features"].getfloat("heavy_threshold_in"),
            gbt=gbt,
            gbt_grid=_parse_grid(gbt, g.get("grid", "")),
            generator_backend=gen.get("backend"),
            generator_grid=generator_grid,
            selection_sample_size=gen.getint("selection_sample_size"),
            cloud_size=gen.getint("cloud_size"),
            max_attempt_factor=gen.getfloat("max_attempt_factor"),
            allow_dry=gen.getboolean("allow_dry"),
            generator_seed=gen_seed,
            theta1=cp["pools"].getfloat("theta1"),
            theta2=cp["pools"].getfloat("theta2"),
            knn=KnnRule(k.getfloat("slope"), k.getint("k_min"), k.getint("k_max"), _opt_int(k.get("fixed_k"))),
            n_events=cp["synthesis"].getint("n_events"),
            base_seed=cp["synthesis"].getint("base_seed"),
            workers=cp["synthesis"].getint("workers"),
            metric_repeats=cp["metrics"].getint("repeats"),
            metric_sort=cp["metrics"].getboolean("sort"),
            metric_seed=cp["metrics"].getint("seed"),
            thresholds_ft=tuple(_floats(cp["probmap"]["thresholds_ft"])),
            raster_width=cp["probmap"].getint("raster_width"),
            formats=tuple(v.strip() for v in cp["probmap"]["formats"].split(",") if v.strip()),
            digest=digest,
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration value: {exc}") from exc
