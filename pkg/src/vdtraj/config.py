"""Flat key=value run configuration with sections.

Every key is validated against the owning module's invariants at load time
and unknown keys are rejected, so a typo fails fast instead of silently
using a default.  Physical quantities carry SI units: g_max T/m, s_max
T/m/s, gamma Hz/T (already divided by 2*pi), times in seconds, fov in
meters.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .core import HardwareSpec
from .density import DensityParams
from .optimizer import OptimizerConfig
from .repulsion import RepulsionConfig


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending key."""


_SCHEMA = {
    "hardware": {
        "g_max": float,
        "s_max": float,
        "gamma": float,
        "raster_dt": float,
        "dwell_dt": float,
        "fov": "floats",
        "matrix": "ints",
        "dims": int,
    },
    "density": {
        "cutoff": float,
        "decay": float,
        "grid_n": int,
    },
    "optimizer": {
        "n_c": int,
        "n_s": int,
        "n_decim": int,
        "n_git": int,
        "n_pit": int,
        "fixed_step_iters": int,
        "eta0": float,
        "perturbation": float,
        "seed": int,
        "grad_mode": str,
        "attraction_eps": float,
        "pin_enabled": bool,
        "pin_index": int,
    },
    "repulsion": {
        "backend": str,
        "kernel_eps": float,
        "tree_precision": float,
        "leaf_size": int,
        "interp_order": int,
    },
    "io": {
        "out_dir": str,
    },
}

_REQUIRED = {
    "hardware": ["g_max", "s_max", "gamma", "raster_dt", "dwell_dt", "fov",
                 "matrix", "dims"],
    "density": ["cutoff", "decay"],
    "optimizer": ["n_c", "n_s"],
}


def _parse_value(section: str, key: str, raw: str):
    kind = _SCHEMA[section][key]
    try:
        if kind == "floats":
            vals = [float(v) for v in raw.split(",")]
            return vals[0] if len(vals) == 1 else tuple(vals)
        if kind == "ints":
            vals = [int(v) for v in raw.split(",")]
            return vals[0] if len(vals) == 1 else tuple(vals)
        if kind is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


@dataclass
class RunConfig:
    """Validated configuration for a generation run."""

    hardware: HardwareSpec
    optimizer: OptimizerConfig
    out_dir: str = "."

    @classmethod
    def load(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")

        values: dict[str, dict] = {}
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            values[section] = {}
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key [{section}] {key}")
                raw = raw.strip()
                if raw:
                    values[section][key] = _parse_value(section, key, raw)

        for section, keys in _REQUIRED.items():
            if section not in values:
                raise ConfigError(f"missing section [{section}]")
            for key in keys:
                if key not in values[section]:
                    raise ConfigError(f"missing key [{section}] {key}")

        hw_kw = values["hardware"]
        try:
            hardware = HardwareSpec(**hw_kw)
        except ValueError as exc:
            raise ConfigError(f"[hardware]: {exc}") from exc

        dens_kw = values["density"]
        try:
            density = DensityParams(cutoff=dens_kw["cutoff"], decay=dens_kw["decay"])
        except ValueError as exc:
            raise ConfigError(f"[density]: {exc}") from exc

        rep_kw = dict(values.get("repulsion", {}))
        try:
            repulsion = RepulsionConfig(**rep_kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[repulsion]: {exc}") from exc

        opt_kw = dict(values.get("optimizer", {}))
        opt_kw.setdefault("dims", hardware.dims)
        if "grid_n" in dens_kw:
            opt_kw["grid_n"] = dens_kw["grid_n"]
        try:
            optimizer = OptimizerConfig(density=density, repulsion=repulsion, **opt_kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[optimizer]: {exc}") from exc
        if optimizer.dims != hardware.dims:
            raise ConfigError(
                f"[optimizer] dims={optimizer.dims} disagrees with [hardware] "
                f"dims={hardware.dims}")

        out_dir = values.get("io", {}).get("out_dir", ".")
        return cls(hardware=hardware, optimizer=optimizer, out_dir=out_dir)
