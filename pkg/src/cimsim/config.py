"""Run configuration: YAML loading, validation and resolution.

Defaults follow the reference RRAM setup: 128x128 arrays, 8b inputs and
weights, 1b cells, bit-serial inputs, lossless ("auto") ADC.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import yaml

from .crossbar import AdcConfig, ArrayConfig, Domain, StateTable
from .errors import ConfigError
from .mapper import PrecisionConfig
from .noise import DeviceNoiseSpec, DriftSpec, NoiseSpec, OutputNoiseTable, relative_sigmas

DEFAULTS: dict[str, Any] = {
    "precision": {"b_in": 8, "b_w": 8, "b_cell": 1, "p_dac": 1},
    "array": {"rows": 128, "cols": 128, "active_rows": None, "domain": "current", "dummy_column": True,
              "g_off": 1.0 / 40e3, "g_on": 1.0 / 3e3, "normalized_units": False},
    "adc": {"p_adc": "auto", "offset": 0},
    "noise": {"mode": "none"},
    "seed": 0,
    "jobs": 1,
    "model": None,
    "eval": {"dataset": None, "calibration": None, "samples": None},
    "output_dir": None,
    "taps": False,
    "ppa": {"coefficients": None, "duplication": 1},
}


@dataclass(frozen=True)
class HardwareConfig:
    precision: PrecisionConfig = field(default_factory=PrecisionConfig)
    array: ArrayConfig = field(default_factory=ArrayConfig)
    p_adc: Any = "auto"
    adc_offset: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.p_adc not in ("auto", None) and int(self.p_adc) < 1:
            raise ConfigError("adc.p_adc must be 'auto' or a positive integer")
        states = self.array.states
        if states is not None and states.b_cell != self.precision.b_cell:
            raise ConfigError(f"array.states has {len(states.states)} states but precision.b_cell="
                              f"{self.precision.b_cell}")
        if self.precision.n_cell > self.array.cols:
            raise ConfigError(f"array.cols ({self.array.cols}) smaller than cells per weight "
                              f"({self.precision.n_cell})")

    def adc(self) -> AdcConfig:
        return AdcConfig.for_array(self.array, self.precision, self.p_adc, self.adc_offset)

    def states(self) -> StateTable:
        return self.array.states or StateTable.linear(self.precision.b_cell)

    def with_noise(self, noise: NoiseSpec, seed: int | None = None) -> "HardwareConfig":
        return replace(self, noise=noise, seed=self.seed if seed is None else seed)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config field '{path}{k}'")
        if isinstance(base[k], dict) and k != "noise":
            if not isinstance(v, dict):
                raise ConfigError(f"config field '{path}{k}' must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    """Validated, fully resolved configuration plus the raw mapping it came from."""

    raw: dict
    hardware: HardwareConfig
    base_dir: str = "."

    @property
    def model_path(self) -> Optional[str]:
        return self._path(self.raw.get("model"))

    @property
    def dataset_path(self) -> Optional[str]:
        return self._path(self.raw["eval"].get("dataset"))

    @property
    def output_dir(self) -> str:
        out = self.raw.get("output_dir") or os.environ.get("CIMSIM_OUTPUT_DIR") or "cimsim_out"
        return self._path(out)

    def _path(self, p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def resolved(self) -> dict:
        """Effective config with "auto" ADC expanded and relative paths made absolute."""
        out = copy.deepcopy(self.raw)
        out["adc"] = {"p_adc": self.hardware.adc().p_adc, "offset": 0}
        if out.get("model") is not None:
            out["model"] = self._path(out["model"])
        out["output_dir"] = self.output_dir
        if out["eval"].get("dataset") is not None:
            out["eval"]["dataset"] = self.dataset_path
        if out["eval"].get("calibration") is not None:
            out["eval"]["calibration"] = self._path(out["eval"]["calibration"])
        if out["ppa"].get("coefficients") is not None:
            out["ppa"]["coefficients"] = self._path(out["ppa"]["coefficients"])
        noise = out.get("noise") or {}
        for key in ("mem_states", "output_noise"):
            if noise.get(key) is not None:
                noise[key] = self._path(noise[key])
        return out


def _build_noise(n: dict, precision: PrecisionConfig, states: StateTable, base_dir: str) -> tuple[NoiseSpec, StateTable]:
    n = dict(n or {})
    mode = n.pop("mode", "none")
    has_device = any(k in n for k in ("mem_states", "d2d_sigma", "p_sa0", "p_sa1", "drift"))
    has_circuit = "output_noise" in n or "output_sigma" in n
    if mode == "both" or (has_device and has_circuit) or (mode == "device" and has_circuit) \
            or (mode == "circuit" and has_device):
        raise ConfigError("noise: device and circuit modes are exclusive")
    if mode == "none":
        if has_device or has_circuit:
            raise ConfigError("noise.mode is 'none' but noise parameters were given")
        return NoiseSpec(), states

    def path(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    if mode == "device":
        mem = n.get("mem_states")
        if mem is not None:
            if not os.path.exists(path(mem)):
                raise ConfigError(f"noise.mem_states: file not found: {mem}")
            states = StateTable.from_csv(path(mem))
            if states.b_cell != precision.b_cell:
                raise ConfigError(f"noise.mem_states has {len(states.states)} states, "
                                  f"precision.b_cell={precision.b_cell} needs {1 << precision.b_cell}")
        sig = n.get("d2d_sigma")
        sigmas = None
        if sig is not None:
            if isinstance(sig, (int, float)):
                sig = [sig, sig]
            if len(sig) != 2:
                raise ConfigError("noise.d2d_sigma must be a fraction or [hrs_fraction, lrs_fraction]")
            sigmas = relative_sigmas(states.means, float(sig[0]), float(sig[1]))
        elif mem is None:
            raise ConfigError("noise.mem_states: device mode needs a mem_states.csv file or d2d_sigma")
        drift = None
        if n.get("drift") is not None:
            d = n["drift"]
            try:
                drift = DriftSpec(t=float(d["t"]), v=float(d["v"]), t0=float(d.get("t0", 1.0)),
                                  mode=d.get("mode", "random"))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"noise.drift: {exc}") from None
        dev = DeviceNoiseSpec(d2d_sigmas=sigmas, p_sa0=float(n.get("p_sa0", 0.0)),
                              p_sa1=float(n.get("p_sa1", 0.0)), drift=drift)
        return NoiseSpec(device=dev), states
    if mode == "circuit":
        if "output_noise" in n:
            p = n["output_noise"]
            if not os.path.exists(path(p)):
                raise ConfigError(f"noise.output_noise: file not found: {p}")
            table = OutputNoiseTable.from_csv(path(p))
        elif "output_sigma" in n:
            table = OutputNoiseTable.uniform_sigma(float(n["output_sigma"]))
        else:
            raise ConfigError("noise.output_noise: circuit mode needs an output_noise.csv file")
        return NoiseSpec(circuit=table), states
    raise ConfigError(f"noise.mode must be none, device or circuit, got '{mode}'")


def build_config(data: dict | None, base_dir: str = ".") -> RunConfig:
    raw = _merge(DEFAULTS, data or {})
    try:
        precision = PrecisionConfig(**raw["precision"])
    except TypeError as exc:
        raise ConfigError(f"precision: {exc}") from None
    a = raw["array"]
    if a["domain"] not in ("current", "charge"):
        raise ConfigError(f"array.domain must be current or charge, got '{a['domain']}'")
    if a["domain"] == "charge" and not a["normalized_units"] and a["g_on"] > 1e-3:
        raise ConfigError("array.g_on looks like Siemens but the charge domain expects Farads")
    try:
        states = StateTable.linear(precision.b_cell, a["g_off"], a["g_on"])
    except ConfigError as exc:
        raise ConfigError(f"array: {exc}") from None
    noise, states = _build_noise(raw["noise"], precision, states, base_dir)
    p_adc = raw["adc"]["p_adc"]
    if p_adc != "auto" and not (isinstance(p_adc, int) and p_adc >= 1):
        raise ConfigError(f"adc.p_adc must be 'auto' or a positive integer, got {p_adc!r}")
    try:
        array = ArrayConfig(rows=int(a["rows"]), cols=int(a["cols"]), domain=Domain(a["domain"]),
                            active_rows=a["active_rows"], dummy_column=bool(a["dummy_column"]), states=states)
        hw = HardwareConfig(precision=precision, array=array, p_adc=p_adc, adc_offset=int(raw["adc"]["offset"]),
                            noise=noise, seed=int(raw["seed"]), jobs=int(raw["jobs"]))
    except ConfigError as exc:
        raise ConfigError(f"array: {exc}") from None
    if hw.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return RunConfig(raw=raw, hardware=hw, base_dir=base_dir)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return build_config(data, base_dir=os.path.dirname(os.path.abspath(path)))


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)
