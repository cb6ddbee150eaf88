"""Counts-based power/performance/area estimation.

A trace lists, per layer and hardware component, how many events occur
per image (energy), how many instances exist (area) and how many serial
steps the layer's critical path takes (latency). A coefficient table
prices each component; the report is a plain weighted sum, so it is
linear in both counts and coefficients.

Latency assumes layer-wise pipelining: all tiles of a layer work in
parallel, layers form pipeline stages, and steady-state time per image is
the slowest stage.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import HardwareConfig
from .crossbar import AdcConfig
from .errors import ConfigError, TraceError

ACIM_COMPONENTS = ("adc", "array", "shift_add", "buffer", "interconnect")


@dataclass(frozen=True)
class TraceRecord:
    layer: str
    engine: str
    component: str
    param: str
    events: int
    instances: int
    steps: int


@dataclass
class LayerTrace:
    name: str
    engine: str
    macs: int
    row_tiles: int = 0
    col_tiles: int = 0
    n_in: int = 0
    sub_cycles: int = 0
    spatial: int = 0
    adc_conversions: int = 0
    records: list = field(default_factory=list)


@dataclass
class Trace:
    layers: list = field(default_factory=list)

    @property
    def records(self) -> list:
        return [r for lt in self.layers for r in lt.records]

    def count(self, component: str, layer: str | None = None) -> int:
        return sum(r.events for r in self.records if r.component == component and (layer is None or r.layer == layer))

    @property
    def macs(self) -> int:
        return sum(lt.macs for lt in self.layers)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "engine", "component", "param", "events", "instances", "steps"])
            for r in self.records:
                w.writerow([r.layer, r.engine, r.component, r.param, r.events, r.instances, r.steps])


@dataclass(frozen=True)
class Coefficient:
    energy_pj: float
    latency_ns: float
    area_um2: float


class CoefficientTable:
    """Per-component (energy pJ/event, latency ns/step, area um^2/instance)."""

    def __init__(self, entries: dict):
        self.entries = {(str(c), str(p)): v for (c, p), v in entries.items()}
        for key, v in self.entries.items():
            if min(v.energy_pj, v.latency_ns, v.area_um2) < 0:
                raise ConfigError(f"negative coefficient for {key}")
        adc = sorted((int(p), v) for (c, p), v in self.entries.items() if c == "adc")
        for (b0, v0), (b1, v1) in zip(adc, adc[1:]):
            if v1.energy_pj < v0.energy_pj or v1.latency_ns < v0.latency_ns or v1.area_um2 < v0.area_um2:
                raise ConfigError(f"ADC coefficients must be monotone in bit width ({b0}b vs {b1}b)")

    def get(self, component: str, param: str) -> Coefficient:
        try:
            return self.entries[component, str(param)]
        except KeyError:
            raise ConfigError(f"no coefficient for component '{component}' param '{param}'") from None

    def scaled(self, energy: float = 1.0, latency: float = 1.0, area: float = 1.0) -> "CoefficientTable":
        return CoefficientTable({k: Coefficient(v.energy_pj * energy, v.latency_ns * latency, v.area_um2 * area)
                                 for k, v in self.entries.items()})

    @classmethod
    def default(cls) -> "CoefficientTable":
        """Illustrative order-of-magnitude values, not calibrated to any process."""
        e = {("adc", str(b)): Coefficient(0.02 * 2 ** b / 8, 0.5 + 0.25 * b, 4.0 * 2 ** b) for b in range(1, 17)}
        e.update({
            ("array", "row"): Coefficient(0.002, 1.0, 0.05),
            ("shift_add", "op"): Coefficient(0.01, 0.3, 20.0),
            ("buffer", "byte"): Coefficient(0.1, 0.01, 1.0),
            ("interconnect", "byte"): Coefficient(0.05, 0.005, 100.0),
            ("dcim", "mac"): Coefficient(0.03, 0.5, 8.0),
            ("lut", "lookup"): Coefficient(0.01, 0.2, 300.0),
        })
        return cls(e)

    @classmethod
    def from_csv(cls, path) -> "CoefficientTable":
        entries = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = ["component", "param", "energy_pJ", "latency_ns", "area_um2"]
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != need:
                raise ConfigError(f"{path}: expected header '{','.join(need)}'")
            for r in reader:
                entries[r["component"], r["param"]] = Coefficient(float(r["energy_pJ"]), float(r["latency_ns"]),
                                                                  float(r["area_um2"]))
        return cls(entries)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "param", "energy_pJ", "latency_ns", "area_um2"])
            for (c, p), v in sorted(self.entries.items()):
                w.writerow([c, p, repr(v.energy_pj), repr(v.latency_ns), repr(v.area_um2)])


def acim_layer_trace(name: str, n: int, m: int, spatial: int, hw: HardwareConfig, adc: AdcConfig | None = None,
                     in_bytes: int | None = None) -> LayerTrace:
    """Counts for an N x M matmul layer evaluated at ``spatial`` output positions."""
    cfg, arr = hw.precision, hw.array
    if cfg.n_cell > arr.cols:
        raise TraceError(f"layer '{name}' cannot be mapped: {cfg.n_cell} cells per weight > {arr.cols} columns")
    adc = adc or hw.adc()
    per_tile = arr.cols // cfg.n_cell
    row_tiles, col_tiles = math.ceil(n / arr.rows), math.ceil(m / per_tile)
    tiles = row_tiles * col_tiles
    steps = cfg.n_in * arr.sub_cycles * spatial
    reads = tiles * steps
    conversions = col_tiles * arr.cols * row_tiles * cfg.n_in * arr.sub_cycles * spatial
    act_bytes = math.ceil(cfg.b_in / 8)
    in_bytes = n * spatial * act_bytes if in_bytes is None else in_bytes
    out_bytes = m * spatial * act_bytes
    lt = LayerTrace(name, "acim", macs=n * m * spatial, row_tiles=row_tiles, col_tiles=col_tiles, n_in=cfg.n_in,
                    sub_cycles=arr.sub_cycles, spatial=spatial, adc_conversions=conversions)
    lt.records = [
        TraceRecord(name, "acim", "adc", str(adc.p_adc), conversions, tiles * arr.cols, steps),
        TraceRecord(name, "acim", "array", "row", reads * arr.active_rows, tiles * arr.rows * arr.cols, steps),
        TraceRecord(name, "acim", "shift_add", "op", conversions, tiles * arr.cols, steps),
        TraceRecord(name, "acim", "buffer", "byte", in_bytes + out_bytes, in_bytes + out_bytes, in_bytes + out_bytes),
        TraceRecord(name, "acim", "interconnect", "byte", out_bytes, tiles, out_bytes),
    ]
    return lt


def collect_trace(model, hw: HardwareConfig, input_shape: Sequence[int]) -> Trace:
    """Per-image counts for every node of ``model`` (noise never runs)."""
    from .netexec.graph import Engine, LayerKind, output_shapes

    shapes = output_shapes(model, input_shape)
    act_bytes = math.ceil(hw.precision.b_in / 8)
    trace = Trace()
    for node in model.nodes:
        out_shape = shapes[node.name]
        in_shape = shapes[node.inputs[0]]
        if node.is_matmul and node.weight is None:
            raise TraceError(f"layer '{node.name}' has no weights to map")
        if node.engine is Engine.ACIM:
            if node.kind is LayerKind.CONV2D:
                n = int(np.prod(node.weight.shape[1:]))
                m = node.weight.shape[0]
                spatial = int(np.prod(out_shape[1:]))
            else:
                n, m = node.weight.shape
                spatial = int(np.prod(out_shape[:-1])) if len(out_shape) > 1 else 1
            trace.layers.append(acim_layer_trace(node.name, n, m, spatial, hw))
        elif node.engine is Engine.DCIM:
            a_shape, b_shape = shapes[node.inputs[0]], shapes[node.inputs[1]]
            k = a_shape[-1]
            macs = int(np.prod(out_shape)) * k
            rows_a = int(np.prod(a_shape[:-1]))
            moved = (int(np.prod(a_shape)) + int(np.prod(b_shape)) + int(np.prod(out_shape))) * act_bytes
            lt = LayerTrace(node.name, "dcim", macs=macs, n_in=hw.precision.n_in, spatial=rows_a)
            out_cols = out_shape[-1]
            lt.records = [
                TraceRecord(node.name, "dcim", "dcim", "mac", macs * hw.precision.b_in, k * out_cols,
                            rows_a * hw.precision.b_in),
                TraceRecord(node.name, "dcim", "buffer", "byte", moved, moved, moved),
            ]
            trace.layers.append(lt)
        else:
            elems = int(np.prod(out_shape))
            lt = LayerTrace(node.name, "digital", macs=0)
            moved = (int(np.prod(in_shape)) + elems) * act_bytes
            if node.kind is LayerKind.LUT:
                lt.records.append(TraceRecord(node.name, "digital", "lut", "lookup", elems, 1, elems))
            lt.records.append(TraceRecord(node.name, "digital", "buffer", "byte", moved, moved, moved))
            trace.layers.append(lt)
    return trace


@dataclass
class PpaReport:
    energy_j: float
    latency_s: float
    stage_latency_s: float
    area_mm2: float
    tops: float
    tops_per_w: float
    tops_per_mm2: float
    fps: float
    energy_breakdown: dict
    latency_breakdown: dict
    area_breakdown: dict
    line_items: list
    degenerate: bool = False

    def summary_rows(self) -> list:
        return [("energy_J", self.energy_j), ("latency_s", self.latency_s), ("stage_latency_s", self.stage_latency_s),
                ("area_mm2", self.area_mm2), ("TOPS", self.tops), ("TOPS/W", self.tops_per_w),
                ("TOPS/mm2", self.tops_per_mm2), ("FPS", self.fps), ("degenerate", int(self.degenerate))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in self.summary_rows():
                w.writerow([k, repr(float(v))])
            for kind, br in (("energy", self.energy_breakdown), ("latency", self.latency_breakdown),
                             ("area", self.area_breakdown)):
                for comp, frac in sorted(br.items()):
                    w.writerow([f"{kind}_fraction:{comp}", repr(float(frac))])

    def line_items_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "engine", "component", "param", "energy_pJ", "latency_ns", "area_um2"])
            for row in self.line_items:
                w.writerow(list(row[:4]) + [repr(float(x)) for x in row[4:]])

    def table(self) -> str:
        lines = [f"{k:>16s}  {v:.6g}" for k, v in self.summary_rows()]
        lines.append("  energy breakdown:")
        lines += [f"{k:>16s}  {v:6.2%}" for k, v in sorted(self.energy_breakdown.items())]
        return "\n".join(lines)


def _fractions(totals: dict) -> dict:
    s = sum(totals.values())
    if s <= 0:
        return {}
    return {k: v / s for k, v in totals.items()}


def estimate(trace: Trace, coeffs: CoefficientTable, duplication: int = 1) -> PpaReport:
    """Price a trace. Energy per image, pipeline latency, area and derived throughput."""
    if duplication < 1:
        raise ConfigError("duplication must be >= 1")
    items = []
    e_tot, a_tot, l_tot = {}, {}, {}
    stages = []
    for lt in trace.layers:
        stage_ns = 0.0
        for r in lt.records:
            c = coeffs.get(r.component, r.param)
            e, lat, area = r.events * c.energy_pj, r.steps * c.latency_ns, r.instances * c.area_um2
            items.append((r.layer, r.engine, r.component, r.param, e, lat, area))
            key = f"{r.engine}/{r.component}"
            e_tot[key] = e_tot.get(key, 0.0) + e
            a_tot[key] = a_tot.get(key, 0.0) + area
            l_tot[key] = l_tot.get(key, 0.0) + lat
            stage_ns += lat
        stages.append(stage_ns)
    energy_j = sum(e_tot.values()) * 1e-12
    area_mm2 = sum(a_tot.values()) * 1e-6 * duplication
    stage_s = max(stages, default=0.0) * 1e-9
    latency_s = stage_s * len(stages)
    ops = 2.0 * trace.macs
    fps = duplication / stage_s if stage_s > 0 else 0.0
    tops = ops * fps / 1e12
    power_w = energy_j * fps
    degenerate = energy_j <= 0 or stage_s <= 0 or area_mm2 <= 0
    return PpaReport(
        energy_j=energy_j, latency_s=latency_s, stage_latency_s=stage_s, area_mm2=area_mm2, tops=tops,
        tops_per_w=tops / power_w if power_w > 0 else 0.0,
        tops_per_mm2=tops / area_mm2 if area_mm2 > 0 else 0.0, fps=fps,
        energy_breakdown=_fractions(e_tot), latency_breakdown=_fractions(l_tot), area_breakdown=_fractions(a_tot),
        line_items=items, degenerate=degenerate)
