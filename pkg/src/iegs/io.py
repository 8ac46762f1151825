"""Network files, result reports and trace export.

A network file is YAML::

    format: iegs-network
    version: 1
    name: demo
    units: {power: MW, gas: kSm3/h, pressure_square: bar2, reactance: pu, angle: rad, base_mva: 100}
    power_nodes:
      - {id: '1', theta_min: -0.5, theta_max: 0.5}
    power_lines:
      - {id: L1, from: '1', to: '2', x: 0.1, p_cap: 200}
    ...
    regions:
      A: ['1', '2']

Errors name the offending entry and, when known, the line of the file.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .model import (
    CoalGenerator,
    GasCompressor,
    GasFiredGenerator,
    GasNode,
    GasPipeline,
    GasWell,
    IegsSystem,
    Load,
    PowerLine,
    PowerNode,
    id_key,
    validate_system,
)

FORMAT = "iegs-network"
VERSION = 1
UNITS = {
    "power": "MW",
    "gas": "kSm3/h",
    "pressure_square": "bar2",
    "reactance": "pu",
    "angle": "rad",
}


class NetworkFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = ""
        if path:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path


def _lines_of(node) -> dict:
    """Map the plain-python path of every mapping/sequence entry to its line."""
    out = {}

    def walk(n, path):
        out[path] = n.start_mark.line + 1
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                walk(v, path + (k.value,))
        elif isinstance(n, yaml.SequenceNode):
            for i, v in enumerate(n.value):
                walk(v, path + (i,))

    if node is not None:
        walk(node, ())
    return out


# section -> (class, {file key: field}, required keys)
_SECTIONS = {
    "power_nodes": (PowerNode, {"id": "id", "theta_min": "theta_min", "theta_max": "theta_max"}, ("id", "theta_min", "theta_max")),
    "power_lines": (PowerLine, {"id": "id", "from": "from_node", "to": "to_node", "x": "x", "p_cap": "p_cap"}, ("id", "from", "to", "x", "p_cap")),
    "coal_generators": (
        CoalGenerator,
        {"id": "id", "node": "node", "p_min": "p_min", "p_max": "p_max", "c1": "c1", "c2": "c2", "c3": "c3"},
        ("id", "node", "p_min", "p_max", "c1", "c2"),
    ),
    "gas_fired_generators": (
        GasFiredGenerator,
        {"id": "id", "power_node": "power_node", "gas_node": "gas_node", "g_min": "g_min", "g_max": "g_max", "chi": "chi"},
        ("id", "power_node", "gas_node", "g_min", "g_max", "chi"),
    ),
    "gas_nodes": (GasNode, {"id": "id", "pi_min": "pi_min", "pi_max": "pi_max"}, ("id", "pi_min", "pi_max")),
    "pipelines": (
        GasPipeline,
        {"id": "id", "from": "from_node", "to": "to_node", "weymouth": "weymouth", "g_min": "g_cap_min", "g_max": "g_cap_max", "fixed_direction": "fixed_direction"},
        ("id", "from", "to", "weymouth"),
    ),
    "compressors": (
        GasCompressor,
        {"id": "id", "from": "from_node", "to": "to_node", "alpha": "alpha", "g_cap": "g_cap"},
        ("id", "from", "to", "alpha", "g_cap"),
    ),
    "wells": (GasWell, {"id": "id", "node": "node", "g_min": "g_min", "g_max": "g_max", "cost": "cost"}, ("id", "node", "g_min", "g_max", "cost")),
    "loads": (Load, {"id": "id", "node": "node", "kind": "kind", "amount": "amount"}, ("id", "node", "kind", "amount")),
}
_ID_FIELDS = {"id", "from", "to", "node", "power_node", "gas_node", "kind"}


def _parse_entry(section, i, entry, lines, path):
    cls, keymap, required = _SECTIONS[section]
    line = lines.get((section, i))
    if not isinstance(entry, dict):
        raise NetworkFormatError(f"{section}[{i}]: expected a mapping", line, path)
    unknown = set(entry) - set(keymap)
    if unknown:
        raise NetworkFormatError(f"{section}[{i}]: unknown field(s) {', '.join(sorted(map(str, unknown)))}", line, path)
    missing = [k for k in required if k not in entry]
    if missing:
        raise NetworkFormatError(f"{section}[{i}]: missing field(s) {', '.join(missing)}", line, path)
    kw = {}
    for k, v in entry.items():
        fld = keymap[k]
        vline = lines.get((section, i, k), line)
        if k in _ID_FIELDS:
            if v is None or isinstance(v, (dict, list)):
                raise NetworkFormatError(f"{section}[{i}].{k}: expected an id", vline, path)
            kw[fld] = str(v)
        elif k == "fixed_direction":
            if not isinstance(v, bool):
                raise NetworkFormatError(f"{section}[{i}].{k}: expected true/false", vline, path)
            kw[fld] = v
        else:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise NetworkFormatError(f"{section}[{i}].{k}: expected a number, got {v!r}", vline, path)
            if math.isnan(float(v)):
                raise NetworkFormatError(f"{section}[{i}].{k}: NaN is not allowed", vline, path)
            kw[fld] = float(v)
    return cls(**kw)


def parse_network(text: str, path: Optional[str] = None, validate: bool = True) -> IegsSystem:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise NetworkFormatError(f"not valid YAML: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None, path) from None
    lines = _lines_of(node)
    if not isinstance(data, dict):
        raise NetworkFormatError("top level must be a mapping", 1, path)
    if data.get("format") != FORMAT:
        raise NetworkFormatError(f"format must be {FORMAT!r}, got {data.get('format')!r}", lines.get(("format",)), path)
    if data.get("version") != VERSION:
        raise NetworkFormatError(f"unsupported version {data.get('version')!r} (expected {VERSION})", lines.get(("version",)), path)
    known = set(_SECTIONS) | {"format", "version", "name", "units", "regions"}
    unknown = set(data) - known
    if unknown:
        k = sorted(map(str, unknown))[0]
        raise NetworkFormatError(f"unknown section {k!r}", lines.get((k,)), path)
    units = data.get("units") or {}
    if not isinstance(units, dict):
        raise NetworkFormatError("units must be a mapping", lines.get(("units",)), path)
    for k, v in units.items():
        if k == "base_mva":
            continue
        if k not in UNITS:
            raise NetworkFormatError(f"unknown unit key {k!r}", lines.get(("units", k)), path)
        if v != UNITS[k]:
            raise NetworkFormatError(f"unit of {k} must be {UNITS[k]!r}, got {v!r}", lines.get(("units", k)), path)
    base = units.get("base_mva", 100.0)
    if isinstance(base, bool) or not isinstance(base, (int, float)) or not base > 0:
        raise NetworkFormatError(f"base_mva must be a positive number, got {base!r}", lines.get(("units", "base_mva")), path)

    parsed = {}
    for section in _SECTIONS:
        entries = data.get(section) or []
        if not isinstance(entries, list):
            raise NetworkFormatError(f"{section} must be a list", lines.get((section,)), path)
        parsed[section] = [_parse_entry(section, i, e, lines, path) for i, e in enumerate(entries)]
        seen: dict = {}
        for i, obj in enumerate(parsed[section]):
            if obj.id in seen:
                raise NetworkFormatError(
                    f"{section}: duplicate id {obj.id!r} (first at entry {seen[obj.id]})", lines.get((section, i)), path
                )
            seen[obj.id] = i

    regions = data.get("regions")
    if regions is not None:
        if not isinstance(regions, dict):
            raise NetworkFormatError("regions must map region id to a list of power node ids", lines.get(("regions",)), path)
        node_region = {}
        pids = {n.id for n in parsed["power_nodes"]}
        gids = {n.id for n in parsed["gas_nodes"]}
        for r, members in regions.items():
            rl = lines.get(("regions", r))
            if not isinstance(members, list) or not members:
                raise NetworkFormatError(f"region {r}: expected a non-empty list of power node ids", rl, path)
            for m in members:
                m = str(m)
                if m not in pids:
                    what = "a gas node; the gas network is one block" if m in gids else "not a power node"
                    raise NetworkFormatError(f"region {r}: {m} is {what}", rl, path)
                if m in node_region:
                    raise NetworkFormatError(f"power node {m} listed in regions {node_region[m]} and {r}", rl, path)
                node_region[m] = str(r)
        parsed["power_nodes"] = [
            PowerNode(n.id, n.theta_min, n.theta_max, node_region.get(n.id)) for n in parsed["power_nodes"]
        ]

    sys = IegsSystem(
        power_nodes=tuple(parsed["power_nodes"]),
        power_lines=tuple(parsed["power_lines"]),
        coal_generators=tuple(parsed["coal_generators"]),
        gas_fired_generators=tuple(parsed["gas_fired_generators"]),
        gas_nodes=tuple(parsed["gas_nodes"]),
        pipelines=tuple(parsed["pipelines"]),
        compressors=tuple(parsed["compressors"]),
        wells=tuple(parsed["wells"]),
        loads=tuple(parsed["loads"]),
        base_mva=float(base),
        name=str(data.get("name") or ""),
    )
    if validate:
        issues = validate_system(sys, require_regions=regions is not None)
        if issues:
            raise NetworkFormatError("invalid network: " + "; ".join(issues), None, path)
    return sys


def load_network(path, validate: bool = True) -> IegsSystem:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise NetworkFormatError(f"cannot read network file: {exc.strerror}", None, str(p)) from None
    return parse_network(text, str(p), validate)


def _num(v):
    v = float(v)
    return int(v) if v.is_integer() and abs(v) < 1e15 else v


def network_to_dict(sys: IegsSystem) -> dict:
    """Canonical plain-data form: entries sorted by id, optional fields omitted."""
    out: dict[str, Any] = {
        "format": FORMAT,
        "version": VERSION,
        "name": sys.name,
        "units": {**UNITS, "base_mva": _num(sys.base_mva)},
    }
    coll = {
        "power_nodes": sys.power_nodes,
        "power_lines": sys.power_lines,
        "coal_generators": sys.coal_generators,
        "gas_fired_generators": sys.gas_fired_generators,
        "gas_nodes": sys.gas_nodes,
        "pipelines": sys.pipelines,
        "compressors": sys.compressors,
        "wells": sys.wells,
        "loads": sys.loads,
    }
    for section, items in coll.items():
        _, keymap, required = _SECTIONS[section]
        rows = []
        for it in sorted(items, key=lambda o: id_key(o.id)):
            row = {}
            for k, fld in keymap.items():
                v = getattr(it, fld)
                if k not in required and (v is None or v is False):
                    continue
                row[k] = v if (k in _ID_FIELDS or isinstance(v, bool)) else _num(v)
            rows.append(row)
        out[section] = rows
    if any(n.region is not None for n in sys.power_nodes):
        regions: dict[str, list] = {}
        for n in sorted(sys.power_nodes, key=lambda o: id_key(o.id)):
            if n.region is not None:
                regions.setdefault(n.region, []).append(n.id)
        out["regions"] = {r: regions[r] for r in sorted(regions, key=id_key)}
    return out


def dump_network(sys: IegsSystem) -> str:
    d = network_to_dict(sys)
    parts = []
    for k, v in d.items():
        if isinstance(v, list):
            if not v:
                parts.append(f"{k}: []\n")
                continue
            parts.append(f"{k}:\n")
            for row in v:
                parts.append("  - " + yaml.safe_dump(row, default_flow_style=True, sort_keys=False, width=10_000))
        elif isinstance(v, dict) and k == "regions":
            parts.append(f"{k}:\n")
            for r, members in v.items():
                parts.append("  " + yaml.safe_dump({r: members}, default_flow_style=True, width=10_000)[1:-2] + "\n")
        else:
            flow = None if isinstance(v, dict) else False
            parts.append(yaml.safe_dump({k: v}, default_flow_style=flow, sort_keys=False, width=10_000))
    return "".join(parts)


def save_network(sys: IegsSystem, path) -> None:
    Path(path).write_text(dump_network(sys))


# --------------------------------------------------------------------------
# result report
# --------------------------------------------------------------------------


@dataclass
class ResultReport:
    network: str
    mode: str
    status: str
    objective: Optional[float]
    iterations: int = 0
    elapsed_s: float = 0.0
    recovery: Optional[str] = None
    slack_objective: Optional[float] = None
    feasible_before_recovery: Optional[bool] = None
    max_weymouth_residual: Optional[float] = None
    parameters: dict = field(default_factory=dict)
    dispatch: dict = field(default_factory=dict)
    coupling_residuals: list = field(default_factory=list)
    recovery_detail: dict = field(default_factory=dict)
    verification: Optional[dict] = None
    messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def write_report(report: ResultReport, path) -> None:
    Path(path).write_text(json.dumps(_clean(report.to_dict()), indent=2, sort_keys=False) + "\n")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())
