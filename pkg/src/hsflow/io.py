"""Grid files (binary chart fields) and JSON analysis reports.

A grid file is the ASCII line ``HSG1``, one line of JSON header, then for
every field listed in the header the Z-chart and W-chart arrays as
little-endian float64 in row-major order.  Values are written verbatim
(NaN and infinities included), so reading a written file reproduces every
bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .geometry import CHARTS, Atlas, ChartField

MAGIC = b"HSG1"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


class GridFormatError(ValueError):
    """A grid file or report does not follow the expected layout."""


@dataclass
class GridFile:
    """Named chart fields on one atlas plus free-form metadata."""

    atlas: Atlas
    fields: dict = field(default_factory=dict)
    t_grid: Optional[np.ndarray] = None
    s_grid: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list:
        return list(self.fields)

    def add(self, f: ChartField, name: Optional[str] = None):
        name = name or f.name
        if not name:
            raise ValueError("fields need a name")
        if f.atlas != self.atlas:
            raise ValueError(f"field {name!r} is on {f.atlas}, file is on {self.atlas}")
        self.fields[name] = f

    def field(self, name: str) -> ChartField:
        try:
            return self.fields[name]
        except KeyError:
            raise GridFormatError(f"grid file has no field {name!r}; available: {self.names}") from None

    def header(self) -> dict:
        return {
            "format": MAGIC.decode(),
            "version": FORMAT_VERSION,
            "charts": list(CHARTS),
            "n": self.atlas.n,
            "extent": self.atlas.extent,
            "dtype": "float64-le",
            "order": "row-major",
            "fields": [{"name": k, "fs_weight": f.fs_weight, "time": f.time} for k, f in self.fields.items()],
            "t_grid": None if self.t_grid is None else [float(x) for x in self.t_grid],
            "s_grid": None if self.s_grid is None else [float(x) for x in self.s_grid],
            "meta": self.meta,
        }


def write_grid(gf: GridFile, path) -> None:
    head = json.dumps(gf.header(), sort_keys=True, allow_nan=True).encode()
    if b"\n" in head:
        raise ValueError("header must fit on one line")
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(head + b"\n")
        for f in gf.fields.values():
            for c in CHARTS:
                fh.write(np.ascontiguousarray(f[c], dtype=_DTYPE).tobytes(order="C"))


def read_grid(path) -> GridFile:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise GridFormatError(f"cannot read grid file {path}: {exc.strerror}") from exc
    first = raw.find(b"\n")
    if first < 0 or raw[:first] != MAGIC:
        raise GridFormatError(f"{path} is not a grid file (missing {MAGIC.decode()} magic line)")
    second = raw.find(b"\n", first + 1)
    if second < 0:
        raise GridFormatError(f"{path}: truncated header")
    try:
        head = json.loads(raw[first + 1:second])
        n = int(head["n"])
        extent = float(head["extent"])
        specs = head["fields"]
    except (ValueError, KeyError, TypeError) as exc:
        raise GridFormatError(f"{path}: malformed header ({exc})") from exc
    if head.get("version") != FORMAT_VERSION:
        raise GridFormatError(f"{path}: unsupported version {head.get('version')}")
    atlas = Atlas(n, extent)
    if atlas.n != n:
        raise GridFormatError(f"{path}: grid size must be odd, got {n}")
    block = n * n * _DTYPE.itemsize
    payload = memoryview(raw)[second + 1:]
    if len(payload) != 2 * block * len(specs):
        raise GridFormatError(f"{path}: payload has {len(payload)} bytes, expected {2 * block * len(specs)}")
    gf = GridFile(atlas, meta=head.get("meta") or {})
    if head.get("t_grid") is not None:
        gf.t_grid = np.asarray(head["t_grid"], dtype=float)
    if head.get("s_grid") is not None:
        gf.s_grid = np.asarray(head["s_grid"], dtype=float)
    off = 0
    for spec in specs:
        arrs = []
        for _ in CHARTS:
            arrs.append(np.frombuffer(payload[off:off + block], dtype=_DTYPE).reshape(n, n).astype(np.float64))
            off += block
        t = spec.get("time")
        gf.fields[spec["name"]] = ChartField(atlas, arrs[0], arrs[1], fs_weight=float(spec.get("fs_weight", 0.0)),
                                             name=spec["name"], time=None if t is None else float(t))
    return gf


# ----------------------------------------------------------------------------
# flow families


def _psi_name(k: int) -> str:
    return f"psi[{k}]"


def save_flow(family, path, spec_json: Optional[str] = None) -> None:
    """Store ``phi`` and every ``psi_t`` with the snapshot diagnostics."""
    gf = GridFile(family.atlas, t_grid=np.asarray(family.t_grid, dtype=float))
    gf.add(family.phi, "phi")
    ctr = family.atlas["Z"].center
    for k, snap in enumerate(family.snapshots):
        gf.add(snap.psi, _psi_name(k))
    gf.meta = {
        "kind": "flow",
        "contact_tol": [s.contact_tol for s in family.snapshots],
        "area": [s.area for s in family.snapshots],
        "residual": [s.residual for s in family.snapshots],
        "cycles": [s.cycles for s in family.snapshots],
        "u_origin": [float(s.u.z[ctr, ctr]) for s in family.snapshots],
        "potential": None if spec_json is None else json.loads(spec_json),
    }
    write_grid(gf, path)


def load_flow(path):
    """Rebuild a ``FlowFamily`` from a flow grid file.

    Domains are recomputed from ``psi_t`` and ``phi`` with the stored
    contact tolerance; ``u = psi_t - g_t`` is rebuilt the same way.
    """
    from .envelope import FlowFamily, FlowSnapshot, extract_domain, log_pole

    gf = read_grid(path)
    meta = gf.meta
    if meta.get("kind") != "flow" or gf.t_grid is None:
        raise GridFormatError(f"{path} does not hold a flow family")
    nt = gf.t_grid.size
    for key in ("contact_tol", "area", "residual", "cycles", "u_origin"):
        if len(meta.get(key, [])) != nt:
            raise GridFormatError(f"{path}: metadata {key!r} does not match the time grid")
    phi = gf.field("phi")
    fam = FlowFamily(phi, gf.t_grid)
    ctr = gf.atlas["Z"].center
    for k, t in enumerate(gf.t_grid):
        psi = gf.field(_psi_name(k))
        psi.name, psi.time = "psi", float(t)
        if t == 0:
            u = psi.copy()
        else:
            with np.errstate(invalid="ignore"):
                u = psi - log_pole(gf.atlas, float(t))
            u.z[ctr, ctr] = meta["u_origin"][k]
        u.name, u.time = "u", float(t)
        tol = float(meta["contact_tol"][k])
        mask = extract_domain(psi, phi, tol, float(t))
        fam.snapshots.append(FlowSnapshot(float(t), psi, u, mask, float(meta["area"][k]),
                                          float(meta["residual"][k]), int(meta["cycles"][k]), tol))
    return fam


# ----------------------------------------------------------------------------
# reports

_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hsflow analysis report",
    "type": "object",
    "required": ["t", "area", "domain_components", "complement_components", "window",
                 "discs", "residuals", "H_checks"],
    "properties": {
        "t": {"type": "array", "items": _NUM, "minItems": 1},
        "area": {"type": "array", "items": _NUM},
        "domain_components": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "complement_components": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "simply_connected": {"type": "array", "items": {"type": "boolean"}},
        "window": {"oneOf": [{"type": "null"},
                             {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}]},
        "discs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "H_value", "t", "residual"],
                "properties": {
                    "kind": {"enum": ["center", "boundary_constant", "riemann", "no_riemann_disc"]},
                    "H_value": _NUM_OR_NULL,
                    "t": _NUM_OR_NULL,
                    "z": {"type": "array"},
                    "residual": {"type": "object"},
                },
            },
        },
        "residuals": {"type": "object"},
        "H_checks": {"type": "object"},
        "no_disc_region": {"type": ["object", "null"]},
        "meta": {"type": "object"},
    },
}

_PER_T = ("t", "area", "domain_components", "complement_components", "simply_connected")


def validate_report(doc: dict) -> None:
    """Raise ``GridFormatError`` unless ``doc`` matches the report schema."""
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise GridFormatError(f"report schema violation at {where}: {exc.message}") from None
    nt = len(doc["t"])
    for key in _PER_T:
        if key in doc and len(doc[key]) != nt:
            raise GridFormatError(f"report array {key!r} has {len(doc[key])} entries, t grid has {nt}")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else None
    return x


def write_report(doc: dict, path) -> dict:
    doc = _jsonable(doc)
    validate_report(doc)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def read_report(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise GridFormatError(f"cannot read report {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{path} is not valid JSON: {exc}") from exc
    validate_report(doc)
    return doc
