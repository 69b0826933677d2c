"""Case files: a JSON document describing a network and its uncertainty.

The format is documented by ``schemas/case.schema.json``. Reading then
writing a file produced by :func:`write_case` reproduces it byte for byte.

Variants
--------
``case1``
    Wind units are ordinary members of the reserve set.
``case2``
    Wind units hold no reserves, keep a fixed participation ``0.1 epsilon``
    and may spill without penalty.
``case3``
    Wind units are removed and become negative loads carrying their
    capacity deviation.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .costs import CostConfig
from .errors import ParseError, SchemaVersionMismatch
from .network import Bus, Generator, GeneratorKind, Line, Load, Network, solve_dc_flow, line_flows
from .uncertainty import Distribution, UncertaintyModel

__all__ = [
    "SCHEMA_VERSION",
    "CaseBus",
    "CaseLine",
    "CaseGenerator",
    "CaseLoad",
    "CaseFile",
    "CaseMetadata",
    "read_case",
    "parse_case",
    "write_case",
    "dump_case",
    "load_case",
    "build_network",
    "bundled_case",
    "list_bundled",
    "import_matpower",
    "recipe_118",
]

SCHEMA_VERSION = 1
VARIANTS = ("case1", "case2", "case3")
WIND_UPPER_SIGMAS = 5.0


def load_schema(name: str) -> dict:
    text = resources.files("satopf.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


# --------------------------------------------------------------------------
# document records; None means "absent from the file"


@dataclass
class CaseBus:
    id: int
    name: str | None = None


@dataclass
class CaseLine:
    name: str | None
    from_: int
    to: int
    susceptance: float
    flow_limit: float


@dataclass
class CaseGenerator:
    name: str | None
    bus: int
    kind: str
    cost: float
    p_max: float
    p_min: float | None = None
    sigma: float | None = None
    p0_lower: float | None = None
    p0_upper: float | None = None
    r_plus_max: float | None = None
    r_minus_max: float | None = None
    in_reserve_set: bool | None = None


@dataclass
class CaseLoad:
    name: str | None
    bus: int
    mean: float
    sigma: float | None = None


@dataclass
class CaseFile:
    name: str
    buses: list[CaseBus]
    lines: list[CaseLine]
    generators: list[CaseGenerator]
    loads: list[CaseLoad]
    base_mva: float | None = None
    variant: str | None = None
    distribution: str | None = None
    metadata: dict[str, Any] | None = None
    schema_version: int = SCHEMA_VERSION


@dataclass(frozen=True)
class CaseMetadata:
    name: str
    variant: str
    base_mva: float
    digest: str
    folded_wind: tuple[str, ...] = ()
    source: str = ""
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# parsing and emission

_KEY_ORDER = (
    "schema_version",
    "name",
    "base_mva",
    "variant",
    "distribution",
    "buses",
    "lines",
    "generators",
    "loads",
    "metadata",
)


def _record_to_dict(rec) -> dict:
    out = {}
    for f in fields(rec):
        v = getattr(rec, f.name)
        if v is None:
            continue
        out["from" if f.name == "from_" else f.name] = v
    return out


def _record_from_dict(cls, d: dict):
    kw = {f.name: d.get("from" if f.name == "from_" else f.name) for f in fields(cls)}
    return cls(**kw)


def _line_of(text: str, needle: str) -> int | None:
    idx = text.find(needle)
    return None if idx < 0 else text.count("\n", 0, idx) + 1


def parse_case(text: str) -> CaseFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("case file must hold a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"case file schema_version {version!r} is not supported (expected {SCHEMA_VERSION})"
        )
    try:
        jsonschema.validate(doc, load_schema("case"))
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or None
        key = str(exc.absolute_path[-1]) if exc.absolute_path else None
        line = _line_of(text, f'"{key}"') if isinstance(key, str) and not key.isdigit() else None
        raise ParseError(exc.message, field=path, line=line) from exc
    return CaseFile(
        name=doc["name"],
        buses=[_record_from_dict(CaseBus, b) for b in doc["buses"]],
        lines=[_record_from_dict(CaseLine, b) for b in doc["lines"]],
        generators=[_record_from_dict(CaseGenerator, b) for b in doc["generators"]],
        loads=[_record_from_dict(CaseLoad, b) for b in doc["loads"]],
        base_mva=doc.get("base_mva"),
        variant=doc.get("variant"),
        distribution=doc.get("distribution"),
        metadata=doc.get("metadata"),
        schema_version=version,
    )


def dump_case(case: CaseFile) -> str:
    raw = {
        "schema_version": case.schema_version,
        "name": case.name,
        "base_mva": case.base_mva,
        "variant": case.variant,
        "distribution": case.distribution,
        "buses": [_record_to_dict(b) for b in case.buses],
        "lines": [_record_to_dict(b) for b in case.lines],
        "generators": [_record_to_dict(b) for b in case.generators],
        "loads": [_record_to_dict(b) for b in case.loads],
        "metadata": case.metadata,
    }
    doc = {k: raw[k] for k in _KEY_ORDER if raw[k] is not None}
    return json.dumps(doc, indent=2) + "\n"


def read_case(path: str | Path) -> CaseFile:
    return parse_case(Path(path).read_text())


def write_case(case: CaseFile, path: str | Path) -> None:
    Path(path).write_text(dump_case(case))


# --------------------------------------------------------------------------
# network construction


def build_network(
    case: CaseFile,
    variant: str | None = None,
    costs: CostConfig | None = None,
) -> tuple[Network, UncertaintyModel, CaseMetadata]:
    """Turn a parsed case into a network and uncertainty model.

    ``variant`` overrides the variant stored in the file.
    """
    variant = variant or case.variant or "case1"
    if variant not in VARIANTS:
        raise ParseError(f"unknown variant {variant!r}", field="variant")
    ids = [b.id for b in case.buses]
    if ids != list(range(len(ids))):
        raise ParseError("bus ids must be 0..n-1 in order", field="buses")

    wind_gens = [g for g in case.generators if g.kind == "wind"]
    keep = [g for g in case.generators if not (variant == "case3" and g.kind == "wind")]
    n_gens = len(keep)
    costs = costs or CostConfig()
    eps = costs.epsilon_for(n_gens)

    gens = []
    for k, g in enumerate(keep):
        wind = g.kind == "wind"
        sigma = float(g.sigma or 0.0)
        p_max = float(g.p_max)
        p_min = float(g.p_min if g.p_min is not None else 0.0)
        p0u_default = p_max + WIND_UPPER_SIGMAS * sigma if wind else p_max
        p0u = float(g.p0_upper if g.p0_upper is not None else p0u_default)
        p0l = float(g.p0_lower if g.p0_lower is not None else 0.0)
        rp = float(g.r_plus_max if g.r_plus_max is not None else p0u)
        rm = float(g.r_minus_max if g.r_minus_max is not None else p0u)
        in_res = bool(g.in_reserve_set if g.in_reserve_set is not None else True)
        alpha_fixed = None
        spill_free = False
        if wind and variant == "case2":
            in_res, alpha_fixed, spill_free = False, 0.1 * eps, True
            rp = rm = 0.0
        gens.append(
            Generator(
                bus=g.bus,
                kind=GeneratorKind.WIND if wind else GeneratorKind.REGULAR,
                p_min=p_min,
                p_max=p_max,
                p0_lower=p0l,
                p0_upper=p0u,
                r_plus_max=rp,
                r_minus_max=rm,
                unit_cost=float(g.cost),
                in_reserve_set=in_res,
                alpha_fixed=alpha_fixed,
                spill_free=spill_free,
                name=g.name or f"G{k + 1}",
            )
        )

    loads = [Load(ld.bus, float(ld.mean), ld.name or f"L{k + 1}") for k, ld in enumerate(case.loads)]
    load_sigma = [float(ld.sigma or 0.0) for ld in case.loads]
    folded: list[str] = []
    if variant == "case3":
        for g in wind_gens:
            nm = g.name or f"W{len(folded) + 1}"
            loads.append(Load(g.bus, -float(g.p_max), nm))
            load_sigma.append(float(g.sigma or 0.0))
            folded.append(nm)

    buses = [Bus(b.id, b.id == 0, b.name or "") for b in case.buses]
    lines = [
        Line(ln.from_, ln.to, float(ln.susceptance), float(ln.flow_limit), ln.name or "")
        for ln in case.lines
    ]
    net = Network(buses, lines, gens, loads, name=case.name, base_mva=float(case.base_mva or 1.0))
    wind = [g for g in keep if g.kind == "wind"]
    model = UncertaintyModel(
        load_sigma,
        [float(g.p_max) for g in wind],
        [float(g.sigma or 0.0) for g in wind],
        Distribution(case.distribution or "normal"),
    )
    meta = CaseMetadata(
        name=case.name,
        variant=variant,
        base_mva=net.base_mva,
        digest=hashlib.sha256(dump_case(case).encode()).hexdigest()[:16],
        folded_wind=tuple(folded),
        extra=dict(case.metadata or {}),
    )
    return net, model, meta


def load_case(
    path: str | Path, variant: str | None = None, costs: CostConfig | None = None
) -> tuple[Network, UncertaintyModel, CaseMetadata]:
    """Read ``path`` (or a bundled case name) and build the model objects."""
    p = Path(path)
    if not p.exists() and str(path) in list_bundled():
        p = _bundled_path(str(path))
    case = read_case(p)
    net, model, meta = build_network(case, variant, costs)
    return net, model, CaseMetadata(
        meta.name, meta.variant, meta.base_mva, meta.digest, meta.folded_wind, str(p), meta.extra
    )


def _bundled_path(name: str) -> Path:
    return Path(str(resources.files("satopf.data").joinpath(f"{name}.json")))


def list_bundled() -> list[str]:
    root = resources.files("satopf.data")
    return sorted(Path(str(f)).stem for f in root.iterdir() if str(f).endswith(".json"))


def bundled_case(name: str) -> CaseFile:
    if name not in list_bundled():
        raise FileNotFoundError(f"no bundled case {name!r}; available: {list_bundled()}")
    return read_case(_bundled_path(name))


# --------------------------------------------------------------------------
# MATPOWER import

_MAT_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;")


def _matrix(body: str) -> np.ndarray:
    rows = []
    for raw in re.split(r"[;\n]", body):
        raw = raw.split("%", 1)[0].strip()
        if raw:
            rows.append([float(t) for t in raw.replace(",", " ").split()])
    width = max((len(r) for r in rows), default=0)
    return np.array([r + [np.nan] * (width - len(r)) for r in rows])


def import_matpower(
    source: str | Path,
    name: str | None = None,
    load_sigma_frac: float = 0.1,
    default_flow_limit: float = 9900.0,
    per_unit: bool = False,
) -> CaseFile:
    """Map a MATPOWER ``.m`` case (a path, or the file text itself) into the case-file schema.

    Bus numbers are renumbered so the reference (type 3) bus becomes bus 0.
    Powers stay in MW (susceptance ``baseMVA / x`` in MW/rad, the linear
    cost term in $/MWh) unless ``per_unit`` is set, in which case everything
    is divided through by ``baseMVA``. Branches with a zero rating get
    ``default_flow_limit`` (same units as the output), out-of-service
    equipment is dropped, and parallel branches are kept as separate lines.
    """
    if isinstance(source, str) and "mpc." in source:
        src, text = Path("matpower"), source
    else:
        src = Path(source)
        text = src.read_text()
    mats = {k: _matrix(v) for k, v in _MAT_RE.findall(text)}
    for key in ("bus", "gen", "branch"):
        if key not in mats:
            raise ParseError(f"MATPOWER data lacks mpc.{key}", field=key)
    m = _SCALAR_RE.search(text)
    base = float(m.group(1)) if m else 100.0
    bus, gen, br = mats["bus"], mats["gen"], mats["branch"]
    gencost = mats.get("gencost")

    unit = base if per_unit else 1.0  # divisor applied to MW quantities

    ref = np.flatnonzero(bus[:, 1] == 3)
    order = list(ref[:1]) + [i for i in range(len(bus)) if i not in set(ref[:1])]
    num = {int(bus[i, 0]): k for k, i in enumerate(order)}

    buses = [CaseBus(k, f"bus{int(bus[i, 0])}") for k, i in enumerate(order)]
    lines = []
    for k, row in enumerate(br):
        if row.shape[0] > 10 and row[10] == 0:
            continue
        x = row[3]
        rate = row[5] / unit if row[5] > 0 else default_flow_limit
        lines.append(CaseLine(f"br{k + 1}", num[int(row[0])], num[int(row[1])], base / unit / x, rate))
    gens = []
    for k, row in enumerate(gen):
        if row.shape[0] > 7 and row[7] <= 0:
            continue
        cost = 0.0
        if gencost is not None and k < len(gencost) and gencost[k, 0] == 2:
            n = int(gencost[k, 3])
            coeffs = gencost[k, 4 : 4 + n]
            cost = float(coeffs[-2]) * unit if n >= 2 else 0.0
        gens.append(
            CaseGenerator(
                f"G{k + 1}", num[int(row[0])], "regular", cost, row[8] / unit, p_min=row[9] / unit
            )
        )
    loads = []
    for i in order:
        pd = bus[i, 2] / unit
        if pd != 0:
            loads.append(CaseLoad(f"L{int(bus[i, 0])}", num[int(bus[i, 0])], pd, abs(pd) * load_sigma_frac))
    return CaseFile(name or src.stem, buses, lines, gens, loads, base_mva=base if per_unit else 1.0)


# --------------------------------------------------------------------------
# 118-bus recipe


def _synthetic_118_base(seed: int) -> CaseFile:
    """A deterministic 118-bus, 186-line, 54-generator surrogate network."""
    rng = np.random.default_rng(seed)
    n, n_lines, n_gen = 118, 186, 54
    edges = [(i, i + 1) for i in range(n - 1)] + [(0, n - 1)]
    seen = set(edges)
    while len(edges) < n_lines:
        i = int(rng.integers(n))
        j = (i + int(rng.integers(2, 9))) % n
        e = (min(i, j), max(i, j))
        if e not in seen:
            seen.add(e)
            edges.append(e)
    lines = [
        CaseLine(f"br{k + 1}", a, b, round(float(rng.uniform(500.0, 4000.0)), 1), 100.0)
        for k, (a, b) in enumerate(edges)
    ]
    load_buses = np.sort(rng.choice(n, 99, replace=False))
    loads = [
        CaseLoad(f"L{b}", int(b), round(float(rng.uniform(5.0, 80.0)), 2), None) for b in load_buses
    ]
    demand = sum(ld.mean for ld in loads)
    gen_buses = np.sort(rng.choice(n, n_gen, replace=False))
    shares = rng.uniform(0.5, 1.5, n_gen)
    caps = 2.0 * demand * shares / shares.sum()
    gens = [
        CaseGenerator(f"G{k + 1}", int(b), "regular", round(float(rng.uniform(10.0, 40.0)), 2),
                      round(float(c), 2), p_min=0.0)
        for k, (b, c) in enumerate(zip(gen_buses, caps))
    ]
    return CaseFile("synthetic118", [CaseBus(i) for i in range(n)], lines, gens, loads, base_mva=1.0)


def _calibrated_limits(case: CaseFile) -> list[float]:
    """Flow limits at twice a proportional-dispatch base flow plus 60 MW."""
    net, _, _ = build_network(case)
    frac = net.p_max / net.p_max.sum()
    theta = solve_dc_flow(net, net.injection(frac * net.total_demand))
    return [round(2.0 * abs(f) + 60.0, 2) for f in line_flows(net, theta)]


def recipe_118(
    base: CaseFile | None = None,
    penetration: float = 1.0,
    sigma_frac: float = 0.1,
    seed: int = 118,
) -> CaseFile:
    """Build the 118-bus study case.

    Starting from ``base`` (a MATPOWER import of the 118-bus system, or a
    deterministic synthetic surrogate when ``None``): average demand is
    raised by 50%, line limits are cut by 25%, and 25 wind units are added
    whose total mean capacity is ``penetration`` times half the raised
    demand. Loads and wind get standard deviations of ``sigma_frac`` times
    their means.
    """
    rng = np.random.default_rng(seed + 1)
    if base is None:
        base = _synthetic_118_base(seed)
        limits = _calibrated_limits(base)
    else:
        limits = [ln.flow_limit for ln in base.lines]
    lines = [
        CaseLine(ln.name, ln.from_, ln.to, ln.susceptance, round(0.75 * lim, 6))
        for ln, lim in zip(base.lines, limits)
    ]
    loads = [
        CaseLoad(ld.name, ld.bus, round(1.5 * ld.mean, 6), round(sigma_frac * abs(1.5 * ld.mean), 6))
        for ld in base.loads
    ]
    demand = sum(ld.mean for ld in loads)
    regular = [g for g in base.generators if g.kind == "regular"]
    cap_reg = sum(g.p_max for g in regular)
    if cap_reg < 1.2 * demand:  # keep recourse relatively complete after the demand increase
        scale = 1.2 * demand / cap_reg
        regular = [
            CaseGenerator(g.name, g.bus, g.kind, g.cost, round(g.p_max * scale, 6), p_min=g.p_min)
            for g in regular
        ]
    wind_buses = np.sort(rng.choice(len(base.buses), 25, replace=False))
    shares = rng.uniform(0.5, 1.5, 25)
    mu = penetration * 0.5 * demand * shares / shares.sum()
    wind = [
        CaseGenerator(f"W{k + 1}", int(b), "wind", 0.0, round(float(m), 6), p_min=0.0,
                      sigma=round(float(sigma_frac * m), 6))
        for k, (b, m) in enumerate(zip(wind_buses, mu))
    ]
    meta = {"recipe": "118", "penetration": penetration, "sigma_frac": sigma_frac, "seed": seed}
    return CaseFile(
        f"{base.name}_recipe", base.buses, lines, regular + wind, loads,
        base_mva=base.base_mva, variant="case1", metadata=meta,
    )
