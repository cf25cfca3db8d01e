"""Grid description: domain types, TOML parsing, and invariant validation.

The configuration document is TOML with sections [system], [[bus]],
[[branch]], [[gfl]] and [solver]. All electrical quantities are per-unit
except frequencies (Hz) and the sampling period t_s (seconds).
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

BUS_KINDS = ("slack", "pv", "pq")
SOURCE_KINDS = ("infinite_bus", "gfl")


@dataclass(frozen=True)
class SolverSettings:
    """Numeric knobs shared across the pipeline."""

    pf_tol_mismatch: float = 1e-8
    pf_tol_step: float = 1e-10
    pf_max_iter: int = 50
    u_floor: float = 0.5
    default_shunt_c: float = 1e-4
    default_t_s: float = 0.0
    contour_radius_rel: float = 1e-3
    contour_points: int = 64
    pade_order: int = 0
    mode_rel_tol: float = 1e-9
    mode_max_iter: int = 50
    dedup_rel: float = 1e-6
    freq_floor_hz: float = 0.5


@dataclass(frozen=True)
class DvlParams:
    """DC-voltage-loop PI gains and DC-link constants."""

    kp_dvl: float
    ki_dvl: float
    c_dc: float
    u_dc_ref: float


@dataclass(frozen=True)
class GflParams:
    """Current-control and PLL gains plus the AC filter of one inverter."""

    kp_ccl: float
    ki_ccl: float
    kp_pll: float
    ki_pll: float
    r_f: float
    l_f: float
    t_s: float = 0.0
    dvl: DvlParams | None = None


@dataclass(frozen=True)
class BusSpec:
    id: str
    kind: str = "pq"
    v_set: float = 1.0
    p_inj: float = 0.0
    q_inj: float = 0.0
    #: per-unit shunt capacitance; None means "use solver.default_shunt_c"
    shunt_c: float | None = None


@dataclass(frozen=True)
class BranchSpec:
    from_bus: str
    to_bus: str
    r: float
    l: float


@dataclass(frozen=True)
class SourceSpec:
    bus: str
    kind: str
    gfl_params: GflParams | None = None


@dataclass(frozen=True)
class SystemConfig:
    base_frequency_hz: float
    s_base: float
    buses: tuple[BusSpec, ...]
    branches: tuple[BranchSpec, ...]
    sources: tuple[SourceSpec, ...]
    solver: SolverSettings = field(default_factory=SolverSettings)

    @property
    def omega_b(self) -> float:
        return 2.0 * math.pi * self.base_frequency_hz

    @property
    def slack_bus(self) -> str:
        return next(b.id for b in self.buses if b.kind == "slack")

    @property
    def active_buses(self) -> tuple[str, ...]:
        """Buses kept in the nodal model (infinite-bus node grounded)."""
        return tuple(b.id for b in self.buses if b.id != self.slack_bus)

    @property
    def gfl_sources(self) -> tuple[SourceSpec, ...]:
        return tuple(s for s in self.sources if s.kind == "gfl")

    def bus(self, bus_id: str) -> BusSpec:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise ConfigError(f"unknown bus {bus_id!r}")

    def shunt_of(self, bus_id: str) -> float:
        c = self.bus(bus_id).shunt_c
        return self.solver.default_shunt_c if c is None else c

    def source_at(self, bus_id: str) -> SourceSpec | None:
        for s in self.sources:
            if s.bus == bus_id:
                return s
        return None


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing key {key!r} in {where}")
    return table[key]


def _number(table: dict, key: str, where: str, default=None) -> float:
    if key not in table:
        if default is None:
            raise ConfigError(f"missing key {key!r} in {where}")
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"key {key!r} in {where} must be a number")
    return float(value)


_GFL_KEYS = {"bus", "kp_ccl", "ki_ccl", "kp_pll", "ki_pll", "r_f", "l_f", "t_s", "dvl"}
_DVL_KEYS = {"kp_dvl", "ki_dvl", "c_dc", "u_dc_ref"}
_BUS_KEYS = {"id", "kind", "v_set", "p_inj", "q_inj", "shunt_c"}
_BRANCH_KEYS = {"from", "to", "r", "l"}


def _check_keys(table: dict, allowed: set, where: str):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def load_config(text: str) -> SystemConfig:
    """Parse and validate a configuration document.

    Raises ConfigError naming the offending key or the violated rule.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed document: {exc}") from exc

    system = doc.get("system")
    if not isinstance(system, dict):
        raise ConfigError("missing [system] section")
    f_base = _number(system, "base_frequency_hz", "[system]")
    if f_base <= 0:
        raise ConfigError("base_frequency_hz must be > 0")
    s_base = _number(system, "s_base", "[system]", default=1.0)

    solver_tbl = doc.get("solver", {})
    defaults = SolverSettings()
    _check_keys(solver_tbl, set(defaults.__dataclass_fields__), "[solver]")
    solver = replace(defaults, **{k: type(getattr(defaults, k))(v)
                                  for k, v in solver_tbl.items()})

    buses = []
    for i, tbl in enumerate(doc.get("bus", [])):
        where = f"[[bus]] #{i + 1}"
        _check_keys(tbl, _BUS_KEYS, where)
        bus_id = str(_require(tbl, "id", where))
        kind = tbl.get("kind", "pq")
        if kind not in BUS_KINDS:
            raise ConfigError(f"bus {bus_id!r}: kind must be one of {BUS_KINDS}")
        shunt = tbl.get("shunt_c")
        spec = BusSpec(
            id=bus_id,
            kind=kind,
            v_set=_number(tbl, "v_set", where, default=1.0),
            p_inj=_number(tbl, "p_inj", where, default=0.0),
            q_inj=_number(tbl, "q_inj", where, default=0.0),
            shunt_c=None if shunt is None else float(shunt),
        )
        if spec.kind in ("slack", "pv") and spec.v_set <= 0:
            raise ConfigError(f"bus {bus_id!r}: v_set must be > 0")
        if spec.shunt_c is not None and spec.shunt_c < 0:
            raise ConfigError(f"bus {bus_id!r}: shunt_c must be >= 0")
        buses.append(spec)

    if not buses:
        raise ConfigError("at least one [[bus]] is required")
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate bus ids")
    slack = [b.id for b in buses if b.kind == "slack"]
    if len(slack) != 1:
        raise ConfigError(f"exactly one slack bus required, found {len(slack)}")

    branches = []
    for i, tbl in enumerate(doc.get("branch", [])):
        where = f"[[branch]] #{i + 1}"
        _check_keys(tbl, _BRANCH_KEYS, where)
        frm = str(_require(tbl, "from", where))
        to = str(_require(tbl, "to", where))
        r = _number(tbl, "r", where, default=0.0)
        l = _number(tbl, "l", where)
        if frm == to:
            raise ConfigError(f"{where}: from and to must differ")
        for end in (frm, to):
            if end not in ids:
                raise ConfigError(f"{where}: unknown bus {end!r}")
        if r < 0:
            raise ConfigError(f"{where}: r must be >= 0")
        if l <= 0:
            raise ConfigError(f"{where}: l must be > 0")
        branches.append(BranchSpec(frm, to, r, l))

    _check_connected(ids, branches)

    sources: list[SourceSpec] = [SourceSpec(bus=slack[0], kind="infinite_bus")]
    for i, tbl in enumerate(doc.get("gfl", [])):
        where = f"[[gfl]] #{i + 1}"
        _check_keys(tbl, _GFL_KEYS, where)
        bus_id = str(_require(tbl, "bus", where))
        if bus_id not in ids:
            raise ConfigError(f"{where}: unknown bus {bus_id!r}")
        dvl = None
        if "dvl" in tbl:
            dtbl = tbl["dvl"]
            _check_keys(dtbl, _DVL_KEYS, f"{where}.dvl")
            dvl = DvlParams(
                kp_dvl=_number(dtbl, "kp_dvl", f"{where}.dvl"),
                ki_dvl=_number(dtbl, "ki_dvl", f"{where}.dvl"),
                c_dc=_number(dtbl, "c_dc", f"{where}.dvl"),
                u_dc_ref=_number(dtbl, "u_dc_ref", f"{where}.dvl"),
            )
            if dvl.c_dc <= 0:
                raise ConfigError(f"{where}.dvl: c_dc must be > 0")
            if dvl.u_dc_ref <= 0:
                raise ConfigError(f"{where}.dvl: u_dc_ref must be > 0")
        params = GflParams(
            kp_ccl=_number(tbl, "kp_ccl", where),
            ki_ccl=_number(tbl, "ki_ccl", where),
            kp_pll=_number(tbl, "kp_pll", where),
            ki_pll=_number(tbl, "ki_pll", where),
            r_f=_number(tbl, "r_f", where),
            l_f=_number(tbl, "l_f", where),
            t_s=_number(tbl, "t_s", where, default=solver.default_t_s),
            dvl=dvl,
        )
        if params.ki_pll <= 0:
            raise ConfigError(f"{where}: ki_pll must be > 0")
        if params.l_f <= 0:
            raise ConfigError(f"{where}: l_f must be > 0")
        if params.t_s < 0:
            raise ConfigError(f"{where}: t_s must be >= 0")
        sources.append(SourceSpec(bus=bus_id, kind="gfl", gfl_params=params))

    seen = set()
    for src in sources:
        if src.bus in seen:
            raise ConfigError(f"duplicate source on bus {src.bus!r}")
        seen.add(src.bus)
    for src in sources:
        if src.kind == "infinite_bus" and src.bus != slack[0]:
            raise ConfigError("infinite_bus source must sit on the slack bus")
        if src.kind == "gfl" and src.bus == slack[0]:
            raise ConfigError(f"gfl source on the slack bus {src.bus!r}")

    return SystemConfig(
        base_frequency_hz=f_base,
        s_base=s_base,
        buses=tuple(buses),
        branches=tuple(branches),
        sources=tuple(sources),
        solver=solver,
    )


def load_config_file(path) -> SystemConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return load_config(handle.read())


def _check_connected(ids: list[str], branches: list[BranchSpec]):
    if len(ids) == 1:
        return
    adjacency: dict[str, set[str]] = {i: set() for i in ids}
    for br in branches:
        adjacency[br.from_bus].add(br.to_bus)
        adjacency[br.to_bus].add(br.from_bus)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if seen != set(ids):
        missing = sorted(set(ids) - seen)
        raise ConfigError(f"branch graph is not connected; unreachable: {missing}")
