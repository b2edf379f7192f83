"""Simulation configuration.

Files are TOML with one table per section (``[timing]``, ``[signature]``,
``[kernel]``, ``[caches]``, ``[dbi]``, ``[messages]``, ``[energy]``,
``[workload]``) plus top-level ``protocol``, ``seed`` and ``debug`` keys.
Every key can be overridden with a dotted ``section.key=value`` string.

Latency and energy defaults are placeholders picked for plausible ratios;
only the 3 pJ/bit interconnect rate, the 2 Kbit / M=4 / 250-address
signatures, the 16-register processor bank, the 1M-instruction cap, the
3-rollback escalation threshold, the 800K-cycle PIM-DBI interval and the
cache geometries are published values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

PROTOCOLS = ("lazypim", "fg", "cg", "nc", "ideal", "cpu-only")


class ConfigError(ValueError):
    pass


@dataclass
class TimingConfig:
    l1_hit_cycles: int = 4
    l2_hit_cycles: int = 12
    dram_access_cycles: int = 200
    pim_dram_access_cycles: int = 60
    offchip_link_bytes_per_cycle: int = 8
    offchip_latency_cycles: int = 50
    pim_internal_bytes_per_cycle: int = 64
    commit_check_cycles: int = 20
    invalidation_cycles_per_line: int = 1
    launch_cycles: int = 100
    cpu_ipc: int = 4
    pim_ipc: int = 1

    def validate(self) -> None:
        if self.pim_dram_access_cycles > self.dram_access_cycles:
            raise ConfigError("pim_dram_access_cycles must not exceed dram_access_cycles")
        if self.pim_internal_bytes_per_cycle < self.offchip_link_bytes_per_cycle:
            raise ConfigError("PIM internal bandwidth must be at least the off-chip bandwidth")
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"timing.{f.name} must be non-negative")
        if self.offchip_link_bytes_per_cycle < 1 or self.cpu_ipc < 1 or self.pim_ipc < 1:
            raise ConfigError("bandwidth and IPC values must be >= 1")


@dataclass
class SignatureConfig:
    bits: int = 2048
    segments: int = 4
    capacity: int = 250
    cpu_registers: int = 16
    seed: int = 0x5EED


@dataclass
class KernelConfig:
    instruction_cap: int = 1_000_000
    rollback_threshold: int = 3
    partial_commits: bool = True
    eager_writeback: bool = False


@dataclass
class CacheConfig:
    cpu_l1_size: int = 64 * 1024
    cpu_l1_ways: int = 4
    cpu_l2_size: int = 2 * 1024 * 1024
    cpu_l2_ways: int = 8
    pim_l1_size: int = 64 * 1024
    pim_l1_ways: int = 4
    pim_cores: int = 16


@dataclass
class DbiConfig:
    enabled: bool = True
    interval_cycles: int = 800_000
    rows: int = 16
    row_blocks: int = 64
    tag_bits: int = 48


@dataclass
class MessageConfig:
    request: int = 8
    response: int = 8
    header: int = 8
    line: int = 64
    word: int = 8
    launch: int = 64

    @property
    def data(self) -> int:
        return self.line + self.header


@dataclass
class EnergyConfig:
    interconnect_pj_per_bit: float = 3.0
    # placeholders: the published model used CACTI and unpublished DRAM figures
    dram_pj_per_bit: float = 20.0
    l1_pj_per_access: float = 10.0
    l2_pj_per_access: float = 50.0
    dbi_pj_per_access: float = 1.0


@dataclass
class SimConfig:
    protocol: str = "lazypim"
    seed: int = 1
    debug: bool = False
    timing: TimingConfig = field(default_factory=TimingConfig)
    signature: SignatureConfig = field(default_factory=SignatureConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    caches: CacheConfig = field(default_factory=CacheConfig)
    dbi: DbiConfig = field(default_factory=DbiConfig)
    messages: MessageConfig = field(default_factory=MessageConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    workload: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> "SimConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}")
        self.timing.validate()
        s = self.signature
        if s.bits % s.segments:
            raise ConfigError("signature.bits must be divisible by signature.segments")
        seg = s.bits // s.segments
        if seg & (seg - 1):
            raise ConfigError("signature segment width must be a power of two")
        if s.capacity < 1 or s.cpu_registers < 1:
            raise ConfigError("signature.capacity and cpu_registers must be >= 1")
        if self.kernel.instruction_cap < 1 or self.kernel.rollback_threshold < 0:
            raise ConfigError("kernel.instruction_cap must be >= 1")
        if self.caches.pim_cores < 1:
            raise ConfigError("need at least one PIM core")
        if self.dbi.interval_cycles < 1:
            raise ConfigError("dbi.interval_cycles must be >= 1")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **overrides: Any) -> "SimConfig":
        out = from_dict(self.to_dict())
        for key, value in overrides.items():
            apply_override(out, key.replace("__", "."), value)
        return out.validate()


_SECTIONS = {f.name for f in dataclasses.fields(SimConfig)} - {"protocol", "seed", "debug", "workload"}


def _coerce(current: Any, value: Any) -> Any:
    if isinstance(value, str):
        if isinstance(current, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"not a boolean: {value!r}")
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(value, 0)
        if isinstance(current, float):
            return float(value)
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    return value


def apply_override(cfg: SimConfig, key: str, value: Any) -> None:
    parts = key.split(".")
    if len(parts) == 1:
        if parts[0] not in ("protocol", "seed", "debug"):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, parts[0], _coerce(getattr(cfg, parts[0]), value))
        return
    section, name = parts[0], ".".join(parts[1:])
    if section == "workload":
        cfg.workload[name] = value
        return
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    obj = getattr(cfg, section)
    if not hasattr(obj, name):
        raise ConfigError(f"unknown config key {key!r}")
    setattr(obj, name, _coerce(getattr(obj, name), value))


def from_dict(data: dict[str, Any]) -> SimConfig:
    cfg = SimConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            for k, v in value.items():
                apply_override(cfg, f"{key}.{k}", v)
        elif key == "workload":
            cfg.workload = dict(value)
        else:
            apply_override(cfg, key, value)
    return cfg


DATA_DIR = Path(__file__).parent / "data"


def shipped_configs() -> list[str]:
    return sorted(p.stem for p in DATA_DIR.glob("*.toml"))


def resolve_config_path(name: str | Path) -> Path:
    """A file path, or the bare name of a shipped config such as ``high-sharing``."""
    path = Path(name)
    if path.exists():
        return path
    shipped = DATA_DIR / f"{path.stem}.toml"
    if path.suffix in ("", ".toml") and path.parent == Path(".") and shipped.exists():
        return shipped
    raise ConfigError(f"no config file {str(name)!r}; shipped configs: {', '.join(shipped_configs())}")


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> SimConfig:
    data: dict[str, Any] = {}
    if path is not None:
        path = resolve_config_path(path)
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        trace = data.get("workload", {}).get("trace")
        if isinstance(trace, str) and not Path(trace).is_absolute():
            data["workload"]["trace"] = str(path.parent / trace)
    cfg = from_dict(data)
    for key, value in (overrides or {}).items():
        apply_override(cfg, key, value)
    return cfg.validate()
