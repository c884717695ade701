"""Protocol parameter sets, timing constants and configuration checks."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

#: Marker for a deferral counter that never expires (802.11-style stage).
INFINITE = None

# Kernels work on int64 arrays; keep every window well inside that range.
_MAX_CW = 2**62


class ConfigError(ValueError):
    """Raised for invalid or unsupported protocol configurations."""


@dataclass(frozen=True)
class ProtocolConfig:
    """Per-stage contention windows and initial deferral counter values.

    ``dc[i] is None`` marks a stage whose deferral counter never expires.
    """

    cw: tuple[int, ...]
    dc: tuple[Optional[int], ...]

    def __post_init__(self):
        cw = tuple(int(c) for c in self.cw)
        dc = tuple(None if d is None else int(d) for d in self.dc)
        object.__setattr__(self, "cw", cw)
        object.__setattr__(self, "dc", dc)
        if len(cw) == 0:
            raise ConfigError("at least one backoff stage is required")
        if len(cw) != len(dc):
            raise ConfigError(f"cw has {len(cw)} stages but dc has {len(dc)}")
        for i, c in enumerate(cw):
            if c < 2:
                raise ConfigError(f"cw[{i}]={c} must be >= 2")
            if c > _MAX_CW:
                raise ConfigError(f"cw[{i}]={c} exceeds the supported range")
        for i, d in enumerate(dc):
            if d is not None and d < 0:
                raise ConfigError(f"dc[{i}]={d} must be >= 0 or INFINITE")

    @property
    def m(self) -> int:
        return len(self.cw)

    def stage(self, i: int) -> tuple[int, Optional[int]]:
        return self.cw[i], self.dc[i]

    def effective_deferral(self, i: int) -> int:
        """Integer deferral value with identical dynamics for stage ``i``.

        A deferral value of ``cw - 1`` or more can never expire before the
        backoff counter does, so INFINITE maps onto ``cw``.
        """
        d = self.dc[i]
        return self.cw[i] if d is None else min(d, self.cw[i])

    def truncated(self, m: int) -> "ProtocolConfig":
        """The first ``m`` stages of this configuration."""
        if not 1 <= m <= self.m:
            raise ConfigError(f"cannot truncate {self.m} stages to {m}")
        return ProtocolConfig(self.cw[:m], self.dc[:m])

    def distinct_stages(self) -> tuple[list[tuple[int, Optional[int]]], np.ndarray]:
        """Unique (cw, dc) pairs and the index of each stage into them."""
        uniq: list[tuple[int, Optional[int]]] = []
        index = np.empty(self.m, dtype=np.int64)
        lookup: dict = {}
        for i in range(self.m):
            key = self.stage(i)
            if key not in lookup:
                lookup[key] = len(uniq)
                uniq.append(key)
            index[i] = lookup[key]
        return uniq, index

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "cw": list(self.cw),
            "dc": ["inf" if d is None else d for d in self.dc],
        }


@dataclass(frozen=True)
class TimingParams:
    """Slot and frame durations in microseconds."""

    slot_sigma: float = 35.84
    prs: float = 35.84
    cifs: float = 100.00
    rifs: float = 140.00
    preamble: float = 110.48
    ack: float = 110.48
    frame_d: float = 2500.00
    eifs: float = 2920.64

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(f"timing parameter {name}={value} must be positive")

    @property
    def t_success(self) -> float:
        return 2 * self.prs + self.preamble + self.frame_d + self.rifs + self.ack + self.cifs

    @property
    def t_collision(self) -> float:
        return self.eifs

    def throughput(self, p_success, p_collision, p_idle):
        """Normalized throughput for the given slot-type probabilities (or counts)."""
        busy_time = (
            p_success * self.t_success + p_collision * self.t_collision + p_idle * self.slot_sigma
        )
        return p_success * self.frame_d / busy_time


class Preset(str, enum.Enum):
    CA0_CA1 = "CA0_CA1"
    CA2_CA3 = "CA2_CA3"
    COUNTEREXAMPLE_3EQ = "COUNTEREXAMPLE_3EQ"


_PRESET_ALIASES = {
    "ca0_ca1": Preset.CA0_CA1,
    "ca0ca1": Preset.CA0_CA1,
    "ca0": Preset.CA0_CA1,
    "ca1": Preset.CA0_CA1,
    "ca2_ca3": Preset.CA2_CA3,
    "ca2ca3": Preset.CA2_CA3,
    "ca2": Preset.CA2_CA3,
    "ca3": Preset.CA2_CA3,
    "counterexample_3eq": Preset.COUNTEREXAMPLE_3EQ,
    "counterexample": Preset.COUNTEREXAMPLE_3EQ,
}


def builtin_config(name) -> ProtocolConfig:
    """Return one of the standard parameter sets.

    ``name`` may be a :class:`Preset` or a case-insensitive alias such as
    ``"ca1"``, ``"ca2ca3"`` or ``"counterexample"``.
    """
    preset = name if isinstance(name, Preset) else _PRESET_ALIASES.get(str(name).lower())
    if preset is None:
        try:
            preset = Preset(str(name))
        except ValueError:
            raise ConfigError(f"unknown preset {name!r}") from None
    if preset is Preset.CA0_CA1:
        return ProtocolConfig((8, 16, 32, 64), (0, 1, 3, 15))
    if preset is Preset.CA2_CA3:
        return ProtocolConfig((8, 16, 16, 32), (0, 1, 3, 15))
    cw = [32] * 4 + [4] * 50 + [64] * 6
    dc = [3] * 4 + [INFINITE] * 50 + [3] * 6
    return ProtocolConfig(tuple(cw), tuple(dc))


def family_config(cw_min: int, d0: int, f: float, m: int) -> ProtocolConfig:
    """Doubling windows with geometrically growing deferral values.

    ``cw[i] = 2**i * cw_min`` and ``dc[i] = floor(f**i * (d0 + 1) - 1)``.
    """
    if cw_min < 2 or d0 < 0 or not f > 0 or m < 1:
        raise ConfigError(f"invalid family parameters cw_min={cw_min} d0={d0} f={f} m={m}")
    cw = []
    dc = []
    for i in range(m):
        c = (2**i) * int(cw_min)
        if c > _MAX_CW:
            raise OverflowError(f"cw[{i}] = 2**{i} * {cw_min} overflows")
        cw.append(c)
        dc.append(max(0, math.floor(f**i * (d0 + 1) - 1 + 1e-9)))
    return ProtocolConfig(tuple(cw), tuple(dc))


def alpha_config(alpha: float, m: int) -> ProtocolConfig:
    """Windows scaled by ``alpha`` per stage: ``cw[i] = floor(8 alpha**i)``, ``dc[i] = ceil(alpha**i - 1)``."""
    if not alpha > 0 or m < 1:
        raise ConfigError(f"invalid alpha={alpha} or m={m}")
    cw = [math.floor(8 * alpha**i + 1e-9) for i in range(m)]
    dc = [max(0, math.ceil(alpha**i - 1 - 1e-9)) for i in range(m)]
    for i, c in enumerate(cw):
        if c < 2:
            raise ConfigError(f"alpha={alpha} gives cw[{i}]={c} < 2 for m={m}")
    return ProtocolConfig(tuple(cw), tuple(dc))


class Verdict(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    UNDECIDED = "UNDECIDED"


@dataclass(frozen=True)
class TransitionVerdict:
    stage: int  # transition stage -> stage + 1
    verdict: Verdict
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS


def check_window_rule(config: ProtocolConfig) -> list[TransitionVerdict]:
    """Sufficient window/deferral conditions for decreasing attempt rates.

    Equal deferral values need ``CW_{i+1} > CW_i``; otherwise
    ``CW_{i+1} > 2 CW_i - d_i - 1``.  Transitions with exactly one
    never-expiring deferral counter are reported UNDECIDED.  Deferral values
    are capped at ``CW_i - 1`` first.
    """

    def stage(i):
        # a counter that cannot expire before the backoff does acts like cw - 1
        cw, d = config.stage(i)
        return cw, (None if d is None else min(d, cw - 1))

    out = []
    for i in range(config.m - 1):
        cw0, d0 = stage(i)
        cw1, d1 = stage(i + 1)
        if (d0 is None) != (d1 is None):
            out.append(TransitionVerdict(i, Verdict.UNDECIDED, "one deferral value is infinite"))
            continue
        if d0 == d1:
            ok = cw1 > cw0
            detail = f"{cw1} > {cw0}"
        else:
            bound = 2 * cw0 - d0 - 1
            ok = cw1 > bound
            detail = f"{cw1} > {bound}"
        out.append(TransitionVerdict(i, Verdict.PASS if ok else Verdict.FAIL, detail))
    return out


def check_cond_numeric(config: ProtocolConfig, grid: int = 101) -> list[TransitionVerdict]:
    """Check ``tau_i(p) > tau_{i+1}(p)`` on a closed uniform grid of p in [0, 1]."""
    from .stage import stage_curves

    if grid < 2:
        raise ConfigError("grid needs at least two points")
    p = np.linspace(0.0, 1.0, grid)
    taus = [stage_curves(cw, d, p).tau for cw, d in (config.stage(i) for i in range(config.m))]
    out = []
    for i in range(config.m - 1):
        gap = taus[i] - taus[i + 1]
        worst = int(np.argmin(gap))
        if np.all(gap > 0):
            out.append(TransitionVerdict(i, Verdict.PASS, f"min gap {gap[worst]:.3g}"))
        else:
            out.append(
                TransitionVerdict(i, Verdict.FAIL, f"gap {gap[worst]:.3g} at p={p[worst]:.3f}")
            )
    return out


def satisfies_cond(config: ProtocolConfig, grid: int = 101) -> bool:
    return all(v.passed for v in check_cond_numeric(config, grid))


def _parse_dc(value):
    if value is None:
        return INFINITE
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinite", "infinity"):
            return INFINITE
        raise ConfigError(f"deferral value {value!r} is neither an integer nor 'inf'")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"deferral value {value!r} is not an integer")
    return value


def config_from_mapping(doc: dict) -> tuple[ProtocolConfig, TimingParams]:
    """Build a configuration from a parsed config document."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    try:
        cw = doc["cw"]
        dc = doc["dc"]
    except KeyError as exc:
        raise ConfigError(f"config document lacks field {exc.args[0]!r}") from None
    if not isinstance(cw, Sequence) or not isinstance(dc, Sequence):
        raise ConfigError("cw and dc must be lists")
    for c in cw:
        if isinstance(c, bool) or not isinstance(c, int):
            raise ConfigError(f"contention window {c!r} is not an integer")
    config = ProtocolConfig(tuple(cw), tuple(_parse_dc(d) for d in dc))
    if "m" in doc and doc["m"] != config.m:
        raise ConfigError(f"m={doc['m']} disagrees with {config.m} listed stages")
    timing = TimingParams()
    overrides = doc.get("timing") or {}
    if not isinstance(overrides, dict):
        raise ConfigError("timing must be a mapping")
    unknown = set(overrides) - set(TimingParams.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown timing fields: {sorted(unknown)}")
    try:
        timing = replace(timing, **{k: float(v) for k, v in overrides.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad timing value: {exc}") from None
    return config, timing


def load_config(path) -> tuple[ProtocolConfig, TimingParams]:
    """Read a YAML (or JSON) config file with ``m``, ``cw``, ``dc`` and optional ``timing``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
        doc = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_mapping(doc)
