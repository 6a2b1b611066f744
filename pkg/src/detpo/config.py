"""Run configuration: environment, agent, evaluation and output settings.

Configs are INI files (``configparser``) with the sections ``[run]``,
``[env]``, ``[env.barrier]``, ``[agent]``, ``[eval]`` and ``[reference]``.
A ``preset`` key in ``[run]`` starts from one of :data:`PRESETS` and the
remaining keys override it. Example::

    [run]
    preset = lqr-paper
    output_dir = runs/lqr

    [agent]
    episodes = 50

    [eval]
    seeds = 0, 1, 2, 3
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, replace
from typing import Optional

from .agent import AgentConfig
from .env import BarrierParams, EnvKind, EnvParams

__all__ = [
    "ConfigError",
    "EvalSettings",
    "ReferenceSettings",
    "RunConfig",
    "PRESETS",
    "preset",
    "load_config",
    "parse_config",
    "dump_config",
    "write_config",
]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class EvalSettings:
    n_episodes: int = 10
    horizon: int = 5000
    seeds: tuple = (0, 1, 2, 3)
    noise_seed: int = 20_011

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.n_episodes < 1 or self.horizon < 1:
            raise ValueError("eval n_episodes and horizon must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")


@dataclass(frozen=True)
class ReferenceSettings:
    """Monte-Carlo budget of the band/threshold grid searches."""

    n_episodes: int = 20
    horizon: int = 5000
    seed: int = 0
    refine: bool = True

    def __post_init__(self):
        if self.n_episodes < 1 or self.horizon < 1:
            raise ValueError("reference n_episodes and horizon must be >= 1")

    def search_kwargs(self) -> dict:
        return {"n_episodes": self.n_episodes, "horizon": self.horizon, "refine": self.refine}


@dataclass
class RunConfig:
    env: EnvParams
    agent: AgentConfig = field(default_factory=AgentConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    reference: ReferenceSettings = field(default_factory=ReferenceSettings)
    output_dir: str = "runs"
    name: str = ""


# Stabilisers used by all presets; see the README for why each is needed.
_DESK_AGENT = dict(discount=0.9, explore_rho=1.0, explore_sigma=0.3, buffer_capacity=20_000,
                   critic_warmup=2000, final_layer_scale=0.0, hidden_activation="tanh")


def _paper_env(kind: str, noisy: bool) -> EnvParams:
    if kind == "lqr":
        env = EnvParams(EnvKind.QUAD_COST_QUAD_RISK, rho=0.9, gamma_cost=1.0, lambda_risk=0.3)
        sigma = 10.0
    elif kind == "band":
        env = EnvParams(EnvKind.LIN_COST_QUAD_RISK, rho=0.9, gamma_cost=4.0, lambda_risk=0.3)
        sigma = 10.0
    else:
        env = EnvParams(EnvKind.LIN_COST_MAXPOS, rho=0.9, gamma_cost=4.0, maxpos=2.0,
                        barrier=BarrierParams())
        sigma = 4.0
    if noisy:
        env = replace(env, noisy_rewards=True, sigma_r=sigma)
    return env


def _make_preset(name: str) -> RunConfig:
    kind, _, rest = name.partition("-")
    noisy = rest == "noisy"
    return RunConfig(env=_paper_env(kind, noisy), agent=AgentConfig(**_DESK_AGENT), name=name)


PRESETS = tuple(f"{k}-{v}" for k in ("lqr", "band", "maxpos") for v in ("paper", "noisy"))


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return _make_preset(name)


# -- INI parsing -------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(raw: str, like, key: str):
    raw = raw.strip()
    if isinstance(like, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(like, tuple):
        return tuple(_convert(part, like[0] if like else 0, key)
                     for part in raw.replace(",", " ").split())
    if raw.lower() in ("none", ""):
        return None
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float) or like is None:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def _apply(obj, section: configparser.SectionProxy, prefix: str, skip=()):
    names = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in names:
            raise ConfigError(f"unknown key {prefix}.{key}")
        updates[key] = _convert(raw, names[key], f"{prefix}.{key}")
    if not updates:
        return obj
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{prefix}] {exc}") from None


_SECTIONS = {"run", "env", "env.barrier", "agent", "eval", "reference"}


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Build a :class:`RunConfig` from INI text, on top of ``base`` or a preset."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(cp.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    run = cp["run"] if cp.has_section("run") else {}
    name = run.get("preset")
    cfg = preset(name.strip()) if name else base
    if cfg is None:
        if not cp.has_section("env") or "kind" not in cp["env"]:
            raise ConfigError("config needs [run] preset or [env] kind")
        try:
            kind = EnvKind(cp["env"]["kind"].strip())
        except ValueError:
            raise ConfigError(f"unknown env kind {cp['env']['kind']!r}") from None
        cfg = RunConfig(env=_paper_env(kind.value, False) if kind is not EnvKind.LIN_COST_MAXPOS
                        else replace(_paper_env("maxpos", False), barrier=None))
    cfg = replace(cfg)

    for key in run:
        if key not in ("preset", "output_dir", "name"):
            raise ConfigError(f"unknown key run.{key}")
    if "output_dir" in run:
        cfg.output_dir = run["output_dir"].strip()
    cfg.name = run.get("name", cfg.name or (name or "")).strip()

    if cp.has_section("env"):
        sec = cp["env"]
        env = cfg.env
        if "kind" in sec:
            try:
                kind = EnvKind(sec["kind"].strip())
            except ValueError:
                raise ConfigError(f"unknown env kind {sec['kind']!r}") from None
            if kind is not env.kind:
                env = _paper_env(kind.value, False)
                if kind is EnvKind.LIN_COST_MAXPOS:
                    env = replace(env, barrier=None)
        cfg.env = _env_replace(env, sec)
    if cp.has_section("env.barrier"):
        sec = cp["env.barrier"]
        enabled = _convert(sec.get("enabled", "true"), True, "env.barrier.enabled")
        if not enabled:
            cfg.env = _rebuild_env(cfg.env, barrier=None)
        else:
            barrier = _apply(cfg.env.barrier or BarrierParams(), sec, "env.barrier", skip=("enabled",))
            cfg.env = _rebuild_env(cfg.env, barrier=barrier)
    if cp.has_section("agent"):
        cfg.agent = _apply(cfg.agent, cp["agent"], "agent")
    if cp.has_section("eval"):
        cfg.eval = _apply(cfg.eval, cp["eval"], "eval")
    if cp.has_section("reference"):
        cfg.reference = _apply(cfg.reference, cp["reference"], "reference")
    return cfg


def _env_replace(env: EnvParams, sec) -> EnvParams:
    names = {f.name: getattr(env, f.name) for f in dataclasses.fields(env)}
    updates = {}
    for key, raw in sec.items():
        if key == "kind":
            continue
        if key == "barrier" or key not in names:
            raise ConfigError(f"unknown key env.{key}")
        like = names[key]
        if key in ("lambda_risk", "maxpos"):
            like = 0.0
        updates[key] = _convert(raw, like, f"env.{key}")
    return _rebuild_env(env, **updates)


def _rebuild_env(env: EnvParams, **updates) -> EnvParams:
    d = {f.name: getattr(env, f.name) for f in dataclasses.fields(env)}
    d.update(updates)
    # fields that do not belong to the kind are dropped rather than rejected
    # when they were inherited from a preset of another kind
    if d["kind"] is EnvKind.LIN_COST_MAXPOS:
        if "lambda_risk" not in updates:
            d["lambda_risk"] = None
    else:
        if "maxpos" not in updates:
            d["maxpos"] = None
        if "barrier" not in updates:
            d["barrier"] = None
    try:
        return EnvParams(**d)
    except ValueError as exc:
        raise ConfigError(f"[env] {exc}") from None


def load_config(path=None, preset_name: Optional[str] = None) -> RunConfig:
    """Read ``path`` (optional) on top of ``preset_name`` (optional)."""
    base = preset(preset_name) if preset_name else None
    if path is None:
        if base is None:
            raise ConfigError("need a config file or a preset")
        return base
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, base)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, EnvKind):
        return v.value
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Complete INI text; parsing it back gives an equal config."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["run"] = {"name": cfg.name, "output_dir": cfg.output_dir}
    env = {f.name: _fmt(getattr(cfg.env, f.name)) for f in dataclasses.fields(cfg.env)
           if f.name != "barrier"}
    cp["env"] = env
    if cfg.env.barrier is not None:
        cp["env.barrier"] = {k: _fmt(v) for k, v in dataclasses.asdict(cfg.env.barrier).items()}
    elif cfg.env.kind is EnvKind.LIN_COST_MAXPOS:
        cp["env.barrier"] = {"enabled": "false"}
    cp["agent"] = {f.name: _fmt(getattr(cfg.agent, f.name)) for f in dataclasses.fields(cfg.agent)}
    cp["eval"] = {f.name: _fmt(getattr(cfg.eval, f.name)) for f in dataclasses.fields(cfg.eval)}
    cp["reference"] = {f.name: _fmt(getattr(cfg.reference, f.name))
                       for f in dataclasses.fields(cfg.reference)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def write_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))
