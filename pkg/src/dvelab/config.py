"""Flat ``key = value`` experiment configs.

One line per setting, ``#`` comments, values parsed as int/float/bool/
string (comma-separated for tuples).  Keys map onto the training config;
``env.*`` and ``cc.*`` prefixes address the nested environment and
sparsity-loss settings.  The same syntax drives ``--set key=value``
command-line overrides, and the fully resolved mapping is written back to
``config.resolved`` in every run directory.
"""

from __future__ import annotations

from dataclasses import replace

from .dvehead import CcConfig, CcMode
from .envkit import EnvConfig, Family
from .errors import ConfigError
from .trainer import CriticMode, TrainConfig

# key -> (target, attribute, parser) with targets "train" / "env" / "cc".
_INT = int
_FLOAT = float


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _families(text: str) -> tuple[Family, ...]:
    return tuple(Family(part.strip()) for part in text.split(",") if part.strip())


_SCHEMA = {
    "mode": ("train", "critic_mode", CriticMode),
    "gamma": ("train", "gamma", _FLOAT),
    "gae_lambda": ("train", "gae_lambda", _FLOAT),
    "clip_eps": ("train", "clip_eps", _FLOAT),
    "entropy_coef": ("train", "entropy_coef", _FLOAT),
    "value_coef": ("train", "value_coef", _FLOAT),
    "learning_rate": ("train", "learning_rate", _FLOAT),
    "epochs_per_update": ("train", "epochs_per_update", _INT),
    "minibatch_size": ("train", "minibatch_size", _INT),
    "n_workers": ("train", "n_workers", _INT),
    "steps_per_worker_per_update": ("train", "steps_per_worker_per_update", _INT),
    "total_env_steps": ("train", "total_env_steps", _INT),
    "seed": ("train", "seed", _INT),
    "n_b": ("train", "n_b", _INT),
    "plateau_window": ("train", "plateau_window", _INT),
    "plateau_slope_threshold": ("train", "plateau_slope_threshold", _FLOAT),
    "normalize_advantages": ("train", "normalize_advantages", _bool),
    "trunk": ("train", "trunk", _int_tuple),
    "hidden": ("train", "hidden", _INT),
    "cc.k1": ("cc", "k1", _FLOAT),
    "cc.k2": ("cc", "k2", _FLOAT),
    "cc.epsilon_log": ("cc", "epsilon_log", _FLOAT),
    "cc.mode": ("cc", "mode", CcMode),
    "cc.pretrain_steps": ("cc", "pretrain_steps", _INT),
    "env.n_levels": ("env", "n_levels", _INT),
    "env.families": ("env", "families", _families),
    "env.family_mix": ("env", "family_mix", _float_tuple),
    "env.width": ("env", "width", _INT),
    "env.height": ("env", "height", _INT),
    "env.obs_window": ("env", "obs_window", _INT),
    "env.r_sub": ("env", "r_sub", _FLOAT),
    "env.r_goal": ("env", "r_goal", _FLOAT),
    "env.t_max": ("env", "t_max", _INT),
    # Extras that live outside TrainConfig.
    "pool_seed": ("extra", "pool_seed", _INT),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat ``key = value`` lines into a raw string mapping."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def parse_config_file(path) -> dict[str, str]:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read(), source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def apply_overrides(mapping: dict[str, str], overrides) -> dict[str, str]:
    """Apply ``--set key=value`` strings on top of a raw mapping."""
    out = dict(mapping)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_train_config(mapping: dict[str, str]) -> tuple[TrainConfig, dict]:
    """Turn a raw string mapping into a validated TrainConfig.

    Returns (config, extras) where extras holds keys outside TrainConfig
    (currently ``pool_seed``, defaulting to the training seed).
    """
    train_kwargs: dict = {}
    env_kwargs: dict = {}
    cc_kwargs: dict = {}
    extras: dict = {}
    buckets = {"train": train_kwargs, "env": env_kwargs,
               "cc": cc_kwargs, "extra": extras}
    for key, raw in mapping.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        target, attr, parse = _SCHEMA[key]
        try:
            buckets[target][attr] = parse(raw)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    cfg = TrainConfig(env=EnvConfig(**env_kwargs), cc=CcConfig(**cc_kwargs),
                      **train_kwargs)
    cfg = replace(cfg, env=replace(cfg.env, gamma=cfg.gamma))
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    extras.setdefault("pool_seed", cfg.seed)
    return cfg, extras


def _format_value(target: str, attr: str, cfg: TrainConfig, extras: dict) -> str:
    obj = {"train": cfg, "env": cfg.env, "cc": cfg.cc}.get(target)
    value = extras[attr] if target == "extra" else getattr(obj, attr)
    if isinstance(value, (CriticMode, CcMode)):
        return value.value
    if isinstance(value, tuple):
        return ",".join(v.value if isinstance(v, Family) else repr(v)
                        for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolved_config_text(cfg: TrainConfig, extras: dict) -> str:
    """Full, sorted ``key = value`` dump of an effective configuration."""
    lines = []
    for key in sorted(_SCHEMA):
        target, attr, _ = _SCHEMA[key]
        lines.append(f"{key} = {_format_value(target, attr, cfg, extras)}")
    return "\n".join(lines) + "\n"
