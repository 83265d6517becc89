"""Plain-text run configuration.

Config files hold ``key = value`` lines (``#`` comments and blank lines
ignored) over a fixed, flat schema of dotted keys; unknown keys are
rejected.  Every run logs the fully resolved configuration and artifacts
embed its hash, so equal (seed, config) runs are reproducible
byte-for-byte.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

from .errors import DataError

logger = logging.getLogger(__name__)


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _parse_patches(raw: str) -> tuple[tuple[int, int, int], ...]:
    """'32:8/2,16:4/2' -> ((32, 8, 2), (16, 4, 2))."""
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        res, sizes = item.split(":")
        mean_p, var_p = sizes.split("/")
        out.append((int(res), int(mean_p), int(var_p)))
    return tuple(out)


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    # noise schedule
    "schedule.timesteps": (int, 1000),
    "schedule.beta_start": (float, 1e-4),
    "schedule.beta_end": (float, 0.02),
    "schedule.kind": (str, "linear"),
    # data
    "data.image_size": (int, 64),
    # denoiser
    "denoiser.base_channels": (int, 64),
    "denoiser.channel_multipliers": (_parse_int_tuple, (1, 2, 2)),
    "denoiser.res_blocks": (int, 2),
    "denoiser.time_embed_dim": (int, 0),
    "denoiser.stfm_max_resolution": (int, 32),
    "denoiser.norm_groups": (int, 8),
    # style fusion
    "stfm.patches": (_parse_patches, ((32, 8, 2), (16, 4, 2), (8, 4, 1))),
    "stfm.heads": (int, 1),
    "stfm.zero_init": (_parse_bool, True),
    # style encoder
    "encoder.stem_channels": (int, 16),
    "encoder.stage_channels": (_parse_int_tuple, (32, 64, 96)),
    "encoder.blocks_per_stage": (int, 1),
    "encoder.condition_resolutions": (_parse_int_tuple, (32, 16)),
    "encoder.epochs": (int, 8),
    "encoder.batch_size": (int, 32),
    "encoder.lr": (float, 1e-3),
    # sampler
    "sampler.gamma": (float, 2.0),
    "sampler.t_start": (int, 100),
    "sampler.p_uncond": (float, 0.1),
    # margin loss
    "loss.kind": (str, "rq"),
    "loss.s_live": (float, 0.4),
    "loss.s_spoof": (float, 0.2),
    "loss.m": (float, 30.0),
    # the as-published loss formula scales only the target logit by m, but
    # that variant trains degenerately (no pressure on non-target logits);
    # training defaults to the scaled-both form, the op keeps the literal one
    "loss.scale_all_logits": (_parse_bool, True),
    # optimization (diffusion trainer)
    "optimizer.steps": (int, 2000),
    "optimizer.batch_size": (int, 16),
    "optimizer.lr": (float, 2e-4),
    # classifier trainer
    "classifier.stem_channels": (int, 16),
    "classifier.stage_channels": (_parse_int_tuple, (32, 64, 96)),
    "classifier.feature_dim": (int, 128),
    "classifier.epochs": (int, 10),
    "classifier.batch_size": (int, 32),
    "classifier.optimizer": (str, "auto"),
    "classifier.lr": (float, 0.0),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in SCHEMA:
            raise DataError(f"{source}:{lineno}: unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(raw)
        except (ValueError, TypeError) as exc:
            raise DataError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def load_config(path: str | Path | None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- explicit overrides; returns the full mapping."""
    config = default_config()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        config.update(parse_config_text(path.read_text(), source=str(path)))
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise DataError(f"unknown config key {key!r}")
        if value is not None:
            config[key] = value
    return config


def render_config(config: dict) -> str:
    """Canonical text form (sorted keys) used for logging and hashing."""
    lines = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, tuple):
            if value and isinstance(value[0], tuple):
                text = ",".join(f"{r}:{m}/{v}" for r, m, v in value)
            else:
                text = ",".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines)


def config_hash(config: dict) -> str:
    return hashlib.sha256(render_config(config).encode()).hexdigest()[:16]


def log_config(config: dict) -> None:
    logger.info("resolved config (hash %s):\n%s", config_hash(config), render_config(config))
