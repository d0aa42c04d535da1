"""Flat ``key = value`` config files.

Every key is a :class:`~deepaug.trainer.TrainConfig` field, plus ``sweep`` and
``sweep_product``. Values are bare scalars (``0.5``, ``true``, ``both-views``),
lists in brackets (``[128, 128]``) or ``auto`` for optional integers. List
values on the sweep axes (target_layer, rate, stop_grad, batch_fraction,
freeze_mode) require ``sweep = true``. ``#`` starts a comment.
"""
import dataclasses
import itertools
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .errors import ConfigError
from .trainer import TrainConfig

SWEEP_AXES = ("target_layer", "rate", "stop_grad", "batch_fraction", "freeze_mode")
SWEEP_KEYS = ("sweep", "sweep_product")

_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_HINTS = typing.get_type_hints(TrainConfig)


@dataclass
class SweepSpec:
    base: TrainConfig
    axes: dict  # axis key -> list of values, in file order
    product: bool = True

    def points(self) -> list:
        """``(label, values, config)`` per run."""
        keys = list(self.axes)
        if self.product:
            combos = list(itertools.product(*(self.axes[k] for k in keys)))
        else:
            lengths = {len(v) for v in self.axes.values()}
            if len(lengths) > 1:
                raise ConfigError(f"sweep_product = false needs equal-length axes, got lengths {sorted(lengths)}")
            combos = list(zip(*(self.axes[k] for k in keys)))
        out = []
        for i, combo in enumerate(combos):
            values = dict(zip(keys, combo))
            label = f"{i:03d}_" + "_".join(f"{k}={format_value(v)}" for k, v in values.items())
            out.append((label, values, self.base.replace(**values)))
        return out


def _parse_scalar(key, text, hint):
    text = text.strip().replace("−", "-")
    if hint is bool:
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key} = {text}: expected true or false")
    if hint is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key} = {text}: expected an integer") from None
    if hint is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key} = {text}: expected a number") from None
    if hint == typing.Optional[int]:
        return None if text.lower() == "auto" else _parse_scalar(key, text, int)
    return text


def _split_list(key, text):
    inner = text.strip()[1:-1].strip()
    if not inner:
        raise ConfigError(f"{key} = {text}: empty list")
    return [item.strip() for item in inner.split(",")]


def format_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    return str(v)


def parse_text(text: str) -> Union[TrainConfig, SweepSpec]:
    values, axes = {}, {}
    sweep, product = False, True
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key in SWEEP_KEYS:
            flag = _parse_scalar(key, val, bool)
            if key == "sweep":
                sweep = flag
            else:
                product = flag
            continue
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        hint = _HINTS[key]
        is_list = val.startswith("[") and val.endswith("]")
        if key == "hidden_widths":
            if not is_list:
                raise ConfigError(f"{key} = {val}: expected a list like [128, 128]")
            values[key] = [_parse_scalar(key, item, int) for item in _split_list(key, val)]
        elif is_list:
            if key not in SWEEP_AXES:
                raise ConfigError(f"{key} = {val}: lists are only allowed on sweep axes {SWEEP_AXES}")
            axes[key] = [_parse_scalar(key, item, hint) for item in _split_list(key, val)]
        else:
            values[key] = _parse_scalar(key, val, hint)

    base = TrainConfig(**values)
    if axes and not sweep:
        raise ConfigError(f"list values for {sorted(axes)} require sweep = true")
    if not sweep:
        return base.validate()
    if not axes:
        raise ConfigError("sweep = true but no axis has a list value")
    for key, vals in axes.items():
        for v in vals:
            base.replace(**{key: v}).validate()
    spec = SweepSpec(base, axes, product)
    for _, _, cfg in spec.points():
        cfg.validate()
    return spec


def parse_config(path) -> Union[TrainConfig, SweepSpec]:
    return parse_text(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: Union[TrainConfig, SweepSpec]) -> str:
    """Every key with its resolved value; ``parse_text`` of the result reproduces ``cfg``."""
    if isinstance(cfg, SweepSpec):
        lines = ["sweep = true", f"sweep_product = {format_value(cfg.product)}"]
        base = cfg.base
    else:
        lines, base = [], cfg
    for name in _FIELDS:
        if isinstance(cfg, SweepSpec) and name in cfg.axes:
            lines.append(f"{name} = [" + ", ".join(format_value(v) for v in cfg.axes[name]) + "]")
        else:
            lines.append(f"{name} = {format_value(getattr(base, name))}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg, out_dir) -> Path:
    path = Path(out_dir) / "resolved.cfg"
    path.write_text(format_config(cfg), encoding="utf-8")
    return path
