"""Registration hyperparameters and the flat ``key = value`` config format."""
import dataclasses
from dataclasses import dataclass, fields

ALPHA_DEFAULTS = {"mse": 0.01, "lncc": 2.0}


class ConfigError(ValueError):
    pass


@dataclass
class RegistrationConfig:
    image_height: int = 192
    image_width: int = 160
    radius: int = 3
    num_iters: int = 4
    similarity: str = "mse"
    alpha: float = None
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 1500
    seed: int = 0
    normalize_cost: bool = False
    hidden_dim: int = 64
    lncc_window: int = 9
    lncc_signed: bool = False
    field_input: bool = False
    query: str = "moving"
    flow_head_init: str = "zero"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = ALPHA_DEFAULTS.get(self.similarity, 0.01)
        self.validate()

    def validate(self):
        if self.similarity not in ALPHA_DEFAULTS:
            raise ConfigError(f"similarity must be one of {sorted(ALPHA_DEFAULTS)}")
        if self.radius < 1:
            raise ConfigError("radius must be >= 1")
        if self.num_iters < 1:
            raise ConfigError("num_iters must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.lncc_window < 3 or self.lncc_window % 2 == 0:
            raise ConfigError("lncc_window must be odd and >= 3")
        if self.query not in ("moving", "fixed"):
            raise ConfigError("query must be 'moving' or 'fixed'")
        if self.flow_head_init not in ("zero", "random"):
            raise ConfigError("flow_head_init must be 'zero' or 'random'")
        if self.image_height % 4 or self.image_width % 4:
            raise ConfigError("image size must be divisible by 4")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("batch_size, epochs and learning_rate out of range")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = [f"{f.name} = {_fmt(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


PRESETS = {
    # brain MR slices, LNCC
    "mr": dict(image_height=192, image_width=160, radius=3, similarity="lncc"),
    # echocardiography, MSE
    "echo": dict(image_height=160, image_width=160, radius=2, similarity="mse"),
    # synthetic pairs small enough to train on a laptop CPU
    "desk": dict(image_height=64, image_width=64, radius=2, similarity="mse", epochs=30,
                 hidden_dim=32),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RegistrationConfig(**{**PRESETS[name], **overrides})


def _parse_value(raw, typ, key):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def parse_config(text, base=None):
    """Parse ``key = value`` lines. ``preset = name`` selects the starting point."""
    known = {f.name: _TYPES.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
             for f in fields(RegistrationConfig)}
    values = {}
    start = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            start = raw
            continue
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw, known[key], key)
    if start is not None:
        merged = {**PRESETS.get(start, {}), **values}
        if start not in PRESETS:
            raise ConfigError(f"unknown preset {start!r}")
        return RegistrationConfig(**merged)
    if base is not None:
        if "similarity" in values and "alpha" not in values:
            values["alpha"] = None
        return base.replace(**values)
    return RegistrationConfig(**values)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)
