"""Toolkit configuration files.

Plain ``key = value`` lines grouped under ``[section]`` headers; ``#``
starts a comment.  Unknown sections or keys are errors, and every error
carries the offending line number.

Example::

    [stft]
    sample_rate = 8000
    fft_size = 256
    [network]
    encoder_channels = 8 16 32
"""

from dataclasses import dataclass, field

from desnet.geometry import ArrayGeometry
from desnet.model import ModelConfig
from desnet.training import TrainConfig
from desnet.unmix import DccrnConfig
from desnet.wpe import WpeConfig


class ConfigError(ValueError):
    def __init__(self, path, lineno, msg):
        self.path, self.lineno = path, lineno
        super().__init__("%s:%d: %s" % (path, lineno, msg))


def _ints(v):
    return tuple(int(x) for x in v.replace(",", " ").split())


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean, got %r" % v)


def _opt_int(v):
    return None if v.strip().lower() in ("", "none", "auto", "0") else int(v)


def _pairs(v):
    out = []
    for tok in v.replace(",", " ").split():
        a, _, b = tok.partition("-")
        out.append((int(a), int(b)))
    return tuple(out)


def _floats3(v):
    vals = [float(x) for x in v.replace(",", " ").split()]
    if len(vals) != 3:
        raise ValueError("expected three coordinates, got %d" % len(vals))
    return v


# section -> key -> parser
SCHEMA = {
    "geometry": {"speed_of_sound": float},
    "stft": {"sample_rate": int, "fft_size": int, "hop": int},
    "wpe": {"taps": int, "delay": int, "iterations": int, "variance_floor": float,
            "diagonal_loading": float, "psd_context": int},
    "network": {"encoder_channels": _ints, "kernel": _ints, "stride": _ints, "recurrent_hidden": int,
                "recurrent_layers": int, "projection_dim": _opt_int, "extract_hidden": int,
                "extract_layers": int, "variance_hidden": int, "leaky_slope": float},
    "attention": {"embed_dim": _opt_int, "num_angles": int, "num_beams": int, "pairs": _pairs},
    "datasim": {"speech_manifest": str, "noise_manifest": str, "rir_manifest": str, "rir_id": str,
                "chunk_seconds": float},
    "training": {"epochs": int, "lr": float, "lr_decay": float, "batch_size": int,
                 "chunks_per_epoch": int, "validation_chunks": int, "category": str,
                 "clip_norm": float, "seed": int, "staged_snr": _bool, "symphonic": _bool,
                 "beam_feature": _bool, "wpe": _bool},
}


@dataclass
class ToolkitConfig:
    sections: dict = field(default_factory=dict)  # section -> {key: parsed value}
    path: str = "<config>"

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def geometry(self):
        return ArrayGeometry.from_config(self.sections.get("geometry", {}))

    def wpe_config(self):
        return WpeConfig(**self.sections.get("wpe", {}))

    def model_config(self):
        net = dict(self.sections.get("network", {}))
        dccrn_keys = ("encoder_channels", "kernel", "stride", "recurrent_hidden", "recurrent_layers",
                      "projection_dim", "leaky_slope")
        dccrn = DccrnConfig(**{k: net.pop(k) for k in dccrn_keys if k in net})
        kw = dict(self.sections.get("stft", {}))
        kw.update(self.sections.get("attention", {}))
        kw.update(net)
        return ModelConfig(dccrn=dccrn, wpe=self.wpe_config(), **kw)

    def train_config(self, **overrides):
        kw = dict(self.sections.get("training", {}))
        if "chunk_seconds" in self.sections.get("datasim", {}):
            kw["chunk_seconds"] = self.sections["datasim"]["chunk_seconds"]
        if "rir_id" in self.sections.get("datasim", {}):
            kw["rir_id"] = self.sections["datasim"]["rir_id"]
        kw.update(overrides)
        return TrainConfig(model=self.model_config(), **kw)


def parse_config(text, path="<config>"):
    cfg = ToolkitConfig(path=path)
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(path, lineno, "malformed section header %r" % line)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(path, lineno, "unknown section [%s]" % section)
            cfg.sections.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(path, lineno, "expected 'key = value', got %r" % line)
        if section is None:
            raise ConfigError(path, lineno, "key outside of any [section]")
        key, value = (s.strip() for s in line.split("=", 1))
        if section == "geometry" and key.startswith("mic") and key[3:].isdigit():
            parser = _floats3
        elif key in SCHEMA[section]:
            parser = SCHEMA[section][key]
        else:
            raise ConfigError(path, lineno, "unknown key %r in [%s]" % (key, section))
        if key in cfg.sections[section]:
            raise ConfigError(path, lineno, "duplicate key %r in [%s]" % (key, section))
        try:
            cfg.sections[section][key] = parser(value)
        except ValueError as exc:
            raise ConfigError(path, lineno, "bad value for %s: %s" % (key, exc)) from None
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), path)
