"""Flat ``key=value`` run configuration with section prefixes.

Lines are ``section.key = value``; ``#`` starts a comment.  Keys are
checked against a schema so that typos fail early.  Open-ended sections
(``model.fixed.*``, ``simulate.hyper.*`` ...) accept any suffix.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    return tuple(int(t) for t in s.replace(" ", "").split(",") if t)


def _floats(s):
    return tuple(float(t) for t in s.replace(" ", "").split(",") if t)


def _strs(s):
    return tuple(t.strip() for t in s.split(",") if t.strip())


SCHEMA = {
    "seed": int,
    "out": str,
    # data
    "data.pixel_days": str,
    "data.fires": str,
    "data.season": _ints,
    "data.u": float,
    "data.u_quantile": float,
    "data.cell_groups": str,
    # model
    "model.label": str,
    "model.spec": str,
    # mesh
    "mesh.max_edge": float,
    "mesh.extension": float,
    # subsampling
    "subsample.enabled": _bool,
    "subsample.p_fwi": float,
    "subsample.p_ss": float,
    "subsample.k_per_stratum": int,
    "subsample.seed": int,
    "subsample.uniform": _bool,
    "subsample.invert_fwi_classes": _bool,
    # optimiser
    "fit.fatol": float,
    "fit.xatol": float,
    "fit.maxfev": int,
    "fit.waic_samples": int,
    # threshold diagnostics
    "threshold.values": _floats,
    "threshold.start": float,
    "threshold.step": float,
    "threshold.count": int,
    # simulation
    "simulate.nx": int,
    "simulate.ny": int,
    "simulate.n_days": int,
    "simulate.cell_km": float,
    "simulate.years": _ints,
    "simulate.u": float,
    "simulate.seed": int,
    "simulate.fwi_mean": float,
    # scoring
    "score.fits": _strs,
    "score.pixel_days": str,
    "score.fires": str,
    "score.n": int,
    "score.grouping": str,
    "score.quantile": float,
    "score.n_perm": int,
    "score.seed": int,
    # excursion
    "excursion.fit": str,
    "excursion.fields": _strs,
    "excursion.u": float,
    "excursion.alpha": float,
    "excursion.n_samples": int,
    "excursion.seed": int,
}

OPEN_SECTIONS = {
    "model.fixed.": float,
    "model.init.": float,
    "prior.": float,
    "simulate.hyper.": float,
    "simulate.effect.": float,
}

PATH_KEYS = ("data.pixel_days", "data.fires", "data.cell_groups", "model.spec",
             "score.pixel_days", "score.fires", "excursion.fit")


def _convert(key, text):
    conv = SCHEMA.get(key)
    if conv is None:
        for prefix, c in OPEN_SECTIONS.items():
            if key.startswith(prefix) and len(key) > len(prefix):
                conv = c
                break
    if conv is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        return conv(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


@dataclass
class RunConfig:
    """Parsed configuration: raw text values plus converted values."""

    raw: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def get(self, key, default=None):
        return self.values.get(key, default)

    def __contains__(self, key):
        return key in self.values

    def section(self, prefix):
        """``{suffix: value}`` of every key starting with ``prefix``."""
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def set(self, key, text):
        self.values[key] = _convert(key, str(text))
        self.raw[key] = str(text).strip()

    def path(self, key, must_exist=True):
        """Configured path, resolved against the config file's directory."""
        if key not in self.values:
            raise ConfigError(f"missing required key {key!r}")
        return self.resolve(self.values[key], key, must_exist)

    def resolve(self, text, key="path", must_exist=True):
        p = Path(text)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(f"{key}: {p} does not exist")
        return p

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing required key {key!r}")
        return self.values[key]

    def canonical(self):
        """Sorted ``key=value`` listing; the output directory is excluded
        since it does not influence any result."""
        return "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw) if k != "out") + "\n"

    def digest(self):
        """SHA-256 of the canonical listing."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def sub_digest(self, prefixes):
        """Digest restricted to keys under ``prefixes`` (e.g. the keys that
        determine a fit)."""
        keys = sorted(k for k in self.raw if k.startswith(tuple(prefixes)))
        text = "\n".join(f"{k}={self.raw[k]}" for k in keys) + "\n"
        return hashlib.sha256(text.encode()).hexdigest()


def parse_config(text, base_dir="."):
    cfg = RunConfig(base_dir=Path(base_dir))
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected key=value, got {s!r}")
        key, val = (t.strip() for t in s.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in cfg.raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            cfg.set(key, val)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
