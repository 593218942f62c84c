"""Strict dotted-key experiment configuration.

The format is plain text, one ``key = value`` pair per line; ``#`` starts a
comment. Keys are dotted paths from the reference table below; unknown keys,
type mismatches, and malformed lines are hard errors that name the key, so a
typo can never silently fall back to a default. Lists are comma-separated;
strings may be quoted.

Key reference (every key is optional; defaults in parentheses)::

    dataset.path        str    dataset file to load instead of generating
    dataset.modalities  int    (2)      number of modalities, 2 or 3
    dataset.classes     int    (4)      number of classes
    dataset.dims        ints   (12,12)  per-modality feature dimensions
    dataset.signal      floats (3.0,1.0) per-modality class-mean scales
    dataset.sigma       float  (1.0)    noise standard deviation
    dataset.samples     int    (4000)   dataset size
    dataset.seed        int    (0)      generation seed for `generate`
    model.hidden        ints   (24)     hidden sizes shared by all encoders
    model.feature_dim   int    (4)      encoder output dimension
    train.lr            float  (1e-3)
    train.momentum      float  (0.9)
    train.weight_decay  float  (1e-4)
    train.step_size     int    (30)     epochs between lr decays
    train.gamma         float  (0.1)    lr decay factor
    train.epochs        int    (40)
    train.batch_size    int    (64)
    method.kind         str    (baseline)  one of the method kinds
    method.w_uni        float  (1.0)
    method.scale        float  (4.0)
    method.kl_weight    float  (0.5)
    method.alpha        float  (1.0)
    method.rho_mask     float  (0.2)
    method.p_max        float  (0.3)
    method.tau          float  (0.5)
    eval.fractions      floats (0.8,0.1,0.1) train/val/test fractions
    eval.shapley        bool   (true)   compute Shapley contributions
    output.dir          str    (runs)
    seed                int    (0)      master seed, see below
    seeds               ints   (1,2,3,4,5) per-run seeds

Each run's generators derive from the pair (master seed, run seed), so the
master seed shifts every run at once while the run seeds index repetitions.
The ``BALANCELAB_SEED`` environment variable overrides the master seed; a
CLI flag overrides both (flag > environment > config).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .datagen import SyntheticSpec
from .errors import ConfigError
from .methods import METHOD_KINDS, MethodSpec
from .trainer import TrainConfig

_SCHEMA: dict[str, tuple[str, object]] = {
    "dataset.path": ("str", None),
    "dataset.modalities": ("int", 2),
    "dataset.classes": ("int", 4),
    "dataset.dims": ("ints", (12, 12)),
    "dataset.signal": ("floats", (3.0, 1.0)),
    "dataset.sigma": ("float", 1.0),
    "dataset.samples": ("int", 4000),
    "dataset.seed": ("int", 0),
    "model.hidden": ("ints", (24,)),
    "model.feature_dim": ("int", 4),
    "train.lr": ("float", 1e-3),
    "train.momentum": ("float", 0.9),
    "train.weight_decay": ("float", 1e-4),
    "train.step_size": ("int", 30),
    "train.gamma": ("float", 0.1),
    "train.epochs": ("int", 40),
    "train.batch_size": ("int", 64),
    "method.kind": ("str", "baseline"),
    "method.w_uni": ("float", 1.0),
    "method.scale": ("float", 4.0),
    "method.kl_weight": ("float", 0.5),
    "method.alpha": ("float", 1.0),
    "method.rho_mask": ("float", 0.2),
    "method.p_max": ("float", 0.3),
    "method.tau": ("float", 0.5),
    "eval.fractions": ("floats", (0.8, 0.1, 0.1)),
    "eval.shapley": ("bool", True),
    "output.dir": ("str", "runs"),
    "seed": ("int", 0),
    "seeds": ("ints", (1, 2, 3, 4, 5)),
}


def _coerce(key: str, kind: str, raw: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            if raw == "inf":
                return float("inf")
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(f"not a bool: {raw!r}")
        if kind == "ints":
            return tuple(int(v.strip()) for v in raw.split(","))
        if kind == "floats":
            return tuple(float(v.strip()) for v in raw.split(","))
        return raw  # str
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind} ({exc})") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: dataset, model shape, training recipe, method, eval."""

    values: tuple[tuple[str, object], ...]  # canonical (key, value) pairs

    def get(self, key: str):
        for k, v in self.values:
            if k == key:
                return v
        raise KeyError(key)

    # --- derived objects -------------------------------------------------

    @property
    def dataset_path(self) -> str | None:
        return self.get("dataset.path")

    def synthetic_spec(self, seed: int | None = None) -> SyntheticSpec:
        return SyntheticSpec(
            num_modalities=self.get("dataset.modalities"),
            num_classes=self.get("dataset.classes"),
            dims=self.get("dataset.dims"),
            signal=self.get("dataset.signal"),
            sigma=self.get("dataset.sigma"),
            samples=self.get("dataset.samples"),
            seed=self.get("dataset.seed") if seed is None else seed,
        )

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(
            lr=self.get("train.lr"),
            momentum=self.get("train.momentum"),
            weight_decay=self.get("train.weight_decay"),
            step_size=self.get("train.step_size"),
            gamma=self.get("train.gamma"),
            epochs=self.get("train.epochs"),
            batch_size=self.get("train.batch_size"),
            seed=seed,
        )

    def method_spec(self) -> MethodSpec:
        return MethodSpec(
            kind=self.get("method.kind"),
            w_uni=self.get("method.w_uni"),
            scale=self.get("method.scale"),
            kl_weight=self.get("method.kl_weight"),
            alpha=self.get("method.alpha"),
            rho_mask=self.get("method.rho_mask"),
            p_max=self.get("method.p_max"),
            tau=self.get("method.tau"),
        )

    def arch(self, input_dims: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
        hidden = self.get("model.hidden")
        feat = self.get("model.feature_dim")
        return tuple((d, *hidden, feat) for d in input_dims)

    @property
    def fractions(self) -> tuple[float, float, float]:
        return self.get("eval.fractions")

    @property
    def shapley_enabled(self) -> bool:
        return self.get("eval.shapley")

    @property
    def out_dir(self) -> str:
        return self.get("output.dir")

    @property
    def master_seed(self) -> int:
        return self.get("seed")

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.get("seeds")

    # --- updates and serialization ---------------------------------------

    def with_key(self, key: str, value) -> "ExperimentConfig":
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        return ExperimentConfig(tuple((k, value if k == key else v) for k, v in self.values))

    def to_text(self) -> str:
        lines = []
        has_path = self.dataset_path is not None
        for k, v in self.values:
            if v is None:
                continue
            if has_path and k.startswith("dataset.") and k != "dataset.path":
                continue
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, tuple):
                s = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                s = repr(v)
            elif isinstance(v, str):
                s = f'"{v}"'
            else:
                s = str(v)
            lines.append(f"{k} = {s}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        has_path = self.dataset_path is not None
        return {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in self.values
            if v is not None
            and not (has_path and k.startswith("dataset.") and k != "dataset.path")
        }


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse config text; unknown keys and bad values raise ConfigError."""
    seen: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, raw_val = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        kind, _ = _SCHEMA[key]
        seen[key] = _coerce(key, kind, raw_val)
    values = tuple((k, seen.get(k, default)) for k, (kind, default) in _SCHEMA.items())
    cfg = ExperimentConfig(values)
    _validate(cfg, explicit=set(seen))
    return cfg


def parse_config(source) -> ExperimentConfig:
    """Parse a config from a file path, or from literal text if the string
    contains a newline or '=' and no such file exists."""
    source = os.fspath(source) if not isinstance(source, str) else source
    if os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    if "=" in source or "\n" in source:
        return parse_config_text(source)
    raise ConfigError(f"no such config file: {source!r}")


def _validate(cfg: ExperimentConfig, explicit: set[str]) -> None:
    from .errors import SpecError

    if cfg.dataset_path is not None:
        clash = [k for k in explicit if k.startswith("dataset.") and k != "dataset.path"]
        if clash:
            raise ConfigError(
                f"dataset.path excludes synthetic dataset keys, got {sorted(clash)}"
            )
    else:
        try:
            cfg.synthetic_spec()
        except SpecError as exc:
            raise ConfigError(f"dataset.*: {exc}") from None
    if cfg.get("method.kind") not in METHOD_KINDS:
        raise ConfigError(
            f"method.kind: unknown method {cfg.get('method.kind')!r}, "
            f"choose from {', '.join(METHOD_KINDS)}"
        )
    try:
        cfg.method_spec()
    except SpecError as exc:
        raise ConfigError(f"method.*: {exc}") from None
    try:
        cfg.train_config()
    except SpecError as exc:
        raise ConfigError(f"train.*: {exc}") from None
    if len(cfg.seeds) < 1:
        raise ConfigError("seeds: need at least one seed")
    fr = cfg.fractions
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError(f"eval.fractions: need three positive values summing to 1, got {fr}")


def default_config() -> ExperimentConfig:
    return parse_config_text("")
