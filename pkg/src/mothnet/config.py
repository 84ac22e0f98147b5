"""Layered run configuration.

Files use INI syntax with four sections::

    [run]         seed, out, workers, dataset, data_dir, cache_dir, instance paths
    [experiment]  learner, n_train_per_class, n_instances, classifier, sweep ...
    [dataset]     n_features, scaling_mode, set_aside_per_class, preprocess_seed
    [template]    any NetworkTemplate field

``--set key=value`` accepts ``section.key`` or a bare key that is unique
across sections.  Precedence, highest first: command-line flag, config file,
environment (``MOTHNET_DATA_DIR`` for ``data_dir`` only), built-in default.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .network import LEARNERS, NetworkTemplate, learner_template

DATA_DIR_ENV = "MOTHNET_DATA_DIR"
DEFAULT_DATA_DIR = "data/mnist5k"
RUN_FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Bad key or value; the message always names the key."""


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return list(text)
    items = [s.strip() for s in str(text).replace(";", ",").split(",")]
    return [float(s) if any(ch in s for ch in ".e") else int(s) for s in items if s]


def _optional(kind):
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none"):
            return None
        return kind(text)
    return parse


def _choice(*allowed):
    def parse(text):
        text = str(text).strip()
        if text not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}")
        return text
    return parse


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


_PARSERS = {int: int, float: float, bool: _parse_bool, str: str}

SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (_nonneg_int, 0),
        "out": (str, "results"),
        "workers": (_positive_int, 1),
        "dataset": (_choice("mnist", "omniglot"), "mnist"),
        "data_dir": (str, DEFAULT_DATA_DIR),
        "cache_dir": (_optional(str), None),
        "instance_out": (_optional(str), None),
        "instance_in": (_optional(str), None),
    },
    "experiment": {
        "learner": (_choice(*LEARNERS), "natural"),
        "n_train_per_class": (_nonneg_int, 10),
        "n_instances": (_positive_int, 13),
        "classifier": (_choice("softmax", "loglik", "both"), "both"),
        "sweep_axis": (_optional(str), None),
        "sweep_values": (_parse_list, []),
        "n_baseline": (_positive_int, 15),
        "n_validation": (_positive_int, 15),
        "holdout": (_parse_bool, False),
        "knn_baseline": (_parse_bool, True),
    },
    "dataset": {
        "n_features": (_positive_int, 85),
        "scaling_mode": (_choice("by_sum", "by_percentile"), "by_sum"),
        "set_aside_per_class": (_positive_int, 50),
        "preprocess_seed": (_nonneg_int, 0),
        "max_characters": (_optional(int), None),
    },
    # template keys default to None: "take the learner preset's value"
    "template": {name: (_PARSERS[kind], None)
                 for name, kind in NetworkTemplate.field_types().items()},
}


def _section_of(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section in SCHEMA and name in SCHEMA[section]:
            return section, name
        raise ConfigError(f"unknown config key {key!r}")
    hits = [s for s, fields in SCHEMA.items() if key in fields]
    if len(hits) != 1:
        raise ConfigError(f"unknown config key {key!r}")
    return hits[0], key


@dataclass
class RunConfig:
    command: str | None = None
    values: dict = field(default_factory=lambda: {s: {k: d for k, (_, d) in f.items()}
                                                  for s, f in SCHEMA.items()})
    sources: dict = field(default_factory=dict)  # "section.key" -> where it came from

    def __getitem__(self, key: str):
        section, name = _section_of(key)
        return self.values[section][name]

    def set(self, key: str, raw, source: str) -> None:
        section, name = _section_of(key)
        parser = SCHEMA[section][name][0]
        try:
            value = parser(raw) if raw is not None else None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}.{name}: cannot use {raw!r} ({exc})") from None
        self.values[section][name] = value
        self.sources[f"{section}.{name}"] = source

    def template_overrides(self) -> dict:
        return {k: v for k, v in self.values["template"].items() if v is not None}

    def template(self) -> NetworkTemplate:
        try:
            return learner_template(self["learner"], **self.template_overrides())
        except ValueError as exc:
            raise ConfigError(f"template: {exc}") from None

    def resolved(self) -> dict:
        """Every key with its effective value, template fields included."""
        out = json.loads(json.dumps(self.values))
        out["template"] = dataclasses.asdict(self.template())
        return {"format_version": RUN_FORMAT_VERSION, "command": self.command, **out,
                "sources": dict(sorted(self.sources.items()))}

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "run.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.resolved(), indent=2, sort_keys=False) + "\n")
        return path


def read_config_file(path) -> dict[str, str]:
    """Flatten an INI file to ``{"section.key": raw}`` and reject unknown names."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep case
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError:
        raise ConfigError(f"{path}: keys must live under a [section] header") from None
    flat = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key!r}")
            flat[f"{section}.{key}"] = raw
    return flat


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        section, name = _section_of(key.strip())
        out[f"{section}.{name}"] = raw.strip()
    return out


def parse_config(config_path=None, flag_values: dict | None = None, overrides=(),
                 command: str | None = None, environ=None) -> RunConfig:
    """Resolve defaults < environment < config file < flags.

    ``flag_values`` maps keys to values from dedicated flags (``--seed`` and
    friends, ``None`` meaning "not given"); ``overrides`` is the list of raw
    ``key=value`` strings from ``--set``.  Dedicated flags win over ``--set``.
    """
    environ = os.environ if environ is None else environ
    cfg = RunConfig(command=command)
    if environ.get(DATA_DIR_ENV):
        cfg.set("run.data_dir", environ[DATA_DIR_ENV], "env")
    if config_path is not None:
        for key, raw in read_config_file(config_path).items():
            cfg.set(key, raw, "file")
    for key, raw in parse_overrides(overrides).items():
        cfg.set(key, raw, "flag")
    for key, value in (flag_values or {}).items():
        if value is not None:
            cfg.set(key, value, "flag")
    cfg.template()  # validate domains now, naming the offending field
    axis = cfg["sweep_axis"]
    if axis is not None:
        _check_sweep(cfg, axis, cfg["sweep_values"])
    return cfg


def _check_sweep(cfg: RunConfig, axis: str, values) -> None:
    if not values:
        raise ConfigError("experiment.sweep_values: empty for sweep axis " + repr(axis))
    if axis == "n_train_per_class":
        if any(int(v) != v or v < 0 for v in values):
            raise ConfigError("experiment.sweep_values: n_train_per_class needs integers >= 0")
        return
    if axis == "sparsity":
        fields = ("sparsity_fraction", "sparsity_fraction_training")
    elif axis in NetworkTemplate.field_types():
        fields = (axis,)
    else:
        raise ConfigError(f"experiment.sweep_axis: unknown axis {axis!r}")
    base = cfg.template()
    kind = NetworkTemplate.field_types()[fields[0]]
    for v in values:
        try:
            base.with_overrides(**{f: kind(v) for f in fields})
        except ValueError as exc:
            raise ConfigError(f"experiment.sweep_values: {v!r} ({exc})") from None
