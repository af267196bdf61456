"""Model files (JSON) and the bundled example models.

A model file looks like::

    {"name": "fig1-ring",
     "servers": [{"id": 1, "speed": 1.0}, ...],
     "types": [{"servers": [1, 2], "prob": 0.125}, ...],
     "lambda": 0.8}

Server ids are 1-based and must be 1..N in order. ``lambda`` is optional and
defaults to 0.8 times the mean speed.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

from .model import CompatibilityModel, ModelError, build_model, servers_from_mask

DEFAULT_LOAD = 0.8
FIXTURE_NAMES = (
    "fig1-ring",
    "uniform-complete-4",
    "hom-ring-4",
    "het-ring-4-e07",
    "het-ring-4-e09",
    "tree-example",
    "singleton-fullset",
    "tree-eps0",
    "singleton-fullset-eps0",
)
ALIASES = {"ring4": "hom-ring-4", "complete4": "uniform-complete-4"}


class ModelFileError(ModelError):
    """A model file could not be read; the message names the offending field."""


def _field(obj, key, path, kind):
    if not isinstance(obj, dict) or key not in obj:
        raise ModelFileError(f"{path}: missing field {key!r}")
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ModelFileError(f"{path}.{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, kind):
        raise ModelFileError(f"{path}.{key}: expected {kind.__name__}, got {value!r}")
    return value


def model_from_dict(data: dict, source: str = "model") -> CompatibilityModel:
    if not isinstance(data, dict):
        raise ModelFileError(f"{source}: expected a JSON object")
    servers = _field(data, "servers", source, list)
    if not servers:
        raise ModelFileError(f"{source}.servers: need at least one server")
    speeds = []
    for i, srv in enumerate(servers):
        path = f"{source}.servers[{i}]"
        sid = _field(srv, "id", path, int)
        if sid != i + 1:
            raise ModelFileError(f"{path}.id: expected {i + 1}, got {sid}")
        speeds.append(_field(srv, "speed", path, float))
    types = _field(data, "types", source, list)
    pairs = []
    for i, typ in enumerate(types):
        path = f"{source}.types[{i}]"
        members = _field(typ, "servers", path, list)
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in members):
            raise ModelFileError(f"{path}.servers: expected a list of server ids")
        pairs.append((members, _field(typ, "prob", path, float)))
    name = data.get("name", "")
    if not isinstance(name, str):
        raise ModelFileError(f"{source}.name: expected a string")
    mean_speed = sum(speeds) / len(speeds)
    lam = _field(data, "lambda", source, float) if "lambda" in data else DEFAULT_LOAD * mean_speed
    try:
        return build_model(speeds, pairs, lam, name)
    except ModelError as exc:
        raise ModelFileError(f"{source}: {exc}") from exc


def model_to_dict(model: CompatibilityModel) -> dict:
    return {
        "name": model.name,
        "servers": [{"id": i + 1, "speed": s} for i, s in enumerate(model.speeds)],
        "types": [{"servers": list(servers_from_mask(m)), "prob": p}
                  for m, p in zip(model.masks, model.probs)],
        "lambda": model.lam,
    }


def dumps(model: CompatibilityModel) -> str:
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def load_model(path: str | Path) -> CompatibilityModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return model_from_dict(data, source=path.name)


def save_model(model: CompatibilityModel, path: str | Path):
    Path(path).write_text(dumps(model))


def fixture_text(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in FIXTURE_NAMES:
        raise ModelFileError(f"unknown fixture {name!r}; known: {', '.join(FIXTURE_NAMES)}")
    return resources.files(__package__).joinpath("data", f"{name}.json").read_text()


def load_fixture(name: str) -> CompatibilityModel:
    name = ALIASES.get(name, name)
    return model_from_dict(json.loads(fixture_text(name)), source=name)


def resolve_model(spec: str) -> tuple[CompatibilityModel, str]:
    """A model from a file path or a fixture name, with the sha256 of its source text."""
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        text = None
        try:
            text = path.read_text()
        except OSError:
            pass
        model = load_model(path)
        return model, hashlib.sha256(text.encode()).hexdigest()
    text = fixture_text(spec)
    return load_fixture(spec), hashlib.sha256(text.encode()).hexdigest()
