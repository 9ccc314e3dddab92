"""Scenario files: YAML documents validated against a bundled JSON schema."""
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .sim import ScenarioConfig

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Unreadable or schema-invalid scenario; ``path`` locates the offending field."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    source: str
    sha256: str
    sweep: dict = field(default_factory=dict)
    certify: dict = field(default_factory=dict)


def load_schema():
    text = resources.files("quadmpc").joinpath("scenario_schema.json").read_text()
    return json.loads(text)


def _field_path(err: jsonschema.ValidationError):
    parts = list(err.absolute_path)
    if err.validator == "required":
        # the missing key is only named in the message: "'x0' is a required property"
        missing = err.message.split("'")[1] if "'" in err.message else None
        if missing:
            parts.append(missing)
    if err.validator == "additionalProperties":
        extra = err.message.split("'")[1] if "'" in err.message else None
        if extra:
            parts.append(extra)
    path = "$"
    for p in parts:
        path += f"[{p}]" if isinstance(p, int) else f".{p}"
    return path


def parse_scenario(text, source="<string>"):
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"not valid YAML ({exc})") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ScenarioError(err.message, _field_path(err))
    doc = dict(doc)
    doc.pop("schema_version", None)
    doc.pop("description", None)
    sweep = doc.pop("sweep", {}) or {}
    certify = doc.pop("certify", {}) or {}
    for key in ("x0", "xhat0", "y_ref", "Q_diag", "R_diag"):
        if key in doc:
            doc[key] = tuple(float(v) for v in doc[key])
    for key in ("d_true", "meas_noise_std", "proc_noise_std", "q_scale", "r_scale"):
        if key in doc:
            doc[key] = float(doc[key])
    doc.setdefault("name", Path(source).stem)
    try:
        cfg = ScenarioConfig(**doc)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    digest = hashlib.sha256(text.encode() if isinstance(text, str) else text).hexdigest()
    return Scenario(cfg, source, digest, sweep, certify)


def load_scenario(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file ({exc.strerror})") from exc
    return parse_scenario(raw.decode("utf-8"), str(path))


def bundled_scenarios():
    """Names of the scenario files shipped with the package."""
    root = resources.files("quadmpc").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_path(name):
    return Path(str(resources.files("quadmpc").joinpath("scenarios", f"{name}.yaml")))
