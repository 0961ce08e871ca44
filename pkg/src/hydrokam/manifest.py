"""Experiment manifests: strict JSON config parsing, seed derivation, and run
records.

One canonical config format (JSON), strictly validated: unknown keys are
rejected at every level and every module precondition that can be checked
before compute is checked at parse time, so a typo cannot silently reconfigure
an experiment.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dfield

EXPERIMENT_KINDS = ("metrics", "pde", "control", "particles", "meanfield",
                    "cell", "heps", "invariants")


class ManifestError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class Field:
    ftype: type
    default: object = None
    required: bool = False
    check: object = None          # callable value -> str | None (error message)
    elem: type | None = None      # element type for lists


def _positive(name):
    return lambda v: None if v > 0 else f"{name} must be positive, got {v}"


def _nonneg(name):
    return lambda v: None if v >= 0 else f"{name} must be nonnegative, got {v}"


def _in_open(name, lo, hi):
    return lambda v: None if lo < v < hi else f"{name} must lie in ({lo}, {hi}), got {v}"


def _grid_size(v):
    return None if (v >= 8 and v % 2 == 0) else f"M must be an even integer >= 8, got {v}"


_INITIAL_SCHEMA = {
    "kind": Field(str, default="uniform",
                  check=lambda v: None if v in ("uniform", "cosine", "random")
                  else f"unknown initial kind {v!r}"),
    "amplitude": Field(float, default=0.3,
                       check=lambda v: None if 0.0 <= v < 1.0
                       else f"initial amplitude must lie in [0, 1), got {v}"),
    "mode": Field(int, default=1, check=_positive("mode")),
    "modes": Field(int, default=6, check=_positive("modes")),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "metrics": {
        "M": Field(int, default=256, check=_grid_size),
        "pairs": Field(int, default=200, check=_positive("pairs")),
        "modes": Field(int, default=8, check=_positive("modes")),
        "amplitude": Field(float, default=0.5, check=_positive("amplitude")),
    },
    "pde": {
        "M": Field(int, default=256, check=_grid_size),
        "eps_reg": Field(float, default=0.05, check=_in_open("eps_reg", 0.0, 0.5)),
        "dt": Field(float, default=1e-4, check=_positive("dt")),
        "T": Field(float, default=0.05, check=_positive("T")),
        "record_every": Field(int, default=10, check=_positive("record_every")),
        "initial": Field(dict, default=None),
        "control_blocks": Field(int, default=0, check=_nonneg("control_blocks")),
        "control_amplitude": Field(float, default=0.3, check=_nonneg("control_amplitude")),
        "eps_sequence": Field(list, default=None, elem=float),
    },
    "control": {
        "M": Field(int, default=64, check=_grid_size),
        "eps_reg": Field(float, default=0.05, check=_in_open("eps_reg", 0.0, 0.5)),
        "dt": Field(float, default=1e-3, check=_positive("dt")),
        "mode": Field(str, default="value",
                      check=lambda v: None if v in ("value", "resolvent", "quasi_potential")
                      else f"unknown control mode {v!r}"),
        "T": Field(float, default=0.05, check=_positive("T")),
        "alpha": Field(float, default=0.5, check=_positive("alpha")),
        "horizon_factor": Field(float, default=8.0,
                                check=lambda v: None if v >= 8.0
                                else f"horizon_factor must be >= 8, got {v}"),
        "n_blocks": Field(int, default=4, check=_positive("n_blocks")),
        "max_iters": Field(int, default=40, check=_positive("max_iters")),
        "restarts": Field(int, default=2, check=_positive("restarts")),
        "initial": Field(dict, default=None),
        "penalties": Field(list, default=None, elem=float),
    },
    "particles": {
        "mode": Field(str, default="simulate",
                      check=lambda v: None if v in ("simulate", "hydro_sweep")
                      else f"unknown particles mode {v!r}"),
        "N": Field(int, default=10_000, check=_positive("N")),
        "eps": Field(float, default=0.2, check=_positive("eps")),
        "tau": Field(float, default=None),
        "theta": Field(float, default=None),
        "T": Field(float, default=0.1, check=_positive("T")),
        "dt": Field(float, default=None),
        "M": Field(int, default=128, check=_grid_size),
        "bandwidth": Field(float, default=0.02, check=_positive("bandwidth")),
        "records": Field(int, default=10, check=_positive("records")),
        "checkpoint": Field(bool, default=False),
        "initial": Field(dict, default=None),
        "eps_list": Field(list, default=None, elem=float),
        "N_list": Field(list, default=None, elem=int),
        "replicas": Field(int, default=8, check=_positive("replicas")),
    },
    "meanfield": {
        "M": Field(int, default=256, check=_grid_size),
        "eps_list": Field(list, default=(0.2, 0.1, 0.05), elem=float),
        "T": Field(float, default=0.1, check=_positive("T")),
        "initial": Field(dict, default=None),
    },
    "cell": {
        "alphas": Field(list, default=(0.5, 1.0, 2.0), elem=float),
        "betas": Field(list, default=(-1.0, 0.0, 2.0), elem=float),
        "Ps": Field(list, default=(-1.0, 0.0, 1.0), elem=float),
        "kappas": Field(list, default=(0.2, 0.1, 0.05, 0.02), elem=float),
        "Mv": Field(int, default=2000,
                    check=lambda v: None if v >= 400 else f"Mv must be >= 400, got {v}"),
    },
    "heps": {
        "M": Field(int, default=256, check=_grid_size),
        "eps_list": Field(list, default=(0.2, 0.1, 0.05, 0.025), elem=float),
        "amplitude": Field(float, default=0.3, check=_positive("amplitude")),
        "initial": Field(dict, default=None),
    },
    "invariants": {
        "quick": Field(bool, default=True),
    },
}


@dataclass(frozen=True)
class ExperimentManifest:
    name: str
    kind: str
    seed: int
    params: dict
    output_dir: str
    emit: dict = dfield(default_factory=lambda: {"csv": True, "json": True, "svg": True})

    def canonical_json(self) -> str:
        return json.dumps({"name": self.name, "kind": self.kind, "seed": self.seed,
                           "params": self.params, "output_dir": self.output_dir,
                           "emit": self.emit}, sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _coerce(val, f: Field, name: str, errors: list):
    if val is None:
        return None
    if f.ftype is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if f.ftype is list and isinstance(val, (list, tuple)):
        out = []
        for i, x in enumerate(val):
            if f.elem is float and isinstance(x, int) and not isinstance(x, bool):
                x = float(x)
            if f.elem is not None and not isinstance(x, f.elem):
                errors.append(f"{name}[{i}]: expected {f.elem.__name__}, got {type(x).__name__}")
                return None
            out.append(x)
        return out
    if not isinstance(val, f.ftype) or (f.ftype is int and isinstance(val, bool)):
        errors.append(f"{name}: expected {f.ftype.__name__}, got {type(val).__name__}")
        return None
    return val


def _validate_block(block: dict, schema: dict, prefix: str, errors: list) -> dict:
    out = {}
    for key in block:
        if key not in schema:
            errors.append(f"{prefix}{key}: unknown key (strict mode)")
    for key, f in schema.items():
        if key in block:
            val = _coerce(block[key], f, prefix + key, errors)
            if val is not None and f.check is not None:
                msg = f.check(val)
                if msg:
                    errors.append(f"{prefix}{key}: {msg}")
            out[key] = val if val is not None else f.default
        else:
            if f.required:
                errors.append(f"{prefix}{key}: required key missing")
            out[key] = list(f.default) if isinstance(f.default, tuple) else f.default
    return out


def validate_manifest(doc: dict) -> ExperimentManifest:
    errors: list[str] = []
    allowed_top = {"name", "kind", "seed", "params", "output_dir", "emit"}
    for key in doc:
        if key not in allowed_top:
            errors.append(f"{key}: unknown top-level key (strict mode)")

    name = doc.get("name")
    if not isinstance(name, str) or not name:
        errors.append("name: required nonempty string")
        name = "unnamed"
    kind = doc.get("kind")
    if kind not in EXPERIMENT_KINDS:
        errors.append(f"kind: must be one of {EXPERIMENT_KINDS}, got {kind!r}")
        raise ManifestError(errors)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not (0 <= seed < 2**64):
        errors.append(f"seed: must be an integer in [0, 2^64), got {seed!r}")
        seed = 0
    outdir = doc.get("output_dir", "out")
    if not isinstance(outdir, str) or not outdir:
        errors.append("output_dir: must be a nonempty string")
        outdir = "out"

    emit = {"csv": True, "json": True, "svg": True}
    if "emit" in doc:
        if not isinstance(doc["emit"], dict):
            errors.append("emit: must be an object of booleans")
        else:
            for key, val in doc["emit"].items():
                if key not in emit:
                    errors.append(f"emit.{key}: unknown key (strict mode)")
                elif not isinstance(val, bool):
                    errors.append(f"emit.{key}: must be a boolean")
                else:
                    emit[key] = val

    params_doc = doc.get("params", {})
    if not isinstance(params_doc, dict):
        errors.append("params: must be an object")
        params_doc = {}
    params = _validate_block(params_doc, SCHEMAS[kind], "params.", errors)

    if params.get("initial") is not None:
        params["initial"] = _validate_block(params["initial"], _INITIAL_SCHEMA,
                                            "params.initial.", errors)

    # cross-field preconditions checkable before compute
    if kind == "particles":
        theta = params.get("theta")
        if theta is not None and not (0.0 < theta <= 0.5):
            errors.append(f"params.theta: must lie in (0, 0.5], got {theta}")
        if params["bandwidth"] < 2.0 / params["M"]:
            errors.append(f"params.bandwidth: must be at least two cells "
                          f"(2/M = {2.0 / params['M']}), got {params['bandwidth']}")
        if params["mode"] == "hydro_sweep":
            if not params.get("eps_list") or not params.get("N_list"):
                errors.append("params: hydro_sweep needs eps_list and N_list")
            elif len(params["eps_list"]) != len(params["N_list"]):
                errors.append("params: eps_list and N_list must have equal length")
    if kind == "cell":
        for a in params["alphas"]:
            if a <= 0:
                errors.append(f"params.alphas: entries must be positive, got {a}")
        for kap in params["kappas"]:
            if kap <= 0:
                errors.append(f"params.kappas: entries must be positive, got {kap}")
    if kind in ("meanfield", "heps") and params.get("eps_list"):
        for e in params["eps_list"]:
            if e <= 0:
                errors.append(f"params.eps_list: entries must be positive, got {e}")

    if errors:
        raise ManifestError(errors)
    return ExperimentManifest(name=name, kind=kind, seed=seed, params=params,
                              output_dir=outdir, emit=emit)


def parse_config(path) -> ExperimentManifest:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError([f"invalid JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ManifestError(["top level must be a JSON object"])
    return validate_manifest(doc)


def seed_split(master_seed: int, labels) -> dict:
    """Deterministic per-task seeds: sha256(master || label), collision-checked."""
    labels = list(labels)
    if len(set(labels)) != len(labels):
        dupes = sorted({l for l in labels if labels.count(l) > 1})
        raise ValueError(f"duplicate labels: {dupes}")
    out = {}
    seen = {}
    for label in labels:
        digest = hashlib.sha256(f"{master_seed}\x1f{label}".encode()).digest()
        seed = int.from_bytes(digest[:8], "little")
        if seed in seen:
            raise ValueError(f"seed collision between {seen[seed]!r} and {label!r}")
        seen[seed] = label
        out[label] = seed
    return out


@dataclass(frozen=True)
class RunRecord:
    manifest_hash: str
    input_hash: str
    wall_time: float
    tool_version: str
    result_files: tuple

    def to_json(self) -> str:
        return json.dumps({
            "manifest_hash": self.manifest_hash,
            "input_hash": self.input_hash,
            "wall_time": self.wall_time,
            "tool_version": self.tool_version,
            "result_files": list(self.result_files),
        }, indent=2, sort_keys=True)
