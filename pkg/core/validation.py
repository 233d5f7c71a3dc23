"""
Experiment config validation.

Validators collect every problem and return {"valid": bool, "errors": [...]};
unknown keys are errors at every level.
"""
import math

EXPERIMENT_NAMES = (
    "local-law", "edge-rigidity", "delocalization", "universality",
    "girko-xcheck", "prop51", "flow-variance", "circular-law",
)

# accepted spellings -> canonical experiment name
EXPERIMENT_ALIASES = {"boundary-term": "prop51"}

PROFILES = ("gaussian-bump", "polynomial-bump")
BACKENDS = ("reference", "accelerated")

TOP_LEVEL_KEYS = {
    "experiment", "description", "ensemble", "trials", "parallel",
    "backend", "grid", "acceptance", "output",
}
ENSEMBLE_KEYS = {"N", "p", "seed", "zero_diagonal"}
OUTPUT_KEYS = {"dir", "name"}
ACCEPTANCE_KEYS = {
    "eps_local_law", "eps_offdiag", "quantile", "rigidity_constant",
    "lambda1_slack", "lambda1_fraction", "ks_level", "pass_fraction",
    "reject_level", "rel_tol", "slope_min", "slope_max", "eps_ibp", "mc_sigmas",
}

# key -> kind; a tuple of strings is a set of allowed values
GRID_SCHEMA = {
    "local-law": {
        "w": "complex", "eta_min_exp": "number", "eta_max_exp": "number",
        "eta_points": "int", "delta": "number", "nu": "number", "weak": "bool",
    },
    "edge-rigidity": {
        "N_values": "int_list", "method": ("auto", "dense", "arnoldi"), "k": "int", "tol": "number",
    },
    "delocalization": {"radius": "number"},
    "universality": {
        "subject": ("er", "ginibre"), "reference": ("er", "ginibre"),
        "control_scale": "optional_number", "w_star": "complex", "window": "number",
        "repetitions": "int", "expect": ("accept", "reject"),
    },
    "girko-xcheck": {
        "profile": PROFILES, "center": "complex", "a": "optional_number",
        "grid_cells": "int", "refinements": "int", "eta_split": "bool", "delta_q": "number",
    },
    "prop51": {
        "w": "complex", "eta_exp": "number", "delta": "number",
        "method": ("spectral", "direct", "solve"), "ibp_tail": "bool",
        "profile": PROFILES, "a": "number", "grid_cells": "int", "delta_q": "number",
    },
    "flow-variance": {"times": "time_list", "corner_ks": "bool"},
    "circular-law": {
        "w_star": "complex", "a": "number", "profile": PROFILES, "delta": "number",
    },
}


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return (isinstance(value, (int, float)) and not isinstance(value, bool)
            and math.isfinite(value))


def _is_complex(value) -> bool:
    if _is_number(value):
        return True
    return isinstance(value, list) and len(value) == 2 and all(_is_number(v) for v in value)


def _is_time(value) -> bool:
    return value == "inf" or (_is_number(value) and value >= 0)


def _check_kind(name: str, value, kind) -> list:
    if isinstance(kind, tuple):
        if value not in kind:
            return [f"{name} must be one of {', '.join(kind)}"]
        return []
    checks = {
        "int": (_is_int, "an integer"),
        "number": (_is_number, "a finite number"),
        "optional_number": (lambda v: v is None or _is_number(v), "a finite number or null"),
        "bool": (lambda v: isinstance(v, bool), "a boolean"),
        "complex": (_is_complex, "a number or a [re, im] pair"),
        "int_list": (lambda v: isinstance(v, list) and len(v) > 0 and all(_is_int(x) and x >= 2 for x in v),
                     "a non-empty list of integers >= 2"),
        "time_list": (lambda v: isinstance(v, list) and len(v) > 0 and all(_is_time(x) for x in v),
                      "a non-empty list of nonnegative numbers or \"inf\""),
    }
    predicate, description = checks[kind]
    if not predicate(value):
        return [f"{name} must be {description}"]
    return []


def _unknown_keys(section: str, payload: dict, allowed: set) -> list:
    return [f"unknown key {section}{key}" for key in sorted(set(payload) - allowed)]


def validate_ensemble(payload) -> dict:
    errors = []
    if not isinstance(payload, dict):
        return {"valid": False, "errors": ["ensemble must be an object"]}

    errors += _unknown_keys("ensemble.", payload, ENSEMBLE_KEYS)
    N = payload.get("N")
    p = payload.get("p")
    if not _is_int(N) or N < 2:
        errors.append("ensemble.N must be an integer >= 2")
    if not _is_number(p) or not 0 < p <= 0.5:
        errors.append("ensemble.p must lie in (0, 1/2]")
    seed = payload.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        errors.append("ensemble.seed must be a nonnegative integer")
    if not isinstance(payload.get("zero_diagonal", False), bool):
        errors.append("ensemble.zero_diagonal must be a boolean")
    return {"valid": len(errors) == 0, "errors": errors}


def validate_grid(experiment: str, payload) -> dict:
    errors = []
    if not isinstance(payload, dict):
        return {"valid": False, "errors": ["grid must be an object"]}
    schema = GRID_SCHEMA.get(experiment, {})

    errors += _unknown_keys("grid.", payload, set(schema))
    for key, value in payload.items():
        if key in schema:
            errors += _check_kind(f"grid.{key}", value, schema[key])

    points = payload.get("eta_points")
    if _is_int(points) and points < 2:
        errors.append("grid.eta_points must be at least 2")
    cells = payload.get("grid_cells")
    if _is_int(cells) and (cells < 2 or cells % 2):
        errors.append("grid.grid_cells must be an even integer >= 2")
    repetitions = payload.get("repetitions")
    if _is_int(repetitions) and repetitions < 1:
        errors.append("grid.repetitions must be positive")
    return {"valid": len(errors) == 0, "errors": errors}


def validate_acceptance(payload) -> dict:
    errors = []
    if not isinstance(payload, dict):
        return {"valid": False, "errors": ["acceptance must be an object"]}

    errors += _unknown_keys("acceptance.", payload, ACCEPTANCE_KEYS)
    for key, value in payload.items():
        if key in ACCEPTANCE_KEYS and not _is_number(value):
            errors.append(f"acceptance.{key} must be a finite number")
    for key in ("quantile", "pass_fraction", "lambda1_fraction", "ks_level", "reject_level"):
        value = payload.get(key)
        if _is_number(value) and not 0 < value <= 1:
            errors.append(f"acceptance.{key} must lie in (0, 1]")
    return {"valid": len(errors) == 0, "errors": errors}


def canonical_experiment(name):
    """Resolve an alias to its canonical experiment name; anything else passes through"""
    return EXPERIMENT_ALIASES.get(name, name) if isinstance(name, str) else name


def validate_experiment_config(payload) -> dict:
    errors = []
    if not isinstance(payload, dict):
        return {"valid": False, "errors": ["config must be a JSON object"]}

    errors += _unknown_keys("", payload, TOP_LEVEL_KEYS)

    experiment = canonical_experiment(payload.get("experiment"))
    if experiment not in EXPERIMENT_NAMES:
        errors.append(f"experiment must be one of {', '.join(EXPERIMENT_NAMES)} "
                      f"(aliases: {', '.join(EXPERIMENT_ALIASES)})")

    if "ensemble" not in payload:
        errors.append("ensemble is required")
    else:
        errors += validate_ensemble(payload["ensemble"])["errors"]

    trials = payload.get("trials")
    if not _is_int(trials) or trials < 0:
        errors.append("trials must be a nonnegative integer")
    parallel = payload.get("parallel", 1)
    if not _is_int(parallel) or parallel < 1:
        errors.append("parallel must be a positive integer")
    if payload.get("backend", "reference") not in BACKENDS:
        errors.append(f"backend must be one of {', '.join(BACKENDS)}")
    if not isinstance(payload.get("description", ""), str):
        errors.append("description must be a string")

    if experiment in EXPERIMENT_NAMES:
        errors += validate_grid(experiment, payload.get("grid", {}))["errors"]
    errors += validate_acceptance(payload.get("acceptance", {}))["errors"]

    output = payload.get("output", {})
    if not isinstance(output, dict):
        errors.append("output must be an object")
    else:
        errors += _unknown_keys("output.", output, OUTPUT_KEYS)
        for key in OUTPUT_KEYS & set(output):
            if not isinstance(output[key], str) or not output[key].strip():
                errors.append(f"output.{key} must be a non-empty string")

    return {"valid": len(errors) == 0, "errors": errors}
