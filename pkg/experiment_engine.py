#!/usr/bin/env python3
"""
RMTLAB Experiment Engine
========================
Runs seeded Monte Carlo experiments over a worker pool, streams one record
per trial and reduces the records into acceptance summaries and plot tables.

Features:
- Eight experiment kinds sharing one trial / aggregate contract
- (seed, trial id) fully determines a trial's Philox stream
- Process pool over trial ids, records written in trial order by one sink
- CSV summaries with quantiles and pass/fail per acceptance criterion
- Long-format plot tables (local-law, scaling, universality)
"""

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from itertools import repeat
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import get_config
from core.errors import ConfigError, DomainError
from core.girko import (
    QuadratureSpec, TestFunction, eta_split, ibp_tail, linear_stat_direct,
    linear_stat_girko, rescale_f,
)
from core.model import (
    RNG_ALGORITHM, EnsembleParams, center, corner_perturb, flow, make_rng,
    sample_er, sample_ginibre, with_mean,
)
from core.records import RecordSink, canonical_json, make_header, read_records, write_csv
from core.spectral import (
    arnoldi_topk, dense_nonsym_eig, get_backend, offdiag_trace_bound, offdiag_trace_test,
)
from core.stats import (
    FUNCTIONALS, delocalization, edge_report, local_law_errors, local_law_scale,
    require_edge_grid, sample_functionals, two_sample_ks,
)
from core.validation import canonical_experiment, validate_experiment_config

# =============================================================================
# CONFIGURATION
# =============================================================================


class ExperimentName(str, Enum):
    LOCAL_LAW = "local-law"
    EDGE_RIGIDITY = "edge-rigidity"
    DELOCALIZATION = "delocalization"
    UNIVERSALITY = "universality"
    GIRKO_XCHECK = "girko-xcheck"
    BOUNDARY_TERM = "prop51"
    FLOW_VARIANCE = "flow-variance"
    CIRCULAR_LAW = "circular-law"


GRID_DEFAULTS = {
    ExperimentName.LOCAL_LAW: {
        "w": 1.0, "eta_min_exp": -0.94, "eta_max_exp": -0.72, "eta_points": 8,
        "delta": 0.05, "nu": 0.1, "weak": False,
    },
    ExperimentName.EDGE_RIGIDITY: {"N_values": None, "method": "auto", "k": 8, "tol": 1e-8},
    ExperimentName.DELOCALIZATION: {"radius": 2.0},
    ExperimentName.UNIVERSALITY: {
        "subject": "er", "reference": "ginibre", "control_scale": None,
        "w_star": 1.0, "window": 2.0, "repetitions": 1, "expect": "accept",
    },
    ExperimentName.GIRKO_XCHECK: {
        "profile": "polynomial-bump", "center": 0.0, "a": None, "grid_cells": 64,
        "refinements": 1, "eta_split": False, "delta_q": 0.05,
    },
    ExperimentName.BOUNDARY_TERM: {
        "w": 1.0, "eta_exp": -0.75, "delta": 0.05, "method": "solve", "ibp_tail": False,
        "profile": "polynomial-bump", "a": 0.5, "grid_cells": 16, "delta_q": 0.05,
    },
    ExperimentName.FLOW_VARIANCE: {"times": [0, 0.7, "inf"], "corner_ks": True},
    ExperimentName.CIRCULAR_LAW: {
        "w_star": 1.0, "a": 0.5, "profile": "gaussian-bump", "delta": 0.05,
    },
}

# Thresholds the Config acceptance block does not carry
ACCEPTANCE_EXTRAS = {
    "lambda1_fraction": 0.95,
    "pass_fraction": 0.8,
    "reject_level": 1e-3,
    "rel_tol": 1e-3,
    "slope_min": -0.7,
    "slope_max": -0.3,
    "eps_ibp": 0.1,
    "mc_sigmas": 3.0,
}

SUMMARY_COLUMNS = ["experiment", "criterion", "scope", "n", "q10", "q50", "q90",
                   "value", "bound", "pass"]

PLOT_KINDS = ("local-law", "scaling", "universality")


def _as_complex(value) -> complex:
    if isinstance(value, (list, tuple)):
        return complex(value[0], value[1])
    return complex(value)


def _as_time(value) -> float:
    return math.inf if value == "inf" else float(value)


# =============================================================================
# DATA MODELS
# =============================================================================


@dataclass
class ExperimentConfig:
    """A validated experiment with defaults filled in"""
    experiment: ExperimentName
    ensemble: EnsembleParams
    trials: int
    parallel: int = 1
    backend: str = "reference"
    grid: Dict = field(default_factory=dict)
    acceptance: Dict = field(default_factory=dict)
    output_dir: str = "./runs"
    name: str = ""
    description: str = ""

    @classmethod
    def from_dict(cls, payload: Dict, trials: Optional[int] = None, seed: Optional[int] = None,
                  parallel: Optional[int] = None, backend: Optional[str] = None,
                  out: Optional[str] = None) -> "ExperimentConfig":
        """
        Validate a config document; CLI overrides are applied before validation.

        Raises:
            ConfigError: every problem found, schema and domain alike
        """
        payload = json.loads(json.dumps(payload)) if isinstance(payload, dict) else payload
        if isinstance(payload, dict):
            if trials is not None:
                payload["trials"] = trials
            if parallel is not None:
                payload["parallel"] = parallel
            if backend is not None:
                payload["backend"] = backend
            if seed is not None and isinstance(payload.get("ensemble"), dict):
                payload["ensemble"]["seed"] = seed
            if out is not None:
                payload.setdefault("output", {})
                if isinstance(payload["output"], dict):
                    payload["output"]["dir"] = out

        result = validate_experiment_config(payload)
        if not result["valid"]:
            raise ConfigError(result["errors"])

        name = ExperimentName(canonical_experiment(payload["experiment"]))
        ens = payload["ensemble"]
        settings = get_config()
        config = cls(
            experiment=name,
            ensemble=EnsembleParams(
                ens["N"], ens["p"], ens.get("seed", 0), ens.get("zero_diagonal", False)
            ),
            trials=payload["trials"],
            parallel=payload.get("parallel", 1),
            backend=payload.get("backend", settings.BACKEND),
            grid={**GRID_DEFAULTS[name], **payload.get("grid", {})},
            acceptance={**settings.acceptance_defaults(), **ACCEPTANCE_EXTRAS,
                        **payload.get("acceptance", {})},
            output_dir=payload.get("output", {}).get("dir", settings.OUTPUT_DIR),
            name=payload.get("output", {}).get("name", name.value),
            description=payload.get("description", ""),
        )
        if config.experiment == ExperimentName.EDGE_RIGIDITY and not config.grid["N_values"]:
            config.grid["N_values"] = [config.ensemble.N]
        errors = config._domain_errors()
        if errors:
            raise ConfigError(errors)
        return config

    @classmethod
    def from_file(cls, path: str, **overrides) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                payload = json.load(handle)
        except OSError as e:
            raise ConfigError([f"cannot read {path}: {e}"]) from e
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path} is not valid JSON: {e}"]) from e
        return cls.from_dict(payload, **overrides)

    def _domain_errors(self) -> List[str]:
        """Checks that need the filled-in grid"""
        errors = []
        g = self.grid
        N = self.ensemble.N
        try:
            if self.experiment == ExperimentName.LOCAL_LAW:
                require_edge_grid(_as_complex(g["w"]), self.eta_grid(), N, g["delta"], g["weak"])
            elif self.experiment == ExperimentName.UNIVERSALITY:
                if 0 < self.trials < 100:
                    errors.append("universality needs 0 or at least 100 trials per repetition")
            elif self.experiment == ExperimentName.BOUNDARY_TERM:
                w, eta, delta = _as_complex(g["w"]), N ** g["eta_exp"], g["delta"]
                band = N ** (-0.5 + delta)
                if not 1.0 - band <= abs(w) <= 1.0 + band:
                    errors.append(f"grid.w={w} is outside the edge band for N={N}")
                if not N ** (-1.0 + delta) <= eta <= N ** (-0.75 + delta):
                    errors.append(f"grid.eta_exp={g['eta_exp']} is outside the edge band")
                if g["ibp_tail"]:
                    rescale_f(TestFunction(g["profile"], w, g["a"], delta), N)
            elif self.experiment == ExperimentName.CIRCULAR_LAW:
                rescale_f(TestFunction(g["profile"], _as_complex(g["w_star"]), g["a"], g["delta"]), N)
            elif self.experiment == ExperimentName.GIRKO_XCHECK and g["a"] is not None:
                rescale_f(TestFunction(g["profile"], _as_complex(g["center"]), g["a"]), N)
        except DomainError as e:
            errors.append(str(e))
        return errors

    def eta_grid(self) -> np.ndarray:
        g, N = self.grid, self.ensemble.N
        return np.geomspace(N ** g["eta_min_exp"], N ** g["eta_max_exp"], g["eta_points"])

    @property
    def total_trials(self) -> int:
        if self.experiment == ExperimentName.EDGE_RIGIDITY:
            return self.trials * len(self.grid["N_values"])
        if self.experiment == ExperimentName.UNIVERSALITY:
            return self.trials * self.grid["repetitions"]
        return self.trials

    @property
    def records_path(self) -> str:
        return os.path.join(self.output_dir, f"{self.name}.records.jsonl")

    @property
    def summary_path(self) -> str:
        return os.path.join(self.output_dir, f"{self.name}.summary.csv")

    def to_dict(self) -> Dict:
        """The experiment content; execution width and output location are left out"""
        return {
            "experiment": self.experiment.value,
            "description": self.description,
            "ensemble": {
                "N": self.ensemble.N, "p": self.ensemble.p, "seed": self.ensemble.seed,
                "zero_diagonal": self.ensemble.zero_diagonal,
            },
            "trials": self.trials,
            "backend": self.backend,
            "grid": self.grid,
            "acceptance": self.acceptance,
        }


@dataclass
class TrialRecord:
    """One trial's observables"""
    trial: int
    stream: int
    observables: Dict
    backend: str
    timings: Optional[Dict] = None

    def to_dict(self) -> Dict:
        payload = {
            "trial": self.trial, "stream": self.stream,
            "backend": self.backend, "observables": self.observables,
        }
        if self.timings is not None:
            payload["timings"] = self.timings
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> "TrialRecord":
        return cls(payload["trial"], payload["stream"], payload["observables"],
                   payload["backend"], payload.get("timings"))


@dataclass
class RunResult:
    records_path: str
    summary_path: str
    rows: List[Dict]
    aborted: bool = False

    @property
    def passed(self) -> bool:
        return not self.aborted and all(row["pass"] for row in self.rows)

    def to_dict(self) -> Dict:
        return asdict(self)


# =============================================================================
# TRIAL RUNNERS
# =============================================================================


def _rng(config: ExperimentConfig, stream: int) -> np.random.Generator:
    return make_rng(config.ensemble.seed, stream)


def _trial_local_law(config: ExperimentConfig, trial: int) -> Dict:
    w = _as_complex(config.grid["w"])
    etas = config.eta_grid()
    A = sample_er(config.ensemble, _rng(config, trial))
    perturbed = local_law_errors(A, w, etas, config.backend)
    centered = local_law_errors(center(A), w, etas, config.backend)
    return {
        "eta": etas,
        "perturbed": perturbed.errors,
        "centered": centered.errors,
        "imag_mismatch": float(max(
            np.abs(perturbed.errors - perturbed.imag_errors).max(),
            np.abs(centered.errors - centered.imag_errors).max(),
        )),
        "max_real_part": max(perturbed.max_real_part, centered.max_real_part),
    }


def _edge_method(method: str, N: int) -> str:
    """Resolve "auto" to the full spectrum up to the dense cap and to Arnoldi above it."""
    if method != "auto":
        return method
    return "dense" if N <= get_config().DENSE_CAP else "arnoldi"


def _trial_edge_rigidity(config: ExperimentConfig, trial: int) -> Dict:
    g = config.grid
    N = g["N_values"][trial // config.trials]
    params = replace(config.ensemble, N=N)
    A = sample_er(params, _rng(config, trial))
    method = _edge_method(g["method"], N)
    if method == "arnoldi":
        top = arnoldi_topk(A, g["k"], g["tol"], seed=trial, backend=config.backend)
        report = edge_report(top.eigenvalues, params.f, N)
    else:
        report = edge_report(dense_nonsym_eig(A, backend=config.backend).eigenvalues, params.f)
    return {"N": N, "method": method, **report.to_dict(), "rho2_error": abs(report.rho2 - 1.0)}


def _trial_delocalization(config: ExperimentConfig, trial: int) -> Dict:
    A = sample_er(config.ensemble, _rng(config, trial))
    report = delocalization(A, radius=config.grid["radius"], backend=config.backend)
    return report.to_dict()


def _trial_universality(config: ExperimentConfig, trial: int) -> Dict:
    g = config.grid
    w_star = _as_complex(g["w_star"])
    subject = sample_functionals(g["subject"], config.ensemble, 2 * trial, w_star, g["window"],
                                 backend=config.backend)
    reference = sample_functionals(g["reference"], config.ensemble, 2 * trial + 1, w_star,
                                   g["window"], g["control_scale"], config.backend)
    return {"repetition": trial // config.trials, "subject": subject, "reference": reference}


def _girko_function(config: ExperimentConfig, center_key: str):
    g = config.grid
    tf = TestFunction(g["profile"], _as_complex(g[center_key]),
                      g["a"] if g.get("a") is not None else 0.5, g.get("delta", 0.05))
    if g.get("a") is None:
        return tf.unscaled()
    return rescale_f(tf, config.ensemble.N)


def _trial_girko(config: ExperimentConfig, trial: int) -> Dict:
    g = config.grid
    A = sample_er(config.ensemble, _rng(config, trial))
    rtf = _girko_function(config, "center")
    spec = QuadratureSpec(delta_q=g["delta_q"], grid_cells=g["grid_cells"],
                          refinements=g["refinements"])
    direct = linear_stat_direct(dense_nonsym_eig(A, backend=config.backend).eigenvalues, rtf)
    girko = linear_stat_girko(A, rtf, spec, config.backend)
    observables = {
        "direct": direct,
        "girko": girko.value,
        "error_estimate": girko.error_estimate,
        "rel_error": abs(girko.value - direct) / max(abs(direct), np.finfo(float).tiny),
        "ill_conditioned_nodes": girko.ill_conditioned_nodes,
    }
    if g["eta_split"]:
        split = eta_split(A, rtf, spec, config.backend)
        observables["eta_split"] = {
            "T1": split.T1, "T2": split.T2, "T3": split.T3,
            "statistic": split.statistic, "deterministic": split.deterministic,
            "disc_mass": split.disc_mass,
            "identity_defect": abs(split.total - (split.statistic - split.deterministic)),
        }
    return observables


def _trial_boundary_term(config: ExperimentConfig, trial: int) -> Dict:
    g = config.grid
    N = config.ensemble.N
    w, eta = _as_complex(g["w"]), N ** g["eta_exp"]
    A = sample_er(config.ensemble, _rng(config, trial))
    deviation = offdiag_trace_test(A, w, eta, g["delta"], g["method"], config.backend)
    observables = {
        "deviation": deviation,
        "abs_deviation": abs(deviation),
        "bound": offdiag_trace_bound(N, eta),
    }
    if g["ibp_tail"]:
        tf = TestFunction(g["profile"], w, g["a"], g["delta"])
        spec = QuadratureSpec(delta_q=g["delta_q"], grid_cells=g["grid_cells"])
        tail = ibp_tail(A, rescale_f(tf, N), eta_star=eta, spec=spec)
        observables["T3"] = tail.value
        observables["abs_T3"] = abs(tail.value)
    return observables


def _trial_flow_variance(config: ExperimentConfig, trial: int) -> Dict:
    params = config.ensemble
    rng = _rng(config, trial)
    B = center(sample_er(params, rng))
    W = sample_ginibre(params.N, params.seed, rng=rng)
    moments = []
    for t in config.grid["times"]:
        entries = flow(B, W, _as_time(t)).dense
        moments.append({
            "t": t, "n": int(entries.size),
            "m2": float(np.mean(entries ** 2)), "m4": float(np.mean(entries ** 4)),
        })
    observables = {"moments": moments}
    if config.grid["corner_ks"]:
        corner = corner_perturb(sample_ginibre(params.N, params.seed, rng=rng), params.f)
        shifted = with_mean(sample_ginibre(params.N, params.seed, rng=rng), params.f)
        observables["corner_moduli"] = np.abs(dense_nonsym_eig(corner, backend=config.backend).eigenvalues)
        observables["mean_moduli"] = np.abs(dense_nonsym_eig(shifted, backend=config.backend).eigenvalues)
    return observables


def _trial_circular_law(config: ExperimentConfig, trial: int) -> Dict:
    g = config.grid
    N = config.ensemble.N
    A = sample_er(config.ensemble, _rng(config, trial))
    tf = TestFunction(g["profile"], _as_complex(g["w_star"]), g["a"], g["delta"])
    rtf = rescale_f(tf, N)
    statistic = linear_stat_direct(dense_nonsym_eig(A, backend=config.backend).eigenvalues, rtf)
    mass = rtf.disc_mass()
    return {
        "statistic": statistic,
        "disc_mass": mass,
        "deviation": abs(statistic - mass),
        "bound": N ** (2.0 * g["a"] - 1.0 + config.acceptance["eps_local_law"]),
    }


TRIAL_RUNNERS = {
    ExperimentName.LOCAL_LAW: _trial_local_law,
    ExperimentName.EDGE_RIGIDITY: _trial_edge_rigidity,
    ExperimentName.DELOCALIZATION: _trial_delocalization,
    ExperimentName.UNIVERSALITY: _trial_universality,
    ExperimentName.GIRKO_XCHECK: _trial_girko,
    ExperimentName.BOUNDARY_TERM: _trial_boundary_term,
    ExperimentName.FLOW_VARIANCE: _trial_flow_variance,
    ExperimentName.CIRCULAR_LAW: _trial_circular_law,
}


def run_trial(config: ExperimentConfig, trial: int) -> Dict:
    """
    Execute one trial and return its record in JSON form.

    Module-level so worker processes can unpickle it.
    """
    started = time.perf_counter()
    observables = TRIAL_RUNNERS[config.experiment](config, trial)
    timings = None
    if get_config().RECORD_TIMINGS:
        timings = {"seconds": time.perf_counter() - started}
    record = TrialRecord(trial, trial, observables, get_backend(config.backend).identifier, timings)
    return json.loads(canonical_json(record.to_dict()))


# =============================================================================
# AGGREGATION
# =============================================================================


def _row(config: ExperimentConfig, criterion: str, scope: str, samples, value: float,
         bound: float, passed: bool) -> Dict:
    samples = np.asarray(samples, dtype=float)
    samples = samples[np.isfinite(samples)]
    q = np.quantile(samples, [0.1, 0.5, 0.9]) if samples.size else [math.nan] * 3
    return {
        "experiment": config.experiment.value, "criterion": criterion, "scope": scope,
        "n": int(samples.size), "q10": float(q[0]), "q50": float(q[1]), "q90": float(q[2]),
        "value": float(value), "bound": float(bound), "pass": bool(passed),
    }


def _float_array(values) -> np.ndarray:
    return np.array([math.nan if v is None else v for v in values], dtype=float)


def _aggregate_local_law(config, observations):
    g, acc, N = config.grid, config.acceptance, config.ensemble.N
    w = _as_complex(g["w"])
    etas = np.asarray(observations[0]["eta"], dtype=float)
    scale = local_law_scale(w, etas, N, g["nu"])
    bound = N ** acc["eps_local_law"]
    label = "N^(1+nu)*eta" if abs(w) > 1 else "N*eta"
    rows = []
    for ensemble in ("perturbed", "centered"):
        scaled = np.array([o[ensemble] for o in observations], dtype=float) * scale
        for j, eta in enumerate(etas):
            value = float(np.quantile(scaled[:, j], acc["quantile"]))
            rows.append(_row(config, f"q{acc['quantile']:.2f} {label}*|g-m| <= N^eps",
                             f"{ensemble} eta={eta:.4e}", scaled[:, j], value, bound, value <= bound))
    real_part = max(o["max_real_part"] for o in observations)
    tol = get_config().TOL_SYMMETRY
    rows.append(_row(config, "max |Re g| at z=i*eta", "all", [real_part], real_part, tol, real_part <= tol))
    mismatch = max(o["imag_mismatch"] for o in observations)
    rows.append(_row(config, "|g-m| equals |Im g - Im m|", "all", [mismatch], mismatch, tol, mismatch <= tol))
    return rows


def _aggregate_edge_rigidity(config, observations):
    acc = config.acceptance
    rows, medians = [], []
    for N in config.grid["N_values"]:
        group = [o for o in observations if o["N"] == N]
        if not group:
            continue
        errors = _float_array(o["rho2_error"] for o in group)
        median = float(np.median(errors))
        medians.append((N, median))
        bound = acc["rigidity_constant"] / math.sqrt(N)
        rows.append(_row(config, "median |rho2 - 1| <= C/sqrt(N)", f"N={N}", errors,
                         median, bound, median <= bound))
        gaps = _float_array(o["f_gap"] for o in group)
        fraction = float(np.mean(gaps <= acc["lambda1_slack"]))
        rows.append(_row(config, "fraction |lambda1 - f| <= slack", f"N={N}", gaps,
                         fraction, acc["lambda1_fraction"], fraction >= acc["lambda1_fraction"]))
    if len(medians) >= 2:
        slope = scaling_slope([n for n, _ in medians], [m for _, m in medians])
        passed = acc["slope_min"] <= slope <= acc["slope_max"]
        rows.append(_row(config, "slope of log median error vs log N", "all",
                         [m for _, m in medians], slope, acc["slope_max"], passed))
    return rows


def _aggregate_delocalization(config, observations):
    acc, N = config.acceptance, config.ensemble.N
    maxima = _float_array(o["max"] for o in observations)
    bound = N ** acc["eps_local_law"]
    fraction = float(np.mean(maxima <= bound))
    return [_row(config, "fraction max sqrt(N)|u|_inf <= N^eps", "all", maxima,
                 fraction, acc["quantile"], fraction >= acc["quantile"])]


def _ks_by_functional(subject: List[Dict], reference: List[Dict]) -> Dict[str, Optional[float]]:
    """p-value per functional; None where a sample is too small for KS"""
    p_values = {}
    for name in FUNCTIONALS:
        a = _float_array(r[name] for r in subject)
        b = _float_array(r[name] for r in reference)
        try:
            p_values[name] = two_sample_ks(a[np.isfinite(a)], b[np.isfinite(b)], name).p_value
        except DomainError:
            p_values[name] = None
    return p_values


def _aggregate_universality(config, observations):
    acc, g = config.acceptance, config.grid
    repetitions = sorted({o["repetition"] for o in observations})
    per_rep = []
    for rep in repetitions:
        group = [o for o in observations if o["repetition"] == rep]
        per_rep.append(_ks_by_functional([o["subject"] for o in group],
                                         [o["reference"] for o in group]))
    rows = []
    if g["expect"] == "reject":
        p = _float_array(r["fluct"] for r in per_rep)
        fraction = float(np.mean(p < acc["reject_level"]))
        rows.append(_row(config, "fraction fluct p < reject_level", "fluct", p,
                         fraction, acc["pass_fraction"], fraction >= acc["pass_fraction"]))
        return rows
    for name in FUNCTIONALS:
        p = _float_array(r[name] for r in per_rep)
        fraction = float(np.mean(p > acc["ks_level"]))
        rows.append(_row(config, "fraction p > ks_level", name, p, fraction,
                         acc["pass_fraction"], fraction >= acc["pass_fraction"]))
    all_pass = [all(v is not None and v > acc["ks_level"] for v in r.values()) for r in per_rep]
    fraction = float(np.mean(all_pass))
    rows.append(_row(config, "fraction repetitions with all p > ks_level", "all",
                     np.array(all_pass, dtype=float), fraction, acc["pass_fraction"],
                     fraction >= acc["pass_fraction"]))
    return rows


def _aggregate_girko(config, observations):
    acc = config.acceptance
    rel = _float_array(o["rel_error"] for o in observations)
    worst = float(rel.max())
    rows = [_row(config, "max relative |girko - direct|", "all", rel, worst,
                 acc["rel_tol"], worst <= acc["rel_tol"])]
    if config.grid["eta_split"]:
        defects = _float_array(o["eta_split"]["identity_defect"] for o in observations)
        worst = float(defects.max())
        rows.append(_row(config, "|T1+T2+T3 - (statistic - deterministic)|", "all",
                         defects, worst, 1e-8, worst <= 1e-8))
    return rows


def _aggregate_boundary_term(config, observations):
    acc, g, N = config.acceptance, config.grid, config.ensemble.N
    deviations = _float_array(o["abs_deviation"] for o in observations)
    median = float(np.median(deviations))
    bound = N ** acc["eps_offdiag"] * observations[0]["bound"]
    rows = [_row(config, "median |offdiag + (1+m^2)/w| <= N^eps*bound", "all",
                 deviations, median, bound, median <= bound)]
    if g["ibp_tail"]:
        tails = _float_array(o["abs_T3"] for o in observations)
        tail_bound = N ** (-g["delta_q"] + acc["eps_ibp"])
        fraction = float(np.mean(tails <= tail_bound))
        rows.append(_row(config, "fraction |T3| <= N^(-delta_q+eps)", "all", tails,
                         fraction, acc["quantile"], fraction >= acc["quantile"]))
    return rows


def _aggregate_flow_variance(config, observations):
    acc, N = config.acceptance, config.ensemble.N
    rows = []
    for index, t in enumerate(config.grid["times"]):
        entries = [o["moments"][index] for o in observations]
        n = sum(e["n"] for e in entries)
        m2 = sum(e["n"] * e["m2"] for e in entries) / n
        m4 = sum(e["n"] * e["m4"] for e in entries) / n
        error = math.sqrt(max(m4 - m2 * m2, 0.0) / n)
        deviation = abs(m2 - 1.0 / N)
        bound = acc["mc_sigmas"] * error
        rows.append(_row(config, "|entry variance - 1/N| <= k*SE", f"t={t}",
                         [e["m2"] for e in entries], deviation, bound, deviation <= bound))
    if config.grid["corner_ks"]:
        corner = np.concatenate([o["corner_moduli"] for o in observations])
        shifted = np.concatenate([o["mean_moduli"] for o in observations])
        p = two_sample_ks(corner, shifted, "moduli").p_value
        rows.append(_row(config, "KS p-value corner vs mean moduli", "all", [p], p,
                         acc["ks_level"], p > acc["ks_level"]))
    return rows


def _aggregate_circular_law(config, observations):
    acc = config.acceptance
    deviations = _float_array(o["deviation"] for o in observations)
    bound = observations[0]["bound"]
    fraction = float(np.mean(deviations <= bound))
    return [_row(config, "fraction |statistic - disc mass| <= N^(2a-1+eps)", "all",
                 deviations, fraction, acc["quantile"], fraction >= acc["quantile"])]


AGGREGATORS = {
    ExperimentName.LOCAL_LAW: _aggregate_local_law,
    ExperimentName.EDGE_RIGIDITY: _aggregate_edge_rigidity,
    ExperimentName.DELOCALIZATION: _aggregate_delocalization,
    ExperimentName.UNIVERSALITY: _aggregate_universality,
    ExperimentName.GIRKO_XCHECK: _aggregate_girko,
    ExperimentName.BOUNDARY_TERM: _aggregate_boundary_term,
    ExperimentName.FLOW_VARIANCE: _aggregate_flow_variance,
    ExperimentName.CIRCULAR_LAW: _aggregate_circular_law,
}


def aggregate(config: ExperimentConfig, records: List[Dict]) -> List[Dict]:
    """Summary rows from JSON-form trial records; no records, no rows"""
    if not records:
        return []
    records = sorted(records, key=lambda r: r["trial"])
    return AGGREGATORS[config.experiment](config, [r["observables"] for r in records])


def scaling_slope(sizes, errors) -> float:
    """Least-squares slope of log error against log N"""
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])


# =============================================================================
# EXPERIMENT ENGINE
# =============================================================================


class ExperimentEngine:
    """
    Runs one experiment config: trials across workers, records through one
    sink, then the summary table.
    """

    def __init__(self, config: ExperimentConfig, verbose: bool = False):
        self.config = config
        self.logger = self._setup_logger(verbose)

    def _setup_logger(self, verbose: bool) -> logging.Logger:
        """Setup logger with file and console handlers"""
        settings = get_config()
        logger = logging.getLogger("rmtlab")
        logger.setLevel(logging.DEBUG if verbose else settings.LOG_LEVEL)

        # Remove existing handlers
        logger.handlers.clear()

        # File handler
        file_handler = logging.FileHandler(settings.get_log_file())
        file_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        file_handler.setFormatter(file_formatter)
        logger.addHandler(file_handler)

        # Console handler
        console_handler = logging.StreamHandler()
        console_formatter = logging.Formatter(
            '%(levelname)s: %(message)s'
        )
        console_handler.setFormatter(console_formatter)
        logger.addHandler(console_handler)

        return logger

    def header(self) -> Dict:
        settings = get_config()
        return make_header(
            self.config.to_dict(), settings.CODE_VERSION,
            [get_backend(self.config.backend).identifier], RNG_ALGORITHM,
        )

    def _iter_records(self, total: int):
        if self.config.parallel > 1 and total > 1:
            with ProcessPoolExecutor(max_workers=self.config.parallel) as executor:
                chunk = max(1, total // (4 * self.config.parallel))
                # map keeps trial order, so the file does not depend on the pool width
                yield from executor.map(run_trial, repeat(self.config), range(total), chunksize=chunk)
        else:
            for trial in range(total):
                yield run_trial(self.config, trial)

    def run(self) -> RunResult:
        """
        Execute every trial and write records plus summary.

        A failing trial aborts the run: the records written so far stay on
        disk followed by an aborted trailer, and the exception propagates.
        """
        config = self.config
        total = config.total_trials
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        self.logger.info(
            f"Running {config.experiment.value} ({config.name}): N={config.ensemble.N}, "
            f"p={config.ensemble.p}, {total} trials, parallel={config.parallel}, "
            f"backend={config.backend}"
        )

        header = self.header()
        records = []
        sink = RecordSink(config.records_path, header)
        try:
            with sink.session():
                for record in self._iter_records(total):
                    sink.write(record)
                    records.append(record)
                    self.logger.debug(f"trial {record['trial']} done")
        except Exception as e:
            self.logger.error(f"Experiment aborted after {len(records)} of {total} trials: {e}")
            raise

        rows = aggregate(config, records)
        write_csv(config.summary_path, SUMMARY_COLUMNS, rows, header)
        failed = [row for row in rows if not row["pass"]]
        self.logger.info(
            f"{len(rows) - len(failed)}/{len(rows)} acceptance rows pass "
            f"(records: {config.records_path}, summary: {config.summary_path})"
        )
        for row in failed:
            self.logger.warning(f"FAIL {row['criterion']} [{row['scope']}]: "
                                f"{row['value']:.4g} vs {row['bound']:.4g}")
        return RunResult(config.records_path, config.summary_path, rows)


def summarize_records(records_path: str) -> Tuple[ExperimentConfig, List[Dict], bool]:
    """Re-aggregate an existing records file"""
    header, records, aborted = read_records(records_path)
    if not header:
        raise ConfigError([f"{records_path} has no header line"])
    config = ExperimentConfig.from_dict(header["config"])
    return config, aggregate(config, records), aborted


# =============================================================================
# PLOT DATA
# =============================================================================


def _plot_local_law(config, observations):
    N = config.ensemble.N
    w = _as_complex(config.grid["w"])
    columns = ["eta", "q10", "q50", "q90", "bound", "ensemble"]
    if not observations:
        return columns, [], {}
    etas = np.asarray(observations[0]["eta"], dtype=float)
    scale = local_law_scale(w, etas, N, config.grid["nu"])
    bound = N ** config.acceptance["eps_local_law"]
    rows = []
    for ensemble in ("perturbed", "centered"):
        scaled = np.array([o[ensemble] for o in observations], dtype=float) * scale
        q = np.quantile(scaled, [0.1, 0.5, 0.9], axis=0)
        for j, eta in enumerate(etas):
            rows.append({"eta": eta, "q10": q[0, j], "q50": q[1, j], "q90": q[2, j],
                         "bound": bound, "ensemble": ensemble})
    return columns, rows, {}


def _plot_scaling(config, observations):
    columns = ["N", "median_error"]
    sizes = sorted({o["N"] for o in observations})
    rows = []
    for N in sizes:
        errors = _float_array(o["rho2_error"] for o in observations if o["N"] == N)
        rows.append({"N": N, "median_error": float(np.median(errors))})
    extra = {}
    if len(rows) >= 2:
        extra["slope"] = scaling_slope([r["N"] for r in rows], [r["median_error"] for r in rows])
    return columns, rows, extra


def _plot_universality(config, observations):
    columns = ["functional", "ensemble", "value"]
    g = config.grid
    rows = []
    for o in observations:
        for role, ensemble in (("subject", g["subject"]), ("reference", g["reference"])):
            label = ensemble if role == "subject" else f"{ensemble}-reference"
            for name in FUNCTIONALS:
                rows.append({"functional": name, "ensemble": label, "value": o[role][name]})
    return columns, rows, {}


PLOTTERS = {
    "local-law": (ExperimentName.LOCAL_LAW, _plot_local_law),
    "scaling": (ExperimentName.EDGE_RIGIDITY, _plot_scaling),
    "universality": (ExperimentName.UNIVERSALITY, _plot_universality),
}


def emit_plot_data(records_path: str, kind: str, out_path: Optional[str] = None) -> Tuple[str, Dict]:
    """
    Tidy long-format table for one plot kind.

    Returns:
        (path written, extras such as the scaling slope)

    Raises:
        ConfigError: unknown kind, or records from a different experiment
    """
    if kind not in PLOTTERS:
        raise ConfigError([f"unknown plot kind {kind!r}; known kinds: {', '.join(PLOT_KINDS)}"])
    header, records, _ = read_records(records_path)
    if not header:
        raise ConfigError([f"{records_path} has no header line"])
    config = ExperimentConfig.from_dict(header["config"])
    expected, plotter = PLOTTERS[kind]
    if config.experiment != expected:
        raise ConfigError([f"plot kind {kind!r} needs {expected.value} records, "
                           f"got {config.experiment.value}"])

    observations = [r["observables"] for r in sorted(records, key=lambda r: r["trial"])]
    columns, rows, extra = plotter(config, observations)
    if out_path is None:
        base = records_path[:-len(".records.jsonl")] if records_path.endswith(".records.jsonl") \
            else os.path.splitext(records_path)[0]
        out_path = f"{base}.{kind}.csv"
    write_csv(out_path, columns, rows, {**header, **extra})
    return out_path, extra
