#!/usr/bin/env python3
"""
RMTLAB - Oracle Checks
======================
Small-N brute-force checks of the exact identities and solver agreement.

Usage:
    python oracle.py [subcheck ...] [--json] [--verbose]

Subchecks:
    identities   Ward, chiral pairing, block trace, Re g = 0 on 20 random configurations
    cubic        |P(m)|, Im m > 0, semicircle match and the u identity on a 10^4 grid
    eigensolvers Arnoldi vs dense, spectral vs inverted resolvent, QL/QR vs polynomial roots
    girko        Girko statistic vs the direct spectrum (20 samples, N=64) and on known point sets

Returns:
    0 if every check passes
    2 if a check fails
    4 if a numerical backend error occurred
"""

import functools
import json
import sys
import time
from datetime import datetime

import numpy as np

from config import get_config
from core.errors import NUMERICAL_ERRORS
from core.girko import (
    Profile, QuadratureSpec, TestFunction, linear_stat_direct, linear_stat_girko,
    log_modulus_via_eta,
)
from core.model import EnsembleParams, make_rng, sample_er
from core.spectral import (
    arnoldi_topk, dense_nonsym_eig, get_backend, green_direct, green_entries, pairing_defect,
    sym_eig,
)
from core.theory import (
    ShiftPoint, eval_P, identity_residual, imaginary_root, semicircle_m, solve_m,
)

ORACLE_SEED = 20240601


def _result(passed: bool, metrics: dict, started: float) -> dict:
    return {
        "passed": bool(passed),
        "metrics": metrics,
        "error": None,
        "numerical_error": False,
        "seconds": round(time.perf_counter() - started, 3),
    }


def _guarded(check):
    """Numerical failures become a failed result flagged for exit code 4"""
    @functools.wraps(check)
    def wrapper(*args, **kwargs):
        started = time.perf_counter()
        try:
            return check(*args, **kwargs)
        except NUMERICAL_ERRORS as e:
            return {
                "passed": False,
                "metrics": {},
                "error": f"{type(e).__name__}: {e}",
                "numerical_error": True,
                "seconds": round(time.perf_counter() - started, 3),
            }
    return wrapper


@_guarded
def check_identities(configurations: int = 20, backend=None) -> dict:
    """Exact resolvent identities on random (X, w, η), N ≤ 64"""
    started = time.perf_counter()
    settings = get_config()
    rng = make_rng(ORACLE_SEED, 0)
    ward, pairing, blocktrace, real_part, symmetry = 0.0, 0.0, 0.0, 0.0, 0.0
    ward_ok = True

    for index in range(configurations):
        N = int(rng.integers(8, 65))
        p = float(rng.uniform(0.05, 0.5))
        A = sample_er(EnsembleParams(N, p, ORACLE_SEED + index), make_rng(ORACLE_SEED, index + 1))
        w = complex(*rng.uniform(-1.2, 1.2, size=2))
        eta = float(10 ** rng.uniform(-2, 0))
        pairs = [(int(a), int(b)) for a, b in rng.integers(0, 2 * N, size=(16, 2))]

        _, evaluation = green_entries(A, w, eta, index_pairs=pairs, backend=backend, rng=rng)
        ward = max(ward, evaluation.ward_residual_max * eta)
        ward_ok = ward_ok and evaluation.ward_residual_max <= settings.TOL_WARD / eta
        blocktrace = max(blocktrace, evaluation.blocktrace_residual)
        real_part = max(real_part, abs(evaluation.gtilde.real))
        symmetry = max(symmetry, evaluation.symmetry_residual or 0.0)
        pairing = max(pairing, pairing_defect(A, w, backend))

    metrics = {
        "configurations": configurations,
        "ward_residual_times_eta": ward,
        "pairing_defect": pairing,
        "blocktrace_residual": blocktrace,
        "max_abs_real_gtilde": real_part,
        "symmetry_residual": symmetry,
    }
    passed = (
        ward_ok
        and pairing <= settings.TOL_PAIRING
        and blocktrace <= settings.TOL_BLOCKTRACE
        and real_part <= settings.TOL_SYMMETRY
        and symmetry <= settings.TOL_PAIRING
    )
    return _result(passed, metrics, started)


@_guarded
def check_cubic(points: int = 100) -> dict:
    """Root residuals on a points×points (|w|, η) grid plus closed forms"""
    started = time.perf_counter()
    settings = get_config()
    abs_w = np.linspace(0.0, 3.0, points)
    etas = np.geomspace(1e-8, 1.0, points)
    W, E = np.meshgrid(abs_w, etas, indexing="ij")
    a = imaginary_root(W ** 2, E)
    m = 1j * a
    residual = np.abs(((m + 2j * E) * m + (1.0 - E ** 2 - W ** 2)) * m + 1j * E)

    semicircle = max(
        abs(solve_m(ShiftPoint(0.0, float(eta))).m - semicircle_m(1j * eta)) for eta in etas[::10]
    )

    rng = make_rng(ORACLE_SEED, 1)
    identity = 0.0
    for _ in range(50):
        point = ShiftPoint(complex(*rng.uniform(-1.5, 1.5, size=2)),
                           float(10 ** rng.uniform(-3, 0)), float(rng.uniform(-1.0, 1.0)))
        sol = solve_m(point)
        identity = max(identity, identity_residual(sol, point),
                       abs(eval_P(sol.m, point)) / max(1.0, sol.stability))

    metrics = {
        "grid_points": int(residual.size),
        "max_residual": float(residual.max()),
        "min_imag_m": float(a.min()),
        "semicircle_error": float(semicircle),
        "identity_residual": float(identity),
    }
    passed = (
        metrics["max_residual"] <= settings.TOL_CUBIC
        and metrics["min_imag_m"] > 0
        and semicircle <= settings.TOL_CUBIC
        and identity <= 1e-10
    )
    return _result(passed, metrics, started)


@_guarded
def check_eigensolvers(backend=None) -> dict:
    """Arnoldi against the dense spectrum, resolvent expansion against inversion"""
    started = time.perf_counter()
    params = EnsembleParams(256, 0.1, ORACLE_SEED)
    A = sample_er(params, make_rng(ORACLE_SEED, 2))
    top = arnoldi_topk(A, 6, tol=1e-12, ncv=48, backend=backend)
    dense = dense_nonsym_eig(A, backend=backend)
    arnoldi_error = float(np.abs(np.abs(top.eigenvalues[:2]) - np.abs(dense.eigenvalues[:2])).max())

    small = sample_er(EnsembleParams(64, 0.2, ORACLE_SEED), make_rng(ORACLE_SEED, 3))
    w, eta = 0.7 + 0.3j, 0.05
    rng = make_rng(ORACLE_SEED, 4)
    pairs = [(int(i), int(j)) for i, j in rng.integers(0, 128, size=(64, 2))]
    entries, _ = green_entries(small, w, eta, index_pairs=pairs, backend=backend)
    inverse = green_direct(small, w, 1j * eta)
    resolvent_error = max(abs(entries[pair] - inverse[pair]) for pair in pairs)

    t = rng.standard_normal((3, 3))
    t = t + t.T
    roots = np.sort(np.roots(np.poly(t)).real)
    ql_error = float(np.abs(np.sort(sym_eig(t, want_vectors=False, backend=backend).eigenvalues) - roots).max())

    x = rng.standard_normal((5, 5))
    qr_roots = np.roots(np.poly(x))
    qr_values = dense_nonsym_eig(x, backend=backend).eigenvalues
    qr_error = max(float(np.abs(qr_roots - v).min()) for v in qr_values)

    metrics = {
        "arnoldi_top2_error": arnoldi_error,
        "resolvent_entry_error": float(resolvent_error),
        "symmetric_3x3_error": ql_error,
        "nonsymmetric_5x5_error": qr_error,
    }
    passed = (arnoldi_error <= 1e-6 and resolvent_error <= 1e-10
              and ql_error <= 1e-10 and qr_error <= 1e-6)
    return _result(passed, metrics, started)


CALIBRATION_SIZE = 16  # keeps η₋ = N⁻⁵ far below the grid spacing


def _known_spectrum_matrix():
    """Real block-diagonal matrix with spectrum {0.3, −0.4, 0.2 ± 0.5i}, each repeated"""
    block = np.zeros((4, 4))
    block[0, 0], block[1, 1] = 0.3, -0.4
    block[2:, 2:] = [[0.2, -0.5], [0.5, 0.2]]
    copies = CALIBRATION_SIZE // 4
    spectrum = np.tile([0.3, -0.4, 0.2 + 0.5j, 0.2 - 0.5j], copies)
    return np.kron(np.eye(copies), block), spectrum


def calibrate_girko(spec: QuadratureSpec, backend=None) -> dict:
    """Girko statistic on point sets with known spectra against N⁻¹·Σ f(λ)"""
    cases = {}
    for profile in Profile:
        tf = TestFunction(profile, 0.0).unscaled()
        # the whole spectrum at the origin, so the statistic is f(0) = 1
        cases[f"origin_{profile.value}"] = (
            np.zeros((CALIBRATION_SIZE, CALIBRATION_SIZE)), np.zeros(CALIBRATION_SIZE), tf)
    x, spectrum = _known_spectrum_matrix()
    cases["points_polynomial-bump"] = (x, spectrum, TestFunction(Profile.POLYNOMIAL, 0.0).unscaled())

    errors = {}
    for name, (x, spectrum, tf) in cases.items():
        value = linear_stat_girko(x, tf, spec, backend).value
        errors[name] = abs(value - linear_stat_direct(spectrum, tf))
    return errors


@_guarded
def check_girko(samples: int = 20, N: int = 64, grid_cells: int = 64, backend=None) -> dict:
    """Girko quadrature and the η-integrated log-modulus against direct spectra"""
    started = time.perf_counter()
    params = EnsembleParams(N, 0.3, ORACLE_SEED)
    tf = TestFunction(Profile.POLYNOMIAL, 0.0).unscaled()
    spec = QuadratureSpec(grid_cells=grid_cells, refinements=1)
    rel_error, log_error = 0.0, 0.0

    for index in range(samples):
        A = sample_er(params, make_rng(ORACLE_SEED, 10 + index))
        spectrum = dense_nonsym_eig(A, backend=backend).eigenvalues
        direct = linear_stat_direct(spectrum, tf)
        girko = linear_stat_girko(A, tf, spec, backend)
        rel_error = max(rel_error, abs(girko.value - direct) / max(abs(direct), 1e-12))

        w = 0.3 + 0.2j
        modulus = log_modulus_via_eta(A, w, spec, backend)
        if modulus.min_sigma > 1e-3:
            exact = float(np.sum(np.log(np.abs(spectrum - w))))
            log_error = max(log_error, abs(modulus.value - exact))

    calibration = calibrate_girko(spec, backend)
    metrics = {
        "samples": samples,
        "N": N,
        "backend": get_backend(backend).name,
        "girko_rel_error": rel_error,
        "log_modulus_error": log_error,
        **{f"calibration_{name}": error for name, error in calibration.items()},
    }
    passed = (rel_error <= 1e-3 and log_error <= 1e-6
              and max(calibration.values()) <= 1e-3)
    return _result(passed, metrics, started)


SUBCHECKS = {
    "identities": check_identities,
    "cubic": check_cubic,
    "eigensolvers": check_eigensolvers,
    "girko": check_girko,
}


def run_oracle(names=None) -> dict:
    """Run the named subchecks (all by default)"""
    names = list(names or SUBCHECKS)
    unknown = [name for name in names if name not in SUBCHECKS]
    if unknown:
        raise KeyError(f"unknown subcheck(s) {', '.join(unknown)}; known: {', '.join(SUBCHECKS)}")
    return {name: SUBCHECKS[name]() for name in names}


def exit_code(results: dict) -> int:
    if any(r["numerical_error"] for r in results.values()):
        return 4
    return 0 if all(r["passed"] for r in results.values()) else 2


def format_oracle_report(results: dict, verbose: bool = False) -> str:
    """Format oracle results as readable report"""
    lines = []
    lines.append("=" * 70)
    lines.append("RMTLAB - Oracle Checks")
    lines.append("=" * 70)
    lines.append("")

    for name, result in results.items():
        mark = "✓" if result["passed"] else "✗"
        lines.append(f"{name.upper()}: {mark} {'PASS' if result['passed'] else 'FAIL'} "
                     f"({result['seconds']}s)")
        if result["error"]:
            lines.append(f"    Error: {result['error']}")
        if verbose or not result["passed"]:
            for key, value in result["metrics"].items():
                shown = f"{value:.3e}" if isinstance(value, float) else value
                lines.append(f"    {key}: {shown}")
        lines.append("")

    lines.append(f"Checked at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    lines.append("=" * 70)
    return "\n".join(lines)


def main():
    """Main entry point"""
    import argparse

    parser = argparse.ArgumentParser(
        description='Run the rmtlab brute-force oracle checks'
    )

    parser.add_argument('subchecks', nargs='*',
                        help=f'Subchecks to run: {", ".join(SUBCHECKS)} (default: all)')
    parser.add_argument('--json', action='store_true',
                        help='Output as JSON')
    parser.add_argument('--verbose', '-v', action='store_true',
                        help='Verbose output')

    args = parser.parse_args()
    try:
        results = run_oracle(args.subchecks)
    except KeyError as e:
        parser.error(e.args[0])

    if args.json:
        print(json.dumps(results, indent=2))
    else:
        print(format_oracle_report(results, args.verbose))

    return exit_code(results)


if __name__ == "__main__":
    sys.exit(main())
