"""Batch command-line front end.

Every command loads a fixture (or an inline fixture from a config file),
runs the named checks, writes a machine-readable JSON report (plus CSV for
time series) and exits with:

    0  all verdicts passed
    1  at least one verdict failed
    2  no failure, but at least one check was inconclusive
    3  input error (bad flags, config, fixture id, or expression syntax)

Reports are deterministic for a fixed seed; the ``timings`` key is
excluded from the determinism contract.  Files are written atomically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from . import expr as ex
from .catalog import FixtureError, load_fixture, s3_legendrian_disk
from .chains import (Chain, ChainError, ParamPatch, asymptotic_cycle_pairing,
                     check_stokes, integrate_form, is_legendrian,
                     theta_functional)
from .contact import check_contact, is_basic, reeb_residuals
from .flow import check_linear_growth, growth_csv_rows, verify_lyapunov
from .forms import (DegreeError, FormField, exterior_derivative,
                    restricted_sup, wedge_power)
from .hodge import TransversalHodge
from .spectral import (SpectralSuite, hard_lefschetz_check, hodge_decompose,
                       star_duality_check)

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_INPUT = 0, 1, 2, 3
ENV_OUT_DIR = "REEBCALC_OUT_DIR"

COMMANDS = ("check-contact", "reeb", "basic-check", "star", "laplacian",
            "lefschetz-decompose", "flow-growth", "integrate", "spectral",
            "hard-lefschetz", "report-all")


@dataclass
class RunConfig:
    fixture: str = "std-r3"
    tol: float = 1e-9
    samples: int = 1000
    seed: int = 0
    degree: int = 4
    quad_order: int = 10
    out: str | None = None
    k: int | None = None
    horizon: float = 5.0
    tau_coeff: str = "z"
    power: int | None = None
    chain_file: str | None = None

    def to_dict(self):
        return {key: value for key, value in asdict(self).items()
                if value is not None}

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    return value


def write_report(report, path):
    """Atomic, deterministic JSON dump (sorted keys)."""
    payload = json.dumps(_jsonable(report), sort_keys=True, indent=1)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(payload + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(rows, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "w") as handle:
        for row in rows:
            handle.write(",".join(str(c) for c in row) + "\n")
    os.replace(tmp, path)


def _verdict(name, passed, provenance="derived", **numbers):
    entry = {"name": name, "passed": bool(passed), "provenance": provenance}
    entry.update({k: _jsonable(v) for k, v in numbers.items()})
    return entry


def _exit_code(verdicts, inconclusive=False):
    if any(not v["passed"] for v in verdicts):
        return EXIT_FAIL
    if inconclusive:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


# --- command bodies -----------------------------------------------------------

def cmd_check_contact(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    verdict = check_contact(fixture.ctx.beta, samples=config.samples,
                            tol=config.tol, seed=config.seed)
    expected = fixture.expectation("contact-density")
    verdicts = [_verdict("contact-condition", verdict.passed,
                         provenance=expected.provenance,
                         min_density=verdict.min_density, tol=config.tol,
                         documented_density=expected.value)]
    return {"verdicts": verdicts,
            "numbers": {"min_density": verdict.min_density}}, _exit_code(verdicts)


def cmd_reeb(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    points = fixture.manifold.sample_points(config.samples, seed=config.seed)
    res_pair, res_horiz = reeb_residuals(fixture.ctx, points)
    expected = fixture.expectation("reeb")
    verdicts = [
        _verdict("reeb-pairing", res_pair <= config.tol,
                 provenance=expected.provenance, sup_residual=res_pair),
        _verdict("reeb-horizontal", res_horiz <= config.tol,
                 provenance=expected.provenance, sup_residual=res_horiz),
    ]
    components = [str(c) for c in fixture.ctx.reeb.components] \
        if fixture.ctx.reeb.components else None
    return {"verdicts": verdicts,
            "numbers": {"pairing_residual": res_pair,
                        "horizontality_residual": res_horiz},
            "reeb_components": components}, _exit_code(verdicts)


def cmd_basic_check(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    ctx = fixture.ctx
    targets = [("dbeta", ctx.dbeta, True, "trivial")]
    if fixture.witness_basic is not None:
        targets.append(("witness", fixture.witness_basic, True, "derived"))
    targets.append(("beta", ctx.beta, False, "paper"))
    verdicts = []
    numbers = {}
    for name, form, expect_basic, provenance in targets:
        res = is_basic(form, ctx.reeb, samples=config.samples,
                       tol=config.tol, seed=config.seed)
        verdicts.append(_verdict(f"basic-{name}", res.is_basic == expect_basic,
                                 provenance=provenance,
                                 sup_contraction=res.sup_contraction,
                                 sup_d_contraction=res.sup_d_contraction,
                                 expected_basic=expect_basic,
                                 symbolic_zero=res.symbolic_zero))
        numbers[f"{name}_sup_contraction"] = res.sup_contraction
    return {"verdicts": verdicts, "numbers": numbers}, _exit_code(verdicts)


def _hodge_for(fixture, tol=1e-9):
    return TransversalHodge(fixture.ctx, tol=tol)


def cmd_star(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    hodge = _hodge_for(fixture)
    manifold = fixture.manifold
    points = manifold.sample_points(min(config.samples, 400), seed=config.seed)
    one = FormField.function(manifold, 1)
    ctx = fixture.ctx
    star_one = hodge.star_b(one)
    star_db = hodge.star_b(ctx.dbeta)
    involution = hodge.star_b(star_db) - ctx.dbeta
    res_one = restricted_sup(star_one - ctx.dbeta, points)
    res_db = restricted_sup(star_db - one, points)
    res_inv = restricted_sup(involution, points)
    basic_out = is_basic(star_db, ctx.reeb, samples=min(config.samples, 400),
                         tol=max(config.tol, 1e-8), seed=config.seed)
    verdicts = [
        _verdict("star-of-unit", res_one <= 1e-10, sup_residual=res_one),
        _verdict("star-of-dbeta", res_db <= 1e-10, sup_residual=res_db),
        _verdict("star-involution", res_inv <= 1e-10, sup_residual=res_inv),
        _verdict("star-output-basic", basic_out.is_basic,
                 sup_contraction=basic_out.sup_contraction),
    ]
    numbers = {"star_unit_residual": res_one, "star_dbeta_residual": res_db,
               "involution_residual": res_inv}
    return {"verdicts": verdicts, "numbers": numbers}, _exit_code(verdicts)


def cmd_laplacian(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    hodge = _hodge_for(fixture)
    manifold = fixture.manifold
    points = manifold.sample_points(min(config.samples, 300), seed=config.seed)
    ctx = fixture.ctx
    lap_db = restricted_sup(hodge.laplace_b(ctx.dbeta), points)
    lap_const = restricted_sup(
        hodge.laplace_sympl(FormField.function(manifold, 1)), points)
    codiff_sq = restricted_sup(
        hodge.codiff_b(hodge.codiff_b(ctx.dbeta)), points)
    verdicts = [
        _verdict("laplace-dbeta-harmonic", lap_db <= 1e-8, sup=lap_db),
        _verdict("laplace-sympl-constant", lap_const <= 1e-10, sup=lap_const),
        _verdict("codifferential-squared", codiff_sq <= 1e-7, sup=codiff_sq),
    ]
    return {"verdicts": verdicts,
            "numbers": {"laplace_dbeta": lap_db,
                        "codiff_squared": codiff_sq}}, _exit_code(verdicts)


def cmd_lefschetz_decompose(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    hodge = _hodge_for(fixture)
    manifold = fixture.manifold
    points = manifold.sample_points(100, seed=config.seed)
    x = ex.var(manifold.coords[0])
    scaled = fixture.ctx.dbeta.scale(1 + x * x)
    result = hodge.lefschetz_decompose(scaled, points, tol=max(config.tol, 1e-9))
    verdicts = [
        _verdict("decomposition-roundtrip", result.residual <= 1e-9,
                 max_residual=result.residual),
        _verdict("component-primitivity", result.primitivity_residual <= 1e-9,
                 max_residual=result.primitivity_residual),
    ]
    return {"verdicts": verdicts,
            "numbers": {"roundtrip_residual": result.residual,
                        "primitivity_residual": result.primitivity_residual}}, \
        _exit_code(verdicts)


def cmd_flow_growth(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    manifold = fixture.manifold
    if manifold.dim != 3:
        raise ChainError("flow-growth expects a 3-dimensional fixture")
    coeff = manifold.parse(config.tau_coeff)
    tau = FormField(manifold, 2, {(0, 1): coeff})
    eta = fixture.ctx.dbeta
    if fixture.id == "cube":
        x0 = np.array([0.5, 0.5, 0.25])
        horizon = min(config.horizon, 5.0)
    else:
        x0 = manifold.sample_points(1, seed=config.seed)[0]
        horizon = config.horizon
    frame = np.zeros((2, manifold.n_sym))
    frame[0, 0] = 1.0
    frame[1, 1] = 1.0
    report = check_linear_growth(tau, eta, fixture.ctx.reeb, x0, horizon,
                                 frame, tol=max(config.tol, 1e-8))
    verdicts = [_verdict("affine-growth", report.passed,
                         slope=report.slope, intercept=report.intercept,
                         max_residual=report.max_residual,
                         preconditions=report.precondition_residuals)]
    csv_path = None
    if config.out:
        csv_path = os.path.join(_out_dir(config),
                                f"{fixture.id}__flow-growth.csv")
        write_csv(growth_csv_rows(report, manifold.coords), csv_path)
    return {"verdicts": verdicts,
            "numbers": {"slope": report.slope,
                        "intercept": report.intercept,
                        "max_residual": report.max_residual},
            "csv": csv_path}, _exit_code(verdicts)


def _chain_from_file(manifold, path):
    with open(path) as handle:
        spec_data = json.load(handle)
    patches = []
    for entry in spec_data["patches"]:
        patch = ParamPatch(manifold, int(entry["dim"]), entry["components"],
                           orientation=entry.get("sign", 1),
                           quad_order=entry.get("order", 8),
                           refine=entry.get("refine", 1))
        patches.append((entry.get("weight", 1), patch))
    return Chain(patches)


def cmd_integrate(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    manifold = fixture.manifold
    power = config.power if config.power is not None else fixture.ctx.n
    if config.chain_file:
        chain = _chain_from_file(manifold, config.chain_file)
    else:
        chain = fixture.legendrian_cycle()
    form = wedge_power(fixture.ctx.dbeta, power)
    if form.degree != chain.dim:
        raise DegreeError(
            f"(dbeta)^{power} has degree {form.degree}, chain has dimension {chain.dim}")
    value, err = integrate_form(form, chain, quad_order=config.quad_order)
    verdicts = [_verdict("integral-computed", True, value=value,
                         quadrature_error=err)]
    closed = chain.is_cycle()
    if closed:
        verdicts.append(_verdict("closed-chain-dbeta-power-vanishes",
                                 abs(value) <= 1e-8, value=value))
    return {"verdicts": verdicts,
            "numbers": {"value": value, "error_estimate": err,
                        "chain_closed": closed}}, _exit_code(verdicts)


def cmd_spectral(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    if fixture.boundary:
        raise FixtureError("spectral computation needs a closed fixture")
    hodge = _hodge_for(fixture)
    suite = SpectralSuite(fixture, hodge, D=config.degree,
                          quad_order=max(config.quad_order, 10),
                          seed=config.seed)
    exploratory = fixture.id.startswith("t3")
    reports = {}
    inconclusive = False
    verdicts = []
    for k, report in suite.reports.items():
        reports[str(k)] = report.to_json_dict()
        if config.k is not None and k != config.k:
            continue
        if not report.conclusive:
            inconclusive = True
        expected = None
        if fixture.id == "s3-hopf":
            expected = fixture.expectation("harmonic-dimensions").value[k]
        if expected is not None:
            verdicts.append(_verdict(
                f"kernel-dimension-k{k}",
                report.conclusive and report.kernel_dim == expected,
                kernel_dim=report.kernel_dim, expected=expected,
                gap_ratio=report.gap_ratio))
        else:
            verdicts.append(_verdict(
                f"kernel-dimension-k{k} (exploratory)" if exploratory
                else f"kernel-dimension-k{k}", report.conclusive,
                provenance="derived",
                kernel_dim=report.kernel_dim, gap_ratio=report.gap_ratio))
    return {"verdicts": verdicts, "numbers": {}, "spectral": reports,
            "exploratory": exploratory}, \
        _exit_code(verdicts, inconclusive=inconclusive)


def cmd_hard_lefschetz(config):
    fixture = load_fixture(config.fixture, samples=config.samples,
                           tol=config.tol, seed=config.seed)
    hodge = _hodge_for(fixture)
    suite = SpectralSuite(fixture, hodge, D=config.degree,
                          quad_order=max(config.quad_order, 10),
                          seed=config.seed)
    k = config.k if config.k is not None else 1
    verdict = hard_lefschetz_check(suite.spaces, suite.reports, hodge, k)
    duality = star_duality_check(suite.spaces, suite.reports, hodge,
                                 hodge.n - k)
    verdicts = [
        _verdict(f"hard-lefschetz-k{k}", verdict.passed,
                 rank=verdict.rank.rank, expected=verdict.rank.expected,
                 representative_residual=verdict.representative_residual),
        _verdict("star-duality", duality.passed, rank=duality.rank,
                 condition=duality.condition),
    ]
    inconclusive = verdict.inconclusive or duality.inconclusive
    return {"verdicts": verdicts, "numbers": {}}, \
        _exit_code(verdicts, inconclusive=inconclusive)


REPORT_ALL_PLAN = (
    ("std-r3", ("check-contact", "reeb", "basic-check", "star", "laplacian",
                "lefschetz-decompose", "integrate")),
    ("cube", ("check-contact", "reeb", "basic-check", "flow-growth")),
    ("s3-hopf", ("check-contact", "reeb", "basic-check", "star", "laplacian",
                 "spectral", "hard-lefschetz")),
    ("t3", ("check-contact", "reeb", "basic-check", "star", "spectral")),
)


def cmd_report_all(config):
    out_dir = _out_dir(config)
    worst = EXIT_PASS
    files = []
    for fixture_id, commands in REPORT_ALL_PLAN:
        for command in commands:
            sub = RunConfig(**{**config.to_dict(), "fixture": fixture_id,
                               "out": out_dir})
            if command == "spectral":
                sub.degree = min(config.degree, 3)
            report, code = run(command, sub, write=False)
            path = os.path.join(out_dir, f"{fixture_id}__{command}.json")
            write_report(report, path)
            files.append(path)
            worst = max(worst, code)
    summary = {"command": "report-all", "reports": files,
               "exit_code": worst}
    return summary, worst


_COMMAND_BODIES = {
    "check-contact": cmd_check_contact,
    "reeb": cmd_reeb,
    "basic-check": cmd_basic_check,
    "star": cmd_star,
    "laplacian": cmd_laplacian,
    "lefschetz-decompose": cmd_lefschetz_decompose,
    "flow-growth": cmd_flow_growth,
    "integrate": cmd_integrate,
    "spectral": cmd_spectral,
    "hard-lefschetz": cmd_hard_lefschetz,
}


def _out_dir(config):
    return config.out or os.environ.get(ENV_OUT_DIR) or "reports"


def run(command, config, write=True):
    """Run one command; returns (report dict, exit code)."""
    started = time.perf_counter()
    if command == "report-all":
        return cmd_report_all(config)
    body = _COMMAND_BODIES[command]
    result, code = body(config)
    report = {
        "command": command,
        "fixture": config.fixture,
        "config": config.to_dict(),
        "version": __version__,
        "exit_code": code,
    }
    report.update(result)
    report["timings"] = {"total_s": time.perf_counter() - started}
    if write and config.out:
        path = os.path.join(_out_dir(config),
                            f"{config.fixture}__{command}.json")
        write_report(report, path)
    return report, code


def build_parser():
    parser = argparse.ArgumentParser(
        prog="reebcalc",
        description="Checks for contact fixtures: Reeb fields, basic forms, "
                    "transversal Hodge operators, flow growth laws, chain "
                    "integrals and basic harmonic dimensions.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("fixture_pos", nargs="?", default=None,
                       metavar="FIXTURE")
        p.add_argument("--fixture", default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--degree", "-D", type=int, default=None)
        p.add_argument("--quad-order", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--config", default=None, help="JSON config file; "
                       "values override flags")
        p.add_argument("-k", type=int, default=None)
        p.add_argument("--horizon", "-T", type=float, default=None)
        p.add_argument("--tau", dest="tau_coeff", default=None,
                       help="coefficient expression of the transported 2-form")
        p.add_argument("--power", type=int, default=None)
        p.add_argument("--chain-file", default=None)
    return parser


def config_from_args(args):
    config = RunConfig()
    flag_map = {
        "fixture": args.fixture_pos or args.fixture,
        "tol": args.tol, "samples": args.samples, "seed": args.seed,
        "degree": args.degree, "quad_order": args.quad_order,
        "out": args.out, "k": args.k, "horizon": args.horizon,
        "tau_coeff": args.tau_coeff, "power": args.power,
        "chain_file": args.chain_file,
    }
    for key, value in flag_map.items():
        if value is not None:
            setattr(config, key, value)
    if args.config:
        with open(args.config) as handle:
            overrides = json.load(handle)
        for key, value in RunConfig.from_dict(overrides).__dict__.items():
            if key in overrides:
                setattr(config, key, value)
    return config


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
    except (ValueError, OSError, json.JSONDecodeError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    try:
        report, code = run(args.command, config)
    except (ex.ExpressionError, FixtureError, ChainError, DegreeError,
            ValueError, OSError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    print(json.dumps(_jsonable(
        {k: v for k, v in report.items() if k != "timings"}),
        sort_keys=True, indent=1))
    return code


if __name__ == "__main__":
    sys.exit(main())
