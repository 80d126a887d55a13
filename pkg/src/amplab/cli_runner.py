"""Command-line runner: ``amplab <subcommand> --config PATH [...]``.

Subcommands emit CSV/JSON into the output directory and finish with a
``manifest.json`` holding sha256 digests of every file written.  Exit codes:
0 success, 1 failed check or numerical defect, 2 configuration error.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .divergence_lab import (
    closed_form_free_moment,
    growth_slope,
    lambda_scan,
    mc_moment,
    paley_wiener_check,
)
from .field_model import build_beamlet_model, k_vector, monomials, sample_gaussian, gamma_at
from .io import OutputSet, write_manifest
from .path_functionals import (
    bounds_and_centering,
    construct_epsilon_path,
    monomial_function,
    path_integral,
    sup_time_integral,
)
from .spectral_optimizer import (
    InequalityViolation,
    critical_report,
    integrated_gamma,
    mu_alternating,
    mu_oracle_sphere_grid,
    nystrom_covariance_eigs,
)
from .torus_solver import (
    ComplexMass,
    amplifier_eta,
    free_multiplier,
    solve_amplifier,
    solve_eta,
)

__all__ = ["main", "run", "verify_properties", "Check", "OUT_ENV"]

OUT_ENV = "AMPLAB_OUT"
SUBCOMMANDS = ("simulate", "mu", "critical", "slope", "scan", "verify")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _probe(cfg: RunConfig):
    p = cfg.experiment["probe"]
    if isinstance(p, list):
        return np.asarray(p, dtype=float)
    if p == "maximizer":
        return "maximizer"
    return np.zeros(cfg.model.grid.dim)


def _fixed_probe(cfg: RunConfig) -> np.ndarray:
    p = _probe(cfg)
    return np.zeros(cfg.model.grid.dim) if isinstance(p, str) else p


def _mu(cfg: RunConfig, x=None):
    o = cfg.optimizer
    return mu_alternating(
        cfg.model, cfg.tgrid, n_starts=o["starts"], max_iters=o["max_iters"], tol=o["tol"],
        x=x, seed=cfg.seed, workers=cfg.workers,
    )


# -- subcommands --------------------------------------------------------------


def _simulate(cfg: RunConfig, out: OutputSet) -> int:
    model = cfg.model
    draw = sample_gaussian(model, cfg.seed, cfg.experiment["sample_index"])
    lam = cfg.experiment["lambda"]
    f = solve_amplifier(model, draw, cfg.mass, lam, cfg.horizon, cfg.dt)
    idx = np.indices(model.grid.shape).reshape(model.grid.dim, -1).T
    vals = f.values.ravel()
    header = [f"i{a}" for a in range(model.grid.dim)] + ["re", "im", "log_scale"]
    out.csv("field.csv", header, ([*ij, v.real, v.imag, f.log_scale] for ij, v in zip(idx, vals)))
    logmod = f.log_modulus().ravel()
    out.json("simulate.json", {
        "s": draw.s, "k_vector": draw.k_vector, "lambda": lam, "time": f.time,
        "steps": f.step_count, "log_scale": f.log_scale,
        "log_modulus_max": float(np.max(logmod)), "log_modulus_min": float(np.min(logmod)),
    })
    return 0


def _mu_cmd(cfg: RunConfig, out: OutputSet) -> int:
    res = _mu(cfg, _fixed_probe(cfg))
    out.json("mu.json", res.to_dict())
    header = ["slice", "tau"] + [f"x{a}" for a in range(cfg.model.grid.dim)]
    out.csv("mu_slices.csv", header,
            ([j, tau, *pt] for j, (tau, pt) in enumerate(zip(cfg.tgrid.midpoints, res.slice_maximizers))))
    return 0


def _critical(cfg: RunConfig, out: OutputSet) -> int:
    x = _fixed_probe(cfg)
    rep = critical_report(cfg.model, cfg.tgrid, cfg.experiment["q"], x=x, mu_result=_mu(cfg, x))
    spec = nystrom_covariance_eigs(cfg.model, x, K=cfg.optimizer["nystrom_nodes"], horizon=cfg.horizon)
    out.json("critical.json", rep.to_dict())
    out.csv("critical.csv", rep.csv_header(), [rep.csv_row()])
    out.csv("spectrum.csv", ["index", "eigenvalue"], enumerate(spec.eigenvalues))
    return 0


def _slope(cfg: RunConfig, out: OutputSet) -> int:
    lam = cfg.experiment["lambda"]
    if lam <= 0:
        raise ConfigError(f"{cfg.source}: [experiment] lambda must be positive for 'slope'")
    res = _mu(cfg, _fixed_probe(cfg))
    rmax = cfg.experiment["radius_max"] or float(np.sqrt(40.0 / (lam * res.mu)))
    radii = np.geomspace(rmax / 10, rmax, cfg.experiment["radius_count"])
    fit = growth_slope(cfg.model, cfg.mass, lam, res.sigma_star, radii, cfg.horizon, x=_probe(cfg),
                       dt=cfg.dt, tgrid=cfg.tgrid, workers=cfg.workers)
    out.csv("slope.csv", ["r", "r2", "log_mod", "fit_slope"], fit.rows())
    out.json("slope.json", {
        "slope": fit.slope, "intercept": fit.intercept, "confidence_halfwidth": fit.confidence_halfwidth,
        "predicted": fit.predicted, "relative_error": fit.relative_error, "residual": fit.residual,
        "flagged": fit.flagged, "envelope": fit.envelope, "mu_xt": res.mu, "sigma_star": res.sigma_star,
        "regime": cfg.mass.regime,
    })
    return 0


def _scan(cfg: RunConfig, out: OutputSet) -> int:
    x = _fixed_probe(cfg)
    q = cfg.experiment["q"]
    res = _mu(cfg, x)
    lambdas = cfg.experiment["lambdas"]
    if not lambdas:
        mu1 = float(np.linalg.eigvalsh(integrated_gamma(cfg.model, x, cfg.tgrid))[-1])
        lambdas = np.linspace(0.0, 1.5 / (q * mu1), 16)[1:]
    table = lambda_scan(cfg.model, cfg.mass, q, lambdas, cfg.tgrid, x=x, mu_result=res,
                        n_samples=cfg.experiment["samples"], safety=cfg.experiment["safety"],
                        stream_seed=cfg.seed, dt=cfg.dt, workers=cfg.workers)
    out.csv("scan.csv", ["lambda", "qlmu", "class_prop", "class_free", "mean", "stderr"],
            (r.values() for r in table.rows))
    lo, hi = table.window
    out.json("scan.json", {"q": q, "mu_xt": table.mu_xt, "mu1_const": table.mu1_const,
                           "lambda_q": lo, "lambda_bar_q": hi, "rows": len(table.rows)})
    return 0


# -- verify -------------------------------------------------------------------


def _check(name, fn) -> Check:
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing property is a failing property
        return Check(name, False, f"{type(exc).__name__}: {exc}")
    return Check(name, bool(ok), detail)


def verify_properties(cfg: RunConfig) -> list[Check]:
    """Invariant suite on the configured model, mass and horizon."""
    model, m, t, dt, tg = cfg.model, cfg.mass, cfg.horizon, cfg.dt, cfg.tgrid
    M, N, dim = model.mode_count, model.mode_count**2, model.grid.dim
    rng = np.random.default_rng([cfg.seed, 7])
    lam = cfg.experiment["lambda"] or 1.0
    checks: list[Check] = []

    def normalization():
        taus = (np.arange(64) + 0.5) / 64  # midpoint rule on [0, 1]
        vals = [np.mean(np.sum(np.abs(model.phi_on_grid(tau)) ** 2, axis=0)) for tau in taus]
        err = abs(float(np.mean(vals)) - 1.0)
        return err < 1e-12, f"|integral - 1| = {err:.3g}"

    def monomial_identity():
        worst = 0.0
        for k in range(100):
            s = sample_gaussian(model, cfg.seed, k).s
            x = rng.uniform(0, 1, dim) * np.asarray(model.grid.lengths)
            tau = rng.uniform(0, t)
            S2 = abs(model.phi(x, tau) @ s) ** 2
            kv = k_vector(s)
            terms = kv * monomials(model, x, tau)
            # relative to the rounding scale of the sum, robust when |S|^2 ~ 0
            worst = max(worst, abs(terms.sum() - S2) / max(S2, np.abs(terms).sum()),
                        abs(np.linalg.norm(kv) - np.linalg.norm(s) ** 2) / np.linalg.norm(s) ** 2)
        return worst < 1e-11, f"max relative error {worst:.3g}"

    def gamma_structure():
        worst = 0.0
        for _ in range(20):
            x = rng.uniform(0, 1, dim) * np.asarray(model.grid.lengths)
            g = gamma_at(model, x, rng.uniform(0, t))
            ev = np.linalg.eigvalsh(g)
            worst = max(worst, np.max(np.abs(g - g.conj().T)), abs(ev[-1] - np.trace(g).real),
                        np.max(np.abs(ev[:-1])) if M > 1 else 0.0)
        return worst < 1e-12, f"max defect {worst:.3g}"

    def stability():
        if m.infinite:
            return True, "infinite mass: no free step"
        top = float(np.max(np.abs(free_multiplier(model, m, dt))))
        return top <= 1 + 1e-13, f"max |multiplier| = {top!r}"

    def eta_real_norm():
        if m.infinite:
            return True, "infinite mass: pointwise phase evolution"
        eta = rng.normal(size=N)
        psi = solve_eta(model, eta, m, t, dt).physical()
        norm = float(np.sqrt(np.mean(np.abs(psi) ** 2)))
        if m.value.imag == 0:
            return abs(norm - 1.0) < 1e-10 * max(t, 1.0), f"L2 norm {norm!r} (initial 1)"
        return norm <= 1.0 + 1e-12, f"L2 norm {norm!r} <= 1"

    def amplifier_identity():
        draw = sample_gaussian(model, cfg.seed, 0)
        E = solve_amplifier(model, draw, m, lam, t, dt).log_modulus()
        P = solve_eta(model, amplifier_eta(draw, lam), m, t, dt).log_modulus()
        err = float(np.max(np.abs(E - P)) / max(1.0, np.max(np.abs(E))))
        return err < 1e-9, f"relative log-amplitude gap {err:.3g}"

    def dt_halving():
        draw = sample_gaussian(model, cfg.seed, 1)
        logs = [solve_amplifier(model, draw, m, lam, t, dt / f).log_modulus() for f in (1, 2, 4)]
        d1 = float(np.max(np.abs(logs[0] - logs[1])))
        d2 = float(np.max(np.abs(logs[1] - logs[2])))
        if d2 < 1e-10:
            return d1 < 1e-8, f"differences {d1:.3g}, {d2:.3g} at rounding level"
        return 2.5 <= d1 / d2 <= 6.0, f"dt-halving ratio {d1 / d2:.3g} (second order: 4)"

    def grid_halving():
        fine = build_beamlet_model(model.grid.refined(2), model.wavevector_indices, model.dispersion,
                                   model.amplitudes)
        draw = sample_gaussian(model, cfg.seed, 1)
        coarse = solve_amplifier(model, draw, m, lam, t, dt).log_modulus()
        dense = solve_amplifier(fine, draw, m, lam, t, dt).log_modulus()
        sub = dense.reshape(fine.grid.shape)[tuple(slice(None, None, 2) for _ in range(dim))]
        err = float(np.max(np.abs(coarse - sub)) / max(1.0, np.max(np.abs(coarse))))
        return err < 1e-6, f"relative log-amplitude change {err:.3g}"

    def sup_paths():
        worst = -np.inf
        for i in rng.choice(N, size=min(N, 3), replace=False):
            W = monomial_function(model, int(i))
            si = sup_time_integral(W, model.grid, tg)
            path = construct_epsilon_path(si.maximizers, np.zeros(dim), tg, model.grid.lengths)
            worst = max(worst, path_integral(W, path, t) - si.value - si.error_estimate)
        return worst <= 1e-9, f"max(path integral - sup integral - error) = {worst:.3g}"

    def kappa_shift():
        b0 = bounds_and_centering(model, tg)
        b1 = bounds_and_centering(model, tg, offsets=17.0)
        err = float(np.max(np.abs(b0.kappa - b1.kappa)))
        ok = err < 1e-9 and np.all(b0.kappa >= 0) and np.all(b0.a <= b0.b)
        return ok, f"max kappa change {err:.3g}"

    state = {}

    def optimizer_monotone():
        res = _mu(cfg, _fixed_probe(cfg))
        state["mu"] = res
        worst = min((min(np.diff(tr), default=0.0) for tr in res.start_traces), default=0.0)
        return worst >= -1e-12, f"most negative trace step {worst:.3g}"

    def oracle():
        if M > 2:
            return True, "skipped (oracle needs M <= 2)"
        mu = state.get("mu") or _mu(cfg, _fixed_probe(cfg))
        ref = mu_oracle_sphere_grid(model, tg, cfg.optimizer["oracle_resolution"])
        rel = abs(mu.mu - ref) / ref
        return rel < 1e-3, f"alternating {mu.mu:.10g} vs oracle {ref:.10g}"

    def couplings():
        mu = state.get("mu") or _mu(cfg, _fixed_probe(cfg))
        rep = critical_report(model, tg, cfg.experiment["q"], x=_fixed_probe(cfg), mu_result=mu)
        return rep.lambda_q <= rep.lambda_bar_q + 1e-10, f"lambda_q={rep.lambda_q:.10g} <= {rep.lambda_bar_q:.10g}"

    def nystrom():
        x = _fixed_probe(cfg)
        spec = nystrom_covariance_eigs(model, x, K=cfg.optimizer["nystrom_nodes"], horizon=t)
        ref = np.linalg.eigvalsh(integrated_gamma(model, x, tg.refined(16)))[::-1]
        ref = ref[ref > 1e-10 * ref[0]]
        got = spec.eigenvalues[: len(ref)]
        err = float(np.max(np.abs(got - ref)) / ref[0])
        return err < 1e-3, f"max relative eigenvalue gap {err:.3g}"

    def paley_wiener():
        bounds = bounds_and_centering(model, tg)
        rho = np.geomspace(cfg.experiment["rho_max"] / 10, cfg.experiment["rho_max"], 4)
        axes = range(N) if cfg.experiment["axis"] is None else [cfg.experiment["axis"]]
        worst = -np.inf
        for j in axes:
            r = paley_wiener_check(model, m, tg, j, rho, dt=dt, bounds=bounds, raise_on_violation=False)
            worst = max(worst, r.centered_plus.slope - r.kappa, r.centered_minus.slope - r.kappa)
        return worst <= 1e-3, f"max(centered slope - kappa) = {worst:.3g}"

    def free_moment():
        x = _fixed_probe(cfg)
        fine = integrated_gamma(model, model.grid.points()[model.grid.nearest_index(x)],
                                type(tg)(t, cfg.steps))
        mu = np.linalg.eigvalsh(fine)
        q = cfg.experiment["q"]
        lam_ = 0.25 / (q * mu[-1])
        est = mc_moment(model, ComplexMass.inf(), lam_, q, tg, 20000, cfg.seed, x, dt)
        ref = closed_form_free_moment(mu, q, lam_)
        z = abs(est.mean - ref) / est.std_error
        return z < 4.0, f"MC {est.mean:.6g} +- {est.std_error:.2g} vs closed form {ref:.6g}"

    for name, fn in [
        ("normalization", normalization),
        ("monomial_identity", monomial_identity),
        ("gamma_rank_one_psd", gamma_structure),
        ("free_propagator_stability", stability),
        ("real_potential_norm", eta_real_norm),
        ("amplifier_eta_identity", amplifier_identity),
        ("dt_halving", dt_halving),
        ("grid_halving", grid_halving),
        ("sup_path_one_sided", sup_paths),
        ("kappa_shift_invariance", kappa_shift),
        ("optimizer_monotone", optimizer_monotone),
        ("oracle_agreement", oracle),
        ("coupling_inequality", couplings),
        ("nystrom_correspondence", nystrom),
        ("paley_wiener_bound", paley_wiener),
        ("free_moment_baseline", free_moment),
    ]:
        checks.append(_check(name, fn))
    return checks


def _verify(cfg: RunConfig, out: OutputSet) -> int:
    checks = verify_properties(cfg)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    out.csv("verify.csv", ["property", "passed", "detail"],
            ([c.name, c.passed, c.detail.replace(",", ";")] for c in checks))
    failed = [c.name for c in checks if not c.passed]
    out.json("verify.json", {"passed": not failed, "failed": failed,
                             "checks": [c.__dict__ for c in checks]})
    if failed:
        print(f"verify failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


_COMMANDS = {
    "simulate": _simulate,
    "mu": _mu_cmd,
    "critical": _critical,
    "slope": _slope,
    "scan": _scan,
    "verify": _verify,
}


def _output_dir(cli_out: str | None, cfg: RunConfig) -> Path:
    for candidate in (cli_out, cfg.output_dir, os.environ.get(OUT_ENV)):
        if candidate:
            return Path(candidate)
    return Path("amplab-out")


def run(subcommand: str, config_path, seed: int | None = None, out: str | None = None,
        overrides: list[str] | None = None) -> int:
    """Execute one subcommand; returns the process exit code."""
    if subcommand not in _COMMANDS:
        print(f"unknown subcommand {subcommand!r}", file=sys.stderr)
        return 2
    overrides = list(overrides or [])
    if seed is not None:
        overrides.append(f"run.seed={seed}")
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    outputs = OutputSet(_output_dir(out, cfg))
    started = datetime.now(timezone.utc).isoformat()
    clock = time.perf_counter()
    try:
        code = _COMMANDS[subcommand](cfg, outputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InequalityViolation, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_manifest(
        outputs,
        subcommand=subcommand,
        artifact_version=__version__,
        config=cfg.echo,
        config_path=str(config_path),
        seed=cfg.seed,
        workers=cfg.workers,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(),
        elapsed_seconds=time.perf_counter() - clock,
        exit_code=code,
    )
    return code


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amplab", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    p.add_argument("--out", default=None, help=f"output directory (default: [run] output_dir, ${OUT_ENV}, ./amplab-out)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a configuration entry (repeatable)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    return run(args.subcommand, args.config, args.seed, args.out, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
