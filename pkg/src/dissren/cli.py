"""Batch front-end: ``dissren <subcommand> --config cfg.json --out DIR``.

Every run writes its reports plus ``manifest.json`` (config hash, versions,
seed, threads, wall time).  Reports are deterministic for a given config and
seed; the manifest is the only file that carries timing information.

Exit codes: 0 success, 1 verification failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__, bloch, dyson, friedrichs_lee, propagator, spectral, tableau
from .errors import ConfigurationError, DissrenError, DomainError, VerificationFailure
from .propagator import CoherentProfile, QubitState
from .spectral import Convention, RenormOptions

SUBCOMMANDS = ("renorm", "fl-survival", "dyson-verify", "tableau", "propagate", "norm-check",
               "bloch", "chi-mc", "second-order")
THREADS_ENV = "DISSREN_THREADS"

# -- schema ---------------------------------------------------------------------------


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


NUM = {"type": "number"}
POS = {"type": "number", "exclusiveMinimum": 0}
COMPLEX = {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2}

TIMES = _obj({
    "values": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
    "stop": POS,
    "num": {"type": "integer", "minimum": 2},
    "unit": {"enum": ["time", "inverse_gamma"]},
})
PROFILE = _obj({
    "table": {"type": "array", "items": {"type": "array", "items": NUM, "minItems": 3, "maxItems": 3},
              "minItems": 2},
    "single_mode": _obj({"omega": POS, "drive": {"type": "number", "minimum": 0}, "phase": NUM},
                        ["omega", "drive"]),
})
STATE = _obj({
    "psi": {"type": "array", "items": COMPLEX, "minItems": 2, "maxItems": 2},
    "rho": {"type": "array", "items": {"type": "array", "items": COMPLEX, "minItems": 2, "maxItems": 2},
            "minItems": 2, "maxItems": 2},
})

TASKS = {
    "renorm": _obj({"refinement": {"type": "integer", "minimum": 2}, "tolerance": POS}),
    "fl-survival": _obj({
        "t_grid": TIMES,
        "picture": {"enum": ["bare", "renormalized"]},
        "volterra_step": POS,
        "richardson": {"type": "boolean"},
        "laplace": _obj({"method": {"enum": ["TalbotContour", "BromwichTrapezoid"]},
                         "n_nodes": {"type": "integer", "minimum": 16}, "shift": NUM}),
        "tolerance": POS,
    }, ["t_grid"]),
    "dyson-verify": _obj({"n_max": {"type": "integer", "minimum": 0, "maximum": 8}}, ["n_max"]),
    "tableau": _obj({"max_blocks": {"type": "integer", "minimum": 0, "maximum": 24},
                     "max_rows": {"type": "integer", "minimum": 1}}, ["max_blocks", "max_rows"]),
    "propagate": _obj({"alpha": PROFILE, "beta": PROFILE, "t_grid": TIMES, "psi0": STATE,
                       "tolerance": POS}, ["t_grid"]),
    "norm-check": _obj({"t_grid": TIMES, "bounds": {"type": "array", "items": NUM, "minItems": 2,
                                                    "maxItems": 2}}, ["t_grid"]),
    "bloch": _obj({"mode": {"enum": ["vacuum", "driven", "first-order"]}, "alpha": PROFILE, "rho0": STATE,
                   "t_grid": TIMES, "n_quad": {"type": "integer", "minimum": 3}}, ["mode", "t_grid"]),
    "chi-mc": _obj({"t": TIMES, "n_samples": {"type": "integer", "minimum": 2},
                    "z_max": POS}, ["t", "n_samples"]),
    "second-order": _obj({"alpha": PROFILE, "rho0": STATE, "t": POS,
                          "gamma_list": {"type": "array", "items": POS, "minItems": 3},
                          "n_quad": {"type": "integer", "minimum": 3},
                          "min_exponent": NUM, "target_exponent": NUM}, ["t", "gamma_list"]),
}
BLOCK_KEY = {k: k.replace("-", "_") for k in TASKS}

SCHEMA = _obj({
    "model": _obj({"family": {"enum": [f.value for f in spectral.Family]}, "amplitude": NUM, "center": NUM,
                   "width_or_cutoff": NUM,
                   "table": {"type": "array", "items": {"type": "array", "items": NUM, "minItems": 2,
                                                        "maxItems": 3}}},
                  ["family", "amplitude", "center", "width_or_cutoff"]),
    "grid": _obj({"scheme": {"enum": [s.value for s in spectral.GridScheme]},
                  "n_nodes": {"type": "integer", "minimum": 2}, "omega_max": POS},
                 ["scheme", "n_nodes", "omega_max"]),
    "omega0": POS,
    "convention": {"enum": [c.value for c in Convention]},
    "renorm_options": _obj({"fixed_point": {"type": "boolean"}, "tol": POS,
                            "max_iter": {"type": "integer", "minimum": 1}}),
    "seed": {"type": "integer", "minimum": 0},
    **{BLOCK_KEY[k]: v for k, v in TASKS.items()},
}, ["model", "grid", "omega0"])


@dataclass
class ScenarioConfig:
    model: spectral.CouplingModel
    grid: spectral.FrequencyGrid
    omega0: float
    convention: Convention = Convention.HALF_WIDTH
    renorm: RenormOptions = field(default_factory=RenormOptions)
    seed: int = 0
    tasks: dict = field(default_factory=dict)
    digest: str = ""

    def task(self, name):
        block = self.tasks.get(BLOCK_KEY[name])
        if block is None:
            raise ConfigurationError(f"config has no '{BLOCK_KEY[name]}' block for subcommand {name}")
        return block


def _key_path(err):
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return ".".join(filter(None, [path, extra[0] if extra else ""])), "unknown key"
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        return ".".join(filter(None, [path, missing[0] if missing else ""])), "missing required key"
    return path or "<root>", err.message


def parse_config(raw: dict, digest: str = "") -> ScenarioConfig:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        key, why = _key_path(errors[0])
        raise ConfigurationError(f"config key '{key}': {why}")
    model = spectral.model_from_dict(raw["model"])
    grid = spectral.grid_from_dict(raw["grid"])
    opts = RenormOptions(**raw.get("renorm_options", {}))
    tasks = {k: raw[k] for k in BLOCK_KEY.values() if k in raw}
    return ScenarioConfig(model, grid, float(raw["omega0"]), Convention(raw.get("convention", "HalfWidth")),
                          opts, int(raw.get("seed", 0)), tasks, digest)


def load_config(path) -> ScenarioConfig:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(blob)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    return parse_config(raw, hashlib.sha256(blob).hexdigest())


# -- output formatting -----------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return json.dumps(str(x))
    return format(x, ".17g")


def dump_json(obj, indent=0) -> str:
    """JSON with every float printed to 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{json.dumps(str(k))}: {dump_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dump_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dump_json(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (complex, np.complexfloating)):
        return f"[{fmt(obj.real)}, {fmt(obj.imag)}]"
    if obj is None or isinstance(obj, str):
        return json.dumps(obj)
    return fmt(obj)


def csv_rows(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# -- helpers ---------------------------------------------------------------------------


def _constants(cfg: ScenarioConfig):
    return spectral.compute_renorm_constants(cfg.model, cfg.grid, cfg.omega0, cfg.renorm)


def _times(spec, gamma, where, start_at_zero=False):
    unit = spec.get("unit", "time")
    if unit == "inverse_gamma":
        if not gamma > 0:
            raise ConfigurationError(f"{where}.unit: inverse_gamma needs gamma > 0")
        scale = 1.0 / gamma
    else:
        scale = 1.0
    if ("values" in spec) == ("stop" in spec):
        raise ConfigurationError(f"{where}: give either 'values' or 'stop' and 'num'")
    if "values" in spec:
        t = np.asarray(spec["values"], dtype=float) * scale
    else:
        if "num" not in spec:
            raise ConfigurationError(f"{where}.num: missing required key")
        t = np.linspace(0.0, spec["stop"] * scale, spec["num"])
    if start_at_zero and (t[0] != 0.0 or np.any(np.diff(t) <= 0)):
        raise ConfigurationError(f"{where}: times must start at 0 and increase strictly")
    return t


def _profile(spec, cfg: ScenarioConfig, where) -> CoherentProfile:
    grid = cfg.grid
    if spec is None:
        return CoherentProfile.zero(grid)
    if ("table" in spec) == ("single_mode" in spec):
        raise ConfigurationError(f"{where}: give exactly one of 'table' or 'single_mode'")
    if "table" in spec:
        tab = np.asarray(spec["table"], dtype=float)
        if np.any(np.diff(tab[:, 0]) <= 0):
            raise ConfigurationError(f"{where}.table: frequencies must increase strictly")
        w = grid.nodes
        re = np.interp(w, tab[:, 0], tab[:, 1], left=0.0, right=0.0)
        im = np.interp(w, tab[:, 0], tab[:, 2], left=0.0, right=0.0)
        return CoherentProfile(grid, re + 1j * im)
    sm = spec["single_mode"]
    j = int(np.argmin(np.abs(grid.nodes - sm["omega"])))
    fj = abs(spectral.mode_coupling(cfg.model, grid)[j])
    if fj == 0:
        raise ConfigurationError(f"{where}.single_mode.omega: the coupling vanishes at the nearest node")
    alpha = np.zeros(grid.n_nodes, dtype=complex)
    alpha[j] = sm["drive"] / (grid.weights[j] * fj) * np.exp(1j * sm.get("phase", 0.0))
    return CoherentProfile(grid, alpha)


def _state(spec, where):
    if spec is None:
        return bloch.QubitDensity.pure(0.0, 1.0)
    if ("psi" in spec) == ("rho" in spec):
        raise ConfigurationError(f"{where}: give exactly one of 'psi' or 'rho'")
    if "psi" in spec:
        v = np.array([complex(*c) for c in spec["psi"]])
        n = np.linalg.norm(v)
        if abs(n - 1.0) > 1e-12:
            raise ConfigurationError(f"{where}.psi: state must be normalized (norm {n!r})")
        return bloch.QubitDensity.pure(v[0], v[1])
    rho = bloch.QubitDensity(np.array([[complex(*c) for c in row] for row in spec["rho"]]))
    if not rho.is_valid(1e-12):
        raise ConfigurationError(f"{where}.rho: not a density matrix")
    return rho


@dataclass
class Outcome:
    files: dict
    ok: bool = True
    message: str = ""


# -- subcommands -----------------------------------------------------------------------


def cmd_renorm(cfg: ScenarioConfig, threads: int) -> Outcome:
    block = cfg.tasks.get("renorm", {})
    c = _constants(cfg)
    report = {"model_hash": spectral.model_hash(cfg.model, cfg.grid), **c.as_dict(),
              "omega_A": c.omega_A, "b": c.b, "Omega": c.Omega,
              "b_plus_bstar_minus_2gamma": (c.b + c.b.conjugate()).real - 2 * c.gamma,
              "convention": cfg.convention.value, "population_rate": bloch.population_rate(c.gamma, cfg.convention)}
    ok, msg = True, ""
    if "refinement" in block:
        ref = spectral.compute_renorm_constants(cfg.model, cfg.grid.refined(block["refinement"]), cfg.omega0,
                                                cfg.renorm)
        rel_g = abs(c.gamma - ref.gamma) / max(abs(ref.gamma), 1e-300) if ref.gamma else abs(c.gamma)
        rel_d = abs(c.delta_omega - ref.delta_omega) / max(abs(ref.delta_omega), 1e-300) if ref.delta_omega \
            else abs(c.delta_omega)
        report["refinement"] = {"factor": block["refinement"], "gamma": ref.gamma, "delta_omega": ref.delta_omega,
                                "rel_diff_gamma": rel_g, "rel_diff_delta_omega": rel_d}
        tol = block.get("tolerance", 1e-6)
        if max(rel_g, rel_d) > tol:
            ok, msg = False, f"refined constants differ by {max(rel_g, rel_d):.3g} > {tol}"
    return Outcome({"constants.json": dump_json(report) + "\n"}, ok, msg)


def cmd_fl_survival(cfg: ScenarioConfig, threads: int) -> Outcome:
    block = cfg.task("fl-survival")
    c = _constants(cfg)
    t = _times(block["t_grid"], c.gamma, "fl_survival.t_grid", start_at_zero=True)
    if not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-12, atol=0) or t.size < 2:
        raise ConfigurationError("fl_survival.t_grid: needs a uniform grid of >= 2 points")
    h_max = block.get("volterra_step", 0.04)
    sub = max(1, int(np.ceil((t[-1] / (t.size - 1)) / h_max)))
    fine = np.linspace(0.0, t[-1], sub * (t.size - 1) + 1)
    renorm = block.get("picture", "bare") == "renormalized"
    args = (cfg.model, cfg.grid, c) if renorm else (cfg.model, cfg.grid, cfg.omega0)
    solver = friedrichs_lee.solve_volterra_renormalized if renorm else friedrichs_lee.solve_volterra_bare
    if block.get("richardson", True):
        pair = friedrichs_lee.richardson(solver, *args, t_grid=fine)
    else:
        pair = solver(*args, fine)
    Kv = pair.K[::sub]
    lap = block.get("laplace", {})
    lcfg = friedrichs_lee.LaplaceSolverConfig(method=lap.get("method", "TalbotContour"),
                                              n_nodes=lap.get("n_nodes", 64), shift=lap.get("shift", 0.0))
    Kl = np.ones(t.size, dtype=complex)
    if renorm:
        Kl[1:] = friedrichs_lee.renormalized_interaction_amplitude(cfg.model, cfg.grid, c, lcfg, t[1:])
        rot = np.exp(-1j * c.Omega * t)
    else:
        Kl[1:] = friedrichs_lee.survival_laplace_bare(cfg.model, cfg.grid, cfg.omega0, lcfg, t[1:])
        rot = np.exp(-1j * cfg.omega0 * t)
    header = {"model_hash": spectral.model_hash(cfg.model, cfg.grid), "picture": "renormalized" if renorm else "bare",
              "gamma": c.gamma, "delta_omega": c.delta_omega, "omega0": c.omega0}
    diff = float(np.max(np.abs(Kv - Kl)))
    tol = block.get("tolerance", 1e-6)
    amp = np.abs(rot * Kv)
    mask = (t * c.gamma >= 1.0) & (t * c.gamma <= 5.0) if c.gamma > 0 else np.zeros(t.size, bool)
    ww = float(np.max(np.abs(amp[mask] / np.exp(-c.gamma * t[mask]) - 1))) if mask.any() else None
    report = {"max_abs_diff": diff, "tolerance": tol, "volterra_step": fine[1] - fine[0],
              "richardson": block.get("richardson", True), "laplace_method": lcfg.method.value,
              "max_abs_amplitude": float(np.max(amp)), "wigner_weisskopf_rel_dev_1_to_5_over_gamma": ww,
              "kernel_continued": friedrichs_lee.laplace_kernel_is_continued(lcfg)}
    files = {"survival_volterra.csv": friedrichs_lee.survival_csv(t, Kv, rot * Kv, header),
             "survival_laplace.csv": friedrichs_lee.survival_csv(t, Kl, rot * Kl, header),
             "report.json": dump_json(report) + "\n"}
    ok = diff <= tol
    return Outcome(files, ok, "" if ok else f"Volterra and Laplace amplitudes differ by {diff:.3g} > {tol}")


def cmd_dyson_verify(cfg: ScenarioConfig, threads: int) -> Outcome:
    n_max = cfg.task("dyson-verify")["n_max"]
    rep = dyson.verify_theorem1(n_max, threads=threads)
    elements = []
    for e in rep.elements:
        elements.append({"element": f"S{e.bra}{e.ket}", "residual": "0" if e.ok else e.residual.dump(),
                         "residual_terms": len(e.residual), "open_terms": len(e.open_terms), "ok": e.ok})
    body = {"n_max": n_max, "ok": rep.ok, "elements": elements}
    return Outcome({"report.json": dump_json(body) + "\n"}, rep.ok,
                   "" if rep.ok else "nonzero residual in " + ", ".join(x["element"] for x in elements if not x["ok"]))


def cmd_tableau(cfg: ScenarioConfig, threads: int) -> Outcome:
    block = cfg.task("tableau")
    rows, bad = [], []
    for mu in tableau.all_diagrams(block["max_blocks"], block["max_rows"]):
        s = tableau.tableau_weight_sum(mu)
        expect = 1 if mu.size == 0 else 0
        rows.append(("-".join(map(str, mu.rows)), mu.size, mu.pairs, s, expect))
        if s != expect:
            bad.append(rows[-1][0])
    classes = []
    for pairs in range(block["max_rows"]):
        for size in range(block["max_blocks"] + 1):
            enum = tableau.class_weight_counts(size, pairs)
            closed = {m: tableau.multiplicity(size, pairs, m) for m in range(size + 1)}
            match = all(enum.get(m, 0) == v for m, v in closed.items())
            classes.append({"size": size, "pairs": pairs, "multiplicities_match": match,
                            "signed_sum": tableau.class_weight_sum_closed_form(size, pairs)})
            if not match:
                bad.append(f"class({size},{pairs})")
    text = "rows,size,pairs,weight_sum,expected\n" + "".join(f"{r},{n},{p},{s},{e}\n" for r, n, p, s, e in rows)
    report = {"diagrams": len(rows), "failures": bad, "classes": classes}
    return Outcome({"tableau.csv": text, "report.json": dump_json(report) + "\n"}, not bad,
                   "" if not bad else f"tableau identity fails for {bad[:5]}")


def cmd_propagate(cfg: ScenarioConfig, threads: int) -> Outcome:
    block = cfg.task("propagate")
    c = _constants(cfg)
    t = _times(block["t_grid"], c.gamma, "propagate.t_grid", start_at_zero=True)
    alpha = _profile(block.get("alpha"), cfg, "propagate.alpha")
    beta = _profile(block.get("beta", block.get("alpha")), cfg, "propagate.beta")
    blocks = propagator.evolve_block(alpha, beta, cfg.model, cfg.grid, c, t)
    sch = [propagator.to_schrodinger(b, c, beta, alpha) for b in blocks]
    files = {"blocks_interaction.csv": propagator.blocks_csv(blocks),
             "blocks_schrodinger.csv": propagator.blocks_csv(sch)}
    report = {"overlap": blocks[0].overlap, "field_phase": propagator.field_phase(beta, alpha)}
    ok, msg = True, ""
    if "psi0" in block and "beta" not in block:
        psi = block["psi0"].get("psi")
        if psi is None:
            raise ConfigurationError("propagate.psi0: the semiclassical comparison needs a pure 'psi'")
        psi0 = QubitState(complex(*psi[0]), complex(*psi[1]))
        sc = propagator.semiclassical_evolve(alpha, cfg.model, cfg.grid, c, psi0, t)
        theta = propagator.field_phase(alpha, alpha)
        dev = max(float(np.max(np.abs(np.exp(1j * theta * b.t) * b.matrix @ psi0.vector() - s.vector())))
                  for b, s in zip(sch, sc))
        tol = block.get("tolerance", 1e-8)
        report["semiclassical_max_dev"] = dev
        files["semiclassical.csv"] = csv_rows(("t", "re_c0", "im_c0", "re_c1", "im_c1", "norm"),
                                              [(tk, s.c0.real, s.c0.imag, s.c1.real, s.c1.imag, s.norm())
                                               for tk, s in zip(t, sc)])
        if dev > tol:
            ok, msg = False, f"semiclassical limit off by {dev:.3g} > {tol}"
    files["report.json"] = dump_json(report) + "\n"
    return Outcome(files, ok, msg)


def cmd_norm_check(cfg: ScenarioConfig, threads: int) -> Outcome:
    block = cfg.task("norm-check")
    c = _constants(cfg)
    t = _times(block["t_grid"], c.gamma, "norm_check.t_grid")
    lo, hi = block.get("bounds", [0.95, 1.05])
    norm = propagator.vacuum_norm_check(cfg.model, cfg.grid, c, t)
    dev = float(np.max(np.abs(norm - 1.0)))
    inside = bool(np.all((norm >= lo) & (norm <= hi)))
    report = {"gamma": c.gamma, "min_norm": float(np.min(norm)), "max_norm": float(np.max(norm)),
              "max_deviation": dev, "bounds": [lo, hi], "within_bounds": inside}
    files = {"norm.csv": csv_rows(("t", "norm", "deviation"), [(a, b, b - 1.0) for a, b in zip(t, norm)]),
             "report.json": dump_json(report) + "\n"}
    return Outcome(files, inside, "" if inside else f"norm leaves [{lo}, {hi}] (max deviation {dev:.3g})")


def cmd_bloch(cfg: ScenarioConfig, threads: int) -> Outcome:
    block = cfg.task("bloch")
    c = _constants(cfg)
    t = _times(block["t_grid"], c.gamma, "bloch.t_grid", start_at_zero=True)
    rho0 = _state(block.get("rho0"), "bloch.rho0")
    alpha = _profile(block.get("alpha"), cfg, "bloch.alpha")
    mode = block["mode"]
    if mode == "vacuum":
        if "alpha" in block:
            raise ConfigurationError("bloch.alpha: not used in vacuum mode")
        states = bloch.integrate_master_vacuum(rho0, c.omega_A, c.gamma, t, cfg.convention)
    elif mode == "driven":
        states = bloch.driven_lindblad_integrate(alpha, cfg.model, cfg.grid, c, rho0, t, cfg.convention)
    else:
        n_quad = block.get("n_quad", 2001)
        states = [rho0] + [bloch.driven_map_first_order(alpha, cfg.model, cfg.grid, c, rho0, tk, cfg.convention,
                                                        n_quad) for tk in t[1:]]
    report = {"mode": mode, "convention": cfg.convention.value,
              "population_rate": bloch.population_rate(c.gamma, cfg.convention),
              "drive_rate_ratio": bloch.drive_rate_ratio(alpha, cfg.model, cfg.grid, c, cfg.convention),
              "final_rho11": float(states[-1].rho[1, 1].real),
              "min_eigenvalue": min(s.min_eigenvalue() for s in states),
              "max_trace_error": max(abs(s.trace - 1.0) for s in states)}
    return Outcome({"density.csv": bloch.density_csv(t, states), "report.json": dump_json(report) + "\n"})


def cmd_chi_mc(cfg: ScenarioConfig, threads: int) -> Outcome:
    block = cfg.task("chi-mc")
    c = _constants(cfg)
    t = _times(block["t"], c.gamma, "chi_mc.t")
    est = bloch.chi_montecarlo_many(cfg.model, cfg.grid, c, t, block["n_samples"], cfg.seed, threads)
    exact = bloch.chi_analytic(t, c.gamma, cfg.convention)
    z = (est.mean - exact) / est.stderr
    z1 = np.abs(est.first_moment) / est.first_moment_stderr
    z_max = block.get("z_max", 3.0)
    rows = [(t[k], est.n_samples, est.seed, est.mean[k], est.stderr[k], exact[k], z[k],
             est.first_moment[k].real, est.first_moment[k].imag, est.first_moment_stderr[k]) for k in range(t.size)]
    text = csv_rows(("t", "n_samples", "seed", "mean", "stderr", "analytic", "z", "re_first_moment",
                     "im_first_moment", "first_moment_stderr"), rows)
    ok = bool(np.all(np.abs(z) < z_max) and np.all(z1 < z_max))
    report = {"n_samples": est.n_samples, "seed": est.seed, "z_max": z_max, "max_abs_z": float(np.max(np.abs(z))),
              "max_first_moment_z": float(np.max(z1)), "ok": ok}
    return Outcome({"chi.csv": text, "report.json": dump_json(report) + "\n"}, ok,
                   "" if ok else f"Monte Carlo estimate off by more than {z_max} standard errors")


def cmd_second_order(cfg: ScenarioConfig, threads: int) -> Outcome:
    block = cfg.task("second-order")
    c = _constants(cfg)
    alpha = _profile(block.get("alpha"), cfg, "second_order.alpha")
    rho0 = _state(block.get("rho0"), "second_order.rho0")
    min_exp = block.get("min_exponent", 2.5)
    try:
        rep = bloch.verify_second_order(alpha, cfg.model, cfg.grid, c, rho0, block["t"], block["gamma_list"],
                                        cfg.convention, block.get("n_quad", 2001), min_exp)
    except ValueError as exc:
        raise ConfigurationError(f"second_order.gamma_list: {exc}") from None
    target = block.get("target_exponent", 3.0)
    body = {**rep.as_dict(), "min_exponent": min_exp, "target_exponent": target,
            "reaches_target": rep.reaches(target)}
    return Outcome({"report.json": dump_json(body) + "\n"}, rep.passed,
                   "" if rep.passed else f"residual exponent {rep.exponent:.3f} < {min_exp}")


COMMANDS = {
    "renorm": cmd_renorm, "fl-survival": cmd_fl_survival, "dyson-verify": cmd_dyson_verify,
    "tableau": cmd_tableau, "propagate": cmd_propagate, "norm-check": cmd_norm_check, "bloch": cmd_bloch,
    "chi-mc": cmd_chi_mc, "second-order": cmd_second_order,
}


# -- driver ----------------------------------------------------------------------------


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be >= 1")
    return n


def _versions():
    return {"dissren": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run(subcommand, config_path, out_dir, seed=None, threads=None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    start = time.perf_counter()
    try:
        if subcommand not in COMMANDS:
            raise ConfigurationError(f"unknown subcommand {subcommand!r}")
        cfg = load_config(config_path)
        if seed is not None:
            if seed < 0:
                raise ConfigurationError("--seed must be >= 0")
            cfg.seed = seed
        n_threads = default_threads() if threads is None else threads
        if n_threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        outcome = COMMANDS[subcommand](cfg, n_threads)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=stderr)
        return 2
    except VerificationFailure as exc:
        outcome = Outcome({}, False, str(exc))
    except DissrenError as exc:
        outcome = Outcome({}, False, f"{type(exc).__name__}: {exc}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, text in sorted(outcome.files.items()):
        data = text.encode()
        (out / name).write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    code = 0 if outcome.ok else 1
    manifest = {"subcommand": subcommand, "config_path": str(config_path), "config_sha256": cfg.digest,
                "seed": cfg.seed, "threads": n_threads, "versions": _versions(), "outputs": hashes,
                "exit_code": code, "message": outcome.message,
                "wall_time_s": time.perf_counter() - start}
    (out / "manifest.json").write_text(dump_json(manifest) + "\n")
    if not outcome.ok:
        print(f"verification failure: {outcome.message}", file=stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dissren", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    return run(args.subcommand, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
