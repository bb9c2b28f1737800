"""Declarative experiment configs, a cached offline pipeline and the
desk-scale reproduction targets."""
from __future__ import annotations

import copy
import hashlib
import json
import time
from functools import lru_cache

import jsonschema
import numpy as np

from .decoders import fit_forest, fit_polynomial, fit_spline1d, fit_tree, gen_dataset, stability_probe
from .decoders.dataset import gen_identification_dataset
from .decoders.identify import evaluate_identification, fit_identification
from .fem import DesignSet, assemble_affine
from .geometry import FinShape, build_fin_mesh
from .ncrb import NCRBConfig, complexity_report, ncrb_errors
from .pod import DESK_M, compute_snapshots, n_of_eps_curve, pod, project_operators, sample_parameters
from .rb import TruthCache, loglog_slope, rb_errors

_SEED = {"type": "integer", "minimum": 0}
_POS = {"type": "number", "exclusiveMinimum": 0}

DECODER_SCHEMA = {
    "type": "object",
    "required": ["name", "variant", "n", "size", "seed"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "variant": {"enum": ["polynomial", "spline1d", "tree", "forest"]},
        "n": {"type": "integer", "minimum": 1},
        "size": {"type": "integer", "minimum": 1},
        "seed": _SEED,
        "hyper": {"type": "object"},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["fin", "design", "pod"],
    "properties": {
        "fin": {
            "type": "object",
            "required": ["n_fins", "refinement"],
            "properties": {
                "n_fins": {"type": "integer", "minimum": 1},
                "refinement": {"type": "integer", "minimum": 1},
                "post_half_width": _POS,
                "subfin_half_span": _POS,
                "subfin_thickness": _POS,
                "period": _POS,
            },
            "additionalProperties": False,
        },
        "design": {
            "type": "object",
            "properties": {
                "n_active": {"type": "integer", "minimum": 1},
                "lo": {"type": "array", "items": _POS},
                "hi": {"type": "array", "items": _POS},
                "laws": {"type": "array", "items": {"enum": ["log", "uniform"]}},
                "active": {"type": "array", "items": {"type": "boolean"}},
            },
            "additionalProperties": False,
        },
        "truth": {"type": "object", "properties": {"tol": _POS}, "additionalProperties": False},
        "pod": {
            "type": "object",
            "required": ["seed"],
            "properties": {
                "M": {"type": "integer", "minimum": 1},
                "seed": _SEED,
                "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "N": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "decoders": {"type": "array", "items": DECODER_SCHEMA},
        "ncrb": {
            "type": "object",
            "properties": {
                "variant": {"enum": ["block", "relaxed"]},
                "gamma": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "omega": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "tol": _POS,
                "max_iter": {"type": "integer", "minimum": 0},
                "init": {"enum": ["rb_n", "zero"]},
            },
            "additionalProperties": False,
        },
        "test": {
            "type": "object",
            "required": ["size", "seed"],
            "properties": {"size": {"type": "integer", "minimum": 1}, "seed": _SEED},
            "additionalProperties": False,
        },
        "identification": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "n_active", "m", "variant", "size", "seed", "test_size", "test_seed"],
                "properties": {
                    "name": {"type": "string"},
                    "n_active": {"type": "integer", "minimum": 1},
                    "m": {"type": "integer", "minimum": 1},
                    "variant": {"enum": ["polynomial", "spline1d", "tree", "forest"]},
                    "size": {"type": "integer", "minimum": 1},
                    "seed": _SEED,
                    "test_size": {"type": "integer", "minimum": 1},
                    "test_seed": _SEED,
                    "log_targets": {"type": ["boolean", "null"]},
                    "hyper": {"type": "object"},
                },
                "additionalProperties": False,
            },
        },
        "nvsp": {
            "type": "object",
            "properties": {
                "p_values": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "eps_values": {"type": "array", "items": {"type": "number"}},
            },
            "additionalProperties": False,
        },
        "stability": {"type": "object", "properties": {"expansion": {"type": "number", "exclusiveMinimum": 1}}},
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


def validate_config(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"config invalid at '{path}': {exc.message}") from None
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of everything that can influence results (the output dir cannot)."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# desk defaults

FIN = {"n_fins": 4, "refinement": 4}
POD = {"seed": 0, "eps": 1e-6}
TEST = {"size": 100, "seed": 12345}
NCRB = {"variant": "block", "omega": 1.0, "tol": 1e-10, "max_iter": 100, "init": "rb_n"}


def _decoders_p1():
    return [
        {"name": "poly-4", "variant": "polynomial", "n": 1, "size": 20000, "seed": 1, "hyper": {"degree": 4}},
        {"name": "poly-6", "variant": "polynomial", "n": 1, "size": 20000, "seed": 1, "hyper": {"degree": 6}},
        {"name": "poly-15", "variant": "polynomial", "n": 1, "size": 20000, "seed": 1, "hyper": {"degree": 15}},
        {"name": "spline", "variant": "spline1d", "n": 1, "size": 20000, "seed": 1, "hyper": {"n_knots": 100, "degree": 10}},
        {"name": "tree", "variant": "tree", "n": 1, "size": 100000, "seed": 3, "hyper": {}},
        {"name": "forest", "variant": "forest", "n": 1, "size": 100000, "seed": 3, "hyper": {"n_trees": 50}},
    ]


def default_config(target: str) -> dict:
    """Bundled desk-scale config of a reproduce target."""
    base = {"fin": dict(FIN), "pod": dict(POD), "truth": {"tol": 1e-12}, "test": dict(TEST), "ncrb": dict(NCRB)}
    if target in ("table1", "errdecay", "stability"):
        cfg = dict(base, design={"n_active": 1}, decoders=_decoders_p1())
        if target == "stability":
            cfg["stability"] = {"expansion": 1.5}
        if target == "errdecay":
            cfg.pop("decoders")
        return cfg
    if target == "nvsp":
        return dict(base, design={"n_active": 1}, nvsp={"p_values": [1, 2, 3, 4, 5], "eps_values": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]})
    if target == "identify3":
        return dict(
            base,
            design={"n_active": 1},
            identification=[
                {"name": "P1-spline", "n_active": 1, "m": 1, "variant": "spline1d", "size": 20000, "seed": 4,
                 "test_size": 2000, "test_seed": 5, "log_targets": None, "hyper": {"n_knots": 100, "degree": 10}},
                {"name": "P3-forest", "n_active": 3, "m": 3, "variant": "forest", "size": 100000, "seed": 4,
                 "test_size": 2000, "test_seed": 5, "log_targets": None, "hyper": {"n_trees": 50}},
            ],
        )
    if target == "ncrb2":
        return dict(
            base,
            design={"n_active": 2},
            decoders=[{"name": "tree", "variant": "tree", "n": 2, "size": 2000000, "seed": 3, "hyper": {}}],
        )
    raise ConfigError(f"unknown reproduce target {target!r}")


TARGETS = ("table1", "nvsp", "errdecay", "stability", "identify3", "ncrb2")


# ---------------------------------------------------------------------------
# cached pipeline


def _key(obj) -> str:
    return json.dumps(obj, sort_keys=True)


@lru_cache(maxsize=4)
def _operator(fin_key):
    shape = FinShape(**json.loads(fin_key))
    mesh = build_fin_mesh(shape)
    return mesh, assemble_affine(mesh)


@lru_cache(maxsize=8)
def _offline(fin_key, design_key, pod_key, tol, threads):
    _, op = _operator(fin_key)
    design = DesignSet.from_dict(json.loads(design_key))
    pcfg = json.loads(pod_key)
    M = pcfg.get("M") or DESK_M.get(int(sum(design.active)), 500)
    mus = sample_parameters(design, M, pcfg["seed"])
    snaps = compute_snapshots(op, mus, tol=tol, seed=pcfg["seed"], design=design, threads=threads)
    basis = pod(snaps, op.X, eps=pcfg.get("eps"), N=pcfg.get("N"))
    red = project_operators(op, basis, seed=pcfg["seed"], M=M)
    return snaps, basis, red


@lru_cache(maxsize=8)
def _truth(fin_key, design_key, size, seed, tol, threads):
    _, op = _operator(fin_key)
    design = DesignSet.from_dict(json.loads(design_key))
    return TruthCache(op, sample_parameters(design, size, seed), tol=tol, threads=threads)


def clear_caches() -> None:
    for fn in (_operator, _offline, _truth):
        fn.cache_clear()


def design_from_config(cfg_design: dict, n_fins: int) -> DesignSet:
    if "lo" in cfg_design:
        return DesignSet.from_dict(cfg_design)
    return DesignSet.default(n_fins, cfg_design.get("n_active"))


class Pipeline:
    """Lazily built, memoized offline objects for one config."""

    def __init__(self, cfg: dict, threads=None):
        self.cfg = validate_config(copy.deepcopy(cfg))
        self.threads = threads
        self.fin_key = _key(self.cfg["fin"])
        self.tol = float(self.cfg.get("truth", {}).get("tol", 1e-12))

    def with_design(self, n_active) -> "Pipeline":
        cfg = copy.deepcopy(self.cfg)
        cfg["design"] = {"n_active": int(n_active)}
        return Pipeline(cfg, self.threads)

    @property
    def mesh(self):
        return _operator(self.fin_key)[0]

    @property
    def op(self):
        return _operator(self.fin_key)[1]

    @property
    def design(self) -> DesignSet:
        return design_from_config(self.cfg["design"], self.cfg["fin"]["n_fins"])

    def _offline(self):
        return _offline(self.fin_key, _key(self.design.to_dict()), _key(self.cfg["pod"]), self.tol, self.threads)

    @property
    def snapshots(self):
        return self._offline()[0]

    @property
    def basis(self):
        return self._offline()[1]

    @property
    def red(self):
        return self._offline()[2]

    @property
    def truth(self) -> TruthCache:
        t = self.cfg["test"]
        return _truth(self.fin_key, _key(self.design.to_dict()), t["size"], t["seed"], self.tol, self.threads)

    @property
    def ncrb_config(self):
        return self.cfg.get("ncrb", {})

    def dataset(self, spec):
        return gen_dataset(self.red, self.design, spec["size"], spec["n"], spec["seed"])

    def fit(self, spec, dataset=None):
        data = dataset if dataset is not None else self.dataset(spec)
        return fit_decoder(spec, data, self.threads)


def fit_decoder(spec, data, threads=None):
    hyper = dict(spec.get("hyper", {}))
    variant = spec["variant"]
    if variant == "polynomial":
        return fit_polynomial(data, **hyper)
    if variant == "spline1d":
        return fit_spline1d(data, **hyper)
    if variant == "tree":
        return fit_tree(data, seed=spec["seed"], **hyper)
    if variant == "forest":
        return fit_forest(data, seed=spec["seed"], threads=threads, **hyper)
    raise ConfigError(f"unknown decoder variant {variant!r}")


# ---------------------------------------------------------------------------
# reproduce targets; each returns (header, rows, summary)


def _ncrb_row(pl: Pipeline, name, decoder, n):
    cfg = NCRBConfig(n=n, **pl.ncrb_config)
    rec = ncrb_errors(pl.op, pl.basis, pl.red, decoder, None, cfg, truth=pl.truth, threads=pl.threads)
    return [name, rec["mean_energy"], rec["mean_output"], rec["max_energy"], rec["max_output"],
            rec["convergence_rate"], rec["mean_iterations"]]


TABLE_HEADER = ["model", "rel_energy_error", "rel_output_error", "max_energy_error", "max_output_error",
                "converged_fraction", "mean_iterations"]


def reproduce_table1(cfg, threads=None):
    pl = Pipeline(cfg, threads)
    red, N = pl.red, pl.red.N
    timings = {}
    rows = []
    for n_modes in (N, 1):
        (_, me, xe, mo, xo) = rb_errors(pl.op, pl.basis, red, None, [n_modes], pl.truth)[0]
        rows.append([f"RB-{n_modes}", me, mo, xe, xo, 1.0, 0.0])
    datasets = {}
    for spec in pl.cfg.get("decoders", []):
        t0 = time.perf_counter()
        dkey = (spec["size"], spec["n"], spec["seed"])
        if dkey not in datasets:
            datasets = {dkey: pl.dataset(spec)}
        dec = pl.fit(spec, datasets[dkey])
        timings[f"fit_{spec['name']}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        rows.append(_ncrb_row(pl, spec["name"], dec, spec["n"]))
        timings[f"solve_{spec['name']}"] = time.perf_counter() - t0
    err = {r[0]: r[1] for r in rows}
    checks = table1_checks(err, N)
    return TABLE_HEADER, rows, {"N": N, "checks": checks, "timings": timings}


def table1_checks(err: dict, N: int) -> dict:
    rb = err[f"RB-{N}"]
    out = {
        "rb_N_below_1e-5": rb <= 1e-5,
        "rb_1_in_[0.2,0.7]": 0.2 <= err["RB-1"] <= 0.7,
    }
    if "spline" in err:
        out["spline_within_10x_rb"] = err["spline"] <= 10 * rb
    chain = [["spline"], ["tree", "forest"], ["poly-15"], ["poly-6"], ["poly-4"]]
    if all(all(m in err for m in g) for g in chain):
        out["ordering"] = ordering_holds(err, chain)
    return out


def ordering_holds(err, chain, slack=2.0) -> bool:
    """Each group is no worse than the next one, allowing a factor ``slack`` between neighbours."""
    for a, b in zip(chain, chain[1:]):
        if max(err[m] for m in a) > slack * min(err[m] for m in b):
            return False
    return True


def reproduce_nvsp(cfg, threads=None):
    pl = Pipeline(cfg, threads)
    ncfg = pl.cfg.get("nvsp", {})
    p_values = ncfg.get("p_values", [1, 2, 3, 4, 5])
    eps_values = ncfg.get("eps_values", [1e-6])
    rows, _ = n_of_eps_curve(pl.op, p_values, eps_values, M=pl.cfg["pod"].get("M"), seed=pl.cfg["pod"]["seed"],
                             tol=pl.tol, threads=threads)
    rows = [[int(p), float(e), int(n)] for p, e, n in rows]
    by_eps = {}
    for p, e, n in rows:
        by_eps.setdefault(e, []).append((p, n))
    monotone = all(all(b[1] >= a[1] for a, b in zip(v, v[1:])) for v in by_eps.values())
    at6 = dict(by_eps.get(1e-6, []))
    checks = {"nondecreasing_in_P": monotone}
    if 1 in at6:
        checks["N_P1_in_[7,12]"] = 7 <= at6[1] <= 12
    if 2 in at6:
        checks["N_P2_in_[18,35]"] = 18 <= at6[2] <= 35
    return ["P", "eps", "N"], rows, {"checks": checks}


def reproduce_errdecay(cfg, threads=None):
    pl = Pipeline(cfg, threads)
    rows = [list(r) for r in rb_errors(pl.op, pl.basis, pl.red, None, None, pl.truth)]
    slope = loglog_slope([r[1] for r in rows], [r[3] for r in rows])
    checks = {"slope_in_[1.7,2.3]": 1.7 <= slope <= 2.3}
    return ["N", "mean_energy", "max_energy", "mean_output", "max_output"], rows, {"slope": slope, "checks": checks}


def reproduce_stability(cfg, threads=None):
    pl = Pipeline(cfg, threads)
    c = pl.cfg.get("stability", {}).get("expansion", 1.5)
    rows, unstable = [], {}
    for spec in pl.cfg.get("decoders", []):
        rep = stability_probe(pl.fit(spec), c=c)
        unstable[spec["name"]] = rep["unstable"]
        rows.append([spec["name"], c, rep["inside_max"], rep["outside_max"], rep["ratio"], int(rep["unstable"])])
    checks = {}
    if "poly-15" in unstable:
        checks["poly-15_unstable"] = unstable["poly-15"]
    for m in ("spline", "tree"):
        if m in unstable:
            checks[f"{m}_stable"] = not unstable[m]
    return ["model", "expansion", "inside_max", "outside_max", "ratio", "unstable"], rows, {"checks": checks}


IDENT_LIMITS = {("P1-spline", "Bi"): 1e-4, ("P3-forest", "Bi"): 5e-3}


def identification_limit(name, param):
    if (name, param) in IDENT_LIMITS:
        return IDENT_LIMITS[(name, param)]
    return 5e-2 if name == "P3-forest" else None


def run_identification(pl: Pipeline, spec, threads=None):
    sub = pl.with_design(spec["n_active"])
    tr = gen_identification_dataset(sub.red, sub.design, spec["size"], spec["m"], spec["seed"])
    te = gen_identification_dataset(sub.red, sub.design, spec["test_size"], spec["m"], spec["test_seed"])
    hyper = dict(spec.get("hyper", {}))
    if spec["variant"] in ("tree", "forest"):
        hyper["seed"] = spec["seed"]
    if spec["variant"] == "forest":
        hyper["threads"] = threads
    model = fit_identification(tr, spec["variant"], log_targets=spec.get("log_targets"), **hyper)
    return model, evaluate_identification(model, te), te


def reproduce_identify3(cfg, threads=None):
    pl = Pipeline(cfg, threads)
    rows, checks = [], {}
    for spec in pl.cfg.get("identification", []):
        _, res, _ = run_identification(pl, spec, threads)
        for param, r in res.items():
            rows.append([spec["name"], spec["variant"], param, r["mean_relative_error"], r["max_relative_error"]])
            lim = identification_limit(spec["name"], param)
            if lim is not None:
                checks[f"{spec['name']}_{param}_below_{lim:g}"] = r["mean_relative_error"] <= lim
    return ["config", "model", "parameter", "mean_relative_error", "max_relative_error"], rows, {"checks": checks}


def reproduce_ncrb2(cfg, threads=None):
    pl = Pipeline(cfg, threads)
    n = int(sum(pl.design.active))
    (_, me, xe, mo, xo) = rb_errors(pl.op, pl.basis, pl.red, None, [n], pl.truth)[0]
    rows = [[f"RB-{n}", me, mo, xe, xo, 1.0, 0.0]]
    for spec in pl.cfg.get("decoders", []):
        rows.append(_ncrb_row(pl, spec["name"], pl.fit(spec), spec["n"]))
    err = {r[0]: r[1] for r in rows}
    checks = {f"RB-{n}_at_least_1e-2": err[f"RB-{n}"] >= 1e-2}
    if "tree" in err:
        checks["tree_below_1e-3"] = err["tree"] <= 1e-3
    return TABLE_HEADER, rows, {"N": pl.red.N, "checks": checks}


REPRODUCERS = {
    "table1": reproduce_table1,
    "nvsp": reproduce_nvsp,
    "errdecay": reproduce_errdecay,
    "stability": reproduce_stability,
    "identify3": reproduce_identify3,
    "ncrb2": reproduce_ncrb2,
}


def complexity_check(N=114, n=9, K=10, depth=20, Q=10) -> dict:
    return complexity_report(N, n, float(depth), K, Q)


# ---------------------------------------------------------------------------
# CSV writer


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows, cfg_hash) -> str:
    lines = [f"# config_hash={cfg_hash}", ",".join(header)]
    lines += [",".join(format_value(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"

