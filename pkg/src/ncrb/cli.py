"""Command line entry point: ``ncrb <command> --config FILE [--out DIR] [--seed N] [--threads N]``.

Artifacts of each stage are written to the output directory and picked up
by the next stage. Failures print a JSON error object on stderr and exit
nonzero.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import backend_name
from .decoders import CoefficientDataset, load_decoder
from .decoders.dataset import gen_dataset
from .experiments import (
    REPRODUCERS,
    TABLE_HEADER,
    ConfigError,
    Pipeline,
    config_hash,
    csv_text,
    default_config,
    design_from_config,
    fit_decoder,
    run_identification,
    validate_config,
)
from .fem import AffineOperator, assemble_affine
from .geometry import FinShape, build_fin_mesh, mesh_statistics, read_mesh, write_mesh
from .linalg import LinAlgError
from .matio import read_matrix, write_matrix
from .ncrb import NCRBConfig, ProvenanceError, check_provenance, complexity_report, ncrb_errors, solve_ncrb
from .pod import (
    DESK_M,
    PODBasis,
    ReducedOperator,
    compute_snapshots,
    information_content,
    pod,
    project_operators,
    sample_parameters,
)
from .rb import TruthCache, rb_errors, solve_rb, solve_rb_batch

EXIT_CODES = {ConfigError: 2, ProvenanceError: 3, FileNotFoundError: 4}


class MissingArtifact(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}; run the upstream command first")
    return path


class Run:
    """Output directory bookkeeping and the manifest of one command."""

    def __init__(self, command, cfg, out, threads):
        self.command = command
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = threads
        self.hash = config_hash(cfg)
        self.files = []
        self.t0 = time.perf_counter()
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def wrote(self, *names):
        self.files.extend(names)

    def csv(self, name, header, rows):
        self.path(name).write_text(csv_text(header, rows, self.hash))
        self.wrote(name)

    def json(self, name, obj):
        _dump_json(self.path(name), obj)
        self.wrote(name)

    def finish(self, summary=None) -> dict:
        summary = dict(summary or {})
        summary.setdefault("command", self.command)
        summary["config_hash"] = self.hash
        summary["seconds"] = time.perf_counter() - self.t0
        self.json(f"{self.command}.summary.json", summary)
        manifest_path = self.out / "manifest.json"
        manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {"artifacts": {}, "runs": []}
        for name in self.files:
            manifest["artifacts"][name] = _sha256(self.out / name)
        manifest["runs"].append(
            {
                "command": self.command,
                "config_hash": self.hash,
                "started": self.started,
                "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            }
        )
        manifest["tool_version"] = __version__
        manifest["backend"] = backend_name()
        _dump_json(manifest_path, manifest)
        return summary


# ---------------------------------------------------------------------------
# artifact io


def save_operator(run: Run, op: AffineOperator):
    names = []
    for q in range(op.Q):
        write_matrix(run.path(f"operator/A{q}.bin"), op.block(q))
        names.append(f"operator/A{q}.bin")
    write_matrix(run.path("operator/X.bin"), op.X)
    write_matrix(run.path("operator/f.bin"), op.f)
    run.wrote(*names, "operator/X.bin", "operator/f.bin")
    run.json("operator/operator.json", {"Q": op.Q, "n": op.n, "n_fins": op.n_fins, "mesh_hash": op.mesh_hash})


def load_operator(out) -> AffineOperator:
    out = Path(out)
    meta = json.loads(_need(out / "operator/operator.json").read_text())
    blocks = [read_matrix(_need(out / f"operator/A{q}.bin")) for q in range(meta["Q"])]
    X = read_matrix(_need(out / "operator/X.bin"))
    f = read_matrix(_need(out / "operator/f.bin"))[:, 0]
    for B in blocks + [X]:
        if not (np.array_equal(B.indptr, X.indptr) and np.array_equal(B.indices, X.indices)):
            raise LinAlgError("operator blocks do not share one sparsity pattern")
    return AffineOperator(X.indptr, X.indices, np.stack([B.data for B in blocks]), f, X.data, meta["n_fins"], meta["mesh_hash"])


def save_reduced(run: Run, basis: PODBasis, red: ReducedOperator):
    write_matrix(run.path("pod/basis.bin"), basis.Z)
    write_matrix(run.path("pod/eigenvalues.bin"), basis.eigenvalues)
    for q in range(red.Q):
        write_matrix(run.path(f"pod/AN{q}.bin"), red.blocks[q])
    write_matrix(run.path("pod/fN.bin"), red.f)
    run.wrote("pod/basis.bin", "pod/eigenvalues.bin", *[f"pod/AN{q}.bin" for q in range(red.Q)], "pod/fN.bin")
    run.json("pod/reduced.json", {"Q": red.Q, "N": red.N, "provenance": red.provenance})


def load_reduced(out):
    out = Path(out)
    meta = json.loads(_need(out / "pod/reduced.json").read_text())
    blocks = np.stack([read_matrix(_need(out / f"pod/AN{q}.bin")) for q in range(meta["Q"])])
    f = read_matrix(_need(out / "pod/fN.bin"))[:, 0]
    Z = read_matrix(_need(out / "pod/basis.bin"))
    lam = read_matrix(_need(out / "pod/eigenvalues.bin"))[:, 0]
    basis = PODBasis(lam, Z, meta["provenance"].get("eps"))
    red = ReducedOperator(blocks, f, meta["provenance"])
    if basis.content_hash() != red.basis_hash:
        raise ProvenanceError("stored basis does not match the reduced operator provenance")
    return basis, red


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(run: Run, args):
    shape = FinShape(**run.cfg["fin"])
    mesh = build_fin_mesh(shape)
    write_mesh(mesh, run.path("mesh.txt"))
    run.wrote("mesh.txt")
    stats = mesh_statistics(mesh)
    stats["mesh_hash"] = mesh.content_hash()
    run.json("mesh_stats.json", stats)
    return {"nodes": mesh.n_nodes, "triangles": len(mesh.triangles), "mesh_hash": stats["mesh_hash"]}


def cmd_assemble(run: Run, args):
    mesh = read_mesh(_need(run.out / "mesh.txt"))
    op = assemble_affine(mesh)
    save_operator(run, op)
    return {"Q": op.Q, "n": op.n, "mesh_hash": op.mesh_hash}


def _design(cfg):
    return design_from_config(cfg["design"], cfg["fin"]["n_fins"])


def cmd_snapshots(run: Run, args):
    op = load_operator(run.out)
    design = _design(run.cfg)
    pcfg = run.cfg["pod"]
    M = pcfg.get("M") or DESK_M.get(int(sum(design.active)), 500)
    mus = sample_parameters(design, M, pcfg["seed"])
    tol = run.cfg.get("truth", {}).get("tol", 1e-12)
    snaps = compute_snapshots(op, mus, tol=tol, seed=pcfg["seed"], design=design, threads=run.threads)
    write_matrix(run.path("snapshots/S.bin"), snaps.S)
    write_matrix(run.path("snapshots/mus.bin"), mus)
    run.wrote("snapshots/S.bin", "snapshots/mus.bin")
    run.json("snapshots/snapshots.json", {"M": M, "seed": pcfg["seed"], "tol": tol, "design": design.to_dict(), "mesh_hash": op.mesh_hash})
    return {"M": M}


def cmd_pod(run: Run, args):
    op = load_operator(run.out)
    meta = json.loads(_need(run.out / "snapshots/snapshots.json").read_text())
    if meta["mesh_hash"] != op.mesh_hash:
        raise ProvenanceError("snapshots were computed on a different mesh")
    S = read_matrix(_need(run.out / "snapshots/S.bin"))
    pcfg = run.cfg["pod"]
    basis = pod(S, op.X, eps=pcfg.get("eps"), N=pcfg.get("N"))
    red = project_operators(op, basis, seed=meta["seed"], M=meta["M"])
    save_reduced(run, basis, red)
    lam = basis.eigenvalues
    run.csv("pod/spectrum.csv", ["i", "lambda", "ric"], [[i + 1, lam[i], r] for i, r in enumerate(information_content(lam))])
    return {"N": basis.N, "rank": basis.rank, "basis_hash": red.basis_hash}


def cmd_train(run: Run, args):
    basis, red = load_reduced(run.out)
    design = _design(run.cfg)
    out = {}
    for spec in run.cfg.get("decoders", []):
        data = gen_dataset(red, design, spec["size"], spec["n"], spec["seed"])
        data.save(run.path(f"datasets/{spec['name']}"))
        dec = fit_decoder(spec, data, run.threads)
        dec.save(run.path(f"models/{spec['name']}.json"))
        stem = f"datasets/{spec['name']}"
        run.wrote(f"models/{spec['name']}.json", f"{stem}.inputs.bin", f"{stem}.targets.bin", f"{stem}.mus.bin", f"{stem}.json")
        out[spec["name"]] = {"variant": spec["variant"], "predict_cost": dec.predict_cost()}
    return {"models": out}


def _test_set(run: Run, op):
    t = run.cfg.get("test", {"size": 100, "seed": 12345})
    mus = sample_parameters(_design(run.cfg), t["size"], t["seed"])
    return TruthCache(op, mus, tol=run.cfg.get("truth", {}).get("tol", 1e-12), threads=run.threads)


def _offline_pair(run: Run):
    op = load_operator(run.out)
    basis, red = load_reduced(run.out)
    if red.provenance.get("mesh_hash") != op.mesh_hash:
        raise ProvenanceError("reduced operator was projected from a different mesh")
    return op, basis, red


def cmd_solve(run: Run, args):
    op, basis, red = _offline_pair(run)
    if args.method == "rb":
        truth = _test_set(run, op)
        rows = [list(r) for r in rb_errors(op, basis, red, None, None, truth)]
        run.csv("solve_rb.csv", ["N", "mean_energy", "max_energy", "mean_output", "max_output"], rows)
        records = [solve_rb(red, mu).record() for mu in truth.mus]
        run.json("solve_rb.records.json", records)
        return {"N": red.N, "mean_energy_at_N": rows[-1][1]}
    models = sorted(Path(run.out / "models").glob("*.json")) if args.model is None else [_need(args.model)]
    if not models:
        raise MissingArtifact("no trained models found; run `train` first")
    decoders = [(p.stem, load_decoder(p)) for p in models]
    ncfg = run.cfg.get("ncrb", {})
    # refuse before any expensive work if a model belongs to another basis
    for _, dec in decoders:
        check_provenance(red, dec, dec.n_in)
    truth = _test_set(run, op)
    rows, records = [], {}
    for name, dec in decoders:
        cfg = NCRBConfig(n=dec.n_in, **ncfg)
        rec = ncrb_errors(op, basis, red, dec, None, cfg, truth=truth, threads=run.threads)
        rows.append([name, rec["mean_energy"], rec["mean_output"], rec["max_energy"], rec["max_output"],
                     rec["convergence_rate"], rec["mean_iterations"]])
        records[name] = [s.record() if s is not None else None for s in rec["solutions"]]
    run.csv("solve_ncrb.csv", TABLE_HEADER, rows)
    run.json("solve_ncrb.records.json", records)
    return {"models": [r[0] for r in rows]}


def cmd_identify(run: Run, args):
    pl = Pipeline(run.cfg, run.threads)
    rows = []
    for spec in run.cfg.get("identification", []):
        model, res, _ = run_identification(pl, spec, run.threads)
        run.path(f"identification/{spec['name']}.json").write_text(model.dumps())
        run.wrote(f"identification/{spec['name']}.json")
        rows += [[spec["name"], spec["variant"], p, r["mean_relative_error"], r["max_relative_error"]] for p, r in res.items()]
    run.csv("identify.csv", ["config", "model", "parameter", "mean_relative_error", "max_relative_error"], rows)
    return {"rows": len(rows)}


def cmd_bench(run: Run, args):
    """Online timings of RB against NCRB for every trained model, plus the flop model."""
    basis, red = load_reduced(run.out)
    design = _design(run.cfg)
    t = run.cfg.get("test", {"size": 100, "seed": 12345})
    mus = sample_parameters(design, t["size"], t["seed"])
    t0 = time.perf_counter()
    for mu in mus:
        solve_rb(red, mu)
    rb_sec = (time.perf_counter() - t0) / len(mus)
    rows, timing = [], {"rb_seconds_per_solve": rb_sec}
    for p in sorted(Path(run.out / "models").glob("*.json")):
        dec = load_decoder(p)
        cfg = NCRBConfig(n=dec.n_in, **run.cfg.get("ncrb", {}))
        t0 = time.perf_counter()
        sols = [solve_ncrb(red, dec, mu, cfg) for mu in mus]
        sec = (time.perf_counter() - t0) / len(mus)
        K = int(round(np.mean([s.iterations for s in sols])))
        rep = complexity_report(red.N, dec.n_in, dec, K, red.Q)
        rows.append([p.stem, red.N, dec.n_in, K, rep["predict_cost"], rep["rb_flops"], rep["ncrb_flops"], int(rep["ncrb_cheaper"])])
        timing[f"{p.stem}_seconds_per_solve"] = sec
    run.csv("bench.csv", ["model", "N", "n", "K", "predict_cost", "rb_flops", "ncrb_flops", "ncrb_cheaper"], rows)
    return {"timings": timing}


def cmd_reproduce(run: Run, args):
    header, rows, summary = REPRODUCERS[args.target](run.cfg, run.threads)
    run.csv(f"{args.target}.csv", header, rows)
    checks = summary.get("checks", {})
    summary["passed"] = bool(all(checks.values())) if checks else None
    return summary


COMMANDS = {
    "mesh": cmd_mesh,
    "assemble": cmd_assemble,
    "snapshots": cmd_snapshots,
    "pod": cmd_pod,
    "train": cmd_train,
    "solve": cmd_solve,
    "identify": cmd_identify,
    "bench": cmd_bench,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncrb", description="Nonlinear compressive reduced basis toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output directory (default: config 'out' or ./ncrb_out)")
        p.add_argument("--seed", type=int, default=None, help="override every seed with this value")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: NCRB_THREADS or 1)")
        return p

    for name in ("mesh", "assemble", "snapshots", "pod", "train", "identify", "bench"):
        common(sub.add_parser(name))
    p = common(sub.add_parser("solve"))
    p.add_argument("method", choices=["rb", "ncrb"])
    p.add_argument("--model", default=None, help="single model file (default: every model in OUT/models)")
    p = common(sub.add_parser("reproduce"), config_required=False)
    p.add_argument("target", choices=sorted(REPRODUCERS))
    return parser


def _override_seeds(obj, seed):
    if isinstance(obj, dict):
        return {k: (seed if k in ("seed", "test_seed") and isinstance(v, int) else _override_seeds(v, seed)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_override_seeds(v, seed) for v in obj]
    return obj


def load_config(args) -> dict:
    if args.config is None:
        cfg = default_config(args.target)
    else:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
    if args.seed is not None:
        cfg = _override_seeds(copy.deepcopy(cfg), args.seed)
    return validate_config(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        out = args.out or cfg.get("out") or "ncrb_out"
        name = {"reproduce": lambda: f"reproduce_{args.target}", "solve": lambda: f"solve_{args.method}"}.get(args.command, lambda: args.command)()
        run = Run(name, cfg, out, args.threads)
        summary = COMMANDS[args.command](run, args)
        summary = run.finish(summary)
        print(json.dumps({"ok": True, "command": run.command, "out": str(run.out), "config_hash": run.hash}, sort_keys=True))
        if args.command == "reproduce" and summary.get("passed") is False:
            return 5
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
        err = {"ok": False, "command": args.command, "error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
