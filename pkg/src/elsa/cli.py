"""Batch command-line frontend.

Commands: register, interpolate, extrapolate, transfer, generate,
build-basis, distance, evaluate.  Every command reads one INI config
(``--config``), writes its artifacts plus a machine-readable run log and the
effective configuration into the output directory, and is deterministic
given config and seed (no timestamps in any output).

Exit codes: 0 success, 1 numerical failure, 2 usage or file error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .basis_builder import build_from_manifest
from .config import RunConfig, load_config, save_config
from .evaluation import evaluate_pair
from .generation import fit_gmm, generate_shape, load_gmm, save_gmm
from .latent import decode, latent_path_energy, load_basis, save_basis, substitute_shape_block
from .mesh import (
    MeshError,
    MeshParseError,
    load_mesh,
    mesh_diameter,
    save_mesh,
)
from .solvers import SolverFailure, geodesic_ivp, relaxed_geodesic, retrieve_latent
from .varifold import VarifoldConfig, varifold_sqdist


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="elsa", description="Elastic latent shape analysis on triangle meshes"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--output-dir", help="override the configured output directory")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="worker count (reductions stay deterministic)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", parents=[common], help="retrieve the latent code of a scan")
    p.add_argument("target", help="target mesh (OBJ/PLY)")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("interpolate", parents=[common], help="relaxed geodesic between two scans")
    p.add_argument("source")
    p.add_argument("target")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("extrapolate", parents=[common], help="shoot a geodesic from a code/velocity")
    p.add_argument("meshes", nargs="*", help="two meshes to register first")
    p.add_argument("--code", help="text vector: the starting latent code")
    p.add_argument("--velocity", help="text vector: the initial velocity")
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("transfer", parents=[common], help="transfer a motion to a new identity")
    p.add_argument("--target", required=True, help="mesh providing the new shape identity")
    p.add_argument("frames", nargs="+", help="motion frames in order")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("build-basis", parents=[common], help="build a basis from a training manifest")
    p.add_argument("manifest", help="text manifest: path identity pose sequence")
    p.set_defaults(func=cmd_build_basis)

    p = sub.add_parser("generate", parents=[common], help="generate random shapes")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--model", help="fitted mixture-model container")
    p.add_argument("--velocities", help="text matrix of latent velocities to fit on")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("distance", parents=[common], help="varifold distance between two meshes")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("evaluate", parents=[common], help="similarity metrics for mesh pairs")
    p.add_argument("pairs", nargs="*", help="pred truth (one pair)")
    p.add_argument("--pairs-file", help="CSV file: pred,truth per line")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _setup(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _finish(cfg, out, command, log):
    save_config(cfg, out / "effective_config.ini")
    log = {"command": command, "seed": cfg.seed, "threads": cfg.threads, **log}
    with open(out / "run_log.json", "w") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_input(path, cfg):
    """Load a mesh, optionally rescaled to unit diameter; returns (mesh, scale)."""
    mesh = load_mesh(path)
    if cfg.normalize:
        from .mesh import normalize_unit_diameter

        return normalize_unit_diameter(mesh)
    return mesh, 1.0


def _write_vector(path, vec):
    np.savetxt(path, np.asarray(vec).reshape(1, -1), fmt="%.17g")


def _read_vector(path):
    return np.loadtxt(path).ravel()


def _report_payload(report):
    return {
        "value": report.value,
        "grad_norm": report.grad_norm,
        "iterations": list(report.iterations),
        "reason": report.reason,
        "details": {k: float(v) for k, v in report.details.items()},
    }


def cmd_register(args):
    cfg, out = _setup(args)
    basis = load_basis(cfg.require_basis())
    target, scale = _load_input(args.target, cfg)
    path, report = retrieve_latent(
        basis, target, cfg.coefficients, cfg.schedule, cfg.time_steps, cfg.optimizer
    )
    _write_vector(out / "code.txt", path[-1])
    np.savetxt(out / "path_codes.txt", path, fmt="%.17g")
    save_mesh(decode(basis, path[-1]), out / "reconstruction.obj")
    print(f"final varifold sq-distance: {report.details['varifold_sqdist']:.6e}")
    _finish(cfg, out, "register", {
        "target": str(args.target),
        "input_scale": scale,
        "report": _report_payload(report),
    })
    return 0


def cmd_interpolate(args):
    cfg, out = _setup(args)
    basis = load_basis(cfg.require_basis())
    source, s0 = _load_input(args.source, cfg)
    target, s1 = _load_input(args.target, cfg)
    path, report = relaxed_geodesic(
        basis, source, target, cfg.time_steps, cfg.coefficients, cfg.schedule, cfg.optimizer
    )
    for t, code in enumerate(path):
        save_mesh(decode(basis, code), out / f"interp_{t:03d}.obj")
    np.savetxt(out / "path_codes.txt", path, fmt="%.17g")
    T = len(path) - 1
    with open(out / "interpolation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "energy"])
        for t in range(T):
            seg = np.vstack([path[t], path[t + 1]])
            writer.writerow([t, repr(latent_path_energy(basis, seg, cfg.coefficients) / T)])
        writer.writerow(["total", repr(report.details["path_energy"])])
        writer.writerow(["gamma0", repr(report.details["gamma0"])])
        writer.writerow(["gamma1", repr(report.details["gamma1"])])
    _finish(cfg, out, "interpolate", {
        "source": str(args.source),
        "target": str(args.target),
        "input_scales": [s0, s1],
        "report": _report_payload(report),
    })
    return 0


def cmd_extrapolate(args):
    cfg, out = _setup(args)
    basis = load_basis(cfg.require_basis())
    log = {}
    if args.code and args.velocity:
        alpha0 = _read_vector(args.code)
        beta = _read_vector(args.velocity)
        log["code"] = str(args.code)
        log["velocity"] = str(args.velocity)
    elif len(args.meshes) == 2:
        codes = []
        for path in args.meshes:
            mesh, _ = _load_input(path, cfg)
            p, rep = retrieve_latent(
                basis, mesh, cfg.coefficients, cfg.schedule, cfg.time_steps, cfg.optimizer
            )
            codes.append(p[-1])
        alpha0, beta = codes[0], codes[1] - codes[0]
        log["meshes"] = [str(m) for m in args.meshes]
    else:
        raise ValueError("extrapolate needs either --code and --velocity or two meshes")
    try:
        path = geodesic_ivp(basis, alpha0, beta, cfg.ivp_steps, cfg.coefficients, cfg.optimizer)
    except SolverFailure as exc:
        print(f"extrapolation failed: {exc}", file=sys.stderr)
        return 1
    for k, code in enumerate(path):
        save_mesh(decode(basis, code), out / f"extrap_{k:03d}.obj")
    np.savetxt(out / "path_codes.txt", path, fmt="%.17g")
    _finish(cfg, out, "extrapolate", {**log, "steps": cfg.ivp_steps})
    return 0


def cmd_transfer(args):
    cfg, out = _setup(args)
    basis = load_basis(cfg.require_basis())
    target, _ = _load_input(args.target, cfg)
    target_path, _ = retrieve_latent(
        basis, target, cfg.coefficients, cfg.schedule, cfg.time_steps, cfg.optimizer
    )
    target_code = target_path[-1]
    frame_codes = []
    failures = []
    for idx, frame in enumerate(args.frames):
        try:
            mesh, _ = _load_input(frame, cfg)
            p, _rep = retrieve_latent(
                basis, mesh, cfg.coefficients, cfg.schedule, cfg.time_steps, cfg.optimizer
            )
            frame_codes.append(p[-1])
        except (MeshError, SolverFailure, FileNotFoundError) as exc:
            print(f"frame {idx} ({frame}) failed: {exc}", file=sys.stderr)
            failures.append(idx)
            frame_codes.append(None)
    good = [c for c in frame_codes if c is not None]
    if good:
        codes = np.stack(good)
        transferred = substitute_shape_block(codes, target_code, basis.n_shape)
        np.savetxt(out / "frame_codes.txt", codes, fmt="%.17g")
        np.savetxt(out / "transferred_codes.txt", transferred, fmt="%.17g")
        _write_vector(out / "target_code.txt", target_code)
        for k, code in enumerate(transferred):
            save_mesh(decode(basis, code), out / f"transfer_{k:03d}.obj")
    _finish(cfg, out, "transfer", {
        "target": str(args.target),
        "frames": [str(f) for f in args.frames],
        "failed_frames": failures,
    })
    return 1 if failures else 0


def cmd_build_basis(args):
    cfg, out = _setup(args)
    scale = None
    if cfg.normalize:
        from .basis_builder import read_manifest

        records = read_manifest(args.manifest)
        scale = mesh_diameter(load_mesh(records[0].path))
    basis = build_from_manifest(
        args.manifest,
        cfg.n_shape,
        cfg.n_pose,
        cfg.coefficients,
        time_steps=cfg.time_steps,
        config=cfg.optimizer,
        scale=scale,
    )
    basis_path = out / "basis.lsb"
    save_basis(basis, basis_path)
    cfg.basis_path = str(basis_path)
    _finish(cfg, out, "build-basis", {
        "manifest": str(args.manifest),
        "template_scale": scale if scale is not None else 1.0,
        "dim": basis.dim,
        "n_shape": basis.n_shape,
        "n_pose": basis.n_pose,
        "basis": str(basis_path),
    })
    return 0


def cmd_generate(args):
    cfg, out = _setup(args)
    basis = load_basis(cfg.require_basis())
    if args.model:
        shape_gmm, pose_gmm = load_gmm(args.model)
        model_path = str(args.model)
    elif args.velocities:
        velocities = np.atleast_2d(np.loadtxt(args.velocities))
        if velocities.shape[1] != basis.dim:
            raise ValueError(
                f"velocity rows have {velocities.shape[1]} entries, basis has {basis.dim}"
            )
        shape_gmm = fit_gmm(
            velocities[:, : basis.n_shape], cfg.shape_components, cfg.seed, cfg.em_iterations
        )
        pose_gmm = fit_gmm(
            velocities[:, basis.n_shape :], cfg.pose_components, cfg.seed + 1, cfg.em_iterations
        )
        model_path = str(out / "model.gmm")
        save_gmm(model_path, shape_gmm, pose_gmm)
    else:
        raise ValueError("generate needs --model or --velocities")
    seeds = [cfg.seed + i for i in range(args.count)]
    for i, seed in enumerate(seeds):
        mesh = generate_shape(
            basis, shape_gmm, pose_gmm, cfg.ivp_steps, cfg.coefficients, cfg.optimizer, seed
        )
        save_mesh(mesh, out / f"gen_{i:03d}.obj")
    _finish(cfg, out, "generate", {
        "count": args.count,
        "seeds": seeds,
        "model": model_path,
    })
    return 0


def cmd_distance(args):
    cfg, out = _setup(args)
    a, _ = _load_input(args.a, cfg)
    b, _ = _load_input(args.b, cfg)
    value = float(np.sqrt(varifold_sqdist(a, b, VarifoldConfig(cfg.sigma))))
    print(repr(value))
    _finish(cfg, out, "distance", {"a": str(args.a), "b": str(args.b), "distance": value})
    return 0


def cmd_evaluate(args):
    cfg, out = _setup(args)
    pairs = []
    if args.pairs_file:
        with open(args.pairs_file, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#"):
                    continue
                if len(row) != 2:
                    raise ValueError(f"{args.pairs_file}: expected 2 columns, got {len(row)}")
                pairs.append((row[0].strip(), row[1].strip()))
    if args.pairs:
        if len(args.pairs) != 2:
            raise ValueError("evaluate takes exactly two positional meshes")
        pairs.append((args.pairs[0], args.pairs[1]))
    if not pairs:
        raise ValueError("evaluate needs --pairs-file or two meshes")
    columns = ["pred", "truth", "hausdorff", "chamfer", "varifold", "mse", "geodesic_error"]
    rows = []
    for pred_path, truth_path in pairs:
        report = evaluate_pair(
            load_mesh(pred_path),
            load_mesh(truth_path),
            VarifoldConfig(cfg.sigma),
            provenance=(pred_path, truth_path),
        )
        row = {"pred": pred_path, "truth": truth_path}
        row.update({k: repr(v) for k, v in report.values.items()})
        rows.append(row)
    with open(out / "evaluation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    _finish(cfg, out, "evaluate", {"pairs": [list(p) for p in pairs]})
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MeshParseError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverFailure, MeshError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
