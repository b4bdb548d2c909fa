"""Command-line entry point: ``hbrom simulate|reduce|train|predict|report``.

Exit codes: 0 success, 2 usage or bad input, 3 solver instability,
4 training divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import fom, formats, pipeline, rom
from .exceptions import (
    BudgetError,
    ConvergenceError,
    DivergenceError,
    FormatError,
    InstabilityError,
    StepSizeError,
)

EXIT_OK, EXIT_USAGE, EXIT_INSTABILITY, EXIT_DIVERGENCE = 0, 2, 3, 4

TASK_ALIASES = {
    "kpp": "kpp_seq",
    "euler": "euler_param_seq",
    "vks-full": "vks_full_seq",
    "vks-steady": "vks_steady_vae",
}
DEFAULT_DATA = {
    "kpp_seq": "kpp.pod.json",
    "euler_param_seq": "euler_pod",
    "vks_full_seq": "vks.pod.json",
    "vks_steady_vae": "vks.pod.json",
}


class UsageError(Exception):
    pass


def _task(name):
    task = TASK_ALIASES.get(name, name)
    if task not in pipeline.TASKS:
        raise UsageError(f"unknown task {name!r}; choose from {sorted(TASK_ALIASES)}")
    return task


def _emit(args, text, payload):
    if getattr(args, "json", False):
        print(json.dumps(payload, indent=1))
    else:
        print(text)


# ---------------------------------------------------------------- simulate


def cmd_simulate(args):
    out = Path(args.out)
    if args.system == "kpp":
        cfg = fom.KppConfig.desk() if args.profile == "desk" else fom.KppConfig.paper()
        snap = fom.kpp_simulate(cfg)
        formats.write_snapshots(out, snap)
        print(f"kpp: nt={snap.n_t} ndof={snap.n_dof} -> {out}")
    elif args.system == "euler":
        cfg = fom.EulerConfig.desk() if args.profile == "desk" else fom.EulerConfig.paper()
        if args.ensemble:
            grid = fom.euler_desk_grid() if args.profile == "desk" else fom.euler_paper_grid()
            members = fom.euler_ensemble(grid, cfg, jobs=args.jobs)
            out.mkdir(parents=True, exist_ok=True)
            for i, snap in enumerate(members):
                formats.write_snapshots(out / f"member_{i:03d}.snap", snap)
            print(f"euler ensemble: {len(members)} members, nt={members[0].n_t} ndof={members[0].n_dof} -> {out}/")
        else:
            if args.eta_u is None or args.eta_rho is None:
                raise UsageError("simulate euler needs --eta-u and --eta-rho (or --ensemble)")
            snap = fom.euler_simulate(fom.EulerParams(args.eta_u, args.eta_rho), cfg)
            formats.write_snapshots(out, snap)
            print(f"euler: nt={snap.n_t} ndof={snap.n_dof} -> {out}")
    else:
        snap = fom.synthetic_vks(n_dof=args.n_dof, n_t=args.n_t, transient_len=args.transient)
        formats.write_snapshots(out, snap)
        print(f"synthetic-vks: nt={snap.n_t} ndof={snap.n_dof} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- reduce


def _info_table(eigenvalues, n_t):
    rows = []
    for r in range(1, min(32, n_t) + 1):
        rows.append((r, rom.relative_info(eigenvalues, min(r, len(eigenvalues)))))
    return rows


def _reduce_one(args, src: Path, dst: Path):
    snap = formats.read_snapshots(src)
    fluct, mean = rom.center_snapshots(snap.data)
    meta = {"source": snap.source, "file": src.name}
    if snap.params is not None:
        meta["params"] = {"eta_u": snap.params.eta_u, "eta_rho": snap.params.eta_rho}
    if args.method == "pod":
        basis = rom.pod_fit(fluct, args.rank, mean=mean)
        table = _info_table(basis.eigenvalues, snap.n_t)
        formats.write_json(dst, formats.pod_to_doc(basis, snap.times, meta))
        extra = {}
    else:
        spec = rom.LiftSpec.parse(args.lift) if args.lift else rom.LiftSpec()
        model = rom.dmd_fit(fluct, args.rank, spec=spec, mean=mean)
        table = _info_table(model.singular_values**2, snap.n_t)
        formats.write_json(dst, formats.dmd_to_doc(model, meta))
        extra = {"eigenvalue_moduli": [float(x) for x in np.abs(model.eigenvalues)]}
    return table, extra


def cmd_reduce(args):
    src, dst = Path(args.input), Path(args.out)
    if not src.exists():
        raise FileNotFoundError(f"input {src} does not exist")
    if src.is_dir():
        files = sorted(src.glob("*.snap"))
        if not files:
            raise FileNotFoundError(f"no .snap files in {src}")
        dst.mkdir(parents=True, exist_ok=True)
        results = [_reduce_one(args, f, dst / f"{f.stem}.{args.method}.json") for f in files]
        infos = np.array([[v for _, v in t] for t, _ in results])
        table = list(zip(range(1, infos.shape[1] + 1), infos.mean(axis=0)))
        extra = {"members": len(files)}
        header = f"   r   mean I(r) over {len(files)} members"
    else:
        table, extra = _reduce_one(args, src, dst)
        header = "   r   I(r)"
    lines = [header] + [f"{r:4d}   {v:.6f}" for r, v in table]
    if "eigenvalue_moduli" in extra:
        lines.append("eigenvalue moduli: " + " ".join(f"{m:.6f}" for m in extra["eigenvalue_moduli"]))
    payload = {"method": args.method, "rank": args.rank, "info": [{"r": r, "I": float(v)} for r, v in table]}
    payload.update(extra)
    _emit(args, "\n".join(lines), payload)
    return EXIT_OK


# ---------------------------------------------------------------- train


def _load_reduction(path: Path, task):
    if not path.exists():
        raise UsageError(f"reduction artifact not found: expected {path}")
    if task == "euler_param_seq":
        if not path.is_dir():
            raise UsageError(f"euler task needs a directory of pod artifacts at {path}")
        files = sorted(path.glob("*.pod.json"))
        if not files:
            raise UsageError(f"reduction artifact not found: no *.pod.json in {path}")
        loaded = [formats.pod_from_doc(formats.read_json(f)) for f in files]
        return [b for b, _, _ in loaded], loaded[0][1]
    basis, times, _ = formats.pod_from_doc(formats.read_json(path))
    return basis, times


def _build_config(args, task):
    overrides = {}
    if args.config:
        overrides.update(json.loads(Path(args.config).read_text()))
        overrides.pop("task", None)
    for key in ("model", "seed", "epochs", "lr", "rtol", "atol", "r"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    profile = overrides.pop("profile", None) or args.profile
    return pipeline.TrainConfig.preset(task, profile, **overrides)


def cmd_train(args):
    task = _task(args.task)
    cfg = _build_config(args, task)
    data_path = Path(args.data or DEFAULT_DATA[task])
    reduction, times = _load_reduction(data_path, task)
    if task == "euler_param_seq":
        coeffs = [b.coeffs for b in reduction]
    else:
        coeffs = reduction.coeffs
    if (coeffs[0] if isinstance(coeffs, list) else coeffs).shape[1] < cfg.r:
        raise UsageError(f"reduction holds fewer than r={cfg.r} modes")
    prepared = pipeline.prepare_task(task, coeffs, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if task == "vks_steady_vae":
            run = pipeline.train_vae_onestep(coeffs, cfg)
        else:
            run = pipeline.train_seq2seq(prepared.data, cfg)
    except DivergenceError as exc:
        partial = getattr(exc, "run", None)
        formats.write_metrics(out / "metrics.csv", partial.records if partial else [])
        raise
    seed_window, t_index = prepared.seed_window(cfg.seq_in)
    times = np.asarray(times if times is not None else np.arange(t_index + 1), dtype=float)
    dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
    t_start = float(times[t_index]) if t_index < len(times) else float(times[-1] + dt * (t_index - len(times) + 1))
    basis = reduction[int(prepared.data.val_idx[0])] if isinstance(reduction, list) else reduction
    ckpt = formats.Checkpoint.from_model(run.model, cfg, prepared.scaler, seed_window, t_start, dt, basis)
    ckpt.save(out / "checkpoint.json")
    formats.write_metrics(out / "metrics.csv", run.records)
    summary = {
        "task": task,
        "model": cfg.model,
        "seed": cfg.seed,
        "epochs": len(run.records),
        "seconds": time.perf_counter() - t0,
        "h_norm_max": [float(x) for x in run.column("h_norm_max")],
        "final": {k: float(v) for k, v in vars(run.records[-1]).items()},
    }
    formats.write_json(out / "run.json", summary)
    last = run.records[-1]
    print(f"{task} {cfg.model} seed={cfg.seed}: {len(run.records)} epochs, "
          f"train_mse={last.train_mse:.4e} val_mse={last.val_mse:.4e} -> {out}/")
    return EXIT_OK


# ---------------------------------------------------------------- predict


def cmd_predict(args):
    ckpt = formats.Checkpoint.load(args.checkpoint)
    if args.task and _task(args.task) != ckpt.task:
        raise UsageError(f"checkpoint was trained for {ckpt.task}, not {_task(args.task)}")
    if args.horizon < 0:
        raise UsageError("--horizon must be non-negative")
    model = ckpt.build_model()
    z = pipeline.rollout(model, ckpt.normalize(ckpt.seed_window), args.horizon)
    coeffs = ckpt.denormalize(z) if args.horizon else np.zeros((0, ckpt.config.r))
    t = ckpt.t_start + ckpt.dt * np.arange(args.horizon)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"alpha_{i + 1}" for i in range(ckpt.config.r)])
        for ti, row in zip(t, coeffs):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])
    if args.reconstruct:
        if ckpt.pod_basis is None:
            raise UsageError("checkpoint has no embedded POD basis to reconstruct with")
        modes, mean = ckpt.pod_basis["modes"], ckpt.pod_basis["mean"]
        if modes.shape[1] < coeffs.shape[1]:
            raise UsageError("embedded basis has fewer modes than the model predicts")
        fields = mean + coeffs @ modes[:, : coeffs.shape[1]].T
        with open(args.reconstruct, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j}" for j in range(modes.shape[0])])
            for row in fields:
                w.writerow([repr(float(v)) for v in row])
    print(f"predicted {args.horizon} steps -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- report


def _median(xs):
    return float(np.median(xs)) if len(xs) else None


def cmd_report(args):
    groups = {}
    for d in args.runs:
        d = Path(d)
        meta_path, metrics_path = d / "run.json", d / "metrics.csv"
        if not metrics_path.exists():
            raise FileNotFoundError(f"{metrics_path} not found")
        meta = formats.read_json(meta_path) if meta_path.exists() else {"task": "unknown", "model": d.name}
        records = formats.read_metrics(metrics_path)
        if not records:
            continue
        groups.setdefault((meta["task"], meta["model"]), []).append(records)
    summary = {"groups": []}
    by_model = {}
    for (task, model), runs in sorted(groups.items()):
        g = {
            "task": task,
            "model": model,
            "runs": len(runs),
            "median_final_val_mse": _median([r[-1].val_mse for r in runs]),
            "median_final_train_mse": _median([r[-1].train_mse for r in runs]),
            "median_fwd_nfe_per_epoch": _median([np.median([e.fwd_nfe for e in r]) for r in runs]),
            "median_total_fwd_nfe": _median([sum(e.fwd_nfe for e in r) for r in runs]),
            "median_total_bwd_nfe": _median([sum(e.bwd_nfe for e in r) for r in runs]),
            "median_final_adj_norm_t0": _median([r[-1].adj_norm_t0 for r in runs]),
            "median_final_adj_norm_tT": _median([r[-1].adj_norm_tT for r in runs]),
        }
        summary["groups"].append(g)
        by_model.setdefault(model, []).append(g)
    node, hb = by_model.get("node"), by_model.get("hbnode")
    if node and hb:
        summary["hbnode_val_mse_lower"] = bool(hb[0]["median_final_val_mse"] < node[0]["median_final_val_mse"])
        summary["hbnode_fwd_nfe_not_higher"] = bool(hb[0]["median_fwd_nfe_per_epoch"] <= node[0]["median_fwd_nfe_per_epoch"])
        ratio = lambda g: g["median_final_adj_norm_t0"] / g["median_final_adj_norm_tT"]
        summary["adjoint_norm_ratio_t0_over_tT"] = {"node": ratio(node[0]), "hbnode": ratio(hb[0])}
    text = json.dumps(summary, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="hbrom", description="POD/DMD reduced models and latent ODE training")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a full-order model and write a snapshot file")
    sim.add_argument("system", choices=["kpp", "euler", "synthetic-vks"])
    sim.add_argument("--profile", choices=["desk", "paper"], default="desk")
    sim.add_argument("--eta-u", type=float)
    sim.add_argument("--eta-rho", type=float)
    sim.add_argument("--ensemble", action="store_true", help="euler: simulate the whole parameter grid")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--n-dof", type=int, default=256)
    sim.add_argument("--n-t", type=int, default=400)
    sim.add_argument("--transient", type=int, default=100, help="synthetic-vks: samples before the steady phase")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    red = sub.add_parser("reduce", help="POD or DMD of a snapshot file (or directory of them)")
    red.add_argument("method", choices=["pod", "dmd"])
    red.add_argument("input")
    red.add_argument("--rank", type=int, default=8)
    red.add_argument("--lift", default=None, help="comma list, e.g. cos,sin,sq,cube")
    red.add_argument("--out", required=True)
    red.add_argument("--json", action="store_true")
    red.add_argument("--seed", type=int, default=0)
    red.set_defaults(func=cmd_reduce)

    tr = sub.add_parser("train", help="train a latent ODE on POD coefficients")
    tr.add_argument("--task", required=True)
    tr.add_argument("--model", choices=["node", "hbnode", "ghbnode"])
    tr.add_argument("--config", help="JSON file with TrainConfig overrides")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--profile", choices=["desk", "paper"], default="desk")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--rtol", type=float)
    tr.add_argument("--atol", type=float)
    tr.add_argument("--r", type=int)
    tr.add_argument("--data", help="reduction artifact (directory for the euler task)")
    tr.add_argument("--out", default="run")
    tr.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="roll a checkpoint forward")
    pr.add_argument("checkpoint")
    pr.add_argument("--horizon", type=int, required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--reconstruct", help="also write reconstructed fields to this CSV")
    pr.add_argument("--task")
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=cmd_predict)

    rp = sub.add_parser("report", help="compare training runs")
    rp.add_argument("runs", nargs="+")
    rp.add_argument("--out")
    rp.add_argument("--json", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (InstabilityError, StepSizeError, BudgetError, ConvergenceError) as exc:
        print(f"error: solver instability: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    except (UsageError, FormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
