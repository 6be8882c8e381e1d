"""End-to-end pipeline driver.

Subcommands: `simulate` (datasets), `train` (lifting model), `build-stack`
(offline Hankel stack), `estimate` (online run + metrics), `compare`
(proposed vs linear baseline, with overlay plots). One JSON config file
drives everything; `--set key.path=value` applies overrides. Every artifact
embeds the SHA-256 of the canonical config plus scoped lineage hashes, and
`estimate` refuses artifacts whose lineage does not match the active config.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Errors are
also emitted as a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, KoopmheError, MissingArtifact
from .lifting import LiftingModel, TrainConfig, train
from .mhe import (
    MheConfig,
    HankelStack,
    build_hankel_stack,
    make_baseline,
    run_estimation,
    write_estimates_csv,
)
from .plants import builtin_plants, default_noise_std, generate_dataset, plants_manifest
from .surrogate import ExactLpvSurrogate, make_exact_benchmark
from .trajectory import Trajectory, from_csv, read_csv_comments, to_csv

DEFAULT_CONFIG = {
    "plant": {"name": "poly2", "params": {}},
    "data": {
        "train_len": 2000,
        "val_len": 400,
        "offline_len": 200,
        "online_len": 200,
        "hold": 40,
        "input_noise_scale": 0.01,     # x u_max, additive Gaussian on inputs
        "state_noise_scale": 1e-4,     # x |x0| per channel, offline states
        "output_noise_scale": 1e-4,    # x |y0| per channel, offline + online
        "x0_guess_scale": 1.05,
    },
    "lifting": {
        "exact_oracle": False,         # use the closed-form benchmark lifting
        "n_z": 3,
        "n_p": 1,
        "psi_hidden": [32, 64],
        "lam_hidden": [32, 64, 64],
        "epochs": 400,
        "windows_per_batch": 64,
        "batches_per_epoch": 8,
        "lr": 1e-4,
        "lr_final": None,
        "mu": 1e-8,
        "normalize": True,
        "l1_weight": 1.0,
        "l2_weight": 1.0,
        "offline_slice": 200,
        "val_windows": 128,
        "patience": None,
        "keep_best": True,
    },
    "mhe": {
        "N": 4,
        "P": 1.0,
        "Q": 1.0,
        "R": 1.0,
        "lambda_z": 1.0,
        "lambda_alpha": 1.0,
        "eps_x_bar": None,             # null => 3x the injected state-noise std
        "eps_y_bar": None,             # null => 3x the injected output-noise std
        "delta_z_bar": 0.003,
        "delta_y_bar": 0.003,
        "x_box": None,                 # [[lo...], [hi...]] in physical units
        "tol_primal": 1e-8,
        "tol_dual": 1e-8,
        "max_iter": 20000,
    },
    "seeds": {"master": 1, "fit": None},   # fit: explicit training seed
    "out_dir": "runs/poly2",
}

ARTIFACTS = {
    "manifest": "plants_manifest.json",
    "train": "dataset_train.csv",
    "val": "dataset_val.csv",
    "offline": "dataset_offline.csv",
    "online": "dataset_online.csv",
    "online_truth": "dataset_online_truth.csv",
    "model": "model.json",
    "history": "history.csv",
    "stack": "stack.json",
    "estimates": "estimates.csv",
    "metrics": "metrics.json",
    "report": "compare_report.json",
    "report_md": "compare_report.md",
}


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def config_hash(cfg: dict) -> str:
    keyed = {k: v for k, v in cfg.items() if k != "out_dir"}
    return sha256_hex(canonical_json(keyed))


def data_hash(cfg: dict) -> str:
    return sha256_hex(canonical_json(
        {"plant": cfg["plant"], "data": cfg["data"], "seeds": cfg["seeds"]}))


def model_hash(cfg: dict) -> str:
    return sha256_hex(canonical_json(
        {"data": data_hash(cfg), "lifting": cfg["lifting"]}))


def stack_hash(cfg: dict) -> str:
    return sha256_hex(canonical_json(
        {"model": model_hash(cfg), "N": cfg["mhe"]["N"]}))


def _deep_merge(base: dict, patch: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in patch.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigInvalid(f"--set needs key.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    keys = path.strip().split(".")
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigInvalid(f"unknown config section {key!r} in {path!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigInvalid(f"unknown config key {path!r}")
    node[keys[-1]] = value


def load_config(path: str | None, sets, seed=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigInvalid(f"config file {path} does not exist")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigInvalid(f"unknown config sections: {sorted(unknown)}")
        cfg = _deep_merge(cfg, user)
    for assignment in sets or []:
        apply_set(cfg, assignment)
    if seed is not None:
        cfg["seeds"]["master"] = int(seed)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    name = cfg["plant"]["name"]
    if name not in builtin_plants():
        raise ConfigInvalid(f"unknown plant {name!r}")
    N = cfg["mhe"]["N"]
    for key in ("train_len", "val_len", "offline_len", "online_len"):
        if cfg["data"][key] < N + 1:
            raise ConfigInvalid(f"data.{key} must be at least N+1 = {N + 1}")
    if cfg["seeds"].get("master") is None:
        raise ConfigInvalid("seeds.master is required (no implicit randomness)")
    if cfg["lifting"]["exact_oracle"] and name != "poly2":
        raise ConfigInvalid("the exact oracle lifting exists only for poly2")


def derived_seeds(cfg: dict) -> dict:
    m = int(cfg["seeds"]["master"])
    fit = cfg["seeds"].get("fit")
    return {"train": m * 1000 + 11, "val": m * 1000 + 12,
            "offline": m * 1000 + 13, "online": m * 1000 + 14,
            "fit": m * 1000 + 21 if fit is None else int(fit)}


def _plant(cfg: dict):
    name = cfg["plant"]["name"]
    params = cfg["plant"].get("params") or {}
    factories = {"poly2": "make_poly2", "cstr2": "make_cstr2",
                 "bioreactor3": "make_bioreactor3"}
    from . import plants as plants_mod
    return getattr(plants_mod, factories[name])(**params)


def _noise_stds(cfg: dict, plant):
    sx, sy = default_noise_std(plant, scale=1.0)
    return (cfg["data"]["state_noise_scale"] * sx,
            cfg["data"]["output_noise_scale"] * sy)


def _mhe_config(cfg: dict, plant) -> MheConfig:
    m = cfg["mhe"]
    sx, sy = _noise_stds(cfg, plant)
    eps_x = m["eps_x_bar"] if m["eps_x_bar"] is not None else 3.0 * float(np.max(sx))
    eps_y = m["eps_y_bar"] if m["eps_y_bar"] is not None else 3.0 * float(np.max(sy))
    box = None
    if m["x_box"] is not None:
        box = (np.asarray(m["x_box"][0], dtype=float),
               np.asarray(m["x_box"][1], dtype=float))
    return MheConfig(N=m["N"], P=m["P"], Q=m["Q"], R=m["R"],
                     lambda_z=m["lambda_z"], lambda_alpha=m["lambda_alpha"],
                     eps_x_bar=eps_x, eps_y_bar=eps_y,
                     delta_z_bar=m["delta_z_bar"], delta_y_bar=m["delta_y_bar"],
                     x_box=box, tol_primal=m["tol_primal"],
                     tol_dual=m["tol_dual"], max_iter=m["max_iter"])


# ---------------------------------------------------------------------------
# artifact io
# ---------------------------------------------------------------------------

def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} not found at {path}; run the producing "
                              "command first")
    return path


def _check_lineage(found: str | None, expected: str, artifact: str) -> None:
    if found != expected:
        raise ConfigInvalid(
            f"{artifact} was produced under a different configuration "
            f"(lineage {found} != expected {expected}); regenerate it")


def _load_traj(path: Path, expected_hash: str, what: str) -> Trajectory:
    _require(path, what)
    comments = read_csv_comments(path)
    _check_lineage(comments.get("data_hash"), expected_hash, what)
    return from_csv(path)


def load_model_artifact(path: Path, cfg: dict):
    _require(path, "model artifact")
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    _check_lineage(doc.get("model_hash"), model_hash(cfg), "model artifact")
    if doc.get("kind") == "exact_oracle":
        surr, _ = make_exact_benchmark(**doc["params"])
        return surr
    return LiftingModel.from_dict(doc)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> dict:
    plant = _plant(cfg)
    seeds = derived_seeds(cfg)
    sx, sy = _noise_stds(cfg, plant)
    d = cfg["data"]
    hold = d["hold"]
    noise_kw = dict(hold=hold, input_noise_scale=d["input_noise_scale"],
                    state_noise_std=sx, output_noise_std=sy)
    comments = {"config_hash": config_hash(cfg), "data_hash": data_hash(cfg)}
    results = {}
    for split in ("train", "val", "offline", "online"):
        res = generate_dataset(plant, length=d[f"{split}_len"],
                               seed=seeds[split], **noise_kw)
        results[split] = res
        if split == "online":
            # online information set: inputs and noisy outputs only
            measured = Trajectory(dt=res.noisy.dt, u=res.noisy.u, y=res.noisy.y)
            to_csv(measured, out / ARTIFACTS["online"], comments=comments)
            to_csv(res.clean, out / ARTIFACTS["online_truth"], comments=comments)
        else:
            to_csv(res.noisy, out / ARTIFACTS[split], comments=comments)
    manifest = plants_manifest()
    manifest["config_hash"] = config_hash(cfg)
    with open(out / ARTIFACTS["manifest"], "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return {"written": [ARTIFACTS[k] for k in
                        ("train", "val", "offline", "online", "online_truth",
                         "manifest")],
            "clamped_inputs": {k: r.clamp_count for k, r in results.items()}}


def cmd_train(cfg: dict, out: Path) -> dict:
    plant = _plant(cfg)
    lineage = {"config_hash": config_hash(cfg), "data_hash": data_hash(cfg),
               "model_hash": model_hash(cfg)}
    if cfg["lifting"]["exact_oracle"]:
        surr, _ = make_exact_benchmark(**(cfg["plant"].get("params") or {}))
        doc = surr.to_dict()
        doc["kind"] = "exact_oracle"
        doc.update(lineage)
        with open(out / ARTIFACTS["model"], "w", encoding="ascii") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
        # no optimization ran: emit an empty history with the lineage header
        with open(out / ARTIFACTS["history"], "w", encoding="ascii") as fh:
            fh.write(f"# config_hash={lineage['config_hash']}\n")
            fh.write("epoch,L1,L2,val_L1,val_L2\n")
        return {"written": [ARTIFACTS["model"], ARTIFACTS["history"]],
                "val_loss": 0.0}
    dh = data_hash(cfg)
    train_traj = _load_traj(out / ARTIFACTS["train"], dh, "training dataset")
    val_traj = _load_traj(out / ARTIFACTS["val"], dh, "validation dataset")
    lf = cfg["lifting"]
    tc = TrainConfig(
        n_x=plant.n_x, n_u=plant.n_u, n_z=lf["n_z"], n_p=lf["n_p"],
        psi_hidden=tuple(lf["psi_hidden"]), lam_hidden=tuple(lf["lam_hidden"]),
        horizon=cfg["mhe"]["N"], epochs=lf["epochs"],
        windows_per_batch=lf["windows_per_batch"],
        batches_per_epoch=lf["batches_per_epoch"], lr=lf["lr"],
        lr_final=lf["lr_final"], mu=lf["mu"],
        seed=derived_seeds(cfg)["fit"], normalize=lf["normalize"],
        l1_weight=lf["l1_weight"], l2_weight=lf["l2_weight"],
        offline_slice=lf["offline_slice"], val_windows=lf["val_windows"],
        patience=lf["patience"], keep_best=lf["keep_best"])
    model, history = train(tc, [train_traj], [val_traj])
    model.save_json(out / ARTIFACTS["model"], extra=lineage)
    history.to_csv(out / ARTIFACTS["history"],
                   comments={"config_hash": lineage["config_hash"]})
    return {"written": [ARTIFACTS["model"], ARTIFACTS["history"]],
            "val_loss": history.final_val_total}


def cmd_build_stack(cfg: dict, out: Path) -> dict:
    offline = _load_traj(out / ARTIFACTS["offline"], data_hash(cfg),
                         "offline dataset")
    model = load_model_artifact(out / ARTIFACTS["model"], cfg)
    stack = build_hankel_stack(offline, model, N=cfg["mhe"]["N"])
    doc = stack.to_dict()
    doc["config_hash"] = config_hash(cfg)
    doc["model_hash"] = model_hash(cfg)
    doc["stack_hash"] = stack_hash(cfg)
    with open(out / ARTIFACTS["stack"], "w", encoding="ascii") as fh:
        json.dump(doc, fh, sort_keys=True)
    return {"written": [ARTIFACTS["stack"]],
            "columns": stack.Hu.shape[1] if stack.Hu.size else stack.T + 1}


def _load_stack(out: Path, cfg: dict) -> HankelStack:
    path = _require(out / ARTIFACTS["stack"], "stack artifact")
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    _check_lineage(doc.get("stack_hash"), stack_hash(cfg), "stack artifact")
    return HankelStack.from_dict(doc)


def _run_online(cfg: dict, out: Path, model, stack):
    plant = _plant(cfg)
    online = _load_traj(out / ARTIFACTS["online"], data_hash(cfg),
                        "online dataset")
    truth_path = out / ARTIFACTS["online_truth"]
    x_true = None
    if truth_path.exists():
        truth = _load_traj(truth_path, data_hash(cfg), "online truth dataset")
        x_true = truth.x
    mhe_cfg = _mhe_config(cfg, plant)
    x0_guess = cfg["data"]["x0_guess_scale"] * plant.x0
    records, metrics = run_estimation(model, stack, mhe_cfg, online.u,
                                      online.y, x0_guess=x0_guess,
                                      x_true=x_true)
    return records, metrics, online, x_true


def cmd_estimate(cfg: dict, out: Path) -> dict:
    model = load_model_artifact(out / ARTIFACTS["model"], cfg)
    stack = _load_stack(out, cfg)
    records, metrics, online, _ = _run_online(cfg, out, model, stack)
    write_estimates_csv(records, dt=online.dt, path_or_buf=out / ARTIFACTS["estimates"],
                        comments={"config_hash": config_hash(cfg)})
    doc = metrics.to_dict()
    doc["config_hash"] = config_hash(cfg)
    with open(out / ARTIFACTS["metrics"], "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return {"written": [ARTIFACTS["estimates"], ARTIFACTS["metrics"]],
            "rmse_aggregate": metrics.rmse_aggregate,
            "failures": metrics.failure_count}


def cmd_compare(cfg: dict, out: Path) -> dict:
    model = load_model_artifact(out / ARTIFACTS["model"], cfg)
    stack = _load_stack(out, cfg)
    rec_p, met_p, online, x_true = _run_online(cfg, out, model, stack)
    offline = _load_traj(out / ARTIFACTS["offline"], data_hash(cfg),
                         "offline dataset")
    ident, base_stack = make_baseline(offline, N=cfg["mhe"]["N"])
    plant = _plant(cfg)
    base_cfg = _mhe_config(cfg, plant)
    base_cfg.baseline_mode = True
    x0_guess = cfg["data"]["x0_guess_scale"] * plant.x0
    rec_b, met_b = run_estimation(ident, base_stack, base_cfg, online.u,
                                  online.y, x0_guess=x0_guess, x_true=x_true)
    ch = config_hash(cfg)
    write_estimates_csv(rec_p, dt=online.dt,
                        path_or_buf=out / "estimates_proposed.csv",
                        comments={"config_hash": ch})
    write_estimates_csv(rec_b, dt=online.dt,
                        path_or_buf=out / "estimates_baseline.csv",
                        comments={"config_hash": ch})
    report = {
        "config_hash": ch,
        "proposed": met_p.to_dict(),
        "baseline": met_b.to_dict(),
        "proposed_beats_baseline":
            bool(met_p.rmse_aggregate <= met_b.rmse_aggregate),
    }
    with open(out / ARTIFACTS["report"], "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    _write_report_md(out / ARTIFACTS["report_md"], report, plant)
    plots = _write_plots(out, plant, online.dt, x_true, rec_p, rec_b)
    return {"written": ["estimates_proposed.csv", "estimates_baseline.csv",
                        ARTIFACTS["report"], ARTIFACTS["report_md"], *plots],
            "rmse_proposed": met_p.rmse_aggregate,
            "rmse_baseline": met_b.rmse_aggregate}


def _write_report_md(path: Path, report: dict, plant) -> None:
    lines = [f"# Estimator comparison on `{plant.name}`", ""]
    lines.append("| metric | proposed (lifted) | baseline (linear) |")
    lines.append("|---|---|---|")
    p, b = report["proposed"], report["baseline"]
    lines.append(f"| aggregate RMSE | {p['rmse_aggregate']:.6g} | "
                 f"{b['rmse_aggregate']:.6g} |")
    for i, (rp, rb) in enumerate(zip(p["rmse_per_channel"],
                                     b["rmse_per_channel"])):
        lines.append(f"| RMSE x{i+1} | {rp:.6g} | {rb:.6g} |")
    lines.append(f"| mean QP iterations | {p['mean_iterations']:.1f} | "
                 f"{b['mean_iterations']:.1f} |")
    lines.append(f"| solver failures | {p['failure_count']} | "
                 f"{b['failure_count']} |")
    lines.append("")
    verdict = ("proposed estimator matches or beats the baseline"
               if report["proposed_beats_baseline"]
               else "baseline wins on this run")
    lines.append(f"Result: {verdict}.")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _write_plots(out: Path, plant, dt: float, x_true, rec_p, rec_b) -> list:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "koopmhe"
    plot_dir = out / "plots"
    plot_dir.mkdir(exist_ok=True)
    X_p = np.stack([r.x_hat_phys for r in rec_p], axis=1)
    X_b = np.stack([r.x_hat_phys for r in rec_b], axis=1)
    t = np.arange(X_p.shape[1]) * dt
    written = []
    for i in range(plant.n_x):
        fig, ax = plt.subplots(figsize=(7, 3))
        if x_true is not None:
            ax.plot(t, x_true[i, :X_p.shape[1]], "k-", lw=1.2, label="true")
        ax.plot(t, X_p[i], "C0--", lw=1.0, label="proposed")
        ax.plot(t, X_b[i], "C3:", lw=1.0, label="baseline")
        ax.set_xlabel("time [s]")
        ax.set_ylabel(f"x{i+1}")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        name = f"plots/state_{i+1}.svg"
        fig.savefig(out / name, metadata={"Date": None})
        plt.close(fig)
        written.append(name)
    return written


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "build-stack": cmd_build_stack,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopmhe",
        description="data-enabled moving horizon estimation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", default=None,
                       help="JSON config file (defaults apply when omitted)")
        p.add_argument("--out", default=None,
                       help="artifact directory (default: config out_dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override seeds.master")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       dest="sets", help="override a config key, e.g. mhe.N=6")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.sets, seed=args.seed)
    except ConfigInvalid as exc:
        _emit_error(exc)
        return 2
    out = Path(args.out if args.out is not None else cfg["out_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out)
    except ConfigInvalid as exc:
        _emit_error(exc)
        return 2
    except KoopmheError as exc:
        _emit_error(exc)
        return 3
    summary["command"] = args.command
    summary["out_dir"] = str(out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _emit_error(exc: Exception) -> None:
    blob = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(blob), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
