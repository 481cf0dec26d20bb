"""Command-line entry point.

Every command reads optional settings from ``--config FILE`` (JSON), lets
flags override them, writes a resolved snapshot ``<command>_config.json``
into ``--out`` and then its CSV/JSON artifacts.

Exit codes: 0 success, 1 domain failure (condition violated or an
``--assert`` gate missed), 2 usage or validation error, 3 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import continuum as ct
from .backprop import bsm_trace
from .core_math import Activation
from .datasets import GENERATORS, Dataset, augment, generate, make_split, read_csv, split_and_batch, write_csv
from .distributed import DistributedH2Config, apply_masks, check_condition, load_pattern
from .layers import Arch, forward_net, init_network, load_network, save_network
from .training import RegConfig, TrainConfig, TrainingDiverged, evaluate, train, write_grad_report

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


# setting name -> (type, default, help); None type means JSON value
GENERATE = {
    "dataset": (str, "double_moons", f"one of {sorted(GENERATORS)}"),
    "samples": (int, 8000, "number of points (even)"),
    "noise": (float, None, "noise level; dataset default when unset"),
}

DATA = {
    "data": (str, None, "training CSV; generated when unset"),
    "test_data": (str, None, "test CSV; generated when unset"),
    "dataset": (str, "double_moons", "generator used when no CSV is given"),
    "samples": (int, 8000, "generated training points"),
    "test_samples": (int, 8000, "generated test points"),
    "noise": (float, None, "generator noise"),
    "placement": (None, None, "JSON map raw index -> feature index for augmentation"),
}

TRAIN = {
    "arch": (str, "H1", "H1, H2, MS1, MS2, MS3 or MLP"),
    "layers": (int, 4, "number of hidden layers N"),
    "width": (int, 4, "feature dimension n after augmentation"),
    "h": (float, 0.5, "step size"),
    "activation": (str, "tanh", "tanh, relu or abs"),
    "h2_variant": (str, "block", "block or full"),
    "trainable_J": (bool, False, "learn a skew-symmetric J (H1)"),
    "init_std": (float, None, "weight init std; 1/sqrt(n) when unset"),
    "pattern": (str, None, "sparsity pattern JSON for a distributed H2 net"),
    "epochs": (int, 50, ""),
    "batch_size": (int, 125, ""),
    "lr": (float, 2.5e-2, ""),
    "head_iters": (int, 10, "Adam iterations on the output layer per step"),
    "alpha": (float, 5e-4, "weight on layer-to-layer smoothness"),
    "alpha_ell": (float, 0.0, "weight on hidden L2"),
    "alpha_N": (float, 1e-4, "weight on output-layer L2"),
    "norm_reg": (float, 0.0, "weight on sum of K and J spectral norms"),
    "monitor_size": (int, 16, "training samples whose BSM norms are logged"),
    "min_test_acc": (float, 0.99, "gate for --assert"),
    **DATA,
}

EVAL = {"model": (str, None, "model JSON"), **DATA}

GRAD_REPORT = {
    "model": (str, None, "model JSON"),
    "batch_size": (int, 125, "samples per reported batch"),
    "max_batches": (int, 1, "number of batches to report"),
    **DATA,
}

CHECK = {"pattern": (str, None, "sparsity pattern JSON")}

ODE = {
    "sensitivity": {
        "n": (int, 4, "state dimension"),
        "T": (float, 5.0, "horizon"),
        "step": (float, 1e-3, "RK4 step"),
        "weights": (str, "random", "random or zero"),
        "weight_scale": (float, 1.0, ""),
    },
    "explode": {
        "gamma": (None, [1e-2, 5e-3, 2.5e-3], "list of perturbation sizes"),
        "beta": (None, [1.0, 0.0], "perturbation direction"),
        "y_init": (None, [1.5, 0.0], "initial state"),
        "T": (float, 6000.0, "horizon"),
        "points": (int, 121, "probe times on [0, T]"),
        "step": (float, 2.5e-2, "RK4 step"),
    },
    "period": {
        "radii": (None, [0.5, 1.0, 1.5], "initial states (r, 0); increasing energy"),
        "step": (float, 1e-3, ""),
    },
    "ode2ode": {
        "path": (str, "identity", "identity or rotation"),
        "n": (int, 4, ""),
        "T": (float, 5.0, ""),
        "omega": (float, 1.0, "rotation rate"),
        "step": (float, 1e-3, ""),
    },
}


# --- config plumbing --------------------------------------------------------


def _add_schema(p: argparse.ArgumentParser, schema: dict) -> None:
    for key, (typ, _, hlp) in schema.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, dest=key, default=None, action="store_const", const=True, help=hlp)
        elif typ is None:
            p.add_argument(flag, dest=key, default=None, type=json.loads, help=hlp + " (JSON)")
        else:
            p.add_argument(flag, dest=key, default=None, type=typ, help=hlp)


def _resolve(schema: dict, args, command: str) -> dict:
    cfg = {k: v[1] for k, v in schema.items()}
    cfg["seed"] = 0
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(raw) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        cfg.update(raw)
    for k in schema:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _snapshot(out: Path, command: str, cfg: dict) -> None:
    name = command.replace("-", "_").replace(" ", "_")
    (out / f"{name}_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def _placement(cfg):
    pl = cfg.get("placement")
    if pl is None:
        return None
    if isinstance(pl, dict):
        return {int(k): int(v) for k, v in pl.items()}
    return {i: int(v) for i, v in enumerate(pl)}


def _load_data(cfg, width: int):
    """Training and test sets, augmented to ``width``."""
    pl = _placement(cfg)
    if cfg.get("data"):
        train_d = _read(cfg["data"])
        test_d = _read(cfg["test_data"]) if cfg.get("test_data") else None
    else:
        if cfg["dataset"] not in GENERATORS:
            raise UsageError(f"unknown dataset {cfg['dataset']!r}")
        train_d, test_d = make_split(cfg["dataset"], cfg["samples"], cfg["test_samples"], cfg["noise"], cfg["seed"])
    try:
        train_d = _fit(train_d, width, pl)
        test_d = _fit(test_d, width, pl) if test_d is not None else None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return train_d, test_d


def _read(path) -> Dataset:
    if not Path(path).is_file():
        raise UsageError(f"dataset file not found: {path}")
    try:
        return read_csv(path)
    except (ValueError, IndexError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _fit(d: Dataset, width: int, placement) -> Dataset:
    if d.dim == width and placement is None:
        return d
    return augment(d, width, placement)


# --- commands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _resolve(GENERATE, args, "generate")
    if cfg["dataset"] not in GENERATORS:
        raise UsageError(f"unknown dataset {cfg['dataset']!r}; choose from {sorted(GENERATORS)}")
    try:
        d = generate(cfg["dataset"], cfg["samples"], cfg["noise"], cfg["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    _snapshot(out, "generate", cfg)
    path = out / f"{cfg['dataset']}.csv"
    write_csv(d, path)
    print(f"wrote {len(d)} rows to {path}")
    return EXIT_OK


def _train_config(cfg) -> TrainConfig:
    reg = RegConfig(cfg["alpha"], cfg["alpha_ell"], cfg["alpha_N"], cfg["norm_reg"])
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        head_iters=cfg["head_iters"],
        seed=cfg["seed"],
        reg=reg,
        monitor_size=cfg["monitor_size"],
    )


def cmd_train(args) -> int:
    cfg = _resolve(TRAIN, args, "train")
    try:
        tcfg = _train_config(cfg)
        net = init_network(
            cfg["arch"],
            cfg["width"],
            cfg["layers"],
            cfg["h"],
            Activation.from_name(cfg["activation"]),
            2,
            cfg["seed"],
            trainable_J=cfg["trainable_J"],
            h2_variant=cfg["h2_variant"],
            weight_std=cfg["init_std"],
        )
        if cfg["pattern"]:
            pat = load_pattern(cfg["pattern"])
            if net.m % pat.M:
                raise ValueError(f"{net.m} features per block do not split over {pat.M} nodes")
            net = apply_masks(net, DistributedH2Config.uniform(pat, net.m // pat.M))
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None
    train_d, test_d = _load_data(cfg, cfg["width"])
    out = _out_dir(args)
    _snapshot(out, "train", cfg)
    try:
        trained, hist = train(net, train_d, tcfg, test_d)
    except TrainingDiverged as exc:
        save_network(exc.last_good, out / "model_last_good.json")
        exc.history.write_csv(out / "history.csv")
        print(f"training diverged: {exc}; last good model in {out / 'model_last_good.json'}", file=sys.stderr)
        return EXIT_DIVERGED
    save_network(trained, out / "model.json")
    hist.write_csv(out / "history.csv")
    hist.write_grad_report(out / "grad_report.csv")
    tr_acc = evaluate(trained, train_d)
    print(f"train accuracy {tr_acc:.4f}")
    if test_d is not None:
        te_acc = evaluate(trained, test_d)
        print(f"test accuracy {te_acc:.4f}")
        if args.assert_ and te_acc < cfg["min_test_acc"]:
            print(f"test accuracy below {cfg['min_test_acc']}", file=sys.stderr)
            return EXIT_DOMAIN
    return EXIT_OK


def _model(cfg):
    if not cfg.get("model"):
        raise UsageError("a model JSON is required (--model)")
    try:
        return load_network(cfg["model"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load model: {exc}") from None


def cmd_eval(args) -> int:
    cfg = _resolve(EVAL, args, "eval")
    net = _model(cfg)
    train_d, test_d = _load_data(cfg, net.n)
    d = test_d if test_d is not None else train_d
    out = _out_dir(args)
    _snapshot(out, "eval", cfg)
    acc = evaluate(net, d)
    print(f"accuracy {acc:.4f}")
    return EXIT_OK


def cmd_grad_report(args) -> int:
    cfg = _resolve(GRAD_REPORT, args, "grad-report")
    net = _model(cfg)
    d, _ = _load_data({**cfg, "test_data": None, "test_samples": 2}, net.n)
    if d.dim != net.n:
        raise UsageError(f"data dimension {d.dim} does not match model width {net.n}")
    out = _out_dir(args)
    _snapshot(out, "grad-report", cfg)
    entries = []
    for b, (Xb, _) in enumerate(split_and_batch(d, cfg["batch_size"], cfg["seed"])):
        if b >= cfg["max_batches"]:
            break
        tr = bsm_trace(net, forward_net(net, Xb)[1])
        entries.append((b, tr.norm2.mean(axis=1), tr.norm_fro.mean(axis=1)))
        lo = float(tr.norm2.min())
        hi = float(tr.norm2.max())
        print(f"batch {b}: BSM 2-norm range [{lo:.6g}, {hi:.6g}] over {net.N} layer(s)")
    write_grad_report(entries, out / "grad_report.csv")
    if args.assert_ and net.arch is Arch.H2:
        worst = min(float(e[1].min()) for e in entries)
        if worst < 1 - 1e-9:
            print(f"H2 BSM norm {worst} below 1", file=sys.stderr)
            return EXIT_DOMAIN
    return EXIT_OK


def cmd_check_sparsity(args) -> int:
    cfg = _resolve(CHECK, args, "check-sparsity")
    if not cfg["pattern"]:
        raise UsageError("a pattern JSON is required (--pattern)")
    try:
        pat = load_pattern(cfg["pattern"])
    except OSError as exc:
        raise UsageError(f"cannot read pattern: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"invalid pattern: {exc}") from None
    verdicts = check_condition(pat)
    for j, ok in enumerate(verdicts):
        print(f"layer {j}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if all(verdicts) else EXIT_DOMAIN


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def cmd_ode_lab(args) -> int:
    sub = args.experiment
    cfg = _resolve(ODE[sub], args, f"ode-lab {sub}")
    out = _out_dir(args)
    _snapshot(out, f"ode-lab {sub}", cfg)
    try:
        return _ODE_RUNNERS[sub](cfg, out, args.assert_)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _ode_sensitivity(cfg, out, gate) -> int:
    n = cfg["n"]
    rng = np.random.default_rng(cfg["seed"])
    if cfg["weights"] == "zero":
        J = ct.kron_G(n) if n % 2 == 0 else np.zeros((n, n))
        ode = ct.constant_config(np.zeros((n, n)), J, None, T=cfg["T"], step=cfg["step"])
    elif cfg["weights"] == "random":
        ode = ct.random_config(n, rng, cfg["T"], cfg["step"], cfg["weight_scale"])
    else:
        raise ValueError("weights must be 'random' or 'zero'")
    y0 = rng.standard_normal(n)
    traj = ct.integrate_forward(ode, y0)
    _write_rows(out / "trajectory.csv", ["t"] + [f"y{i}" for i in range(n)] + ["H"],
                [[t, *y, H] for t, y, H in zip(traj.t, traj.y, traj.H)])
    ts, norms, res = ct.sensitivity_report(ode, traj)
    _write_rows(out / "sensitivity.csv", ["t", "norm", "residual"], zip(ts, norms, res))
    print(f"min norm {norms.min():.9g}, max residual {res.max():.3g}")
    if gate and (norms.min() < 1 - 1e-6 or res.max() > 1e-6):
        return EXIT_DOMAIN
    return EXIT_OK


def _ode_explode(cfg, out, gate) -> int:
    gammas = [float(g) for g in cfg["gamma"]]
    tg = np.linspace(0.0, cfg["T"], cfg["points"])
    rows, sats = [], []
    for g in gammas:
        r = ct.exploding_probe(g, cfg["beta"], cfg["T"], tg, cfg["y_init"], cfg["step"])
        sats.append(ct.saturation_value(r))
        rows += [[t, v, g] for t, v in zip(tg, r)]
        print(f"gamma {g:g}: saturation {sats[-1]:.6g}")
    _write_rows(out / "probe.csv", ["t", "ratio", "gamma"], rows)
    order = np.argsort(gammas)[::-1]
    s = np.asarray(sats)[order]
    if gate and not np.all(np.diff(s) > 0):
        return EXIT_DOMAIN
    return EXIT_OK


def _ode_period(cfg, out, gate) -> int:
    rows = []
    for r in cfg["radii"]:
        y0 = np.array([float(r), 0.0])
        P = ct.period_estimate(y0, step=cfg["step"])
        k = max(1, int(np.ceil(P / cfg["step"])))
        closure = float(np.max(np.abs(ct.planar_path(y0, P / k, k)[-1] - y0)))
        rows.append([float(r), float(ct.planar_energy(y0)), P, closure])
        print(f"r={r:g}: energy {rows[-1][1]:.6g} period {P:.9g} closure {closure:.2g}")
    _write_rows(out / "period.csv", ["radius", "energy", "period", "closure_error"], rows)
    rows.sort(key=lambda x: x[1])
    periods = [x[2] for x in rows]
    if gate and not (np.all(np.diff(periods) > 0) and max(x[3] for x in rows) <= 1e-5):
        return EXIT_DOMAIN
    return EXIT_OK


def _ode_ode2ode(cfg, out, gate) -> int:
    n = cfg["n"]
    rng = np.random.default_rng(cfg["seed"])
    if cfg["path"] == "identity":
        M = ct.identity_path(n)
    elif cfg["path"] == "rotation":
        M = ct.rotation_path(n, cfg["omega"])
    else:
        raise ValueError("path must be 'identity' or 'rotation'")
    rep = ct.ode2ode_check(M, n, rng.standard_normal(n), rng.standard_normal(n), cfg["T"], cfg["step"])
    _write_rows(out / "ode2ode.csv", ["t", "ratio", "sv_min", "sv_max"],
                zip(rep.t, rep.ratio, rep.sv_min, rep.sv_max))
    print(f"ratio range [{rep.ratio.min():.6g}, {rep.ratio.max():.6g}] vs [{rep.lower:.6g}, {rep.upper:.6g}]")
    if gate and not rep.within:
        return EXIT_DOMAIN
    return EXIT_OK


_ODE_RUNNERS = {
    "sensitivity": _ode_sensitivity,
    "explode": _ode_explode,
    "period": _ode_period,
    "ode2ode": _ode_ode2ode,
}


# --- parser -----------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with settings for this command")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--assert", dest="assert_", action="store_true", help="turn acceptance gates into exit codes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdnn", description="Hamiltonian deep networks: training and analysis")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema, fn, hlp in [
        ("generate", GENERATE, cmd_generate, "write a synthetic 2-D dataset as CSV"),
        ("train", TRAIN, cmd_train, "train a network"),
        ("eval", EVAL, cmd_eval, "accuracy of a saved model"),
        ("grad-report", GRAD_REPORT, cmd_grad_report, "per-layer BSM norms of a saved model"),
        ("check-sparsity", CHECK, cmd_check_sparsity, "check a distributed sparsity pattern"),
    ]:
        p = sub.add_parser(name, help=hlp)
        _common(p)
        _add_schema(p, schema)
        p.set_defaults(func=fn)
    ode = sub.add_parser("ode-lab", help="continuous-time experiments")
    ode_sub = ode.add_subparsers(dest="experiment", required=True)
    for name, schema in ODE.items():
        p = ode_sub.add_parser(name)
        _common(p)
        _add_schema(p, schema)
        p.set_defaults(func=cmd_ode_lab)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
