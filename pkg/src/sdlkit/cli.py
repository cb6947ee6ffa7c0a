"""Command-line front end.

Every command reads an optional YAML config (``--config``); flags override
config values. Outputs go to ``--out`` (default: current directory). Exit
status is 0 on success, 2 on bad input and 3 on a numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import bench, io
from .datasets import BUNDLED, bundled
from .diagnostics import conditioning
from .errors import ArgumentError, NumericError
from .generative import (STRONG_FILTER, VARIANTS, make_strong_params, make_weak_params, sample,
                         sample_strong_filter)
from .linalg import ConstraintSpec
from .loss import FEATURE, FILTER, BlockConstraints, FactorState, SdlProblem
from .metrics import classification_metrics, relative_recon
from .solvers import Clock, predict_proba_factors

COMMANDS = ("train", "predict", "simulate", "bench-pareto", "bench-curves", "consistency",
            "check-conditioning")
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
MODEL_FORMAT = "sdlkit-model/1"


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    command: str
    seed: int = 0
    out: Path = Path(".")
    timing: str = "none"
    data: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    base: Path = Path(".")
    out_given: bool = False

    def section(self, name: str) -> dict:
        sec = self.sections.get(name) or {}
        if not isinstance(sec, dict):
            raise ArgumentError(f"config section {name!r} must be a mapping")
        return sec

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p


def _read_config(path: str | None) -> tuple[dict, Path]:
    if not path:
        return {}, Path(".")
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ArgumentError(f"cannot read config {p}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ArgumentError(f"config {p} is not valid YAML: {exc}") from exc
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ArgumentError("config must be a mapping")
    return raw, p.parent


def _solver_and_mode(model: dict) -> None:
    solver, mode = model.get("solver"), model.get("mode")
    if solver is not None and solver not in bench.SOLVERS:
        raise ArgumentError(f"solver must be one of {bench.SOLVERS}")
    if mode is not None and mode not in (FILTER, FEATURE):
        raise ArgumentError("mode must be filter or feature")
    if solver is None:
        model["solver"] = "bcd-feat" if mode == FEATURE else "bcd-filt"
    implied = FILTER if model["solver"].endswith("filt") else FEATURE
    if mode is not None and mode != implied:
        raise ArgumentError(f"solver {model['solver']} conflicts with mode {mode}")
    model["mode"] = implied


def build_config(args: argparse.Namespace) -> RunConfig:
    raw, base = _read_config(args.config)
    model = dict(raw.get("model") or {})
    for key in ("xi", "nu", "tau", "rank", "iters", "mode", "solver"):
        v = getattr(args, key, None)
        if v is not None:
            model[key] = v
    _solver_and_mode(model)
    data = dict(raw.get("data") or {})
    for key in ("data", "aux", "labels", "bundled"):
        v = getattr(args, key, None)
        if v is not None:
            data[key] = str(Path(v).resolve()) if key != "bundled" else v
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    out = args.out if args.out is not None else raw.get("out", ".")
    timing = args.timing if args.timing is not None else raw.get("timing", "none")
    if timing not in ("none", "wall"):
        raise ArgumentError("timing must be none or wall")
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ArgumentError("seed must be an integer") from None
    if seed < 0 or seed >= 2**64:
        raise ArgumentError("seed must fit in an unsigned 64-bit integer")
    sections = {k: v for k, v in raw.items() if k not in ("data", "model", "seed", "out", "timing", "command")}
    if getattr(args, "model_path", None):
        sections.setdefault("predict", {})
        sections["predict"] = dict(sections["predict"], model=str(Path(args.model_path).resolve()))
    out_path = Path(out) if args.out is not None else (base / out if not Path(out).is_absolute() else Path(out))
    out_given = args.out is not None or "out" in raw
    return RunConfig(args.command, seed, out_path, timing, data, model, sections, base, out_given)


def _constraints(model: dict) -> BlockConstraints:
    cons = model.get("constraints") or {}
    if not isinstance(cons, dict):
        raise ArgumentError("model.constraints must be a mapping")
    unknown = set(cons) - {"dict", "code", "beta", "aux"}
    if unknown:
        raise ArgumentError(f"unknown constraint blocks {sorted(unknown)}")
    return BlockConstraints(**{k: ConstraintSpec.from_dict(v) for k, v in cons.items()})


def _positive(name: str, value, integer: bool = False, allow_zero: bool = False):
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ArgumentError(f"{name} must be a number") from None
    if integer and float(value) != v:
        raise ArgumentError(f"{name} must be an integer")
    if v < 0 or (v == 0 and not allow_zero) or not np.isfinite(v):
        raise ArgumentError(f"{name} must be {'nonnegative' if allow_zero else 'positive'}")
    return v


def model_settings(cfg: RunConfig, kappa: int) -> bench.ModelSettings:
    m = cfg.model
    tau = m.get("tau")
    rs = m.get("radius_scale", 1.0)
    if isinstance(rs, dict):
        rs = {k: _positive(f"radius_scale.{k}", v) for k, v in rs.items()}
    else:
        rs = _positive("radius_scale", rs)
    return bench.ModelSettings(
        solver=m["solver"],
        rank=_positive("rank", m.get("rank", 2), integer=True),
        kappa=_positive("kappa", m.get("kappa", kappa), integer=True),
        xi=_positive("xi", m.get("xi", 1.0), allow_zero=True),
        nu=_positive("nu", m.get("nu", 0.0), allow_zero=True),
        tau=None if tau is None else _positive("tau", tau),
        iters=_positive("iters", m.get("iters", 100), integer=True),
        sub_iters=_positive("sub_iters", m.get("sub_iters", 5), integer=True),
        l1=_positive("l1", m.get("l1", 0.0), allow_zero=True),
        radius_scale=rs,
        constraints=_constraints(m),
    )


def load_data(cfg: RunConfig, need_labels: bool = True):
    """(X, X_aux or None, y or None, kappa) from the data section."""
    d = cfg.data
    if d.get("bundled"):
        if d.get("data"):
            raise ArgumentError("give either data.bundled or data.data, not both")
        ds = bundled(d["bundled"])
        return ds.X, ds.X_aux, ds.y, ds.kappa
    if not d.get("data"):
        raise ArgumentError("no input data: set data.data (or data.bundled)")
    X = io.load_matrix_csv(cfg.path(d["data"]))
    n = X.shape[1]
    Xa = None
    if d.get("aux"):
        Xa = io.load_matrix_csv(cfg.path(d["aux"]))
        if Xa.shape[1] != n:
            raise ArgumentError(f"aux has {Xa.shape[1]} columns, data has {n}")
    y = None
    if d.get("labels"):
        y = io.load_labels(cfg.path(d["labels"]))
        if y.shape[0] != n:
            raise ArgumentError(f"{y.shape[0]} labels for {n} samples")
    elif need_labels:
        raise ArgumentError("labels file required (data.labels)")
    kappa = int(max(1, y.max())) if y is not None else 1
    return X, Xa, y, kappa


def _prepare_out(cfg: RunConfig) -> Path:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArgumentError(f"cannot create output directory {cfg.out}: {exc}") from exc
    return cfg.out


def _clock(cfg: RunConfig) -> Clock:
    return Clock("wall" if cfg.timing == "wall" else None)


# ---------------------------------------------------------------- model files

def save_model(out: Path, prob: SdlProblem, st: FactorState, ms: bench.ModelSettings, seed: int) -> dict:
    files = {}
    for name in ("W", "H", "beta", "gamma"):
        M = st.get(name)
        if M.size == 0:
            continue
        files[name] = f"{name}.csv"
        io.save_matrix_csv(out / files[name], M)
    manifest = {
        "format": MODEL_FORMAT, "mode": prob.mode, "solver": ms.solver, "score": prob.h.tag,
        "p": prob.p, "n": prob.n, "q": prob.q, "rank": prob.rank, "kappa": prob.kappa,
        "xi": prob.xi, "nu": prob.nu, "l1": ms.l1, "seed": seed,
        "constraints": {b: prob.constraints.for_block(k).to_dict()
                        for b, k in (("dict", "W"), ("code", "H"), ("beta", "beta"), ("aux", "gamma"))},
        "files": files,
    }
    io.save_json(out / "model.json", manifest)
    return manifest


def load_model(path: Path) -> tuple[dict, FactorState]:
    try:
        manifest = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ArgumentError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"model {path} is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != MODEL_FORMAT:
        raise ArgumentError(f"{path} is not a model manifest")
    base = Path(path).parent
    files = manifest["files"]
    mats = {k: io.load_matrix_csv(base / v) for k, v in files.items()}
    q, kappa = int(manifest["q"]), int(manifest["kappa"])
    st = FactorState(mats["W"], mats.get("H", np.zeros((manifest["rank"], 0))), mats["beta"],
                     mats.get("gamma", np.zeros((q, kappa))))
    if st.beta.shape != (int(manifest["rank"]), kappa):
        raise ArgumentError("model beta has the wrong shape")
    return manifest, st


# ---------------------------------------------------------------- commands

def cmd_train(cfg: RunConfig) -> int:
    X, Xa, y, kappa = load_data(cfg)
    ms = model_settings(cfg, kappa)
    out = _prepare_out(cfg)
    prob, st, rep = bench.fit_model(X, y, ms, Xa, cfg.seed, _clock(cfg))
    save_model(out, prob, st, ms, cfg.seed)
    io.write_table_csv(out / "report.csv", rep.HEADER, rep.records)
    pred = np.argmax(predict_proba_factors(st, X, prob.mode, prob.constraints.code, Xa, prob.h), axis=0)
    summary = classification_metrics(pred, y, 1, prob.kappa + 1, recon_rel=relative_recon(X, st.W, st.H))
    metrics = {"train": summary.to_dict(), "solver": rep.final_metrics(), "flags": rep.flags,
               "seed": cfg.seed}
    if "tau" in rep.extras:
        metrics["tau"] = rep.extras["tau"]
    io.save_json(out / "metrics.json", metrics)
    print(f"trained {ms.solver}: loss {rep.records[-1][1]:.6g}, train accuracy {summary.accuracy:.4f}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    sec = cfg.section("predict")
    if not sec.get("model"):
        raise ArgumentError("predict needs --model or predict.model")
    manifest, st = load_model(cfg.path(sec["model"]))
    X, Xa, y, _ = load_data(cfg, need_labels=False)
    code = ConstraintSpec.from_dict(manifest["constraints"].get("code"))
    P = predict_proba_factors(st, X, manifest["mode"], code, Xa)
    labels = np.argmax(P, axis=0)
    out = _prepare_out(cfg)
    header = ("label",) + tuple(f"p{j}" for j in range(P.shape[0]))
    io.write_table_csv(out / "predictions.csv", header,
                       [(int(labels[i]),) + tuple(float(v) for v in P[:, i]) for i in range(P.shape[1])])
    if y is not None:
        s = classification_metrics(labels, y, 1, P.shape[0])
        io.save_json(out / "metrics.json", {"test": s.to_dict()})
        print(f"accuracy {s.accuracy:.4f}, F {s.f_score:.4f}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    sec = cfg.section("simulate")
    out = _prepare_out(cfg)
    name = sec.get("bundled") or cfg.data.get("bundled")
    truth = {}
    if name:
        ds = bundled(name)
        X, Xa, y = ds.X, ds.X_aux, ds.y
        meta = {"bundled": name, "suggested": ds.suggested}
    else:
        variant = sec.get("variant", "weak_filter")
        if variant not in VARIANTS:
            raise ArgumentError(f"variant must be one of {VARIANTS}")
        p = _positive("p", sec.get("p", 12), integer=True)
        n = _positive("n", sec.get("n", 200), integer=True)
        r = _positive("r", sec.get("r", 2), integer=True)
        kappa = _positive("kappa", sec.get("kappa", 1), integer=True)
        q = _positive("q", sec.get("q", 0), integer=True, allow_zero=True)
        sigma = _positive("sigma", sec.get("sigma", 0.1))
        sigma_aux = _positive("sigma_aux", sec.get("sigma_aux", 0.1))
        if variant == STRONG_FILTER:
            gp = make_strong_params(p, r, kappa, q, sigma, sigma_aux, cfg.seed, n)
            X, Xa, y = sample_strong_filter(gp, cfg.seed + 1, n)
        else:
            gp = make_weak_params(variant, p, n, r, kappa, q, sigma, sigma_aux, cfg.seed)
            X, Xa, y = sample(gp, cfg.seed + 1)
        truth = gp.truth
        meta = {"variant": variant, "p": p, "n": n, "r": r, "kappa": kappa, "q": q, "sigma": sigma,
                "sigma_aux": sigma_aux, "seed": cfg.seed}
    io.save_matrix_csv(out / "data.csv", X)
    io.save_labels(out / "labels.csv", y)
    if Xa is not None and Xa.shape[0]:
        io.save_matrix_csv(out / "aux.csv", Xa)
    files = {}
    for k, M in sorted(truth.items()):
        if M.size:
            files[k] = f"truth_{k}.csv"
            io.save_matrix_csv(out / files[k], M)
    meta["truth_files"] = files
    io.save_json(out / "simulate.json", meta)
    print(f"wrote {X.shape[0]} x {X.shape[1]} data to {out}")
    return EXIT_OK


def _float_list(name: str, values) -> list[float]:
    if not isinstance(values, (list, tuple)) or not values:
        raise ArgumentError(f"{name} must be a non-empty list")
    return [_positive(name, v, allow_zero=True) for v in values]


def cmd_bench_pareto(cfg: RunConfig) -> int:
    sec = cfg.section("pareto")
    X, Xa, y, kappa = load_data(cfg)
    ms = model_settings(cfg, kappa)
    methods = sec.get("methods", ["lr", "nmf-lr", ms.solver])
    for m in methods:
        if m not in bench.BASELINES + bench.SOLVERS:
            raise ArgumentError(f"unknown method {m!r}")
    xis = _float_list("pareto.xi", sec.get("xi", [0.1, 1.0, 5.0, 10.0]))
    seeds = _positive("pareto.seeds", sec.get("seeds", 5), integer=True)
    test_frac = _positive("pareto.test_frac", sec.get("test_frac", 0.2))
    if test_frac >= 1:
        raise ArgumentError("pareto.test_frac must be below 1")
    workers = _positive("pareto.workers", sec.get("workers", 1), integer=True)
    out = _prepare_out(cfg)
    rows = bench.run_pareto(X, y, ms, methods, xis, seeds, cfg.seed, Xa, test_frac, workers,
                            int(sec.get("positive", 1)))
    io.write_table_csv(out / "pareto.csv", bench.PARETO_HEADER, rows)
    for r in rows:
        print(f"{r[0]:>10} xi={r[1]:<6g} recon_rel={r[2]:.4f} accuracy={r[4]:.4f} f={r[6]:.4f}")
    return EXIT_OK


def cmd_bench_curves(cfg: RunConfig) -> int:
    sec = cfg.section("curves")
    X, Xa, y, kappa = load_data(cfg)
    ms = model_settings(cfg, kappa)
    solvers = sec.get("solvers", [ms.solver])
    for s in solvers:
        if s not in bench.SOLVERS:
            raise ArgumentError(f"unknown solver {s!r}")
    xis = _float_list("curves.xi", sec.get("xi", [ms.xi]))
    out = _prepare_out(cfg)
    rows = bench.run_curves(X, y, ms, solvers, xis, cfg.seed, Xa, "wall" if cfg.timing == "wall" else None)
    io.write_table_csv(out / "curves.csv", bench.CURVES_HEADER, rows)
    print(f"wrote {len(rows)} trace rows to {out / 'curves.csv'}")
    return EXIT_OK


def cmd_consistency(cfg: RunConfig) -> int:
    sec = cfg.section("consistency")
    d = bench.ConsistencySettings()
    n_grid = sec.get("n", list(d.n_grid))
    if not isinstance(n_grid, (list, tuple)):
        raise ArgumentError("consistency.n must be a list")
    cs = bench.ConsistencySettings(
        variant=sec.get("variant", d.variant),
        n_grid=tuple(_positive("consistency.n", v, integer=True) for v in n_grid),
        seeds=_positive("consistency.seeds", sec.get("seeds", d.seeds), integer=True),
        sigma=_positive("consistency.sigma", sec.get("sigma", d.sigma)),
        p=_positive("consistency.p", sec.get("p", d.p), integer=True),
        r=_positive("consistency.r", sec.get("r", d.r), integer=True),
        kappa=_positive("consistency.kappa", sec.get("kappa", d.kappa), integer=True),
        q=_positive("consistency.q", sec.get("q", d.q), integer=True, allow_zero=True),
        nu=_positive("consistency.nu", sec.get("nu", cfg.model.get("nu", d.nu)), allow_zero=True),
        error=sec.get("error", d.error),
    )
    if cs.variant not in ("weak_filter", "weak_feature"):
        raise ArgumentError("consistency.variant must be weak_filter or weak_feature")
    workers = _positive("consistency.workers", sec.get("workers", 1), integer=True)
    out = _prepare_out(cfg)
    rows, slope = bench.run_consistency(cs, cfg.seed, workers)
    io.write_table_csv(out / "consistency.csv", bench.CONSISTENCY_HEADER, rows)
    io.save_json(out / "consistency.json", {"slope": slope, "error": cs.error, "variant": cs.variant,
                                            "n": list(cs.n_grid), "seeds": cs.seeds, "sigma": cs.sigma,
                                            "seed": cfg.seed})
    print(f"log-log slope of {cs.error} error: {slope:.4f}")
    return EXIT_OK


def cmd_check_conditioning(cfg: RunConfig) -> int:
    sec = cfg.section("conditioning")
    X, Xa, y, kappa = load_data(cfg)
    ms = model_settings(cfg, kappa)
    M = _positive("conditioning.M", sec.get("M", 1.0))
    prob = SdlProblem(X, y, ms.kappa, ms.rank, xi=ms.xi, nu=ms.nu, mode=ms.mode, X_aux=Xa)
    rep = conditioning(prob, M, sec.get("bounds", "closed_form"))
    text = io.dumps_json(rep.to_dict())
    sys.stdout.write(text)
    if cfg.out_given:
        (_prepare_out(cfg) / "conditioning.json").write_text(text, newline="\n")
    return EXIT_OK


HANDLERS = {
    "train": cmd_train, "predict": cmd_predict, "simulate": cmd_simulate,
    "bench-pareto": cmd_bench_pareto, "bench-curves": cmd_bench_curves,
    "consistency": cmd_consistency, "check-conditioning": cmd_check_conditioning,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--xi", type=float, help="reconstruction weight")
    common.add_argument("--nu", type=float, help="l2 penalty weight")
    common.add_argument("--tau", type=float, help="LPGD stepsize")
    common.add_argument("--rank", type=int, help="dictionary size r")
    common.add_argument("--iters", type=int, help="outer iterations")
    common.add_argument("--mode", choices=(FILTER, FEATURE))
    common.add_argument("--solver", choices=bench.SOLVERS)
    common.add_argument("--timing", choices=("none", "wall"),
                        help="'none' writes zero elapsed times so traces are reproducible")
    common.add_argument("--data", help="p x n data CSV")
    common.add_argument("--aux", help="q x n auxiliary covariate CSV")
    common.add_argument("--labels", help="labels file, one integer per line")
    common.add_argument("--bundled", choices=sorted(BUNDLED), help="use a bundled dataset")
    parser = argparse.ArgumentParser(prog="sdlkit", description="Supervised dictionary learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "predict":
            sp.add_argument("--model", dest="model_path", help="model.json written by train")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        return HANDLERS[cfg.command](cfg)
    except (ArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
