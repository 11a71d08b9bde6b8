"""Command-line entry point: ``hycop <command> ...``.

Commands: gen-data, train, eval, compare-strang, diagnose, transfer, ablate. Configs
are YAML files; every random choice derives from the config's ``seed``.
Exit codes: 0 success, 2 config error, 3 numerical failure, 4 failed --check.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import experiments as ex
from .datagen import (BenchmarkSpec, SplitSpec, build_dataset, default_spec, load_dataset)
from .errors import (ConfigError, ExecutionDiverged, PolicyNumericalError, ReferenceDiverged,
                     StiffnessCap)
from .es import EsConfig
from .features import FEATURE_SET_ID, RAW_FEATURE_SET_ID
from .fields import Boundary
from .metrics import format_table
from .policy import extend_dictionary, load_checkpoint, save_checkpoint
from .primitives import SystemTag, dictionary, dummy_reaction, swap_boundary_variant

log = logging.getLogger("hycop")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
NUMERIC_ERRORS = (ExecutionDiverged, PolicyNumericalError, ReferenceDiverged, StiffnessCap,
                  FloatingPointError)


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# config loading

def _lines(node, path=""):
    """Map dotted key paths to 1-based source lines."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{path}.{k.value}" if path else str(k.value)
            out[key] = k.start_mark.line + 1
            out.update(_lines(v, key))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            key = f"{path}[{i}]"
            out[key] = v.start_mark.line + 1
            out.update(_lines(v, key))
    return out


class Config(dict):
    """Parsed YAML mapping that remembers where each key was written."""

    def __init__(self, data, lines, source):
        super().__init__(data or {})
        self.lines = lines
        self.source = source

    def error(self, key, message):
        return ConfigError(f"{self.source}: {message}", field=key, line=self.lines.get(key))

    def get_typed(self, key, kind, default=None):
        cur = self
        for part in key.split("."):
            if not isinstance(cur, dict) or part not in cur:
                return default
            cur = cur[part]
        try:
            return kind(cur)
        except (TypeError, ValueError):
            raise self.error(key, f"expected {kind.__name__}, got {cur!r}") from None


def load_config(path) -> Config:
    text = Path(path).read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"{path}: {e}", line=None if mark is None else mark.line + 1) from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping", line=1)
    return Config(data, _lines(node) if node is not None else {}, str(path))


def _system(cfg: Config, key="system"):
    try:
        return SystemTag(cfg[key])
    except (KeyError, ValueError):
        raise cfg.error(key, f"system must be one of {[s.value for s in SystemTag]}") from None


def es_config(cfg: Config, prefix="es", **overrides) -> EsConfig:
    base = EsConfig()
    vals = {
        "population": cfg.get_typed(f"{prefix}.population", int, base.population),
        "sigma": cfg.get_typed(f"{prefix}.sigma", float, base.sigma),
        "lr": cfg.get_typed(f"{prefix}.lr", float, base.lr),
        "weight_decay": cfg.get_typed(f"{prefix}.weight_decay", float, base.weight_decay),
        "generations": cfg.get_typed(f"{prefix}.generations", int, base.generations),
        "batch_size": cfg.get_typed(f"{prefix}.batch_size", int, base.batch_size),
        "seed": cfg.get_typed("seed", int, 0),
        "selection": cfg.get_typed(f"{prefix}.selection", str, base.selection),
    }
    vals.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return EsConfig(**vals)
    except ValueError as e:
        raise cfg.error(prefix, str(e)) from None


def _feature_set(cfg: Config) -> str:
    fs = cfg.get("feature_set", "dimensionless")
    if fs not in ("dimensionless", "raw"):
        raise cfg.error("feature_set", "feature_set must be 'dimensionless' or 'raw'")
    return fs


def benchmark_spec(cfg: Config, i: int) -> BenchmarkSpec:
    key = f"benchmarks[{i}]"
    b = cfg["benchmarks"][i]
    if not isinstance(b, dict):
        raise cfg.error(key, "benchmark entries must be mappings")
    sub = Config(b, {k[len(key) + 1:]: v for k, v in cfg.lines.items() if k.startswith(key + ".")},
                 cfg.source)
    system = _system(sub)
    seed = sub.get_typed("seed", int, cfg.get_typed("seed", int, 0))
    spec = default_spec(system, sub.get_typed("n_train", int, 2000),
                        sub.get_typed("n_id", int, 200), sub.get_typed("n_ood", int, 200), seed,
                        sub.get_typed("n_transfer", int, 0), sub.get_typed("n_points", int, None))
    ranges = b.get("ranges", {})
    splits = dict(spec.splits)
    for split, params in ranges.items():
        if split not in splits:
            raise cfg.error(f"{key}.ranges.{split}", f"no split {split!r} in this benchmark")
        new = dict(splits[split].params)
        for name, ivs in params.items():
            ivs = ivs if ivs and isinstance(ivs[0], (list, tuple)) else [ivs]
            new[name] = tuple(tuple(float(x) for x in iv) for iv in ivs)
        splits[split] = SplitSpec(splits[split].count, new, splits[split].families,
                                  splits[split].T, splits[split].boundary)
    try:
        return BenchmarkSpec(system, splits, seed, spec.n_points)
    except ConfigError as e:
        fld = f"{key}.ranges.{e.field}" if e.field else key
        raise ConfigError(e.reason, field=fld, line=cfg.lines.get(fld)) from None


# ---------------------------------------------------------------------------
# helpers

def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str):
    path.write_text(text)
    log.info("wrote %s", path)


def _plot_data(path: Path, columns, rows):
    lines = ["# " + " ".join(columns)]
    lines += [" ".join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in r) for r in rows]
    _write(path, "\n".join(lines) + "\n")


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def _specs_for(ckpt_system, n):
    specs = dictionary(ckpt_system)
    if n == len(specs) + 1:
        specs = specs + (dummy_reaction(ckpt_system),)
    if n != len(specs):
        raise ConfigError(f"checkpoint expects {n} primitives, dictionary has {len(specs)}")
    return specs


def _check(cond: bool, what: str, failures: list):
    log.info("check %s: %s", "PASS" if cond else "FAIL", what)
    if not cond:
        failures.append(what)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args):
    cfg = load_config(args.config)
    benches = cfg.get("benchmarks") or []
    if not isinstance(benches, list):
        raise cfg.error("benchmarks", "benchmarks must be a list")
    out = _out_dir(args)
    for i in range(len(benches)):
        spec = benchmark_spec(cfg, i)
        name = benches[i].get("name", spec.system.value)
        path = out / f"{name}.dat"
        build_dataset(spec, path, log=log.info)
        log.info("dataset %s", path)
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    ds = load_dataset(args.dataset)
    system = ds.system
    fs = _feature_set(cfg)
    es = es_config(cfg, generations=args.generations, population=args.population)
    specs = dictionary(system)
    start, initial = 0, None
    if args.warm_start:
        ck = load_checkpoint(args.warm_start)
        initial, start = ck.params, ck.generation
        if initial.arch.n != len(specs):
            specs = _specs_for(system, initial.arch.n)
    out = _out_dir(args)
    lines = []

    def record(rec):
        lines.append(rec.line())
        log.info(rec.line())

    res = ex.train_policy(ds["train"], specs, es, fs, initial,
                          H=cfg.get_typed("policy.H", int, ex.DEFAULT_HIDDEN),
                          K_max=cfg.get_typed("policy.K_max", int, 18),
                          k_min=cfg.get_typed("policy.k_min", int, 3),
                          start_generation=start, threads=_threads(args), log=record)
    chosen = res.best if cfg.get("keep", "best") == "best" else res.final
    ckpt = Path(args.out) if args.out else out / "policy.ckpt"
    save_checkpoint(ckpt, chosen, system, FEATURE_SET_ID if fs == "dimensionless" else
                    RAW_FEATURE_SET_ID, es.seed, res.generations_done,
                    {"es": f"M={es.population} sigma={es.sigma} lr={es.lr} "
                           f"wd={es.weight_decay} B={es.batch_size}",
                     "rank_shaping": "centered-ranks", "kept": cfg.get("keep", "best")})
    _write(out / "train_log.txt", "\n".join(lines) + ("\n" if lines else ""))
    _plot_data(out / "training_curve.dat", ("generation", "mean_loss", "monitor_loss"),
               [(r.generation, r.mean_loss, r.monitor_loss) for r in res.history])
    failures = []
    if args.check:
        thresholds = cfg.get("check", {}) or {}
        for split, key in (("id", "id_rel_l2"), ("ood", "ood_rel_l2")):
            if key in thresholds and split in ds.splits:
                row, _ = ex.evaluate(chosen, ds[split], specs, split, feature_set=fs)
                _check(row.values["RelL2"] < float(thresholds[key]),
                       f"{split} RelL2 {row.values['RelL2']:.4e} < {thresholds[key]}", failures)
    return EXIT_CHECK if failures else EXIT_OK


def _feature_set_of(ck):
    return "raw" if ck.feature_set == RAW_FEATURE_SET_ID else "dimensionless"


def cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    fs = _feature_set_of(ck)
    specs = _specs_for(ds.system, ck.params.arch.n)
    out = _out_dir(args)
    rows = []
    splits = [s for s in ("id", "ood", "train") if s in ds.splits][:2] if not args.splits \
        else args.splits
    ks_rows = []
    for split in splits:
        data = ds[split]
        row, pred = ex.evaluate(ck.params, data, specs, split, feature_set=fs,
                                threads=_threads(args))
        rows += [row, ex.constant_row(data, split)]
        if ds.system is SystemTag.KS1D:
            se, kl = ex.ks_metrics(ex.ks_trajectories(ck.params, data, specs, fs), data)
            ks_rows.append((split, se, kl))
        shares = pred.shares(len(specs)).mean(axis=0)
        log.info("%s: mean program length %.2f, duration shares %s", split, pred.k.mean(),
                 np.array2string(shares, precision=3))
    _write(out / "metrics.csv", format_table(rows))
    print(format_table(rows), end="")
    if ks_rows:
        text = "split,SE,KL\n" + "".join(f"{s},{a:.6e},{b:.6e}\n" for s, a, b in ks_rows)
        _write(out / "ks_attractor.csv", text)
        print(text, end="")
    if args.horizons:
        data = ds[splits[0]]
        hrows = ex.horizon_table(ck.params, data, specs, feature_set=fs)
        _write(out / "horizons.csv", "horizon,time,RelL2\n" +
               "".join(f"{h},{t:.6e},{e:.6e}\n" for h, t, e in hrows))
        _plot_data(out / "horizons.dat", ("horizon", "RelL2"), [(h, e) for h, _, e in hrows])
    return EXIT_OK


def cmd_compare_strang(args):
    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    specs = _specs_for(ds.system, ck.params.arch.n)
    data = ds[args.split]
    pred = ex.predict(ck.params, data, specs, _feature_set_of(ck), threads=_threads(args))
    hy = ex.mean_rel_l2(pred.state, data)
    calls = float(pred.calls.mean())
    Ns = args.substeps or [ex.matched_substeps(calls, len(specs))]
    lines = ["model,substeps,calls,RelL2", f"HyCOP,,{calls:.3f},{hy:.6e}"]
    pts = []
    from .executor import strang_calls
    for N in Ns:
        e = ex.strang_rel_l2(data, specs, N)
        lines.append(f"Strang,{N},{strang_calls(len(specs), N)},{e:.6e}")
        pts.append((strang_calls(len(specs), N), e))
    out = _out_dir(args)
    _write(out / "strang_comparison.csv", "\n".join(lines) + "\n")
    _plot_data(out / "strang_budget.dat", ("calls", "RelL2"), pts)
    print("\n".join(lines))
    failures = []
    if args.check:
        N = ex.matched_substeps(calls, len(specs))
        _check(hy <= ex.strang_rel_l2(data, specs, N),
               f"HyCOP RelL2 <= Strang at matched budget (N={N})", failures)
    return EXIT_CHECK if failures else EXIT_OK


def cmd_diagnose(args):
    ds = load_dataset(args.dataset)
    data = ds[args.split]
    specs = dictionary(ds.system)
    if args.primitives:
        specs = tuple(specs[int(i)] for i in args.primitives.split(","))
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        if ck.params.arch.n != len(specs):
            raise ConfigError("checkpoint dictionary size does not match --primitives")
        pred = ex.predict(ck.params, data, specs, _feature_set_of(ck))
        from .policy import flow_durations
        index, run = pred.index, flow_durations(pred.index, pred.tau, data.T)
    else:
        from .executor import strang_steps
        idx, frac = strang_steps(len(specs), 1.0, args.substeps)
        index = np.tile(idx, (len(data), 1))
        run = data.T[:, None] * frac[None]
    dec, coarse = ex.decomposition(index, run, data, specs)
    rel = dec.relative()
    _, div = __import__("hycop.executor", fromlist=["execute_batch"]).execute_batch(
        specs, index, run, data.params, data.u0, data.grid)
    lines = ["sample,total,splitting_est,primitive_est,residual,diverged_step"]
    for i in range(len(data)):
        lines.append(f"{i},{rel.total[i]:.6e},{rel.splitting[i]:.6e},{rel.primitive[i]:.6e},"
                     f"{rel.residual[i]:.3e},{int(div[i])}")
    lines.append(f"mean,{np.mean(rel.total):.6e},{np.mean(rel.splitting):.6e},"
                 f"{np.mean(rel.primitive):.6e},{np.max(rel.residual):.3e},"
                 f"{int(np.sum(div >= 0))}")
    out = _out_dir(args)
    _write(out / "decomposition.csv", "\n".join(lines) + "\n")
    print(lines[0] + "\n" + lines[-1])
    failures = []
    if args.check:
        _check(bool(np.all(rel.residual <= 1e-12)), "triangle residual <= 1e-12", failures)
    return EXIT_CHECK if failures else EXIT_OK


def cmd_transfer(args):
    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    fs = _feature_set_of(ck)
    system = ds.system
    specs = _specs_for(system, ck.params.arch.n)
    out = _out_dir(args)
    failures = []
    if args.swap_boundary:
        data = ds[args.split or "transfer"]
        wall = tuple(swap_boundary_variant(s, Boundary.WALL) for s in specs)
        rows = []
        for name, sp in (("periodic-dictionary", specs), ("wall-dictionary", wall)):
            row, _ = ex.evaluate(ck.params, data, sp, data.grid.boundary.value, name, fs)
            rows.append(row)
        _write(out / "transfer_boundary.csv", format_table(rows))
        print(format_table(rows), end="")
        if args.check:
            a, b = rows[0].values["RelL2"], rows[1].values["RelL2"]
            _check(a >= 2 * b, f"wall swap improves RelL2 {a:.3e} -> {b:.3e} by >= 2x", failures)
    if args.add_primitive:
        if args.add_primitive != "reaction":
            raise ConfigError("only the redundant 'reaction' primitive can be added")
        dummy = dummy_reaction(system)
        data = ds[args.split or "id"]
        if dummy in specs:
            new_specs, policy = specs, ck.params
        else:
            new_specs, policy = specs + (dummy,), extend_dictionary(ck.params)
        cfg = load_config(args.config) if args.config else Config({}, {}, "<defaults>")
        es = es_config(cfg, prefix="adapt", population=cfg.get_typed("adapt.population", int, 50),
                       sigma=cfg.get_typed("adapt.sigma", float, 0.03),
                       lr=cfg.get_typed("adapt.lr", float, 0.005),
                       generations=cfg.get_typed("adapt.generations", int, 20),
                       batch_size=cfg.get_typed("adapt.batch_size", int, 8))
        res = ex.train_policy(ds["train"], new_specs, es, fs, policy, threads=_threads(args))
        base, _ = ex.evaluate(ck.params, data, specs, "id", "base", fs)
        adapted, pred = ex.evaluate(res.best, data, new_specs, "id", "adapted", fs)
        share = float(pred.shares(len(new_specs))[:, -1].mean())
        save_checkpoint(out / "adapted.ckpt", res.best, system, ck.feature_set, es.seed,
                        ck.generation + es.generations, {"dictionary": "+reaction"})
        _write(out / "transfer_primitive.csv", format_table([base, adapted]) +
               f"# dummy duration share (duration-weighted): {share:.6e}\n")
        _plot_data(out / "dummy_share.dat", ("sample", "share"),
                   list(enumerate(pred.shares(len(new_specs))[:, -1].astype(float))))
        print(format_table([base, adapted]), end="")
        print(f"dummy duration share {share:.4f}")
        if args.check:
            a, b = base.values["RelL2"], adapted.values["RelL2"]
            _check(abs(b - a) / a < 0.25, f"ID RelL2 change {abs(b - a) / a:.1%} < 25%", failures)
            _check(share < 0.10, f"dummy share {share:.1%} < 10%", failures)
    if not (args.swap_boundary or args.add_primitive):
        raise ConfigError("transfer needs --swap-boundary or --add-primitive")
    return EXIT_CHECK if failures else EXIT_OK


def cmd_ablate(args):
    from . import ablations as ab
    ds = load_dataset(args.dataset)
    out = _out_dir(args)
    if args.kind == "resolution":
        if not args.checkpoint:
            raise ConfigError("resolution transfer needs --checkpoint")
        ck = load_checkpoint(args.checkpoint)
        base = ds["id"].grid.n_points[0]
        rows = ab.run_resolution_transfer(ck.params, ds, args.points or [base, 2 * base],
                                          feature_set=_feature_set_of(ck))
        name = "resolution_transfer.csv"
    else:
        if not args.config:
            raise ConfigError(f"{args.kind} needs --config")
        cfg = load_config(args.config)
        es = es_config(cfg, generations=args.generations)
        if args.kind == "es-sweep":
            Ms = cfg.get("sweep", {}).get("populations", [100, 250, 500])
            sigmas = cfg.get("sweep", {}).get("sigmas", [0.005, 0.01, 0.02, 0.05, 0.1])
            rows = ab.run_es_sweep(ds, es, Ms, sigmas,
                                   args.generations or ab.SWEEP_GENERATIONS,
                                   threads=_threads(args))
            name = "es_sweep.csv"
        else:
            rows = ab.run_feature_ablation(ds, es, threads=_threads(args))
            name = "feature_ablation.csv"
    ab.write_csv(out / name, rows)
    print((out / name).read_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hycop", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=True):
        if checkpoint:
            sp.add_argument("checkpoint")
        sp.add_argument("--dataset", required=True)
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--threads", type=int, default=0)
        sp.add_argument("--check", action="store_true")

    g = sub.add_parser("gen-data", help="generate benchmark datasets")
    g.add_argument("config")
    g.add_argument("--out-dir", default="data")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a policy with ES")
    t.add_argument("config")
    common(t, checkpoint=False)
    t.add_argument("--out", help="checkpoint path (default OUT_DIR/policy.ckpt)")
    t.add_argument("--warm-start")
    t.add_argument("--generations", type=int)
    t.add_argument("--population", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metric tables for a checkpoint")
    common(e)
    e.add_argument("--horizons", action="store_true")
    e.add_argument("--splits", nargs="*")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare-strang", help="HyCOP vs fixed Strang at matched budget")
    common(c)
    c.add_argument("--substeps", type=int, nargs="*")
    c.add_argument("--split", default="id")
    c.set_defaults(func=cmd_compare_strang)

    d = sub.add_parser("diagnose", help="error decomposition per query")
    d.add_argument("--checkpoint")
    common(d, checkpoint=False)
    d.add_argument("--primitives", help="comma-separated dictionary indices to keep")
    d.add_argument("--substeps", type=int, default=4, help="Strang substeps without a checkpoint")
    d.add_argument("--split", default="id")
    d.set_defaults(func=cmd_diagnose)

    x = sub.add_parser("transfer", help="boundary swap or redundant-primitive adaptation")
    common(x)
    x.add_argument("--swap-boundary", action="store_true")
    x.add_argument("--add-primitive", choices=["reaction"])
    x.add_argument("--config", help="YAML with an 'adapt' ES block")
    x.add_argument("--split")
    x.set_defaults(func=cmd_transfer)

    a = sub.add_parser("ablate", help="ES sweep, feature ablation or resolution transfer")
    a.add_argument("kind", choices=["es-sweep", "features", "resolution"])
    common(a, checkpoint=False)
    a.add_argument("--config")
    a.add_argument("--checkpoint")
    a.add_argument("--points", type=int, nargs="*", help="grid sizes for resolution transfer")
    a.add_argument("--generations", type=int)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
