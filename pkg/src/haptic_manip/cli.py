"""Command-line entry point: ``haptic-manip <stage> [options]``.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path


from . import control, datagen, dynamics, percept
from .config import RunConfig, load_config, stage_seed
from .errors import ConfigError, HapticManipError, MissingDataset

STAGES = ("collect", "train-obs", "train-critic", "train-trans", "eval-obs", "eval-trans", "sweep",
          "transfer", "rollout", "bench", "report")
KINDS = ("local_gp", "fc_nn", "lstm")


class StageError(HapticManipError):
    """Runtime failure inside a stage (exit code 3)."""


class Context:
    def __init__(self, cfg: RunConfig, args):
        self.cfg = cfg
        self.args = args
        self.root = cfg.run_dir
        self.force = getattr(args, "force", False)
        self.jobs = args.jobs

    # -- paths ------------------------------------------------------------
    def obj_label(self, name=None) -> str:
        return self.cfg.object(name).label

    def data_dir(self, name=None) -> Path:
        return self.root / "data" / self.obj_label(name)

    def model_path(self, role: str, tag: str, kind: str, name=None) -> Path:
        return self.root / "models" / f"{role}_{self.obj_label(name)}_{tag}_{kind}.npz"

    def result(self, *parts) -> Path:
        return self.root / "results" / Path(*parts)

    def guard(self, path: Path) -> Path:
        if path.exists() and not self.force:
            raise StageError(f"refusing to overwrite {path} (pass --force)")
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    # -- data -------------------------------------------------------------
    def dataset(self, name=None):
        d = self.data_dir(name)
        if not (d / "manifest.json").exists():
            raise MissingDataset(f"dataset not found: {d} (run `collect` first)")
        return datagen.read(d)

    def splits(self, name=None):
        return datagen.split(self.dataset(name), self.cfg.split_policy())

    # -- models (loaded if present, else trained and stored) --------------
    def obs(self, comb, kind, name=None):
        path = self.model_path("obs", f"c{comb}", kind, name)
        if path.exists() and not getattr(self, "_retrain", False):
            return percept.load_observation(path)
        train, _, _ = self.splits(name)
        spec = self.cfg.regressor("obs", kind, stage=f"train-obs:{self.obj_label(name)}:c{comb}:{kind}")
        model = percept.train_observation(train, comb, spec)
        path.parent.mkdir(parents=True, exist_ok=True)
        percept.save_observation(model, path)
        return model

    def critic(self, comb, kind):
        path = self.model_path("critic", f"c{comb}", kind)
        if path.exists() and not getattr(self, "_retrain", False):
            return percept.load_critic(path)
        obs = self.obs(comb, kind)
        _, _, hold = self.splits()
        spec = self.cfg.regressor("critic", stage=f"train-critic:{self.obj_label()}:c{comb}:{kind}")
        model = percept.train_critic(obs, hold, spec)
        path.parent.mkdir(parents=True, exist_ok=True)
        percept.save_critic(model, path)
        return model

    def trans(self, state, kind):
        tag = "vis" if state == dynamics.VIS_STATE else f"c{state}"
        path = self.model_path("trans", tag, kind)
        if path.exists() and not getattr(self, "_retrain", False):
            return dynamics.load_transition(path)
        train, _, _ = self.splits()
        spec = self.cfg.regressor("trans", kind, stage=f"train-trans:{self.obj_label()}:{tag}:{kind}")
        model = dynamics.train_transition(train, state, spec, self.cfg["trans"]["past_states"])
        path.parent.mkdir(parents=True, exist_ok=True)
        dynamics.save_transition(model, path)
        return model

    def train_stage(self, path: Path, build):
        self.guard(path)
        self._retrain = True
        try:
            return build()
        finally:
            self._retrain = False


def _csv_row(path: Path) -> str:
    lines = path.read_text().splitlines()
    return lines[-1] if len(lines) > 1 else ""


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def cmd_collect(ctx: Context) -> str:
    cfg, name = ctx.cfg, ctx.args.object
    obj = cfg.object(name)
    out = ctx.data_dir(name)
    if (out / "manifest.json").exists() and not ctx.force:
        raise StageError(f"refusing to overwrite {out} (pass --force)")
    d = cfg["data"]
    ds = datagen.collect(cfg.hand(), obj, d["n_episodes"], d["max_steps"], stage_seed(cfg.seed, f"collect:{obj.label}"),
                         noise=cfg.noise(), min_records=d["min_records"], jobs=ctx.jobs,
                         timestamp="seeded-run")
    datagen.write(ds, out)
    return f"collected {len(ds)} records in {ds.manifest['n_episodes']} episodes -> {out}"


def _comb_kind(ctx, section="obs"):
    a = ctx.args
    return (a.comb if a.comb is not None else ctx.cfg[section]["comb"]), (a.regressor or ctx.cfg[section]["kind"])


def cmd_train_obs(ctx: Context) -> str:
    comb, kind = _comb_kind(ctx)
    path = ctx.model_path("obs", f"c{comb}", kind, ctx.args.object)
    m = ctx.train_stage(path, lambda: ctx.obs(comb, kind, ctx.args.object))
    return f"observation model comb {comb} {kind} ({len(m.regressor.history)} history entries) -> {path}"


def cmd_train_critic(ctx: Context) -> str:
    comb, kind = _comb_kind(ctx)
    path = ctx.model_path("critic", f"c{comb}", kind)
    ctx.train_stage(path, lambda: ctx.critic(comb, kind))
    return f"critic for comb {comb} {kind} -> {path}"


def _trans_state(ctx):
    if ctx.args.state == "vis":
        return dynamics.VIS_STATE
    return ctx.args.comb if ctx.args.comb is not None else ctx.cfg["trans"]["comb"]


def cmd_train_trans(ctx: Context) -> str:
    state = _trans_state(ctx)
    kind = ctx.args.regressor or ctx.cfg["trans"]["kind"]
    tag = "vis" if state == dynamics.VIS_STATE else f"c{state}"
    path = ctx.model_path("trans", tag, kind)
    ctx.train_stage(path, lambda: ctx.trans(state, kind))
    return f"transition model {tag} {kind} -> {path}"


def cmd_eval_obs(ctx: Context) -> str:
    a = ctx.args
    pairs = [(c, k) for c in range(1, 10) for k in KINDS] if a.all else [_comb_kind(ctx)]
    _, test, _ = ctx.splits(a.object)
    written = []
    for comb, kind in pairs:
        out = ctx.guard(ctx.result("obs", f"{ctx.obj_label(a.object)}_c{comb}_{kind}.csv"))
        rep = percept.evaluate_observation(ctx.obs(comb, kind, a.object), test)
        percept.write_rmse_table([(comb, kind, rep)], out)
        written.append(out)
    if len(written) == 1:
        return _csv_row(written[0])
    return f"wrote {len(written)} observation rows under {written[0].parent}"


def cmd_eval_trans(ctx: Context) -> str:
    t = ctx.cfg["trans"]
    state = _trans_state(ctx)
    kind = ctx.args.regressor or t["kind"]
    tag = "vis" if state == dynamics.VIS_STATE else f"c{state}"
    base = f"{ctx.obj_label()}_{tag}_{kind}"
    curve_path = ctx.guard(ctx.result("trans", f"{base}_curve.csv"))
    one_path = ctx.guard(ctx.result("trans", f"{base}_onestep.csv"))
    model = ctx.trans(state, kind)
    obs = None if state == dynamics.VIS_STATE else ctx.obs(state, ctx.cfg["obs"]["kind"])
    _, test, _ = ctx.splits()
    rmse, persist = dynamics.eval_one_step(model, test)
    with open(one_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_rmse", "persistence_rmse"])
        w.writerow([f"{rmse:.6f}", f"{persist:.6f}"])
    curve = dynamics.eval_open_loop(model, obs, test, t["horizon"], t["stride"])
    dynamics.write_curve(curve, curve_path)
    return (f"one-step RMSE {rmse:.4f} vs persistence {persist:.4f}; open-loop error "
            f"{curve[0, 0]:.2f} mm @1 -> {curve[-1, 0]:.2f} mm @{len(curve)}")


def cmd_sweep(ctx: Context) -> str:
    comb, kind = _comb_kind(ctx)
    out = ctx.guard(ctx.result("sweep", f"{ctx.obj_label()}_c{comb}_{kind}.csv"))
    spec = ctx.cfg.regressor("obs", kind, stage=f"train-obs:{ctx.obj_label()}:c{comb}:{kind}")
    curve = percept.datasize_sweep(ctx.dataset(), ctx.cfg["data"]["sweep_fractions"], comb, spec,
                                   ctx.cfg.split_policy())
    percept.write_sweep(curve, out)
    return "sweep " + ", ".join(f"{f:g}: {r.position_rmse:.2f} mm" for f, r in curve)


def cmd_transfer(ctx: Context) -> str:
    comb, kind = _comb_kind(ctx)
    names = ctx.args.objects.split(",") if ctx.args.objects else ctx.cfg["data"]["transfer_objects"]
    pos = ctx.guard(ctx.result("transfer", f"c{comb}_{kind}_position.csv"))
    ori = ctx.guard(ctx.result("transfer", f"c{comb}_{kind}_orientation.csv"))
    labels, reports = [], []
    tests = [ctx.splits(n)[1] for n in names]
    for n in names:
        model = ctx.obs(comb, kind, n)
        labels.append(ctx.obj_label(n))
        reports.append([percept.evaluate_observation(model, te) for te in tests])
    matrix = percept.TransferMatrix(labels, reports)
    percept.write_transfer(matrix, pos, "position")
    percept.write_transfer(matrix, ori, "orientation")
    return f"transfer matrix {len(names)}x{len(names)} -> {pos.parent}"


def _control_models(ctx: Context, methods) -> control.ControlModels:
    o, t = ctx.cfg["obs"], ctx.cfg["trans"]
    need_haptic = any(m in ("OL", "HS", "MPC", "MPC-Critic") for m in methods)
    models = control.ControlModels()
    if need_haptic:
        models.obs = ctx.obs(t["comb"], o["kind"])
    if any(m in ("OL", "MPC", "MPC-Critic") for m in methods):
        models.trans = ctx.trans(t["comb"], t["kind"])
    if "MPC-Critic" in methods or "OL" in methods:
        models.critic = ctx.critic(t["comb"], o["kind"])
    if "MPC-Vis" in methods:
        models.trans_vis = ctx.trans(dynamics.VIS_STATE, t["kind"])
    if "OL" in methods:
        train, _, _ = ctx.splits()
        models.initial_history = control.mean_initial_history(train, models.trans)
    return models


def cmd_rollout(ctx: Context) -> str:
    a, cfg = ctx.args, ctx.cfg
    goal = [float(v) for v in a.goal.split(",")]
    if len(goal) != 2:
        raise ConfigError("--goal expects x,y in mm")
    out = ctx.guard(ctx.result("rollouts", f"{a.method}_{a.grasp_seed}.json"))
    models = _control_models(ctx, [a.method])
    res = control.rollout(a.method, models, goal, a.grasp_seed, cfg.hand(), cfg.object(), cfg.noise(), cfg.mpc())
    with open(out, "w") as fh:
        json.dump(asdict(res), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return f"{a.method}: {res.outcome}, final error {res.final_error:.2f} mm after {res.steps} steps"


def cmd_bench(ctx: Context) -> str:
    a, cfg = ctx.args, ctx.cfg
    methods = a.methods.split(",") if a.methods else cfg["bench"]["methods"]
    n = a.goals if a.goals is not None else cfg["bench"]["goals"]
    for m in methods:
        if m not in control.METHODS:
            raise ConfigError(f"unknown method {m!r}; expected some of {','.join(control.METHODS)}")
    out = ctx.guard(ctx.result("bench", f"{ctx.obj_label()}.csv"))
    models = _control_models(ctx, methods)
    train, _, _ = ctx.splits()
    bench = control.benchmark(methods, n, stage_seed(cfg.seed, "bench"), models, train.poses(), cfg.hand(),
                              cfg.object(), cfg.noise(), cfg.mpc(), jobs=ctx.jobs)
    control.write_benchmark(bench, out)
    control.write_traces(bench, ctx.result("bench", f"{ctx.obj_label()}_traces"))
    return "bench " + ", ".join(f"{r.method} {r.success_rate:.0%}" for r in bench.rows)


def cmd_report(ctx: Context) -> str:
    from .report import write_summary
    path = write_summary(ctx.root)
    return f"summary -> {path}"


COMMANDS = {
    "collect": cmd_collect, "train-obs": cmd_train_obs, "train-critic": cmd_train_critic,
    "train-trans": cmd_train_trans, "eval-obs": cmd_eval_obs, "eval-trans": cmd_eval_trans,
    "sweep": cmd_sweep, "transfer": cmd_transfer, "rollout": cmd_rollout, "bench": cmd_bench,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration (defaults apply to every missing key)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--run-dir", help="output directory (overrides run_dir in the config)")
    common.add_argument("--seed", type=int, help="root seed (overrides seed in the config)")
    common.add_argument("--jobs", type=int, default=int(os.environ.get("HAPTIC_MANIP_JOBS", "1")),
                        help="worker processes (default: $HAPTIC_MANIP_JOBS or 1)")
    common.add_argument("--force", action="store_true", help="overwrite existing stage outputs")

    p = argparse.ArgumentParser(prog="haptic-manip", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="stage", required=True, metavar="STAGE")

    def stage(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    def model_flags(sp, objects=False):
        sp.add_argument("--comb", type=int, choices=range(1, 10), metavar="1..9")
        sp.add_argument("--regressor", choices=KINDS)
        if objects:
            sp.add_argument("--object", help="object name (default: [object] section)")

    sp = stage("collect", "simulate random-action episodes and write a dataset")
    sp.add_argument("--object")
    model_flags(stage("train-obs", "train an observation model"), objects=True)
    model_flags(stage("train-critic", "train the critic on the holdout split"))
    sp = stage("train-trans", "train a transition model")
    model_flags(sp)
    sp.add_argument("--state", choices=("features", "vis"), default="features")
    sp = stage("eval-obs", "evaluate observation models (RMSE table rows)")
    model_flags(sp, objects=True)
    sp.add_argument("--all", action="store_true", help="every combination x regressor")
    sp = stage("eval-trans", "one-step and open-loop transition evaluation")
    model_flags(sp)
    sp.add_argument("--state", choices=("features", "vis"), default="features")
    model_flags(stage("sweep", "training-set size sweep"))
    sp = stage("transfer", "cross-object transfer matrix")
    model_flags(sp)
    sp.add_argument("--objects", help="comma-separated object names")
    sp = stage("rollout", "one controlled roll-out")
    sp.add_argument("--method", choices=control.METHODS, required=True)
    sp.add_argument("--goal", required=True, help="x,y in mm")
    sp.add_argument("--grasp-seed", type=int, default=0)
    sp = stage("bench", "benchmark controllers on common goals")
    sp.add_argument("--goals", type=int)
    sp.add_argument("--methods", help="comma-separated subset of " + ",".join(control.METHODS))
    stage("report", "merge stage outputs into summary.md")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        overrides = list(args.set)
        if args.run_dir:
            overrides.append(f"run_dir={json.dumps(args.run_dir)}")
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    ctx = Context(cfg, args)
    try:
        if args.stage != "report":
            ctx.root.mkdir(parents=True, exist_ok=True)
            (ctx.root / "effective_config.json").write_text(cfg.to_json())
        msg = COMMANDS[args.stage](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (HapticManipError, OSError, FloatingPointError, ValueError) as exc:
        print(f"{args.stage} failed: {exc}", file=sys.stderr)
        return 3
    print(msg)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
