"""Experiment driver: dataset generation, staged training, evaluation,
resolution sweeps, schedule ablations, and figure export.

Every command is deterministic given (config, seeds) and idempotent on
its output files.  Exit codes: 0 success, 2 config or usage error,
3 data generation produced no usable samples, 4 every seed diverged.

Config precedence for ``train``: CLI flag > JSON config file > preset.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import autodiff as ad
from . import datagen, fno, fsio, losses
from .curriculum import LOG_HEADER, MODES, SCHEDULES, make_stages, run_curriculum
from .fno import OperatorConfig

# Desk-scale presets.  "band" counts cells per domain end (Burgers: 26
# per end out of 1024 is the 5% supervision band).
PRESETS = {
    "poisson": {
        "pde": "poisson", "resolution": 64, "modes": 16, "width": 20,
        "n_blocks": 4, "batch_size": 1, "lr": 2e-3, "band": 1,
        "schedule": "poisson", "epochs": 100, "mode": "MS", "seeds": [0],
        "dataset": None, "spline_residual": False,
    },
    "burgers": {
        "pde": "burgers", "resolution": 1024, "modes": 32, "width": 64,
        "n_blocks": 4, "batch_size": 2, "lr": 1e-2, "band": 26,
        "schedule": "burgers", "epochs": 100, "mode": "MS", "seeds": [0],
        "dataset": None, "spline_residual": False,
    },
    "ns": {
        "pde": "ns", "resolution": 32, "modes": 12, "width": 20,
        "n_blocks": 4, "batch_size": 2, "lr": 2e-3, "band": 1,
        "schedule": "ns", "epochs": 40, "mode": "MS", "seeds": [0],
        "dataset": None, "spline_residual": False,
    },
}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("OPCURL_THREADS", "1")))
    except ValueError:
        return 1


def _fan_out(tasks):
    """Run zero-argument callables, possibly across worker threads."""
    workers = min(_threads(), len(tasks))
    if workers <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return [f.result() for f in [pool.submit(t) for t in tasks]]


# ---------------------------------------------------------------------------
# training problems

class PoissonProblem:
    """Single analytic source on the unit square, clamped boundary.

    The boundary term supervises the one-cell Dirichlet ring; the
    residual term drives the interior.  The test metric is the interior
    mean residual, which is what the benchmark reports.
    """

    def __init__(self, n: int = 64, band: int = 1):
        f, psi = datagen.poisson_reference(n)
        ax = np.linspace(0.0, 1.0, n)
        xg, yg = np.meshgrid(ax, ax, indexing="ij")
        self.inp = ad.constant(np.stack([f, xg, yg])[None])
        self.f = ad.constant(f[None])
        self.target = ad.constant(psi[None])
        self.spacing = (1.0 / (n - 1),) * 2
        self.band = band

    def predict(self, model):
        return fno.forward(model, self.inp, spacing=self.spacing,
                           boundary="clamped")

    def batches(self, rng):
        return [0]

    def losses(self, model, batch):
        field = self.predict(model)
        bd = losses.boundary_band_loss(field, self.target, self.band)
        res = losses.poisson_residual_loss(field, self.f, self.band)
        return bd, res

    def supervised_loss(self, model, batch):
        return losses.l2_metric(self.predict(model), self.target)

    def test_metric(self, model) -> float:
        return losses.poisson_residual_loss(self.predict(model), self.f,
                                            self.band).item()

    def eval_metrics(self, model) -> dict:
        field = self.predict(model)
        return {
            "residual": losses.poisson_residual_loss(field, self.f,
                                                     self.band).item(),
            "l2": losses.l2_metric(field, self.target).item(),
            "n_test": 1,
        }


def _test_count(n_samples: int) -> int:
    return max(1, n_samples // 5)


class BurgersProblem:
    """One-step forecast u(0) -> u(t_final) from a dataset directory.

    Inputs are (u0, x/L); the trailing fifth of the samples is held out.
    """

    def __init__(self, dataset_dir: str, band: int, batch_size: int):
        manifest, samples = datagen.load_dataset(dataset_dir)
        if manifest["pde"] != "burgers":
            raise ValueError(f"dataset {dataset_dir} is not a burgers dataset")
        if not samples:
            raise ValueError(f"dataset {dataset_dir} has no usable samples")
        p = manifest["params"]
        self.nu = p["nu"]
        self.dt = p["t_final"]
        length = p["length"]
        n = manifest["resolution"][0]
        a = np.stack([s["a"] for s in samples])
        self.u1 = np.stack([s["u"] for s in samples])
        coord = np.broadcast_to(samples[0]["x"] / length, a.shape)
        self.inputs = np.stack([a, coord], axis=1)
        self.a = a
        self.spacing = (length / n,)
        self.band = band
        self.batch_size = batch_size
        self.n_test = _test_count(len(samples))
        self.train_idx = np.arange(len(samples) - self.n_test)
        self.test_idx = np.arange(len(samples) - self.n_test, len(samples))

    def predict(self, model, idx):
        return fno.forward(model, ad.constant(self.inputs[idx]),
                           spacing=self.spacing)

    def batches(self, rng):
        perm = self.train_idx[rng.permutation(len(self.train_idx))]
        bs = self.batch_size
        return [perm[i:i + bs] for i in range(0, len(perm), bs)]

    def losses(self, model, idx):
        field = self.predict(model, idx)
        bd = losses.boundary_band_loss(field, ad.constant(self.u1[idx]),
                                       self.band)
        res = losses.burgers_residual_loss(field, ad.constant(self.a[idx]),
                                           self.dt, self.nu,
                                           band_width=self.band)
        return bd, res

    def supervised_loss(self, model, idx):
        return losses.l2_metric(self.predict(model, idx),
                                ad.constant(self.u1[idx]))

    def _test_values(self, model) -> np.ndarray:
        from .spline import reconstruct
        return reconstruct(self.predict(model, self.test_idx), 0, 1).data

    def test_metric(self, model) -> float:
        pred = self._test_values(model)
        return float(np.mean((pred - self.u1[self.test_idx]) ** 2))

    def eval_metrics(self, model) -> dict:
        pred = self._test_values(model)
        truth = self.u1[self.test_idx]
        num = np.sqrt(np.sum((pred - truth) ** 2, axis=-1))
        den = np.sqrt(np.sum(truth ** 2, axis=-1))
        return {
            "l2": float(np.mean((pred - truth) ** 2)),
            "rel_l2": float(np.mean(num / den)),
            "n_test": int(self.n_test),
        }


class NSProblem:
    """Frame-to-next-frame vorticity forecast on the unit torus.

    Every consecutive pair inside each sample's window is one training
    example; dt, viscosity, and the forcing all come from the manifest.
    """

    def __init__(self, dataset_dir: str, band: int, batch_size: int,
                 spline_residual: bool = False):
        manifest, samples = datagen.load_dataset(dataset_dir)
        if manifest["pde"] != "ns":
            raise ValueError(f"dataset {dataset_dir} is not an ns dataset")
        if not samples:
            raise ValueError(f"dataset {dataset_dir} has no usable samples")
        p = manifest["params"]
        self.nu = p["nu"]
        times = manifest["times"]
        self.dt = float(times[1] - times[0])
        n = manifest["resolution"][0]
        self.forcing = datagen.make_forcing(p["forcing"], n)[None]
        ax = np.arange(n) / n
        self.xg, self.yg = np.meshgrid(ax, ax, indexing="ij")
        self.omega = np.stack([s["omega"] for s in samples])
        n_frames = self.omega.shape[1]
        n_test = _test_count(len(samples))
        train_s = range(len(samples) - n_test)
        test_s = range(len(samples) - n_test, len(samples))
        self.train_pairs = [(s, f) for s in train_s for f in range(n_frames - 1)]
        self.test_pairs = [(s, f) for s in test_s for f in range(n_frames - 1)]
        self.spacing = (1.0 / n,) * 2
        self.band = band
        self.batch_size = batch_size
        self.spline_residual = spline_residual

    def _gather(self, pairs):
        w0 = np.stack([self.omega[s, f] for s, f in pairs])
        w1 = np.stack([self.omega[s, f + 1] for s, f in pairs])
        coords = np.broadcast_to(np.stack([self.xg, self.yg]),
                                 (len(pairs), 2) + self.xg.shape)
        inp = np.concatenate([w0[:, None], coords], axis=1)
        return inp, w0, w1

    def batches(self, rng):
        perm = rng.permutation(len(self.train_pairs))
        bs = self.batch_size
        return [[self.train_pairs[j] for j in perm[i:i + bs]]
                for i in range(0, len(perm), bs)]

    def losses(self, model, pairs):
        inp, w0, w1 = self._gather(pairs)
        field = fno.forward(model, ad.constant(inp), spacing=self.spacing)
        bd = losses.boundary_band_loss(field, ad.constant(w1), self.band)
        res = losses.ns_residual_loss(
            [ad.constant(w0), field], self.dt, self.nu, forcing=self.forcing,
            band_width=self.band, spline_derivatives=self.spline_residual)
        return bd, res

    def supervised_loss(self, model, pairs):
        inp, _, w1 = self._gather(pairs)
        field = fno.forward(model, ad.constant(inp), spacing=self.spacing)
        return losses.l2_metric(field, ad.constant(w1))

    def _test_values(self, model):
        from .spline import reconstruct
        inp, _, w1 = self._gather(self.test_pairs)
        field = fno.forward(model, ad.constant(inp), spacing=self.spacing)
        return reconstruct(field, (0, 0), 1).data, w1

    def test_metric(self, model) -> float:
        pred, w1 = self._test_values(model)
        return float(np.mean((pred - w1) ** 2))

    def eval_metrics(self, model) -> dict:
        pred, w1 = self._test_values(model)
        num = np.sqrt(np.sum((pred - w1) ** 2, axis=(-2, -1)))
        den = np.sqrt(np.sum(w1 ** 2, axis=(-2, -1)))
        return {
            "l2": float(np.mean((pred - w1) ** 2)),
            "rel_l2": float(np.mean(num / den)),
            "n_test": len(self.test_pairs),
        }


def build_problem(cfg: dict):
    pde = cfg["pde"]
    if pde == "poisson":
        return PoissonProblem(cfg["resolution"], cfg["band"])
    if pde == "burgers":
        if not cfg.get("dataset"):
            raise ValueError("burgers training needs --dataset")
        return BurgersProblem(cfg["dataset"], cfg["band"], cfg["batch_size"])
    if pde == "ns":
        if not cfg.get("dataset"):
            raise ValueError("ns training needs --dataset")
        return NSProblem(cfg["dataset"], cfg["band"], cfg["batch_size"],
                         cfg.get("spline_residual", False))
    raise ValueError(f"unknown pde {pde!r}")


def model_config(cfg: dict) -> OperatorConfig:
    dim = 1 if cfg["pde"] == "burgers" else 2
    return OperatorConfig(dim=dim, in_channels=2 if dim == 1 else 3,
                          modes=cfg["modes"], width=cfg["width"],
                          n_blocks=cfg["n_blocks"])


def resolve_schedule(cfg: dict):
    sched = cfg["schedule"]
    if isinstance(sched, str):
        if sched not in SCHEDULES:
            raise ValueError(f"unknown schedule {sched!r}")
        sched = SCHEDULES[sched]
    return make_stages([tuple(s) for s in sched], epochs=cfg["epochs"])


def _check_dataset(cfg: dict):
    if not cfg.get("dataset"):
        return
    path = os.path.join(cfg["dataset"], "manifest.json")
    if not os.path.exists(path):
        raise ValueError(f"no manifest at {path}")
    manifest = fsio.read_json(path)
    if manifest["pde"] != cfg["pde"]:
        raise ValueError(f"dataset pde {manifest['pde']!r} does not match "
                         f"{cfg['pde']!r}")
    if manifest["resolution"][0] != cfg["resolution"]:
        raise ValueError(f"dataset resolution {manifest['resolution'][0]} "
                         f"does not match {cfg['resolution']}")


# ---------------------------------------------------------------------------
# run directory output

def write_log_csv(path: str, rows):
    lines = [",".join(LOG_HEADER)]
    for r in rows:
        lines.append(",".join([str(r[0]), str(r[1])]
                              + [fsio.fmt(v) for v in r[2:]]))
    fsio.atomic_write_text(path, "\n".join(lines) + "\n")


def plateau_stats(rows):
    """Mean and spread of the test loss over the final plateau: the last
    100 epochs, or the whole final stage if it is shorter."""
    last_stage = rows[-1][1]
    tail = [r[8] for r in rows if r[1] == last_stage]
    tail = tail[-min(100, len(tail)):]
    arr = np.asarray(tail)
    return float(arr.mean()), float(arr.std()), len(tail)


def train_one_seed(cfg: dict, problem, mode: str, seed: int, out_dir: str) -> dict:
    model = fno.init_model(model_config(cfg), seed=seed)
    stages = resolve_schedule(cfg)
    result = run_curriculum(model, problem, stages, mode, cfg["lr"], seed=seed)

    seed_dir = os.path.join(out_dir, f"seed_{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    write_log_csv(os.path.join(seed_dir, "log.csv"), result.rows)
    fsio.dump_json(os.path.join(seed_dir, "diagnostics.json"), {
        "schema": 1,
        "mode": mode,
        "seed": seed,
        "transitions": result.transitions,
        "eta_eff": [float(v) for v in result.eta_eff],
        "stage_starts": result.stage_starts,
        "diverged": result.diverged,
    })
    summary = {
        "schema": 1,
        "pde": cfg["pde"],
        "mode": mode,
        "seed": seed,
        "epochs": len(result.rows),
        "diverged": result.diverged,
    }
    if result.rows:
        mean, sd, n_plateau = plateau_stats(result.rows)
        summary.update({
            "plateau_test_mean": mean,
            "plateau_test_sd": sd,
            "plateau_epochs": n_plateau,
            "final_test": result.rows[-1][8],
            "final_train": float(result.rows[-1][7]),
        })
    fsio.dump_json(os.path.join(seed_dir, "summary.json"), summary)
    fno.save_checkpoint(model, os.path.join(seed_dir, "checkpoint"),
                        extra={"pde": cfg["pde"], "mode": mode, "seed": seed})
    return summary


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    out = os.path.abspath(args.out)
    parent = os.path.dirname(out)
    if not os.path.isdir(parent):
        print(f"error: output parent directory {parent} does not exist",
              file=sys.stderr)
        return 2
    if args.pde == "burgers":
        nu = 0.1 if args.nu is None else args.nu
        samples = 20 if args.samples is None else args.samples
        if args.resolutions:
            manifests = datagen.build_burgers_family(
                out, args.resolutions, n_samples=samples, nu=nu,
                t_final=args.t_final, seed=args.seed)
            manifest = manifests[max(args.resolutions)]
        else:
            n = 1024 if args.resolution is None else args.resolution
            manifest = datagen.build_burgers_dataset(
                out, n=n, n_samples=samples, nu=nu,
                t_final=args.t_final, seed=args.seed)
    elif args.pde == "ns":
        nu = 1e-3 if args.nu is None else args.nu
        samples = 12 if args.samples is None else args.samples
        n = 32 if args.resolution is None else args.resolution
        manifest = datagen.build_ns_dataset(
            out, n=n, n_samples=samples, nu=nu,
            forcing=args.forcing, t_in=args.t_in, n_frames=args.frames,
            dt_frame=args.dt_frame, seed=args.seed)
    else:
        print(f"error: no generator for pde {args.pde!r}", file=sys.stderr)
        return 2
    skipped = sum(1 for s in manifest["samples"] if s["skipped"])
    kept = len(manifest["samples"]) - skipped
    for s in manifest["samples"]:
        if s["skipped"]:
            print(f"warning: sample {s['index']} blew up, skipped",
                  file=sys.stderr)
    print(f"{manifest['pde']} dataset at {out}: resolution "
          f"{manifest['resolution']}, {kept} samples kept, {skipped} skipped")
    if kept == 0:
        print("error: every sample blew up", file=sys.stderr)
        return 3
    return 0


def load_config(args) -> dict:
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = fsio.read_json(args.config)
    pde = args.pde or file_cfg.get("pde")
    if pde not in PRESETS:
        raise ValueError(f"unknown or missing pde {pde!r}")
    cfg = dict(PRESETS[pde])
    for key, val in file_cfg.items():
        if key not in cfg:
            raise ValueError(f"unknown config key {key!r}")
        cfg[key] = val
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def cmd_train(args) -> int:
    try:
        cfg = load_config(args)
        _check_dataset(cfg)
        problem = build_problem(cfg)
        resolve_schedule(cfg)
        if cfg["mode"] not in MODES:
            raise ValueError(f"unknown mode {cfg['mode']!r}")
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = os.path.abspath(args.out)
    os.makedirs(out, exist_ok=True)
    fsio.dump_json(os.path.join(out, "config.json"), cfg)
    seeds = cfg["seeds"]
    mode = cfg["mode"]
    summaries = _fan_out([
        (lambda s=s: train_one_seed(cfg, problem, mode, s, out))
        for s in seeds])
    for s, summary in zip(seeds, summaries):
        if summary["diverged"]:
            print(f"seed {s}: DIVERGED after {summary['epochs']} epochs")
        else:
            print(f"seed {s}: {mode} final test {fsio.fmt(summary['final_test'])} "
                  f"(plateau {fsio.fmt(summary['plateau_test_mean'])} "
                  f"+/- {fsio.fmt(summary['plateau_test_sd'])})")
    if all(s["diverged"] for s in summaries):
        print("error: every seed diverged", file=sys.stderr)
        return 4
    return 0


def _problem_for_checkpoint(meta, cfg_overrides):
    cfg = dict(PRESETS[meta["pde"]])
    cfg.update({k: v for k, v in cfg_overrides.items() if v is not None})
    cfg["modes"] = meta["config"]["modes"]
    cfg["width"] = meta["config"]["width"]
    cfg["n_blocks"] = meta["config"]["n_blocks"]
    return cfg


def cmd_eval(args) -> int:
    try:
        model, meta = fno.load_checkpoint(args.checkpoint)
        cfg = _problem_for_checkpoint(meta, {"dataset": args.dataset})
        problem = build_problem(cfg)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    metrics = {"schema": 1, "pde": cfg["pde"],
               "checkpoint": os.path.abspath(args.checkpoint)}
    metrics.update(problem.eval_metrics(model))
    out = os.path.abspath(args.out)
    os.makedirs(out, exist_ok=True)
    fsio.dump_json(os.path.join(out, "metrics.json"), metrics)
    for key in sorted(metrics):
        if isinstance(metrics[key], float):
            print(f"{key}: {fsio.fmt(metrics[key])}")
    return 0


def cmd_resolution_sweep(args) -> int:
    try:
        model, meta = fno.load_checkpoint(args.checkpoint)
        if meta.get("pde") != "burgers":
            raise ValueError("resolution sweep supports burgers checkpoints")
        modes = meta["config"]["modes"]
        rows = []
        for n in args.resolutions:
            if n < 2 * modes:
                raise ValueError(f"resolution {n} below 2*modes ({2 * modes})")
            ds = os.path.join(args.data_root, f"r{n}")
            problem = BurgersProblem(ds, band=1, batch_size=1)
            m = problem.eval_metrics(model)
            rows.append((n, m["l2"], m["rel_l2"]))
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    lines = ["resolution,l2,rel_l2"]
    for n, l2, rel in rows:
        lines.append(f"{n},{fsio.fmt(l2)},{fsio.fmt(rel)}")
        print(f"{n:>8}  l2 {fsio.fmt(l2)}  rel_l2 {fsio.fmt(rel)}")
    fsio.atomic_write_text(os.path.abspath(args.out), "\n".join(lines) + "\n")
    return 0


def cmd_ablate(args) -> int:
    try:
        for v in args.variants:
            if v not in SCHEDULES:
                raise ValueError(f"unknown schedule variant {v!r}")
        args.pde = "burgers"
        args.seeds = [args.seed]
        cfg = load_config(args)
        _check_dataset(cfg)
        problem = build_problem(cfg)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = os.path.abspath(args.out)
    arms = [(v, m) for v in args.variants for m in ("MS", "MS_no_reset")]

    def run_arm(variant, mode):
        arm_cfg = dict(cfg, schedule=variant, mode=mode)
        arm_dir = os.path.join(out, variant, mode)
        os.makedirs(arm_dir, exist_ok=True)
        return train_one_seed(arm_cfg, problem, mode, args.seed, arm_dir)

    results = _fan_out([(lambda a=a: run_arm(*a)) for a in arms])
    by_arm = dict(zip(arms, results))
    comparison = {"schema": 1, "pde": cfg["pde"], "seed": args.seed,
                  "variants": {}}
    print(f"{'variant':>8} {'MS':>12} {'MS_no_reset':>12}")
    for v in args.variants:
        ms, nr = by_arm[(v, "MS")], by_arm[(v, "MS_no_reset")]
        entry = {"MS": ms.get("final_test"),
                 "MS_no_reset": nr.get("final_test"),
                 "MS_diverged": ms["diverged"],
                 "MS_no_reset_diverged": nr["diverged"]}
        entry["ms_not_worse"] = (not ms["diverged"]
                                 and (nr["diverged"]
                                      or entry["MS"] <= entry["MS_no_reset"]))
        comparison["variants"][v] = entry
        print(f"{v:>8} {_num(entry['MS']):>12} {_num(entry['MS_no_reset']):>12}")
    fsio.dump_json(os.path.join(out, "comparison.json"), comparison)
    if all(r["diverged"] for r in results):
        print("error: every arm diverged", file=sys.stderr)
        return 4
    return 0


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.4e}"


# ---------------------------------------------------------------------------
# plots

def _embed_table(path: str, title: str, header, rows):
    """Append the plotted numbers as a comment so the SVG is diffable."""
    lines = [",".join(str(h) for h in header)]
    for r in rows:
        lines.append(",".join(fsio.fmt(v) if isinstance(v, float) else str(v)
                              for v in r))
    with open(path) as fh:
        svg = fh.read()
    table = f"<!-- {title}\n" + "\n".join(lines) + "\n-->\n</svg>"
    fsio.atomic_write_text(path, svg.replace("</svg>", table))


def _save(fig, path: str):
    fig.savefig(path, format="svg", metadata={"Date": None})


def cmd_plot(args) -> int:
    log_path = os.path.join(args.run, "log.csv")
    if not os.path.exists(log_path):
        print(f"error: no log.csv under {args.run}", file=sys.stderr)
        return 2
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "opcurl"

    with open(log_path) as fh:
        log = list(csv.DictReader(fh))
    out = os.path.abspath(args.out or args.run)
    os.makedirs(out, exist_ok=True)
    epochs = [int(r["epoch"]) for r in log]
    stage = [int(r["stage"]) for r in log]
    boundaries = [epochs[i] for i in range(1, len(log))
                  if stage[i] != stage[i - 1]]

    def stage_markers(axis):
        for b in boundaries:
            axis.axvline(b - 0.5, color="grey", ls="--", lw=0.8)

    made = []

    def line_figure(name, series, ylabel):
        fig, axis = plt.subplots(figsize=(6, 4))
        for label, ys in series:
            axis.semilogy(epochs, ys, label=label)
        stage_markers(axis)
        axis.set_xlabel("epoch")
        axis.set_ylabel(ylabel)
        axis.legend()
        fig.tight_layout()
        path = os.path.join(out, name)
        _save(fig, path)
        plt.close(fig)
        _embed_table(path, name, ["epoch"] + [s[0] for s in series],
                     [(e,) + tuple(float(ys[i]) for _, ys in series)
                      for i, e in enumerate(epochs)])
        made.append(name)

    line_figure("loss_vs_epoch.svg",
                [("train", [float(r["loss_train"]) for r in log]),
                 ("test", [float(r["loss_test"]) for r in log])],
                "loss")
    line_figure("component_losses.svg",
                [("boundary", [float(r["loss_bd"]) for r in log]),
                 ("residual", [float(r["loss_res"]) for r in log])],
                "component loss")

    diag_path = os.path.join(args.run, "diagnostics.json")
    diag = fsio.read_json(diag_path) if os.path.exists(diag_path) else {}
    eta = diag.get("eta_eff") or []
    if eta:
        line_figure("eta_eff.svg", [("eta_eff", eta)], "mean |step|")
    transitions = diag.get("transitions") or []
    if transitions:
        dom_rows, ratio_rows = [], []
        for ti, tr in enumerate(transitions, start=1):
            for layer in tr["layers"]:
                dom_rows.append((ti, layer["layer"], layer["var_term"],
                                 layer["grad_term"]))
                ratio_rows.append((ti, layer["layer"], layer["ratio"]))

        fig, axis = plt.subplots(figsize=(5, 5))
        xs = [r[2] for r in dom_rows]
        ys = [r[3] for r in dom_rows]
        axis.loglog(xs, ys, "o", ms=4)
        lo = min(xs + ys)
        hi = max(xs + ys)
        axis.loglog([lo, hi], [lo, hi], "k-", lw=0.8, label="y = x")
        axis.loglog([lo, hi], [0.1 * lo, 0.1 * hi], "k--", lw=0.8,
                    label="y = 0.1 x")
        axis.set_xlabel("variance term")
        axis.set_ylabel("gradient term")
        axis.legend()
        fig.tight_layout()
        path = os.path.join(out, "dominance.svg")
        _save(fig, path)
        plt.close(fig)
        _embed_table(path, "dominance.svg",
                     ("transition", "layer", "var_term", "grad_term"), dom_rows)
        made.append("dominance.svg")

        fig, axis = plt.subplots(figsize=(6, 4))
        axis.semilogy([r[0] for r in ratio_rows], [r[2] for r in ratio_rows],
                      "o", ms=4)
        axis.axhline(1.0, color="k", lw=0.8)
        axis.set_xlabel("transition")
        axis.set_ylabel("amplification R")
        axis.set_xticks(sorted({r[0] for r in ratio_rows}))
        fig.tight_layout()
        path = os.path.join(out, "amplification.svg")
        _save(fig, path)
        plt.close(fig)
        _embed_table(path, "amplification.svg",
                     ("transition", "layer", "ratio"), ratio_rows)
        made.append("amplification.svg")

    print(f"wrote {', '.join(made)} to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opcurl")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a solver dataset")
    g.add_argument("--pde", required=True, choices=["burgers", "ns"])
    g.add_argument("--out", required=True)
    g.add_argument("--resolution", type=int, default=None,
                   help="grid points per axis (default 1024 burgers, 32 ns)")
    g.add_argument("--resolutions", type=int, nargs="+",
                   help="burgers only: restricted family from one fine solve")
    g.add_argument("--samples", "--n", dest="samples", type=int, default=None,
                   help="sample count (default 20 burgers, 12 ns)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--nu", type=float, default=None)
    g.add_argument("--t-final", type=float, default=0.1)
    g.add_argument("--forcing", default="trig_ns")
    g.add_argument("--t-in", type=float, default=40.0)
    g.add_argument("--frames", type=int, default=10)
    g.add_argument("--dt-frame", type=float, default=0.25)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the staged curriculum")
    t.add_argument("--pde", choices=sorted(PRESETS))
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--dataset")
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--seeds", type=int, nargs="+")
    t.add_argument("--epochs", type=int)
    t.add_argument("--schedule")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--band", type=int)
    t.add_argument("--modes", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--blocks", dest="n_blocks", type=int)
    t.add_argument("--resolution", type=int)
    t.add_argument("--spline-residual", dest="spline_residual",
                   action="store_const", const=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("resolution-sweep",
                       help="evaluate one checkpoint across resolutions")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data-root", required=True,
                   help="directory holding r<N> dataset subdirectories")
    r.add_argument("--resolutions", type=int, nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_resolution_sweep)

    a = sub.add_parser("ablate", help="compare MS vs MS_no_reset per schedule")
    a.add_argument("--dataset", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.add_argument("--variants", nargs="+", default=["l1", "l2", "l3", "l4"])
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--epochs", type=int)
    a.add_argument("--lr", type=float)
    a.add_argument("--batch-size", dest="batch_size", type=int)
    a.add_argument("--band", type=int)
    a.add_argument("--modes", type=int)
    a.add_argument("--width", type=int)
    a.add_argument("--resolution", type=int)
    a.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render SVG figures from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
