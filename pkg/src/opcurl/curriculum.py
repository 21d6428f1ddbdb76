"""Adam with explicit moment state, staged training, and reset diagnostics.

The optimizer keeps per-group moment arrays keyed by parameter name;
complex parameters are updated through their float64 view so the moment
recursion stays real elementwise.  Stage boundaries optionally zero the
moments and step counter, which restores first-step-sized updates; the
diagnostics captured at each boundary quantify that amplification.

Moment recursion: m = (1-b1) g + b1 m, v = (1-b2) g^2 + b2 v.  With
bias_correction on, the update uses m/(1-b1^t) and v/(1-b2^t); the
closed forms tested against hand arithmetic use the raw moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .losses import combine
from .spectral import rng_for

SENTINEL = 1e18


def _real_view(arr: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(arr):
        return np.ascontiguousarray(arr).view(np.float64)
    return arr


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bias_correction: bool = True
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params: dict, lr: float, **kwargs) -> AdamState:
    state = AdamState(lr=lr, **kwargs)
    for name, tensor in params.items():
        shape = _real_view(tensor.data).shape
        state.m[name] = np.zeros(shape)
        state.v[name] = np.zeros(shape)
    return state


def reset_state(state: AdamState) -> AdamState:
    for name in state.m:
        state.m[name][...] = 0.0
        state.v[name][...] = 0.0
    state.t = 0
    return state


def adam_step(params: dict, grads: dict, state: AdamState,
              lr: float | None = None) -> float:
    """One update over every group; returns the mean |delta theta|.

    grads maps name -> gradient array (missing entries count as zero).
    A non-finite gradient aborts before any group is touched.
    """
    if lr is None:
        lr = state.lr
    b1, b2 = state.beta1, state.beta2
    views = {}
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(_real_view(tensor.data))
        else:
            g = _real_view(np.asarray(g))
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
        views[name] = (tensor.data if not np.iscomplexobj(tensor.data)
                       else tensor.data.view(np.float64), g)
    state.t += 1
    bc1 = 1.0 - b1 ** state.t if state.bias_correction else 1.0
    bc2 = 1.0 - b2 ** state.t if state.bias_correction else 1.0
    total_abs = 0.0
    total_n = 0
    for name, (x, g) in views.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        delta = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        x -= delta
        total_abs += np.sum(np.abs(delta))
        total_n += delta.size
    return total_abs / total_n


def stage_diagnostics(state: AdamState, grads: dict, params: dict) -> list:
    """Per-group reset statistics from the pre-transition moments and the
    first gradient under the new weights (raw moments, no bias factors)."""
    b1, b2 = state.beta1, state.beta2
    records = []
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(_real_view(tensor.data))
        else:
            g = _real_view(np.asarray(g))
        m = state.m[name]
        v = state.v[name]
        vbar = float(np.mean(v))
        grad_term = (1.0 - b2) * float(np.mean(g * g))
        var_term = b2 * vbar
        denom = float(np.mean(np.abs((1.0 - b1) * g + b1 * m)))
        flagged = denom == 0.0
        if flagged:
            ratio = SENTINEL
        else:
            ratio = (1.0 - b1) * np.sqrt(b2 * vbar) / (np.sqrt(1.0 - b2) * denom)
        dominance = grad_term / var_term if var_term > 0 else SENTINEL
        records.append({
            "layer": name,
            "grad_term": grad_term,
            "var_term": var_term,
            "ratio": float(ratio),
            "dominance": float(dominance),
            "flagged": bool(flagged or var_term == 0.0),
        })
    return records


# ---------------------------------------------------------------------------
# stage schedules

@dataclass(frozen=True)
class Stage:
    lam_bd: float
    lam_res: float
    epochs: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lam_bd < 0 or self.lam_res < 0:
            raise ValueError("stage weights must be non-negative")


# (lam_bd, lam_res) per stage; l1-l4 are the ablation variants
SCHEDULES = {
    "poisson": [(1.0, 0.0), (0.8, 0.5), (0.5, 1.0)],
    "burgers": [(0.8, 0.5), (0.5, 1.0), (0.5, 1.5)],
    "ns": [(1.0, 0.0), (1.0, 0.0), (0.8, 0.5), (0.5, 1.0), (0.2, 1.5)],
    "kolmogorov": [(1.0, 0.2), (0.8, 0.5), (0.5, 1.0)],
    "l1": [(0.8, 0.5), (0.5, 1.0), (0.5, 1.5)],
    "l2": [(1.0, 0.0), (0.5, 0.5), (0.25, 0.75)],
    "l3": [(1.0, 0.0), (1.0, 0.5), (1.0, 1.0)],
    "l4": [(1.0, 0.2), (0.7, 0.8), (0.4, 1.2)],
}


def make_stages(weights, epochs: int = 100) -> list:
    if not weights:
        raise ValueError("schedule must be non-empty")
    return [Stage(bd, res, epochs) for bd, res in weights]


@dataclass
class RunResult:
    rows: list         # (epoch, stage, lam_bd, lam_res, lr, bd, res, train, test)
    transitions: list  # per-boundary dicts with per-layer diagnostics
    eta_eff: list      # per-epoch mean realized |step|
    stage_starts: list
    diverged: bool
    state: AdamState


LOG_HEADER = ("epoch", "stage", "lambda_bd", "lambda_res", "lr",
              "loss_bd", "loss_res", "loss_train", "loss_test")

MODES = ("MS", "MS_no_reset", "SS", "supervised")


def run_curriculum(model, problem, stages, mode: str, lr: float, seed: int = 0,
                   decay_gamma: float = 0.5, decay_every: int = 20,
                   divergence_limit: float = 1e6,
                   bias_correction: bool = True, eps: float = 1e-8) -> RunResult:
    """Train through the staged schedule in one of four modes.

    MS resets the optimizer at every stage boundary (and restores the
    base learning rate); MS_no_reset keeps moments and lets the decay
    run through; SS collapses the schedule to a single equal-weight
    stage of the same total length; supervised trains on the problem's
    full-field loss instead.  The problem supplies batches(rng),
    losses(model, batch) -> (boundary, residual), supervised_loss(model,
    batch) and test_metric(model).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    total_epochs = sum(s.epochs for s in stages)
    if mode in ("SS", "supervised"):
        stages = [Stage(1.0, 1.0, total_epochs)]

    state = init_adam(model.params, lr, bias_correction=bias_correction, eps=eps)
    rows = []
    transitions = []
    eta_eff = []
    stage_starts = []
    global_epoch = 0
    epochs_since_reset = 0

    for si, stage in enumerate(stages):
        stage_starts.append(global_epoch + 1)
        pending_transition = si > 0
        if pending_transition and mode == "MS":
            epochs_since_reset = 0
        for _ in range(stage.epochs):
            global_epoch += 1
            cur_lr = lr * decay_gamma ** (epochs_since_reset // decay_every)
            batches = problem.batches(rng_for(seed, global_epoch))
            sums = np.zeros(3)
            step_sum = 0.0
            for bi, batch in enumerate(batches):
                with ad.Tape() as tape:
                    if mode == "supervised":
                        total = problem.supervised_loss(model, batch)
                        bd_v = res_v = 0.0
                        train_v = total.item()
                    else:
                        bd, res = problem.losses(model, batch)
                        breakdown = combine(bd, res, stage.lam_bd, stage.lam_res)
                        total = breakdown.total
                        bd_v, res_v, train_v = breakdown.floats()
                    if not np.isfinite(train_v) or train_v > divergence_limit:
                        return RunResult(rows, transitions, eta_eff,
                                         stage_starts, True, state)
                    grads = tape.backward(total)
                by_name = {name: grads.get(t)
                           for name, t in model.params.items()}
                if pending_transition and bi == 0:
                    transitions.append({
                        "epoch": global_epoch,
                        "stage": si + 1,
                        "layers": stage_diagnostics(state, by_name, model.params),
                    })
                    if mode == "MS":
                        reset_state(state)
                    pending_transition = False
                try:
                    step_sum += adam_step(model.params, by_name, state, cur_lr)
                except FloatingPointError:
                    return RunResult(rows, transitions, eta_eff,
                                     stage_starts, True, state)
                sums += (bd_v, res_v, train_v)
            epochs_since_reset += 1
            n_b = len(batches)
            test_v = problem.test_metric(model)
            rows.append((global_epoch, si + 1, stage.lam_bd, stage.lam_res,
                         cur_lr, sums[0] / n_b, sums[1] / n_b, sums[2] / n_b,
                         test_v))
            eta_eff.append(step_sum / n_b)
    return RunResult(rows, transitions, eta_eff, stage_starts, False, state)
