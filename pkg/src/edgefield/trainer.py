"""Per-scene optimization loop: batch assembly, Adam updates, scheduling,
checkpointing, and the gradient-verification harness.

Determinism: every iteration draws from counter-based Philox streams keyed by
(seed, iteration, purpose), so runs are bitwise-reproducible in single-worker
mode and a resumed run replays the exact remaining sequence of an
uninterrupted one. In deterministic mode the wall-clock column of the metrics
log is written as 0 so logs are byte-identical across runs.
"""
from __future__ import annotations

import configparser
import os
import struct
import time
from dataclasses import dataclass, field as dc_field, replace
from typing import Dict

import numpy as np

from . import reg
from .dataio import Dataset, load_dataset
from .edgemap import EdgeIndicatorMap, edge_strength_from_rgb01, indicator_from_strength
from .errors import ConfigurationError, NumericalError
from .field import CoordinateMlpField, VoxelGridField, load_field, save_field
from .reg import LossBreakdown, LossWeights

# purposes for the per-iteration rng streams
P_PATCH = 0
P_STRAT = 1

OPT_MAGIC = b"EOPT"
OPT_VERSION = 1


def rng_stream(seed: int, iteration: int, purpose: int) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64(iteration) * np.uint64(8) + np.uint64(purpose)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TrainConfig:
    # field
    field_type: str = "grid"
    grid_resolution: int = 64
    bbox_min: tuple = (-1.0, -0.75, -1.0)
    bbox_max: tuple = (1.0, 0.45, 1.0)
    mlp_hidden: tuple = (64, 64, 64, 64)
    mlp_n_freq: int = 6
    mlp_use_dir: bool = False
    mlp_n_freq_dir: int = 2
    # optimization; the lr schedule default suits the voxel grid (raw vertex
    # values want much larger steps than MLP weights)
    iterations: int = 5000
    lr_init: float = 0.2
    lr_final: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patches_per_iter: int = 128
    samples_per_ray: int = 48
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 1000
    warmup_frac: float = 0.1
    deterministic: bool = False
    stratified: bool = True
    # losses; "mean" divides the patch terms by the patch count so their
    # weight is independent of patches_per_iter
    weights: LossWeights = dc_field(default_factory=LossWeights)
    normalization: str = "mean"
    global_smoothing: bool = False
    # edge extraction (when the dataset ships no edge maps)
    tau_e: float = 125.0
    canny_sigma: float = 1.4
    canny_low: float = 50.0
    canny_high: float = 150.0
    # evaluation
    eval_samples_per_ray: int = 192

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.lr_init < 0 or self.lr_final < 0:
            raise ConfigurationError("learning rates must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.patches_per_iter < 1 or self.samples_per_ray < 2:
            raise ConfigurationError("need >= 1 patch and >= 2 samples per ray")
        if self.normalization not in ("sum", "mean"):
            raise ConfigurationError("normalization must be 'sum' or 'mean'")
        if self.field_type not in ("grid", "mlp"):
            raise ConfigurationError("field_type must be 'grid' or 'mlp'")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigurationError("log/checkpoint cadences must be >= 1")

    def lr_at(self, iteration: int) -> float:
        if self.iterations <= 1 or self.lr_init == 0.0:
            return self.lr_init
        frac = iteration / (self.iterations - 1)
        return float(self.lr_init * (self.lr_final / self.lr_init) ** frac)

    def warmup_factor(self, iteration: int) -> float:
        ramp = int(round(self.warmup_frac * self.iterations))
        if ramp <= 0:
            return 1.0
        return min(1.0, (iteration + 1) / ramp)

    def effective_weights(self, iteration: int) -> LossWeights:
        f = self.warmup_factor(iteration)
        return self.weights.scaled(lambda2=self.weights.lambda2 * f,
                                   lambda3=self.weights.lambda3 * f)

    def build_field(self):
        if self.field_type == "grid":
            return VoxelGridField(self.grid_resolution, self.bbox_min, self.bbox_max)
        return CoordinateMlpField(self.bbox_min, self.bbox_max, hidden=self.mlp_hidden,
                                  n_freq=self.mlp_n_freq, use_dir=self.mlp_use_dir,
                                  n_freq_dir=self.mlp_n_freq_dir, seed=self.seed)


def _get(parser, section, key, conv, default):
    if parser.has_option(section, key):
        raw = parser.get(section, key)
        try:
            if conv is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return conv(raw)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for [{section}] {key}: {raw!r}") from exc
    return default


def _floats(raw):
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _ints(raw):
    return tuple(int(v) for v in raw.replace(",", " ").split())


def load_config(path) -> TrainConfig:
    """Parse the INI-style config: one section per module namespace."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"cannot read config file {path}")
    d = TrainConfig()
    weights = LossWeights(
        lambda1=_get(parser, "loss", "lambda1", float, d.weights.lambda1),
        lambda2=_get(parser, "loss", "lambda2", float, d.weights.lambda2),
        lambda3=_get(parser, "loss", "lambda3", float, d.weights.lambda3),
        tau1=_get(parser, "loss", "tau1", float, d.weights.tau1),
        tau2=_get(parser, "loss", "tau2", float, d.weights.tau2),
    )
    return TrainConfig(
        field_type=_get(parser, "field", "type", str, d.field_type),
        grid_resolution=_get(parser, "field", "resolution", int, d.grid_resolution),
        bbox_min=_get(parser, "field", "bbox_min", _floats, d.bbox_min),
        bbox_max=_get(parser, "field", "bbox_max", _floats, d.bbox_max),
        mlp_hidden=_get(parser, "field", "hidden", _ints, d.mlp_hidden),
        mlp_n_freq=_get(parser, "field", "n_freq", int, d.mlp_n_freq),
        mlp_use_dir=_get(parser, "field", "use_dir", bool, d.mlp_use_dir),
        mlp_n_freq_dir=_get(parser, "field", "n_freq_dir", int, d.mlp_n_freq_dir),
        iterations=_get(parser, "train", "iterations", int, d.iterations),
        lr_init=_get(parser, "train", "lr_init", float, d.lr_init),
        lr_final=_get(parser, "train", "lr_final", float, d.lr_final),
        beta1=_get(parser, "train", "beta1", float, d.beta1),
        beta2=_get(parser, "train", "beta2", float, d.beta2),
        eps=_get(parser, "train", "eps", float, d.eps),
        patches_per_iter=_get(parser, "train", "patches_per_iter", int, d.patches_per_iter),
        samples_per_ray=_get(parser, "train", "samples_per_ray", int, d.samples_per_ray),
        seed=_get(parser, "train", "seed", int, d.seed),
        log_every=_get(parser, "train", "log_every", int, d.log_every),
        checkpoint_every=_get(parser, "train", "checkpoint_every", int, d.checkpoint_every),
        warmup_frac=_get(parser, "train", "warmup_frac", float, d.warmup_frac),
        deterministic=_get(parser, "train", "deterministic", bool, d.deterministic),
        stratified=_get(parser, "train", "stratified", bool, d.stratified),
        weights=weights,
        normalization=_get(parser, "loss", "normalization", str, d.normalization),
        global_smoothing=_get(parser, "loss", "global_smoothing", bool, d.global_smoothing),
        tau_e=_get(parser, "edges", "tau_e", float, d.tau_e),
        canny_sigma=_get(parser, "edges", "sigma", float, d.canny_sigma),
        canny_low=_get(parser, "edges", "low", float, d.canny_low),
        canny_high=_get(parser, "edges", "high", float, d.canny_high),
        eval_samples_per_ray=_get(parser, "eval", "samples_per_ray", int, d.eval_samples_per_ray),
    )


def save_config(cfg: TrainConfig, path):
    """Write the resolved config back out (INI), for reproducibility."""
    parser = configparser.ConfigParser()
    parser["field"] = {
        "type": cfg.field_type,
        "resolution": str(cfg.grid_resolution),
        "bbox_min": " ".join(repr(v) for v in cfg.bbox_min),
        "bbox_max": " ".join(repr(v) for v in cfg.bbox_max),
        "hidden": " ".join(str(v) for v in cfg.mlp_hidden),
        "n_freq": str(cfg.mlp_n_freq),
        "use_dir": str(cfg.mlp_use_dir).lower(),
        "n_freq_dir": str(cfg.mlp_n_freq_dir),
    }
    parser["train"] = {
        "iterations": str(cfg.iterations),
        "lr_init": repr(cfg.lr_init), "lr_final": repr(cfg.lr_final),
        "beta1": repr(cfg.beta1), "beta2": repr(cfg.beta2), "eps": repr(cfg.eps),
        "patches_per_iter": str(cfg.patches_per_iter),
        "samples_per_ray": str(cfg.samples_per_ray),
        "seed": str(cfg.seed),
        "log_every": str(cfg.log_every),
        "checkpoint_every": str(cfg.checkpoint_every),
        "warmup_frac": repr(cfg.warmup_frac),
        "deterministic": str(cfg.deterministic).lower(),
        "stratified": str(cfg.stratified).lower(),
    }
    parser["loss"] = {
        "lambda1": repr(cfg.weights.lambda1),
        "lambda2": repr(cfg.weights.lambda2),
        "lambda3": repr(cfg.weights.lambda3),
        "tau1": repr(cfg.weights.tau1),
        "tau2": repr(cfg.weights.tau2),
        "normalization": cfg.normalization,
        "global_smoothing": str(cfg.global_smoothing).lower(),
    }
    parser["edges"] = {
        "tau_e": repr(cfg.tau_e), "sigma": repr(cfg.canny_sigma),
        "low": repr(cfg.canny_low), "high": repr(cfg.canny_high),
    }
    parser["eval"] = {"samples_per_ray": str(cfg.eval_samples_per_ray)}
    with open(path, "w") as f:
        parser.write(f)


@dataclass
class TrainState:
    field: object
    adam_m: np.ndarray
    adam_v: np.ndarray
    iteration: int = 0
    seed: int = 0
    rng_draws: int = 0  # random numbers consumed so far (ablation comparability)

    @classmethod
    def fresh(cls, field, seed):
        p = field.n_params
        return cls(field=field, adam_m=np.zeros(p), adam_v=np.zeros(p), seed=seed)


def adam_update(state: TrainState, grad, lr, beta1, beta2, eps):
    t = state.iteration + 1
    state.adam_m = beta1 * state.adam_m + (1.0 - beta1) * grad
    state.adam_v = beta2 * state.adam_v + (1.0 - beta2) * grad * grad
    m_hat = state.adam_m / (1.0 - beta1 ** t)
    v_hat = state.adam_v / (1.0 - beta2 ** t)
    state.field.theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


def prepare_edge_maps(dataset: Dataset, cfg: TrainConfig) -> Dict[int, EdgeIndicatorMap]:
    """Indicator maps for every training view, computed once and cached.

    Uses the dataset's shipped edge-strength maps when present, otherwise
    falls back to the built-in Canny detector.
    """
    maps = {}
    for i in dataset.train_indices:
        if dataset.edge_strengths is not None:
            strength = dataset.edge_strengths[i]
        else:
            strength = edge_strength_from_rgb01(dataset.images[i], sigma=cfg.canny_sigma,
                                                low=cfg.canny_low, high=cfg.canny_high)
        maps[i] = indicator_from_strength(strength, cfg.tau_e)
    return maps


def train_step(state: TrainState, dataset: Dataset, edge_maps, cfg: TrainConfig) -> LossBreakdown:
    """One optimization step; deterministic given (seed, iteration)."""
    i = state.iteration
    eff = cfg.effective_weights(i)
    patch_rng = rng_stream(state.seed, i, P_PATCH)
    patches = reg.sample_patches(dataset, edge_maps, cfg.patches_per_iter, patch_rng)
    state.rng_draws += 1 + 2 * cfg.patches_per_iter
    t_rng = rng_stream(state.seed, i, P_STRAT) if cfg.stratified else None
    pb = reg.build_patch_batch(dataset, patches, cfg.samples_per_ray,
                               rng=t_rng, stratified=cfg.stratified)
    if cfg.stratified:
        state.rng_draws += pb.n_rays * cfg.samples_per_ray
    try:
        breakdown, grad = reg.loss_backward(state.field, pb, eff,
                                            normalization=cfg.normalization,
                                            global_smoothing=cfg.global_smoothing)
    except NumericalError as exc:
        exc.iteration = i
        raise
    adam_update(state, grad, cfg.lr_at(i), cfg.beta1, cfg.beta2, cfg.eps)
    state.iteration += 1
    return breakdown


# ----------------------------------------------------------- optimizer state

def save_optimizer(state: TrainState, path):
    with open(path, "wb") as f:
        f.write(OPT_MAGIC)
        f.write(struct.pack("<IQQQQ", OPT_VERSION, state.iteration, state.seed,
                            state.rng_draws, state.adam_m.shape[0]))
        f.write(np.ascontiguousarray(state.adam_m, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(state.adam_v, dtype="<f8").tobytes())


def load_optimizer(path, field) -> TrainState:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read optimizer state {path}: {exc}") from exc
    if data[:4] != OPT_MAGIC:
        raise ConfigurationError(f"{path} is not an optimizer state file")
    version, iteration, seed, draws, p = struct.unpack("<IQQQQ", data[4:40])
    if version != OPT_VERSION:
        raise ConfigurationError(f"unsupported optimizer state version {version}")
    if p != field.n_params:
        raise ConfigurationError("optimizer state does not match the checkpoint size")
    m = np.frombuffer(data[40:40 + 8 * p], dtype="<f8").astype(np.float64)
    v = np.frombuffer(data[40 + 8 * p:40 + 16 * p], dtype="<f8").astype(np.float64)
    return TrainState(field=field, adam_m=m, adam_v=v, iteration=int(iteration),
                      seed=int(seed), rng_draws=int(draws))


# ------------------------------------------------------------------ training

def _metrics_line(iteration, bd: LossBreakdown, lr, wall_ms):
    return (f"{iteration} {bd.l_c!r} {bd.l_z!r} {bd.l_n!r} {bd.total!r} "
            f"{lr!r} {wall_ms}")


def run_training(cfg: TrainConfig, data_dir, out_dir, resume_from=None):
    """Full optimization run: metrics log + periodic and final checkpoints.

    Returns a dict with the final checkpoint path, metrics path, and the
    wall-clock seconds spent inside train_step (timing excludes dataset and
    edge-map preparation).
    """
    dataset = load_dataset(data_dir)
    if not dataset.train_indices:
        raise ConfigurationError("dataset has no training views")
    os.makedirs(out_dir, exist_ok=True)
    edge_maps = prepare_edge_maps(dataset, cfg)

    if resume_from is not None:
        field = load_field(resume_from)
        opt_path = os.path.splitext(resume_from)[0] + ".opt"
        state = load_optimizer(opt_path, field)
    else:
        field = cfg.build_field()
        state = TrainState.fresh(field, cfg.seed)

    save_config(cfg, os.path.join(out_dir, "config_resolved.ini"))
    metrics_path = os.path.join(out_dir, "metrics.txt")
    step_seconds = 0.0
    step_times = []
    with open(metrics_path, "w") as log:
        while state.iteration < cfg.iterations:
            i = state.iteration
            lr = cfg.lr_at(i)
            t0 = time.perf_counter()
            try:
                bd = train_step(state, dataset, edge_maps, cfg)
            except NumericalError as exc:
                snap = os.path.join(out_dir, "failure.txt")
                with open(snap, "w") as f:
                    f.write(f"iteration: {exc.iteration}\nterm: {exc.term}\n{exc}\n")
                raise
            dt = time.perf_counter() - t0
            step_seconds += dt
            step_times.append(dt)
            step = i + 1
            if step % cfg.log_every == 0:
                wall_ms = 0 if cfg.deterministic else int(round(dt * 1000.0))
                log.write(_metrics_line(step, bd, lr, wall_ms) + "\n")
            if step % cfg.checkpoint_every == 0 and step < cfg.iterations:
                base = os.path.join(out_dir, f"ckpt_{step:06d}")
                save_field(state.field, base + ".efld")
                save_optimizer(state, base + ".opt")
    final_base = os.path.join(out_dir, "final")
    save_field(state.field, final_base + ".efld")
    save_optimizer(state, final_base + ".opt")
    return {
        "checkpoint": final_base + ".efld",
        "metrics": metrics_path,
        "step_seconds": step_seconds,
        # contention-robust per-step cost for timing comparisons
        "step_seconds_median": float(np.median(step_times)) if step_times else 0.0,
        "state": state,
    }


# ----------------------------------------------------------------- gradcheck

@dataclass
class GradcheckReport:
    max_rel_err: Dict[str, float]
    excluded: int
    checked: int
    trials: int
    seconds: float

    @property
    def passed(self):
        return all(v < 1e-5 for v in self.max_rel_err.values())

    def summary(self):
        lines = [f"gradcheck: {self.trials} trials, {self.checked} coordinates, "
                 f"{self.excluded} excluded near kinks, {self.seconds:.1f}s"]
        for term, err in self.max_rel_err.items():
            lines.append(f"  {term:12s} max rel err {err:.3e}")
        lines.append(f"  result: {'PASS' if self.passed else 'FAIL'} (tolerance 1e-5)")
        return "\n".join(lines)


def _random_instance(rng, n_patches, k):
    """Small random grid + rays through it, for finite-difference checks."""
    res = int(rng.integers(8, 17))
    field = VoxelGridField(res, (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    field.theta[:] = rng.normal(0.0, 0.6, size=field.n_params)
    n_rays = 4 * n_patches
    # aim rays from a shell outside the box through random interior targets
    phi = rng.uniform(0, 2 * np.pi, size=n_rays)
    costh = rng.uniform(-1, 1, size=n_rays)
    sinth = np.sqrt(1 - costh ** 2)
    origins = 2.5 * np.stack([sinth * np.cos(phi), sinth * np.sin(phi), costh], axis=1)
    targets = rng.uniform(-0.7, 0.7, size=(n_rays, 3))
    dirs = targets - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t_far = 5.0
    ts = np.sort(rng.uniform(0.5, t_far - 0.2, size=(n_rays, k)), axis=1)
    pb = reg.PatchBatch(
        image_index=0,
        pixels=np.zeros((n_rays, 2), dtype=np.int64),
        origins=origins, dirs=dirs, ts=ts, t_far=t_far,
        gt_rgb=rng.uniform(0, 1, size=(n_rays, 3)),
        edge=(rng.random((n_patches, 4)) < 0.75).astype(np.float64),
    )
    return field, pb


def _kink_signature(rb, pb, weights):
    """Active-set fingerprint of the loss terms present in `weights`; FD steps
    that change it straddle a |.| or max kink and are excluded."""
    m = pb.n_patches
    e = pb.edge
    cnt = e.sum(axis=1)
    safe = np.where(cnt > 0, cnt, 1.0)
    sigs = []
    if weights.lambda2 > 0:
        z = rb.depth.reshape(m, 4)
        u = z - ((e * z).sum(axis=1) / safe)[:, None]
        sigs.append(np.sign(u))
        sigs.append((e * np.abs(u) - weights.tau1 > 0).astype(np.int8))
    if weights.lambda3 > 0:
        n = rb.normal.reshape(m, 4, 3)
        nbar = (e[:, :, None] * n).sum(axis=1) / safe[:, None]
        q = ((n - nbar[:, None, :]) ** 2).sum(axis=2)
        sigs.append((e * q - weights.tau2 > 0).astype(np.int8))
        sigs.append(rb.fw["grad_ok"].astype(np.int8))
    return [s.copy() for s in sigs]


def _sig_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(trials=20, seed=0, n_patches=6, k=24, coords_per_trial=48,
              fd_step=1e-6) -> GradcheckReport:
    """Compare loss_backward against central finite differences on random
    small instances; reports the max relative error per loss term.

    Coordinates are excluded when a finite-difference step straddles a |.| or
    max(., 0) kink (detected by active-set change) or when their magnitude is
    below the central difference's own roundoff resolution eps*|L|/h, which
    no analytic gradient could be checked against at 1e-5.
    """
    t0 = time.perf_counter()
    terms = {
        "photometric": LossWeights(1.0, 0.0, 0.0, 1e-4, 1e-4),
        "depth": LossWeights(0.0, 1.0, 0.0, 1e-4, 1e-4),
        "normal": LossWeights(0.0, 0.0, 1.0, 1e-4, 1e-4),
        "total": LossWeights(1.0, 0.7, 0.4, 1e-4, 1e-4),
    }
    max_err = {t: 0.0 for t in terms}
    excluded = checked = 0
    for trial in range(trials):
        rng = rng_stream(seed, trial, 7)
        field, pb = _random_instance(rng, n_patches, k)
        for term, weights in terms.items():
            bd_rb = reg.evaluate_losses(field, pb, weights)
            base_sig = _kink_signature(bd_rb[1], pb, weights)
            _, grad = reg.loss_backward(field, pb, weights, rb=bd_rb[1])
            gmax = np.abs(grad).max()
            floor = 1e-4 * max(gmax, 1e-12)
            fd_resolution = np.finfo(float).eps * max(1.0, abs(bd_rb[0].total)) / fd_step
            min_mag = max(1e-2 * gmax, 100.0 * fd_resolution)
            nz = np.nonzero(np.abs(grad) > min_mag)[0]
            if nz.size == 0:
                continue
            pick = rng.choice(nz, size=min(coords_per_trial, nz.size), replace=False)
            for j in pick:
                old = field.theta[j]
                field.theta[j] = old + fd_step
                lp, rb_p = reg.evaluate_losses(field, pb, weights)
                sig_p = _kink_signature(rb_p, pb, weights)
                field.theta[j] = old - fd_step
                lm, rb_m = reg.evaluate_losses(field, pb, weights)
                sig_m = _kink_signature(rb_m, pb, weights)
                field.theta[j] = old
                if not (_sig_equal(base_sig, sig_p) and _sig_equal(base_sig, sig_m)):
                    excluded += 1
                    continue
                fd = (lp.total - lm.total) / (2.0 * fd_step)
                rel = abs(fd - grad[j]) / max(abs(fd), abs(grad[j]), floor)
                max_err[term] = max(max_err[term], rel)
                checked += 1
    return GradcheckReport(max_rel_err=max_err, excluded=excluded, checked=checked,
                           trials=trials, seconds=time.perf_counter() - t0)


def ablation_variants(base: TrainConfig):
    """The four-row study: baseline, +depth, +normal, full (edge-guided)."""
    w = base.weights
    return {
        "baseline": replace(base, weights=w.scaled(lambda2=0.0, lambda3=0.0)),
        "depth": replace(base, weights=w.scaled(lambda3=0.0)),
        "normal": replace(base, weights=w.scaled(lambda2=0.0)),
        "full": base,
    }
