"""End-to-end generator training: relaxed sampling, margin loss through the
frozen classifier, Adam on the head/upsampler parameters, temperature
annealing, per-epoch probe metrics, and checkpointing."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .datasets import SplitDataset
from .generator import Generator
from .metrics import margin_loss, mixture_statistics, nppr_estimate
from .models import Classifier, DependencyMode, GmmHead, HeadConfig, Temperatures
from .optim import Adam
from .rng import GUMBEL, PROBE, SHUFFLE, substream
from .sampling import AnnealSchedule, GumbelConfig, anneal_value, gumbel_tau
from .serialize import FORMAT_VERSION, SnapshotError, load_snapshot, save_snapshot
from .upsample import Upsampler, UpsamplerConfig

log = logging.getLogger(__name__)

EPOCH_CSV_COLUMNS = ["epoch", "train_loss", "nppr_running", "entropy_ratio",
                     "pi_max", "pi_min", "pi_std", "tau_gumbel", "T_pi", "T_mu", "T_sigma"]


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 5e-4
    lr_schedule: str = "constant"     # "constant" or "cosine"
    warmup_epochs: int = 20
    lr_min: float = 2e-6
    samples_per_input: int = 32
    batch_size: int = 128
    seed: int = 0
    mode: DependencyMode = DependencyMode.JOINT
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    eval_every: int = 5
    kappa: float = 1.0
    probe_size: int = 64
    probe_samples: int = 64

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = DependencyMode(self.mode)
        if self.epochs < 1 or self.samples_per_input < 1 or self.lr <= 0:
            raise ValueError("train config: need epochs >= 1, M >= 1, lr > 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"train config: unknown lr schedule '{self.lr_schedule}'")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    nppr_running: float
    entropy_ratio: float
    pi_max: float
    pi_min: float
    pi_std: float
    tau_gumbel: float
    T_pi: float
    T_mu: float
    T_sigma: float
    aborted: bool = False

    def csv_row(self) -> list:
        return [getattr(self, name) for name in EPOCH_CSV_COLUMNS]


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.lr
    warm = min(cfg.warmup_epochs, cfg.epochs)
    if epoch < warm:
        return cfg.lr * (epoch + 1) / warm
    span = max(cfg.epochs - warm, 1)
    t = (epoch - warm) / span
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + np.cos(np.pi * t))


def temps_at_epoch(cfg: TrainConfig, epoch: int) -> Temperatures:
    sched = cfg.anneal
    return Temperatures(
        T_pi=anneal_value(sched.T_pi, epoch, cfg.epochs, sched.warmup_epochs),
        T_mu=anneal_value(sched.T_mu, epoch, cfg.epochs, sched.warmup_epochs),
        T_sigma=anneal_value(sched.T_sigma, epoch, cfg.epochs, sched.warmup_epochs),
        T_shared=anneal_value(sched.T_shared, epoch, cfg.epochs, sched.warmup_epochs),
    )


def _snapshot_params(generator: Generator) -> dict[str, np.ndarray]:
    named = {name: p.data.copy() for name, p in generator.named_params().items()}
    named.update({k: v.copy() for k, v in generator.upsampler.frozen_state().items()})
    return named


def _load_params(generator: Generator, named: dict[str, np.ndarray]) -> None:
    for name, p in generator.named_params().items():
        arr = np.asarray(named[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise SnapshotError(f"checkpoint param '{name}': shape {arr.shape} != {p.data.shape}")
        p.data = arr.copy()
    generator.upsampler.load_frozen_state(named)


def save_checkpoint(generator: Generator, path, *, opt: Adam | None = None,
                    epoch_next: int = 0, best_nppr: float | None = None) -> None:
    named = _snapshot_params(generator)
    if opt is not None:
        for name, m, v in zip(generator.named_params(), opt.m, opt.v):
            named[f"adam.m.{name}"] = m.copy()
            named[f"adam.v.{name}"] = v.copy()
    head_cfg = generator.head.cfg
    ups_cfg = generator.upsampler.cfg
    extra = {
        "kind": "generator-checkpoint",
        "mode": generator.mode.value,
        "gamma": generator.gamma,
        "epoch_next": int(epoch_next),
        "adam_t": int(opt.t) if opt is not None else None,
        "best_nppr": best_nppr,
        "head_cfg": {
            "mode": head_cfg.mode.value, "K": head_cfg.K,
            "latent_dim": head_cfg.latent_dim, "hidden_dim": head_cfg.hidden_dim,
            "label_emb_dim": head_cfg.label_emb_dim,
            "label_emb_normalized": head_cfg.label_emb_normalized,
        },
        "ups_cfg": {
            "mode": ups_cfg.mode, "learnable_premap": ups_cfg.learnable_premap,
            "latent_grid": list(ups_cfg.latent_grid) if ups_cfg.latent_grid else None,
            "gamma": ups_cfg.gamma,
        },
        "input_dim": generator.upsampler.input_dim,
        "image_shape": list(generator.upsampler.image_shape) if generator.upsampler.image_shape else None,
        "feature_dim": generator.head.feature_dim,
        "num_classes": generator.head.num_classes,
    }
    save_snapshot(path, named, extra=extra)


def restore_checkpoint(path, clf: Classifier,
                       expected_mode: DependencyMode | None = None) -> tuple[Generator, dict]:
    """Rebuild a generator (and optimizer state) from a checkpoint file."""
    named, extra = load_snapshot(path)
    if extra.get("kind") != "generator-checkpoint":
        raise SnapshotError(f"{path}: not a generator checkpoint")
    mode = DependencyMode(extra["mode"])
    if expected_mode is not None and mode != DependencyMode(expected_mode):
        raise SnapshotError(
            f"{path}: checkpoint mode '{mode.value}' does not match expected "
            f"'{DependencyMode(expected_mode).value}'")
    hc = extra["head_cfg"]
    head_cfg = HeadConfig(mode=DependencyMode(hc["mode"]), K=hc["K"],
                          latent_dim=hc["latent_dim"], hidden_dim=hc["hidden_dim"],
                          label_emb_dim=hc["label_emb_dim"],
                          label_emb_normalized=hc["label_emb_normalized"])
    uc = extra["ups_cfg"]
    ups_cfg = UpsamplerConfig(mode=uc["mode"], learnable_premap=uc["learnable_premap"],
                              latent_grid=tuple(uc["latent_grid"]) if uc["latent_grid"] else None,
                              gamma=uc["gamma"])
    head = GmmHead(head_cfg, feature_dim=extra.get("feature_dim"),
                   num_classes=extra.get("num_classes"), seed=0)
    upsampler = Upsampler(ups_cfg, latent_dim=head_cfg.latent_dim,
                          input_dim=extra["input_dim"],
                          image_shape=tuple(extra["image_shape"]) if extra.get("image_shape") else None,
                          rng=substream(0, 0))
    generator = Generator(head, upsampler, clf, gamma=extra["gamma"])
    _load_params(generator, named)
    state = {
        "epoch_next": extra.get("epoch_next", 0),
        "best_nppr": extra.get("best_nppr"),
        "adam_t": extra.get("adam_t"),
        "adam_m": [named.get(f"adam.m.{n}") for n in generator.named_params()],
        "adam_v": [named.get(f"adam.v.{n}") for n in generator.named_params()],
    }
    return generator, state


def checkpoint(generator: Generator, path) -> None:
    """Parameter-only snapshot (no optimizer state)."""
    save_checkpoint(generator, path)


def restore(path, clf: Classifier,
            expected_mode: DependencyMode | None = None) -> Generator:
    generator, _ = restore_checkpoint(path, clf, expected_mode)
    return generator


def _probe_metrics(generator: Generator, probe_x: np.ndarray, probe_y: np.ndarray,
                   temps: Temperatures, M: int, rng: np.random.Generator) -> dict:
    running = nppr_estimate(generator.clf, generator, probe_x, probe_y, M, rng, temps=temps)
    params = generator.gmm_params(probe_x, probe_y, temps=temps)
    stats = mixture_statistics(params.pi())
    stats["nppr_running"] = running
    return stats


def train_generator(clf: Classifier, split: SplitDataset, cfg: TrainConfig,
                    generator: Generator, *, out_dir=None, resume_state: dict | None = None,
                    events: list | None = None) -> tuple[Generator, list[EpochRecord]]:
    """Minimize the empirical relaxed objective over the generator parameters.

    Per epoch: draw M relaxed perturbations per input, average the margin loss
    over all batch x M samples, step Adam, advance every annealing schedule,
    and log probe metrics. Non-finite losses abort the epoch and roll back to
    the last good state. Randomness is keyed by (seed, purpose, epoch, batch),
    so a restored run replays exactly like an uninterrupted one.
    """
    if not clf.frozen:
        raise ValueError("train_generator: classifier must be frozen first")
    events = events if events is not None else []
    train, test = split.train, split.test
    n = train.n
    bs = min(cfg.batch_size, n)
    M = cfg.samples_per_input

    opt = Adam(generator.params(), lr=cfg.lr)
    start_epoch = 0
    best_nppr = None
    if resume_state is not None:
        start_epoch = int(resume_state["epoch_next"])
        best_nppr = resume_state.get("best_nppr")
        if resume_state.get("adam_t") is not None:
            opt.load_state_dict({"t": resume_state["adam_t"],
                                 "m": resume_state["adam_m"],
                                 "v": resume_state["adam_v"]})

    probe_rng = substream(cfg.seed, PROBE)
    probe_n = min(cfg.probe_size, test.n)
    probe_idx = probe_rng.choice(test.n, size=probe_n, replace=False)
    probe_x, probe_y = test.x[probe_idx], test.y[probe_idx]

    last_good = (_snapshot_params(generator), opt.state_dict())
    records: list[EpochRecord] = []
    initial_loss = None
    high_loss_streak = 0

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(start_epoch, cfg.epochs):
        temps = temps_at_epoch(cfg, epoch)
        tau = gumbel_tau(cfg.gumbel, epoch, cfg.epochs)
        opt.lr = lr_at_epoch(cfg, epoch)

        order = substream(cfg.seed, SHUFFLE, epoch).permutation(n)
        total_loss, total_rows, aborted = 0.0, 0, False
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            xb, yb = train.x[idx], train.y[idx]
            rng = substream(cfg.seed, GUMBEL, epoch, b)

            params = generator.gmm_params(xb, yb, temps=temps)
            batch = generator.perturb_relaxed(params, M, tau, rng)
            base = T.constant(xb[:, None, :])
            perturbed = T.reshape(T.add(base, batch.images), (len(xb) * M, train.dim))
            loss = margin_loss(clf.logits(perturbed), np.repeat(yb, M), cfg.kappa)

            if not np.isfinite(loss.item()):
                events.append(f"epoch {epoch}: non-finite loss, epoch aborted and state restored")
                log.warning(events[-1])
                _load_params(generator, last_good[0])
                opt.load_state_dict(last_good[1])
                aborted = True
                break

            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.item() * len(xb)
            total_rows += len(xb)

        epoch_loss = total_loss / total_rows if total_rows else float("nan")
        if not aborted:
            last_good = (_snapshot_params(generator), opt.state_dict())
            if initial_loss is None:
                initial_loss = epoch_loss
            if initial_loss > 0 and epoch_loss > 10.0 * initial_loss:
                high_loss_streak += 1
                if high_loss_streak == 5:
                    events.append(f"epoch {epoch}: divergence flagged "
                                  f"(loss > 10x initial for 5 epochs)")
                    log.warning(events[-1])
            else:
                high_loss_streak = 0

        probe = _probe_metrics(generator, probe_x, probe_y, temps,
                               cfg.probe_samples, substream(cfg.seed, PROBE, epoch, 1))
        records.append(EpochRecord(
            epoch=epoch, train_loss=epoch_loss, nppr_running=probe["nppr_running"],
            entropy_ratio=probe["entropy_ratio"], pi_max=probe["pi_max"],
            pi_min=probe["pi_min"], pi_std=probe["pi_std"], tau_gumbel=tau,
            T_pi=temps.T_pi, T_mu=temps.T_mu, T_sigma=temps.T_sigma, aborted=aborted))

        if out_dir is not None:
            if (epoch + 1) % max(cfg.eval_every, 1) == 0 or epoch == cfg.epochs - 1:
                save_checkpoint(generator, out_dir / "ckpt_latest.json", opt=opt,
                                epoch_next=epoch + 1, best_nppr=best_nppr)
            if best_nppr is None or probe["nppr_running"] < best_nppr:
                best_nppr = probe["nppr_running"]
                save_checkpoint(generator, out_dir / "ckpt_best.json", opt=opt,
                                epoch_next=epoch + 1, best_nppr=best_nppr)
        elif best_nppr is None or probe["nppr_running"] < best_nppr:
            best_nppr = probe["nppr_running"]

    return generator, records


def write_epoch_csv(records: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_CSV_COLUMNS)
        for record in records:
            writer.writerow(record.csv_row())


def read_epoch_csv(path) -> list[EpochRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(EpochRecord(
                epoch=int(row["epoch"]),
                train_loss=float(row["train_loss"]),
                nppr_running=float(row["nppr_running"]),
                entropy_ratio=float(row["entropy_ratio"]),
                pi_max=float(row["pi_max"]), pi_min=float(row["pi_min"]),
                pi_std=float(row["pi_std"]), tau_gumbel=float(row["tau_gumbel"]),
                T_pi=float(row["T_pi"]), T_mu=float(row["T_mu"]),
                T_sigma=float(row["T_sigma"])))
    return out
