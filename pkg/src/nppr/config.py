"""Experiment configuration: a strict JSON schema with full defaults.

A minimal document ({}) yields the documented default experiment (blobs
d=16/C=10, K=7, M=32, kappa=1, 50 epochs, epsilon 16/255). Budgets written
as rationals like "16/255" are parsed exactly. Unknown keys are fatal in
strict mode: a silently misconfigured robustness run is worse than a failed
one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction

from .models import DependencyMode, HeadConfig
from .sampling import AnnealSchedule, GumbelConfig
from .trainer import TrainConfig
from .upsample import MODE_BICUBIC, MODE_LINEAR, MODE_NONE, UpsamplerConfig

log = logging.getLogger(__name__)


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key path."""


@dataclass
class DatasetSpec:
    kind: str = "blobs"            # blobs | rings | grid-image
    dim: int = 16
    classes: int = 10
    n: int = 1000
    seed: int = 0
    separation: float = 6.0
    sigma: float = 1.0
    image_shape: tuple = (1, 8, 8)
    radius_step: float = 2.0
    noise: float = 0.3


@dataclass
class ClassifierSpec:
    hidden: tuple = (64, 32)
    epochs: int = 200
    lr: float = 1e-2
    batch_size: int | None = None
    accuracy_threshold: float = 0.95


@dataclass
class BaselineSpec:
    pgd_steps: int = 20
    cw_steps: int = 20
    gaussian_sigma_rule: str = "gamma/3"
    eval_samples: int = 512


@dataclass
class SweepSpec:
    modes: tuple = ()          # mixture counts K
    epsilons: tuple = ()       # Fractions
    dependencies: tuple = ()   # DependencyMode values


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    head: HeadConfig = field(default_factory=lambda: HeadConfig(mode=DependencyMode.JOINT))
    upsampler: UpsamplerConfig = field(default_factory=UpsamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    baselines: BaselineSpec = field(default_factory=BaselineSpec)
    epsilon: Fraction = Fraction(16, 255)
    seed: int = 0
    train_frac: float = 0.8
    export_samples: int = 0
    output_dir: str | None = None
    sweep: SweepSpec = field(default_factory=SweepSpec)

    @property
    def gamma(self) -> float:
        return float(self.epsilon)


def _parse_epsilon(value, path: str) -> Fraction:
    try:
        if isinstance(value, str):
            return Fraction(value)
        if isinstance(value, (int, float)):
            return Fraction(value).limit_denominator(10 ** 9)
    except (ValueError, ZeroDivisionError):
        pass
    raise ConfigError(f"{path}: cannot parse '{value}' as a budget radius")


class _Section:
    """One level of the document with strict unknown-key handling."""

    def __init__(self, doc: dict, path: str, strict: bool):
        if not isinstance(doc, dict):
            raise ConfigError(f"{path or '<root>'}: expected an object, got {type(doc).__name__}")
        self.doc = doc
        self.path = path
        self.strict = strict
        self.seen: set[str] = set()

    def _full(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, default, kind=None, check=None, required: bool = False):
        self.seen.add(key)
        if key not in self.doc:
            if required:
                raise ConfigError(f"{self._full(key)}: required key missing")
            return default
        value = self.doc[key]
        if kind is not None:
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if kind is int and isinstance(value, bool):
                raise ConfigError(f"{self._full(key)}: expected int, got bool")
            if not isinstance(value, kind):
                raise ConfigError(
                    f"{self._full(key)}: expected {getattr(kind, '__name__', kind)}, "
                    f"got {type(value).__name__}")
        if check is not None:
            err = check(value)
            if err:
                raise ConfigError(f"{self._full(key)}: {err}")
        return value

    def section(self, key: str) -> "_Section":
        self.seen.add(key)
        sub = self.doc.get(key, {})
        return _Section(sub, self._full(key), self.strict)

    def finish(self) -> None:
        unknown = sorted(set(self.doc) - self.seen)
        if not unknown:
            return
        msg = f"{self.path or '<root>'}: unknown key(s) {unknown}"
        if self.strict:
            raise ConfigError(msg)
        log.warning("%s (ignored)", msg)


def _positive(value):
    return None if value > 0 else "must be > 0"


def _at_least(minimum):
    return lambda v: None if v >= minimum else f"must be >= {minimum}"


def _one_of(options):
    return lambda v: None if v in options else f"must be one of {sorted(options)}"


def _pair(value):
    return None if (isinstance(value, (list, tuple)) and len(value) == 2) else "must be an (init, final) pair"


def parse_config(text: str | dict, strict: bool = True) -> ExperimentConfig:
    """Parse and validate a config document, applying all defaults."""
    if isinstance(text, str):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"not valid JSON: {err}") from None
    else:
        doc = text
    root = _Section(doc, "", strict)

    ds = root.section("dataset")
    dataset = DatasetSpec(
        kind=ds.get("kind", "blobs", str, _one_of({"blobs", "rings", "grid-image"})),
        dim=ds.get("dim", 16, int, _at_least(1)),
        classes=ds.get("classes", 10, int, _at_least(2)),
        n=ds.get("n", 1000, int, _at_least(10)),
        seed=ds.get("seed", 0, int),
        separation=ds.get("separation", 6.0, float, _positive),
        sigma=ds.get("sigma", 1.0, float, _positive),
        image_shape=tuple(ds.get("image_shape", [1, 8, 8], list,
                                 lambda v: None if len(v) == 3 else "must be [c, h, w]")),
        radius_step=ds.get("radius_step", 2.0, float, _positive),
        noise=ds.get("noise", 0.3, float, _positive),
    )
    ds.finish()
    if dataset.kind == "grid-image":
        c, h, w = dataset.image_shape
        dataset.dim = int(c) * int(h) * int(w)
    elif dataset.kind == "rings":
        dataset.dim = 2

    cs = root.section("classifier")
    classifier = ClassifierSpec(
        hidden=tuple(cs.get("hidden", [64, 32], list,
                            lambda v: None if v and all(isinstance(h, int) and h > 0 for h in v)
                            else "must be a non-empty list of positive ints")),
        epochs=cs.get("epochs", 200, int, _at_least(1)),
        lr=cs.get("lr", 1e-2, float, _positive),
        batch_size=cs.get("batch_size", None, int, _at_least(1)) if "batch_size" in cs.doc
        else cs.get("batch_size", None),
        accuracy_threshold=cs.get("accuracy_threshold", 0.95, float),
    )
    cs.finish()

    gm = root.section("gmm")
    k = gm.get("modes", 7, int, _at_least(1))
    latent_dim = gm.get("latent_dim", 16, int, _at_least(1))
    hidden_dim = gm.get("hidden_dim", 64, int, _at_least(1))
    label_emb_dim = gm.get("label_emb_dim", 16, int, _at_least(1))
    label_emb_normalized = gm.get("label_emb_normalized", True, bool)
    gm.finish()

    dependency = DependencyMode(root.get(
        "dependency", "joint", str, _one_of({m.value for m in DependencyMode})))
    head = HeadConfig(mode=dependency, K=k, latent_dim=latent_dim, hidden_dim=hidden_dim,
                      label_emb_dim=label_emb_dim, label_emb_normalized=label_emb_normalized)

    budget = root.section("budget")
    epsilon = _parse_epsilon(budget.get("epsilon", "16/255"), "budget.epsilon")
    if epsilon <= 0:
        raise ConfigError("budget.epsilon: must be > 0")
    budget.finish()

    us = root.section("upsampler")
    ups_mode = us.get("mode", MODE_LINEAR, str, _one_of({MODE_BICUBIC, MODE_LINEAR, MODE_NONE}))
    latent_grid = us.get("latent_grid", None)
    if latent_grid is not None:
        if not (isinstance(latent_grid, list) and len(latent_grid) == 3):
            raise ConfigError("upsampler.latent_grid: must be [c, h', w']")
        latent_grid = tuple(int(v) for v in latent_grid)
    learnable = us.get("learnable_premap", True, bool)
    us.finish()
    if ups_mode == MODE_BICUBIC and latent_grid is None:
        raise ConfigError("upsampler.latent_grid: required for bicubic_image mode")
    try:
        upsampler = UpsamplerConfig(mode=ups_mode, learnable_premap=learnable,
                                    latent_grid=latent_grid, gamma=float(epsilon))
    except ValueError as err:
        raise ConfigError(f"upsampler: {err}") from None
    if ups_mode == MODE_BICUBIC:
        c, hl, wl = latent_grid
        ci, hi, wi = dataset.image_shape
        if dataset.kind != "grid-image":
            raise ConfigError("upsampler.mode: bicubic_image needs a grid-image dataset")
        if c != ci or hl > hi or wl > wi:
            raise ConfigError(
                f"upsampler.latent_grid: {latent_grid} incompatible with image {dataset.image_shape}")
        if upsampler.latent_dim_for_grid != head.latent_dim:
            raise ConfigError(
                f"gmm.latent_dim: {head.latent_dim} != latent grid size {upsampler.latent_dim_for_grid}")
    if ups_mode == MODE_NONE and head.latent_dim != dataset.dim:
        raise ConfigError(
            f"gmm.latent_dim: 'none' upsampler needs latent_dim == input dim ({dataset.dim})")

    tr = root.section("train")
    gu = tr.section("gumbel")
    gumbel = GumbelConfig(
        tau_init=gu.get("tau_init", 1.0, float, _positive),
        tau_final=gu.get("tau_final", 0.1, float, _positive),
        anneal=gu.get("anneal", True, bool),
    )
    gu.finish()
    an = tr.section("anneal")
    try:
        anneal = AnnealSchedule(
            T_pi=tuple(an.get("T_pi", [3.0, 1.0], list, _pair)),
            T_mu=tuple(an.get("T_mu", [3.0, 1.0], list, _pair)),
            T_sigma=tuple(an.get("T_sigma", [1.5, 1.0], list, _pair)),
            T_shared=tuple(an.get("T_shared", [1.5, 1.0], list, _pair)),
            warmup_epochs=an.get("warmup_epochs", 0, int, _at_least(0)),
        )
    except ValueError as err:
        raise ConfigError(f"train.anneal: {err}") from None
    an.finish()
    try:
        train = TrainConfig(
            epochs=tr.get("epochs", 50, int, _at_least(1)),
            lr=tr.get("lr", 5e-4, float, _positive),
            lr_schedule=tr.get("lr_schedule", "constant", str, _one_of({"constant", "cosine"})),
            warmup_epochs=tr.get("warmup_epochs", 20, int, _at_least(0)),
            lr_min=tr.get("lr_min", 2e-6, float, _positive),
            samples_per_input=tr.get("samples_per_input", 32, int, _at_least(1)),
            batch_size=tr.get("batch_size", 128, int, _at_least(1)),
            seed=tr.get("seed", 0, int),
            mode=dependency,
            gumbel=gumbel,
            anneal=anneal,
            eval_every=tr.get("eval_every", 5, int, _at_least(1)),
            kappa=tr.get("kappa", 1.0, float),
            probe_size=tr.get("probe_size", 64, int, _at_least(1)),
            probe_samples=tr.get("probe_samples", 64, int, _at_least(1)),
        )
    except ValueError as err:
        raise ConfigError(f"train: {err}") from None
    tr.finish()

    bl = root.section("baselines")
    sigma_rule = bl.get("gaussian_sigma_rule", "gamma/3")
    if not (sigma_rule == "gamma/3" or isinstance(sigma_rule, (int, float))):
        raise ConfigError("baselines.gaussian_sigma_rule: must be 'gamma/3' or a number")
    baselines = BaselineSpec(
        pgd_steps=bl.get("pgd_steps", 20, int, _at_least(1)),
        cw_steps=bl.get("cw_steps", 20, int, _at_least(1)),
        gaussian_sigma_rule=sigma_rule,
        eval_samples=bl.get("eval_samples", 512, int, _at_least(1)),
    )
    bl.finish()

    sw = root.section("sweep")
    sweep = SweepSpec(
        modes=tuple(sw.get("modes", [], list)),
        epsilons=tuple(_parse_epsilon(e, "sweep.epsilons") for e in sw.get("epsilons", [], list)),
        dependencies=tuple(DependencyMode(d) for d in sw.get(
            "dependencies", [], list,
            lambda v: None if all(d in {m.value for m in DependencyMode} for d in v)
            else "entries must be dependency mode names")),
    )
    sw.finish()

    cfg = ExperimentConfig(
        dataset=dataset, classifier=classifier, head=head, upsampler=upsampler,
        train=train, baselines=baselines, epsilon=epsilon,
        seed=root.get("seed", 0, int),
        train_frac=root.get("train_frac", 0.8, float,
                            lambda v: None if 0.0 < v < 1.0 else "must be in (0, 1)"),
        export_samples=root.get("export_samples", 0, int, _at_least(0)),
        output_dir=root.get("output_dir", None, str) if "output_dir" in doc else None,
        sweep=sweep,
    )
    root.finish()
    return cfg


def serialize_config(cfg: ExperimentConfig) -> dict:
    """Canonical document form; parse(serialize(cfg)) == cfg."""
    eps = cfg.epsilon
    return {
        "dataset": {
            "kind": cfg.dataset.kind, "dim": cfg.dataset.dim, "classes": cfg.dataset.classes,
            "n": cfg.dataset.n, "seed": cfg.dataset.seed, "separation": cfg.dataset.separation,
            "sigma": cfg.dataset.sigma, "image_shape": list(cfg.dataset.image_shape),
            "radius_step": cfg.dataset.radius_step, "noise": cfg.dataset.noise,
        },
        "classifier": {
            "hidden": list(cfg.classifier.hidden), "epochs": cfg.classifier.epochs,
            "lr": cfg.classifier.lr,
            **({"batch_size": cfg.classifier.batch_size} if cfg.classifier.batch_size else {}),
            "accuracy_threshold": cfg.classifier.accuracy_threshold,
        },
        "gmm": {
            "modes": cfg.head.K, "latent_dim": cfg.head.latent_dim,
            "hidden_dim": cfg.head.hidden_dim, "label_emb_dim": cfg.head.label_emb_dim,
            "label_emb_normalized": cfg.head.label_emb_normalized,
        },
        "dependency": cfg.head.mode.value,
        "upsampler": {
            "mode": cfg.upsampler.mode, "learnable_premap": cfg.upsampler.learnable_premap,
            "latent_grid": list(cfg.upsampler.latent_grid) if cfg.upsampler.latent_grid else None,
        },
        "budget": {"epsilon": f"{eps.numerator}/{eps.denominator}"},
        "train": {
            "epochs": cfg.train.epochs, "lr": cfg.train.lr,
            "lr_schedule": cfg.train.lr_schedule, "warmup_epochs": cfg.train.warmup_epochs,
            "lr_min": cfg.train.lr_min, "samples_per_input": cfg.train.samples_per_input,
            "batch_size": cfg.train.batch_size, "seed": cfg.train.seed,
            "eval_every": cfg.train.eval_every, "kappa": cfg.train.kappa,
            "probe_size": cfg.train.probe_size, "probe_samples": cfg.train.probe_samples,
            "gumbel": {"tau_init": cfg.train.gumbel.tau_init,
                       "tau_final": cfg.train.gumbel.tau_final,
                       "anneal": cfg.train.gumbel.anneal},
            "anneal": {"T_pi": list(cfg.train.anneal.T_pi), "T_mu": list(cfg.train.anneal.T_mu),
                       "T_sigma": list(cfg.train.anneal.T_sigma),
                       "T_shared": list(cfg.train.anneal.T_shared),
                       "warmup_epochs": cfg.train.anneal.warmup_epochs},
        },
        "baselines": {
            "pgd_steps": cfg.baselines.pgd_steps, "cw_steps": cfg.baselines.cw_steps,
            "gaussian_sigma_rule": cfg.baselines.gaussian_sigma_rule,
            "eval_samples": cfg.baselines.eval_samples,
        },
        "seed": cfg.seed,
        "train_frac": cfg.train_frac,
        "export_samples": cfg.export_samples,
        **({"output_dir": cfg.output_dir} if cfg.output_dir is not None else {}),
        "sweep": {
            "modes": list(cfg.sweep.modes),
            "epsilons": [f"{e.numerator}/{e.denominator}" for e in cfg.sweep.epsilons],
            "dependencies": [d.value for d in cfg.sweep.dependencies],
        },
    }


def config_to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(serialize_config(cfg), sort_keys=True, indent=2)


def resolve_sigma(rule, gamma: float) -> float:
    if rule == "gamma/3":
        return gamma / 3.0
    return float(rule)
