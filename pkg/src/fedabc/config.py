"""Experiment configuration: JSON in, validated dataclasses out.

Every field has a default; the resolved configuration (all defaults
expanded) is persisted next to each artifact together with its hash, so a
run can be reproduced from its output directory alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .dataprep import DEFAULT_TRAIN_FRAC, TABLE1_FEATURES, TABLE1_SITE_PROFILE
from .errors import ConfigError


def _take(doc: dict, allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | csv
    csv_path: str | None = None
    label_column: str = "label"
    site_profile: list[list[int]] = field(
        default_factory=lambda: [list(p) for p in TABLE1_SITE_PROFILE]
    )
    n_features: int = TABLE1_FEATURES
    margin: float = 3.0
    site_shift: float = 0.6
    informative_features: int = 8

    def validate(self) -> None:
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be synthetic or csv, got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("data.csv_path is required when source is csv")
        if not self.site_profile or any(len(p) != 2 for p in self.site_profile):
            raise ConfigError("data.site_profile must list [major, minor] pairs")


@dataclass
class PrepareConfig:
    train_frac: float = DEFAULT_TRAIN_FRAC
    correlation_threshold: float = 0.8
    partition: str = "manifest"  # manifest | profile

    def validate(self) -> None:
        if not 0 < self.train_frac < 1:
            raise ConfigError("prepare.train_frac must lie in (0, 1)")
        if not 0 < self.correlation_threshold <= 1:
            raise ConfigError("prepare.correlation_threshold must lie in (0, 1]")
        if self.partition not in ("manifest", "profile"):
            raise ConfigError("prepare.partition must be manifest or profile")


@dataclass
class MoaeConfigSection:
    latent_dim: int = 24
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    epochs: int = 300
    batch_size: int | None = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 1.0
    beta: float = 0.5

    def validate(self) -> None:
        if self.latent_dim < 1:
            raise ConfigError("moae.latent_dim must be >= 1")
        if len(self.hidden) != 2:
            raise ConfigError("moae.hidden must list two widths")
        if self.epochs < 0:
            raise ConfigError("moae.epochs must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("moae loss weights must be nonnegative")


@dataclass
class PriorConfigSection:
    alpha: float = 1.0
    kappa: float = 1.0
    nu: float | None = None  # default d + 2
    psi_scale: float = 1.0

    def validate(self) -> None:
        if self.alpha <= 0 or self.kappa <= 0 or self.psi_scale <= 0:
            raise ConfigError("prior.alpha, prior.kappa, prior.psi_scale must be positive")


@dataclass
class FederationConfigSection:
    epsilon: float | None = None  # None: calibrate from the pilot
    pilot_trials: int = 2000
    pilot_quantile: float = 0.05
    target_accepted: int = 100
    max_trials: int = 100_000
    transport: str = "inproc"  # inproc | tcp
    listen: str = "127.0.0.1:0"
    retry_budget: int = 3
    timeout: float = 120.0

    def validate(self) -> None:
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("federation.epsilon must be positive when set")
        if self.epsilon is None and self.pilot_trials < 1:
            raise ConfigError("federation.pilot_trials must be >= 1 when epsilon is unset")
        if not 0 < self.pilot_quantile < 1:
            raise ConfigError("federation.pilot_quantile must lie in (0, 1)")
        if self.target_accepted < 1:
            raise ConfigError("federation.target_accepted must be >= 1")
        if self.max_trials < self.target_accepted:
            raise ConfigError("federation.max_trials must cover target_accepted")
        if self.transport not in ("inproc", "tcp"):
            raise ConfigError("federation.transport must be inproc or tcp")

    def listen_address(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        if not host:
            raise ConfigError(f"federation.listen must be host:port, got {self.listen!r}")
        try:
            return host, int(port)
        except ValueError:
            raise ConfigError(f"federation.listen has a bad port: {self.listen!r}") from None


@dataclass
class HistogramConfigSection:
    bins: int = 16
    lo: float = -3.0
    hi: float = 3.0
    epsilon: float = 1e-6

    def validate(self) -> None:
        if self.bins < 2 or not self.lo < self.hi or not self.epsilon > 0:
            raise ConfigError("histogram section is invalid")


@dataclass
class ClassifierConfigSection:
    iters: int = 2000
    lr: float = 0.1
    l2: float = 1e-4

    def validate(self) -> None:
        if self.iters < 1 or self.lr <= 0 or self.l2 < 0:
            raise ConfigError("classifier section is invalid")


@dataclass
class EvaluationConfigSection:
    feature_space: str = "latent"  # latent | raw

    def validate(self) -> None:
        if self.feature_space not in ("latent", "raw"):
            raise ConfigError("evaluation.feature_space must be latent or raw")


_SECTIONS = {
    "data": DataConfig,
    "prepare": PrepareConfig,
    "moae": MoaeConfigSection,
    "prior": PriorConfigSection,
    "federation": FederationConfigSection,
    "histogram": HistogramConfigSection,
    "classifier": ClassifierConfigSection,
    "evaluation": EvaluationConfigSection,
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    mixture_components: int | None = None  # None: 0.9-minority rule
    data: DataConfig = field(default_factory=DataConfig)
    prepare: PrepareConfig = field(default_factory=PrepareConfig)
    moae: MoaeConfigSection = field(default_factory=MoaeConfigSection)
    prior: PriorConfigSection = field(default_factory=PriorConfigSection)
    federation: FederationConfigSection = field(default_factory=FederationConfigSection)
    histogram: HistogramConfigSection = field(default_factory=HistogramConfigSection)
    classifier: ClassifierConfigSection = field(default_factory=ClassifierConfigSection)
    evaluation: EvaluationConfigSection = field(default_factory=EvaluationConfigSection)

    def validate(self) -> "ExperimentConfig":
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.mixture_components is not None and self.mixture_components < 1:
            raise ConfigError("mixture_components must be >= 1 when set")
        for name in _SECTIONS:
            getattr(self, name).validate()
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        _take(doc, {"seed", "mixture_components", *_SECTIONS}, "top-level")
        kwargs = {}
        if "seed" in doc:
            kwargs["seed"] = int(doc["seed"])
        if "mixture_components" in doc and doc["mixture_components"] is not None:
            kwargs["mixture_components"] = int(doc["mixture_components"])
        for name, section_cls in _SECTIONS.items():
            section_doc = doc.get(name, {})
            _take(section_doc, {f.name for f in section_cls.__dataclass_fields__.values()}, name)
            kwargs[name] = section_cls(**section_doc)
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def resolved(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.resolved(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
