"""Pipeline configuration: one YAML file with an explicit schema version."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .classifier import ClassifierConfig
from .signals import SurrogateSpec
from .wdcgan import ConfigError, GanConfig

SCHEMA_VERSION = 1
OUT_DIR_ENV = "SHMGAN_OUT_DIR"


@dataclass
class DataConfig:
    """Where the raw signals come from: files on disk or the surrogate synthesizer."""
    source: str = "surrogate"
    undamaged: str | None = None
    damaged: str | None = None
    format: str | None = None
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)

    def validate(self, base: Path) -> None:
        if self.source not in ("surrogate", "files"):
            raise ConfigError(f"data.source must be 'surrogate' or 'files', got {self.source!r}")
        if self.source == "files":
            for name in ("undamaged", "damaged"):
                p = getattr(self, name)
                if p is None:
                    raise ConfigError(f"data.{name} is required when data.source is 'files'")
                if not resolve(base, p).exists():
                    raise ConfigError(f"data.{name}: {resolve(base, p)} does not exist")
        try:
            self.surrogate.validate()
        except ValueError as e:
            raise ConfigError(f"data.surrogate: {e}") from None


@dataclass
class CaseConfig:
    """One training case, e.g. the analogue of a GAN trained for 235 epochs."""
    name: str
    gan_epochs: int
    classifier_epochs: int | None = None

    def validate(self) -> None:
        if not self.name or "/" in self.name:
            raise ConfigError(f"case name {self.name!r} must be non-empty without '/'")
        if self.gan_epochs < 1 or (self.classifier_epochs is not None and self.classifier_epochs < 1):
            raise ConfigError(f"case {self.name}: epochs must be >= 1")


@dataclass
class EvalConfig:
    n_generate: int = 256
    ssim_threshold: float = 0.8
    bins: int = 30
    fid_all_pairs: bool = False

    def validate(self) -> None:
        if self.n_generate < 2:
            raise ConfigError("eval.n_generate must be >= 2")
        if not 0 < self.ssim_threshold <= 1:
            raise ConfigError("eval.ssim_threshold must lie in (0, 1]")
        if self.bins < 1:
            raise ConfigError("eval.bins must be >= 1")


@dataclass
class PipelineConfig:
    seed: int = 0
    seg_len: int = 1024
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    cases: list[CaseConfig] = field(default_factory=lambda: [CaseConfig("E235", 235), CaseConfig("E600", 600)])
    scenarios: list[int] = field(default_factory=lambda: [1, 2])
    n_train: int = 60
    n_test: int = 15
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: str = "."
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        if not self.cases:
            raise ConfigError("at least one case is required")
        names = [c.name for c in self.cases]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate case names: {names}")
        for c in self.cases:
            c.validate()
        if not self.scenarios or any(s not in (1, 2) for s in self.scenarios):
            raise ConfigError(f"scenarios must be a non-empty subset of [1, 2], got {self.scenarios}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")
        self.gan.seg_len = self.classifier.seg_len = self.seg_len
        self.gan.validate()
        self.classifier.validate()
        self.eval.validate()
        self.data.validate(Path(self.base_dir))

    def case(self, name: str | None) -> CaseConfig:
        if name is None:
            return self.cases[0]
        for c in self.cases:
            if c.name == name:
                return c
        raise ConfigError(f"no case named {name!r}; configured: {[c.name for c in self.cases]}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; the output directory does not count."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def resolve(base: Path, p: str | Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _take(d: dict, key: str, cls):
    sub = d.pop(key, None)
    if sub is None:
        return cls()
    if not isinstance(sub, dict):
        raise ConfigError(f"{key} must be a mapping")
    try:
        return cls.from_dict(sub) if hasattr(cls, "from_dict") else cls(**sub)
    except TypeError as e:
        raise ConfigError(f"{key}: {e}") from None
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from None


def from_dict(raw: dict, base_dir: str | Path = ".") -> PipelineConfig:
    """Build and validate a PipelineConfig from a parsed YAML mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    d = copy.deepcopy(raw)
    data = d.pop("data", None) or {}
    if not isinstance(data, dict):
        raise ConfigError("data must be a mapping")
    surrogate = data.pop("surrogate", None)
    if surrogate == "broadband":
        spec = SurrogateSpec.broadband()
    else:
        try:
            spec = SurrogateSpec(**(surrogate or {}))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"data.surrogate: {e}") from None
    try:
        data_cfg = DataConfig(surrogate=spec, **data)
    except TypeError as e:
        raise ConfigError(f"data: {e}") from None
    gan = _take(d, "gan", GanConfig)
    cls = _take(d, "classifier", ClassifierConfig)
    ev = _take(d, "eval", EvalConfig)
    cases_raw = d.pop("cases", None)
    try:
        cases = None if cases_raw is None else [CaseConfig(**c) for c in cases_raw]
    except TypeError as e:
        raise ConfigError(f"cases: {e}") from None
    kw = dict(data=data_cfg, gan=gan, classifier=cls, eval=ev, base_dir=str(base_dir))
    if cases is not None:
        kw["cases"] = cases
    try:
        cfg = PipelineConfig(**kw, **d)
    except TypeError as e:
        raise ConfigError(f"config: {e}") from None
    cfg.validate()
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Read a YAML config (or defaults when ``path`` is None) and apply top-level overrides."""
    raw: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from None
        base = path.parent
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    return from_dict(raw, base)
