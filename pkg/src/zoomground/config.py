"""YAML run configuration shared by every CLI command.

Example::

    grounder: http-bbox          # http-bbox | http-toolcall | oracle | mock
    endpoint:
      base_url: http://localhost:8000/v1
      model: ui-venus-7b
      token_env: ZOOMGROUND_API_KEY
    zoom: {depth: 3, rho: [0.5], min_crop: 768, prezoom: true, grid: [2, 2], tau: 50, boundary: clip}
    oracle: {sigma_ratio: 0.0, miss_rate: 0.0}
    dataset: data/manifest.jsonl
    run_dir: runs/baseline
    parallelism: 8
    seed: 0

Relative paths resolve against the config file. Unknown keys are rejected
so typos surface instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .geometry import BoundaryMode, PixelBox
from .grounder import (
    ConstantGrounder,
    EndpointConfig,
    Grounder,
    HttpGrounder,
    OracleGrounder,
    OracleNoiseModel,
)
from .pipeline import ZoomConfig

GROUNDER_KINDS = ("http-bbox", "http-toolcall", "oracle", "mock")
EFFECTIVE_CONFIG = "config.effective.yaml"

_ENDPOINT_KEYS = {
    "base_url", "model", "timeout", "retries", "token_env",
    "max_in_flight", "max_tokens", "temperature", "backoff_base", "backoff_max",
}
_ZOOM_KEYS = {f.name for f in dataclasses.fields(ZoomConfig)}
_ORACLE_KEYS = {"sigma_ratio", "miss_rate", "global_bias_ratio", "latency_s"}
_MOCK_KEYS = {"point", "failure"}
_TOP_KEYS = {
    "grounder", "endpoint", "zoom", "oracle", "mock", "dataset",
    "run_dir", "parallelism", "seed", "group_by", "strict",
}


class ConfigError(ValueError):
    pass


def _check_keys(section: str, d: Any, allowed: set[str]) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")
    return dict(d)


@dataclass
class RunConfig:
    grounder: str = "oracle"
    endpoint: dict = field(default_factory=dict)
    zoom: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    mock: dict = field(default_factory=dict)
    dataset: str | None = None
    run_dir: str | None = None
    parallelism: int = 1
    seed: int = 0
    group_by: list[str] = field(default_factory=list)
    strict: bool = True

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "RunConfig":
        d = _check_keys("config", d, _TOP_KEYS)
        cfg = cls(
            grounder=d.get("grounder", "oracle"),
            endpoint=_check_keys("endpoint", d.get("endpoint"), _ENDPOINT_KEYS),
            zoom=_check_keys("zoom", d.get("zoom"), _ZOOM_KEYS),
            oracle=_check_keys("oracle", d.get("oracle"), _ORACLE_KEYS),
            mock=_check_keys("mock", d.get("mock"), _MOCK_KEYS),
            dataset=d.get("dataset"),
            run_dir=d.get("run_dir"),
            parallelism=d.get("parallelism", 1),
            seed=d.get("seed", 0),
            group_by=list(d.get("group_by") or []),
            strict=d.get("strict", True),
        )
        if base is not None:
            if cfg.dataset and not Path(cfg.dataset).is_absolute():
                cfg.dataset = str(base / cfg.dataset)
            if cfg.run_dir and not Path(cfg.run_dir).is_absolute():
                cfg.run_dir = str(base / cfg.run_dir)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.grounder not in GROUNDER_KINDS:
            raise ConfigError(f"grounder must be one of {GROUNDER_KINDS}, got {self.grounder!r}")
        if not isinstance(self.parallelism, int) or self.parallelism < 1:
            raise ConfigError(f"parallelism must be a positive integer, got {self.parallelism!r}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if self.dataset and not Path(self.dataset).exists():
            raise ConfigError(f"dataset {self.dataset} does not exist")
        # build once so bad values fail at load time, not mid-run
        self.zoom_config()
        if self.grounder == "oracle":
            self.noise_model()
        if self.grounder.startswith("http") and self.endpoint:
            self.endpoint_config()

    def zoom_config(self) -> ZoomConfig:
        try:
            return ZoomConfig(**self.zoom)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"zoom: {exc}") from None

    def noise_model(self) -> OracleNoiseModel:
        kw = {k: v for k, v in self.oracle.items() if k != "latency_s"}
        try:
            return OracleNoiseModel(seed=self.seed, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"oracle: {exc}") from None

    def endpoint_config(self) -> EndpointConfig:
        missing = [k for k in ("base_url", "model") if not self.endpoint.get(k)]
        if missing:
            raise ConfigError(f"endpoint: missing {', '.join(missing)} (set in config or via --endpoint/--model)")
        protocol = "bbox-text" if self.grounder == "http-bbox" else "tool-call"
        try:
            return EndpointConfig(protocol=protocol, **self.endpoint)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"endpoint: {exc}") from None

    def make_grounder(self, truths: dict[str, PixelBox] | None = None) -> Grounder:
        if self.grounder.startswith("http"):
            return HttpGrounder(self.endpoint_config())
        if self.grounder == "oracle":
            if truths is None:
                raise ConfigError("the oracle grounder needs ground-truth boxes")
            return OracleGrounder(truths, self.noise_model(), latency_s=float(self.oracle.get("latency_s", 0.0)))
        point = self.mock.get("point", (0.5, 0.5))
        return ConstantGrounder(tuple(point) if point is not None else None, self.mock.get("failure", "no_target"))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["zoom"] = self.zoom_config().to_dict()
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return RunConfig.from_dict(data or {}, base=path.parent)


def parse_grid(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise ValueError(f"grid must look like RxC (e.g. 2x2), got {text!r}") from None


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Layer command-line flags (those not None) over the file config."""
    cfg = dataclasses.replace(
        cfg,
        endpoint=dict(cfg.endpoint),
        zoom=dict(cfg.zoom),
        oracle=dict(cfg.oracle),
        mock=dict(cfg.mock),
        group_by=list(cfg.group_by),
    )
    get = lambda name: getattr(args, name, None)  # noqa: E731
    if get("grounder"):
        cfg.grounder = args.grounder
    if get("endpoint"):
        cfg.endpoint["base_url"] = args.endpoint
    if get("model"):
        cfg.endpoint["model"] = args.model
    if get("depth") is not None:
        cfg.zoom["depth"] = args.depth
    if get("rho"):
        cfg.zoom["rho"] = list(args.rho)
    if get("min_crop") is not None:
        cfg.zoom["min_crop"] = args.min_crop
    if get("tau") is not None:
        cfg.zoom["tau"] = args.tau
    if get("boundary"):
        cfg.zoom["boundary"] = BoundaryMode(args.boundary).value
    if get("prezoom"):
        cfg.zoom["prezoom"] = args.prezoom == "on"
    if get("grid"):
        cfg.zoom["grid"] = list(parse_grid(args.grid))
    if get("parallelism") is not None:
        cfg.parallelism = args.parallelism
    if get("seed") is not None:
        cfg.seed = args.seed
    if get("run_dir"):
        cfg.run_dir = args.run_dir
    if get("dataset"):
        cfg.dataset = args.dataset
    if get("group_by"):
        cfg.group_by = list(args.group_by)
    if get("sigma_ratio") is not None:
        cfg.oracle["sigma_ratio"] = args.sigma_ratio
    if get("miss_rate") is not None:
        cfg.oracle["miss_rate"] = args.miss_rate
    if get("latency") is not None:
        cfg.oracle["latency_s"] = args.latency
    cfg.validate()
    return cfg
