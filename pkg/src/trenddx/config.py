"""Application configuration: one validated object for the CLI and the service.

Files are JSON (or YAML when the extension says so); unknown keys are
rejected so typos fail loudly. The config path can be overridden through the
TRENDDX_CONFIG environment variable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .engine import ConsultationConfig
from .router import RouterConfig
from .scoring import PsiConfig, ScoringParams

CONFIG_ENV_VAR = "TRENDDX_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8321
    journal_path: str | None = None
    static_dir: str | None = None


@dataclass(frozen=True)
class AppConfig:
    kb_path: str | None = None
    scoring: ScoringParams = field(default_factory=ScoringParams)
    psi: PsiConfig = field(default_factory=PsiConfig)
    r_max: int = 6
    tau_h: float | str = 0.05
    arity_cap: int = 3
    router: RouterConfig = field(default_factory=RouterConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    trend_query: str = "overall trend"
    seed: int = 0

    def consultation(self) -> ConsultationConfig:
        return ConsultationConfig(
            scoring=self.scoring,
            psi=self.psi,
            r_max=self.r_max,
            tau_h=self.tau_h,
            arity_cap=self.arity_cap,
        )

    def harness(self) -> "Any":
        from .harness import HarnessConfig

        return HarnessConfig(
            consultation=self.consultation(),
            router=self.router,
            trend_query=self.trend_query,
            seed=self.seed,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "kb_path": self.kb_path,
            "scoring": dataclasses.asdict(self.scoring),
            "psi": dataclasses.asdict(self.psi),
            "r_max": self.r_max,
            "tau_h": self.tau_h,
            "arity_cap": self.arity_cap,
            "router": {
                "keywords": {k: list(v) for k, v in sorted(self.router.keywords.items())},
                "flat_slope_eps": self.router.flat_slope_eps,
                "budget": self.router.budget,
                "mk_z_threshold": self.router.mk_z_threshold,
                "gp_lengthscale": self.router.gp_lengthscale,
                "gp_signal_var": self.router.gp_signal_var,
                "gp_noise_var": self.router.gp_noise_var,
                "impute_k": self.router.impute_k,
            },
            "server": dataclasses.asdict(self.server),
            "trend_query": self.trend_query,
            "seed": self.seed,
        }


def _build(cls: type, data: Mapping[str, Any], where: str) -> Any:
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


def app_config_from_dict(data: Mapping[str, Any]) -> AppConfig:
    data = dict(data)
    known = {f.name for f in dataclasses.fields(AppConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    if "scoring" in data:
        kwargs["scoring"] = _build(ScoringParams, data.pop("scoring"), "scoring")
    if "psi" in data:
        kwargs["psi"] = _build(PsiConfig, data.pop("psi"), "psi")
    if "router" in data:
        router = dict(data.pop("router"))
        if "keywords" in router:
            router["keywords"] = {k: tuple(v) for k, v in router["keywords"].items()}
        kwargs["router"] = _build(RouterConfig, router, "router")
    if "server" in data:
        kwargs["server"] = _build(ServerConfig, data.pop("server"), "server")
    kwargs.update(data)
    try:
        return AppConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_app_config(path: str | Path | None = None) -> AppConfig:
    """Load a config file; falls back to the env override, then defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return AppConfig()
    text = Path(path).read_text(encoding="utf-8")
    suffix = Path(path).suffix.lower()
    if suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return app_config_from_dict(data)


def config_hash(config: AppConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
