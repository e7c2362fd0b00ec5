"""Service bootstrap: config file, token registry, model bundles, engine, app."""

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .api import create_app
from .bundle import load_bundle_file
from .cardionet import from_bundle
from .ecg import LeadConfiguration
from .engine import Engine, EngineConfig, load_token_file

PORT_ENV_VAR = "CARDIOSERVE_PORT"


class ServiceConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    token_file: Path
    single_lead_bundle: Path | None = None
    twelve_lead_bundle: Path | None = None
    listen_host: str = "127.0.0.1"
    listen_port: int = 8440
    worker_count: int | None = None
    request_timeout_s: float = 30.0
    queue_capacity: int = 1024
    chunk_seconds: float = 30.0
    console_dir: Path | None = None

    @classmethod
    def load(cls, path) -> "ServiceConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ServiceConfigError(f"cannot read service config {path}: {exc}") from exc
        known = {
            "token_file", "single_lead_bundle", "twelve_lead_bundle", "listen_host",
            "listen_port", "worker_count", "request_timeout_s", "queue_capacity",
            "chunk_seconds", "console_dir",
        }
        unknown = set(raw) - known
        if unknown:
            raise ServiceConfigError(f"unknown config keys: {sorted(unknown)}")
        if "token_file" not in raw:
            raise ServiceConfigError("config must name a token_file")
        base = path.parent

        def resolve(key):
            return (base / raw[key]).resolve() if raw.get(key) else None

        cfg = cls(
            token_file=resolve("token_file"),
            single_lead_bundle=resolve("single_lead_bundle"),
            twelve_lead_bundle=resolve("twelve_lead_bundle"),
            listen_host=raw.get("listen_host", "127.0.0.1"),
            listen_port=int(raw.get("listen_port", 8440)),
            worker_count=raw.get("worker_count"),
            request_timeout_s=float(raw.get("request_timeout_s", 30.0)),
            queue_capacity=int(raw.get("queue_capacity", 1024)),
            chunk_seconds=float(raw.get("chunk_seconds", 30.0)),
            console_dir=resolve("console_dir"),
        )
        if cfg.single_lead_bundle is None and cfg.twelve_lead_bundle is None:
            raise ServiceConfigError("config must name at least one model bundle")
        return cfg

    def effective_port(self) -> int:
        override = os.environ.get(PORT_ENV_VAR)
        return int(override) if override else self.listen_port


def build_engine(cfg: ServiceConfig) -> Engine:
    tokens = load_token_file(cfg.token_file)
    if not tokens:
        raise ServiceConfigError(f"token file {cfg.token_file} holds no tokens")
    models = {}
    if cfg.single_lead_bundle is not None:
        models[LeadConfiguration.SINGLE_LEAD] = from_bundle(load_bundle_file(cfg.single_lead_bundle))
    if cfg.twelve_lead_bundle is not None:
        models[LeadConfiguration.TWELVE_LEAD] = from_bundle(load_bundle_file(cfg.twelve_lead_bundle))
    engine_kwargs = {}
    if cfg.worker_count is not None:
        engine_kwargs["worker_count"] = int(cfg.worker_count)
    engine_config = EngineConfig(
        tokens=tokens,
        request_timeout_s=cfg.request_timeout_s,
        queue_capacity=cfg.queue_capacity,
        chunk_seconds=cfg.chunk_seconds,
        **engine_kwargs,
    )
    return Engine(engine_config, models=models)


def build_service(cfg: ServiceConfig):
    """Engine plus FastAPI app, engine not yet started."""
    engine = build_engine(cfg)
    console = cfg.console_dir if cfg.console_dir and Path(cfg.console_dir).is_dir() else None
    app = create_app(engine, console_dir=console)
    return engine, app
