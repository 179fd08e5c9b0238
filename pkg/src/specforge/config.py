"""Run configuration: a TOML file plus environment overrides.

Relative paths resolve against the directory of the config file.  A path
starting with ``pkg:`` names a file shipped under ``specforge/data/protocols``.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .llm import CLASSIFY_TEMPERATURE, GENERATE_TEMPERATURE, MAX_TOKENS_LIMIT

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PKG_PREFIX = "pkg:"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RfcInput(_Section):
    id: str = Field(min_length=1)
    path: str


class Temperatures(_Section):
    classify: float = CLASSIFY_TEMPERATURE
    generate: float = GENERATE_TEMPERATURE

    @model_validator(mode="after")
    def _fixed(self):
        if self.classify != CLASSIFY_TEMPERATURE or self.generate != GENERATE_TEMPERATURE:
            raise ValueError(f"temperatures are fixed at classify={CLASSIFY_TEMPERATURE}, generate={GENERATE_TEMPERATURE}")
        return self


class ProviderSettings(_Section):
    mode: Literal["live", "replay", "record"] = "replay"
    model: str = "gpt-4"
    base_url: str = "https://api.openai.com/v1"
    fixture_dir: Optional[str] = None
    cache_dir: Optional[str] = None
    rate: float = Field(1.0, gt=0)
    max_tokens: int = Field(2000, gt=0, le=MAX_TOKENS_LIMIT)
    temperatures: Temperatures = Field(default_factory=Temperatures)


class GraphSettings(_Section):
    initial_states: list[str] = Field(min_length=1)
    terminal_states: list[str] = Field(default_factory=list)
    targets: list[str] = Field(default_factory=list)  # empty: every command


class CapabilitySettings(_Section):
    tls_required: list[str] = ["STLS", "AUTH"]
    unrecognized_markers: list[str] = ["unknown command", "unrecognized", "not implemented", "unimplemented"]
    data_state_markers: list[str] = ["no such message", "mailbox", "maildrop", "already deleted", "no messages"]


class SutSettings(_Section):
    mock: bool = True
    host: str = "127.0.0.1"
    port: int = Field(0, ge=0, le=65535)  # 0 with mock = any free port
    connect_timeout_ms: int = Field(3000, gt=0)
    read_timeout_ms: int = Field(5000, gt=0)
    greeting_expected: bool = True
    capabilities: CapabilitySettings = Field(default_factory=CapabilitySettings)

    @model_validator(mode="after")
    def _port(self):
        if not self.mock and self.port == 0:
            raise ValueError("an external SUT needs a port")
        return self


class Budgets(_Section):
    repair_rounds: int = Field(7, ge=1)
    derivations_per_mtp: int = Field(3, ge=1)
    retrieval_k: int = Field(5, ge=1)
    per_mtp_cap: Optional[int] = Field(None, ge=1)


class Reference(_Section):
    golden_grammar: Optional[str] = None
    golden_elements: Optional[str] = None
    mandated_forms: Optional[str] = None
    aliases: Optional[str] = None
    canonical_routes: list[list[str]] = Field(default_factory=list)


class RunConfig(_Section):
    protocol: str = Field(min_length=1)
    seed: int = 0
    output_root: str = "."
    run_id: Optional[str] = None
    rfc: list[RfcInput] = Field(min_length=1)
    provider: ProviderSettings = Field(default_factory=ProviderSettings)
    graph: GraphSettings
    sut: SutSettings = Field(default_factory=SutSettings)
    budgets: Budgets = Field(default_factory=Budgets)
    reference: Reference = Field(default_factory=Reference)
    base_dir: str = "."

    @model_validator(mode="after")
    def _replay_fixtures(self):
        if self.provider.mode in ("replay", "record") and not self.provider.fixture_dir:
            raise ValueError(f"provider mode {self.provider.mode} needs provider.fixture_dir")
        return self

    # --- path helpers ---------------------------------------------------------

    def resolve(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        if p.startswith(PKG_PREFIX):
            return Path(str(resources.files("specforge") / "data" / "protocols" / p[len(PKG_PREFIX):]))
        path = Path(p).expanduser()
        return (path if path.is_absolute() else Path(self.base_dir) / path).resolve()

    @property
    def root(self) -> Path:
        return self.resolve(self.output_root)

    @property
    def primary_rfc(self) -> str:
        return self.rfc[0].id

    def digest(self) -> str:
        """Hash of everything that shapes the run (paths and run id excluded)."""
        d = self.model_dump(exclude={"base_dir", "output_root", "run_id"})
        d["provider"].pop("cache_dir", None)
        d["provider"].pop("fixture_dir", None)
        d["provider"].pop("mode", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]

    @property
    def effective_run_id(self) -> str:
        return self.run_id or f"{self.protocol}-s{self.seed}-{self.digest()}"


def load_config(path, *, provider: Optional[str] = None, seed: Optional[int] = None, env=None) -> RunConfig:
    """Read, override and validate a run configuration; raises ``ConfigError``."""
    env = os.environ if env is None else env
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    data["base_dir"] = str(path.resolve().parent)
    prov = data.setdefault("provider", {})
    if not isinstance(prov, dict):
        raise ConfigError("[provider] must be a table")
    if env.get("SPECFORGE_CACHE_DIR"):
        prov["cache_dir"] = env["SPECFORGE_CACHE_DIR"]
    if provider is not None:
        prov["mode"] = provider
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(x) for x in first["loc"]) or "config"
        raise ConfigError(f"{path}: {where}: {first['msg']}") from None
