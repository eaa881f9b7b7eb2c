"""Layered settings: embedded defaults < TOML file < environment < flags.

Keys are dotted (``embed.endpoint``). A TOML file uses tables for the prefix::

    provider = "hash"

    [hash]
    seed = 7
    dim = 64

    [retrieval]
    num_queries = 3

Environment overrides are ``LITTA_`` plus the upper-cased key with dots
replaced by underscores, e.g. ``LITTA_HASH_SEED=7`` or ``LITTA_EMBED_ENDPOINT``.
The config file itself comes from ``--config`` or ``LITTA_CONFIG``.
"""

from __future__ import annotations

import json
import os
import sys
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import RetrievalConfig
from .expansion import FallbackOnlyGenerator, load_prompt_template, load_stopwords
from .pipeline import Providers
from .providers import HashEmbedder, HttpEmbedder, HttpExpander

PROVIDERS = ("hash", "http")

# key -> (type, default)
SCHEMA: dict[str, tuple[type, Any]] = {
    "provider": (str, "hash"),
    "hash.seed": (int, 0),
    "hash.dim": (int, 64),
    "embed.endpoint": (str, None),
    "embed.timeout_s": (float, 30.0),
    "embed.retries": (int, 1),
    "embed.max_in_flight": (int, 4),
    "embed.token": (str, None),
    "expand.endpoint": (str, None),
    "expand.timeout_s": (float, 30.0),
    "expand.max_in_flight": (int, 4),
    "expand.token": (str, None),
    "expand.prompt_template_path": (str, None),
    "expand.stopwords_path": (str, None),
    "retrieval.num_queries": (int, 3),
    "retrieval.per_variant_depth": (int, 20),
    "retrieval.final_k": (int, 20),
    "retrieval.rrf_constant": (float, 60.0),
    "retrieval.shortlist_size": (int, 200),
    "retrieval.score_batch_size": (int, 32),
}

ENV_PREFIX = "LITTA_"
CONFIG_ENV = "LITTA_CONFIG"


class ConfigError(ValueError):
    pass


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


def _coerce(key: str, value: Any, origin: str) -> Any:
    kind, _ = SCHEMA[key]
    if value is None:
        return None
    try:
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if not isinstance(value, str):
            raise ValueError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"{origin}: {key} expects {kind.__name__}, got {value!r}") from None


def _flatten(table: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat = {}
    for name, value in table.items():
        key = f"{prefix}{name}"
        if isinstance(value, dict):
            flat.update(_flatten(value, key + "."))
        else:
            flat[key] = value
    return flat


def load_settings(
    path: str | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> dict[str, Any]:
    """Merge all layers into one flat dict. ``None`` overrides are ignored."""
    environ = os.environ if environ is None else environ
    settings = {key: default for key, (_, default) in SCHEMA.items()}

    path = path or environ.get(CONFIG_ENV)
    if path:
        try:
            with open(path, "rb") as fh:
                document = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for key, value in _flatten(document).items():
            if key not in SCHEMA:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            settings[key] = _coerce(key, value, path)

    for key in SCHEMA:
        name = env_name(key)
        if name in environ:
            settings[key] = _coerce(key, environ[name], f"environment {name}")

    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            settings[key] = _coerce(key, value, "command line")

    if settings["provider"] not in PROVIDERS:
        raise ConfigError(f"unknown provider {settings['provider']!r}; expected one of {', '.join(PROVIDERS)}")
    return settings


def retrieval_config(settings: Mapping[str, Any]) -> RetrievalConfig:
    try:
        return RetrievalConfig(
            num_queries=settings["retrieval.num_queries"],
            per_variant_depth=settings["retrieval.per_variant_depth"],
            final_k=settings["retrieval.final_k"],
            rrf_constant=settings["retrieval.rrf_constant"],
            shortlist_size=settings["retrieval.shortlist_size"],
            score_batch_size=settings["retrieval.score_batch_size"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_providers(settings: Mapping[str, Any]) -> Providers:
    """Instantiate providers; validates everything before any network use.

    ``provider`` picks the embedder. Expansion goes over HTTP whenever
    ``expand.endpoint`` is set and otherwise uses fallback variants only.
    """
    provider = settings["provider"]
    if provider not in PROVIDERS:
        raise ConfigError(f"unknown provider {provider!r}; expected one of {', '.join(PROVIDERS)}")
    if provider == "hash":
        if settings["hash.dim"] < 2:
            raise ConfigError(f"hash.dim must be >= 2, got {settings['hash.dim']}")
        embedder = HashEmbedder(dim=settings["hash.dim"], seed=settings["hash.seed"])
    else:
        if not settings["embed.endpoint"]:
            raise ConfigError("provider 'http' requires embed.endpoint")
        embedder = HttpEmbedder(
            settings["embed.endpoint"],
            timeout_s=settings["embed.timeout_s"],
            token=settings["embed.token"],
            max_in_flight=settings["embed.max_in_flight"],
            retries=settings["embed.retries"],
        )

    try:
        stopwords = load_stopwords(settings["expand.stopwords_path"])
        template = load_prompt_template(settings["expand.prompt_template_path"])
    except OSError as exc:
        raise ConfigError(f"cannot read expansion resource: {exc}") from None

    if settings["expand.endpoint"]:
        generator = HttpExpander(
            settings["expand.endpoint"],
            prompt_template=template,
            timeout_s=settings["expand.timeout_s"],
            token=settings["expand.token"],
            max_in_flight=settings["expand.max_in_flight"],
        )
    else:
        generator = FallbackOnlyGenerator()
    return Providers(embedder=embedder, generator=generator, stopwords=stopwords)


def render_settings(settings: Mapping[str, Any]) -> str:
    """TOML-style dump of the effective settings (secrets masked)."""
    top = []
    sections: dict[str, list[str]] = {}
    for key in SCHEMA:
        value = settings[key]
        if key.endswith(".token") and value:
            value = "***"
        if value is None:
            line = f"# {key.rsplit('.', 1)[-1]} unset"
        elif isinstance(value, str):
            line = f"{key.rsplit('.', 1)[-1]} = {json.dumps(value)}"
        else:
            line = f"{key.rsplit('.', 1)[-1]} = {value!r}"
        if "." in key:
            sections.setdefault(key.split(".", 1)[0], []).append(line)
        else:
            top.append(line)
    parts = top[:]
    for name, lines in sections.items():
        parts.append("")
        parts.append(f"[{name}]")
        parts.extend(lines)
    return "\n".join(parts) + "\n"
