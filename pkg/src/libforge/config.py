"""Layered configuration: flags > environment > config file > defaults.

The config file is one declarative YAML document (default ./libforge.yaml)
with three sections mirroring the dataclasses they populate::

    gateway:
      sampler_endpoint: stub:echo
      scorer_endpoint: stub:uniform
    run:
      k: 8
      cluster_size: 3
      metric: mdl
    backend:
      kind: mock
      timeout_s: 10

Every effective value is echoed into run.json by the pipeline.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .gateway import GatewayConfig
from .harness import RunnerBackend
from .pipeline import RunConfig
from .scoring import MetricId
from .tokens import load_ref_vocab

DEFAULT_CONFIG_FILE = "libforge.yaml"

# env var -> (section, key)
ENV_MAP = {
    "LIBFORGE_SAMPLER_ENDPOINT": ("gateway", "sampler_endpoint"),
    "LIBFORGE_SCORER_ENDPOINT": ("gateway", "scorer_endpoint"),
    "LIBFORGE_EMBEDDER_ENDPOINT": ("gateway", "embedder_endpoint"),
    "LIBFORGE_SAMPLER_MODEL": ("gateway", "sampler_model"),
    "LIBFORGE_SCORER_MODEL": ("gateway", "scorer_model"),
    "LIBFORGE_EMBEDDER_MODEL": ("gateway", "embedder_model"),
    "LIBFORGE_CACHE_DIR": ("gateway", "cache_dir"),
    "LIBFORGE_TEMPERATURE": ("gateway", "temperature"),
    "LIBFORGE_K": ("run", "k"),
    "LIBFORGE_CLUSTER_SIZE": ("run", "cluster_size"),
    "LIBFORGE_METRIC": ("run", "metric"),
    "LIBFORGE_MODE": ("run", "mode"),
    "LIBFORGE_SEED": ("run", "seed"),
    "LIBFORGE_JOBS": ("run", "jobs"),
    "LIBFORGE_MIN_SLOC": ("run", "min_sloc"),
    "LIBFORGE_TOKENIZER": ("run", "tokenizer"),
    "LIBFORGE_TOKENIZER_VOCAB": ("run", "tokenizer_vocab"),
    "LIBFORGE_BACKEND": ("backend", "kind"),
    "LIBFORGE_TEST_TIMEOUT": ("backend", "timeout_s"),
}

_INT_KEYS = {"k", "cluster_size", "seed", "jobs", "min_sloc", "retrieval_top_m", "max_tokens"}
_FLOAT_KEYS = {"temperature", "timeout", "timeout_s", "overall_timeout_s"}


def _coerce(key: str, value: Any) -> Any:
    if isinstance(value, str):
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    return value


@dataclass(frozen=True)
class ResolvedConfig:
    gateway: GatewayConfig
    run: RunConfig
    backend: RunnerBackend
    effective: dict  # every effective value, for run.json
    explicit: frozenset = frozenset()  # (section, key) pairs set by any layer


def resolve_config(
    flags: Mapping[str, Any] | None = None,
    config_file: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    task_dir: str | Path | None = None,
) -> ResolvedConfig:
    """Merge defaults, config file, per-task overrides, environment, and
    flags (highest wins).

    `flags` uses dotted keys ("run.k") or plain keys known to one section.
    A libforge.yaml inside `task_dir`, when present, overrides the root
    config file.
    """
    env = os.environ if env is None else env
    sections: dict[str, dict[str, Any]] = {"gateway": {}, "run": {}, "backend": {}}

    path = Path(config_file) if config_file else Path(DEFAULT_CONFIG_FILE)
    layers = [path]
    if task_dir is not None:
        layers.append(Path(task_dir) / DEFAULT_CONFIG_FILE)
    for layer in layers:
        if not layer.is_file():
            continue
        loaded = yaml.safe_load(layer.read_text(encoding="utf-8")) or {}
        for section in sections:
            for key, value in (loaded.get(section) or {}).items():
                sections[section][key] = _coerce(key, value)

    for var, (section, key) in ENV_MAP.items():
        if var in env:
            sections[section][key] = _coerce(key, env[var])

    for dotted, value in (flags or {}).items():
        if value is None:
            continue
        if "." in dotted:
            section, key = dotted.split(".", 1)
        else:
            section, key = _guess_section(dotted), dotted
        sections[section][key] = _coerce(key, value)

    vocab_path = sections["run"].pop("tokenizer_vocab", None)
    if vocab_path:
        load_ref_vocab(vocab_path)

    run_kwargs = dict(sections["run"])
    if "metric" in run_kwargs:
        run_kwargs["metric"] = MetricId(run_kwargs["metric"])
    backend_kwargs = dict(sections["backend"])
    if "runner_cmd" in backend_kwargs and isinstance(backend_kwargs["runner_cmd"], str):
        backend_kwargs["runner_cmd"] = tuple(backend_kwargs["runner_cmd"].split())
    if "runner_cmd" in backend_kwargs:
        backend_kwargs["runner_cmd"] = tuple(backend_kwargs["runner_cmd"])

    gateway = GatewayConfig(**sections["gateway"])
    run = RunConfig(**run_kwargs)
    backend = RunnerBackend(**backend_kwargs)
    effective = {
        "gateway": gateway.to_dict(),
        "run": run.to_dict(),
        "backend": backend.to_dict(),
        "tokenizer_vocab": str(vocab_path) if vocab_path else None,
        "config_files": [str(p) for p in layers if p.is_file()],
    }
    explicit = frozenset(
        (section, key) for section, values in sections.items() for key in values
    )
    return ResolvedConfig(
        gateway=gateway, run=run, backend=backend, effective=effective, explicit=explicit
    )


_GATEWAY_KEYS = set(GatewayConfig().to_dict())
_BACKEND_KEYS = set(RunnerBackend().to_dict())


def _guess_section(key: str) -> str:
    if key in _GATEWAY_KEYS:
        return "gateway"
    if key in _BACKEND_KEYS:
        return "backend"
    return "run"
