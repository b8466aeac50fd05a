"""Shared JSON config schema, seed derivation, and run manifests.

One structured format covers every entry point. The building blocks:

``instance``::

    {"transactions": {"count": 12, "size_bytes": 1024},   # constant sizes
     "nodes": [{"bandwidth_bytes_per_sec": 8.0e6}],
     "limits": {"lb": 4, "ub": 8, "cb": 16384}}

``transactions`` alternatively takes ``{"sizes_bytes": [...]}`` for explicit
sizes or ``{"count": N, "size_range_bytes": [lo, hi], "rng_seed": k}`` for
uniformly random sizes. Transaction and node ids are implicit by position.

``workload``::

    {"arrival_process": "fixed" | "poisson", "arrival_rate_tps": 400.0,
     "total_tx": 1200, "tx_size_bytes": 1024, "rng_seed": 3}

(``tx_size_range_bytes: [lo, hi]`` replaces ``tx_size_bytes`` for mixed
sizes.)

``block_cut``:  {"max_tx_count": 100, "max_bytes": 1048576, "timeout_s": 0.5}
``cost``:       any subset of the GroundTruthCost fields
``ga`` / ``surrogate``: any subset of the respective config fields

Seeds resolve in priority order --seed flag > BLOCKTUNE_SEED environment
variable > config file value; sub-seeds always derive deterministically
from the resolved root seed, so one number reproduces an entire run.
"""

from __future__ import annotations

import json
import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .ga import GaConfig
from .model import BlockLimits, NodeProfile, ProblemInstance, Transaction
from .simulator import BlockCutRule, GroundTruthCost, SimConfig, WorkloadProfile
from .surrogate import SurrogateConfig

TOOL_VERSION = "0.1.0"
SEED_ENV_VAR = "BLOCKTUNE_SEED"


def derive_seed(root: int, *parts) -> int:
    """Deterministic child seed from a root seed and a label path."""
    ints = [int(root) & 0xFFFFFFFF]
    for part in parts:
        if isinstance(part, str):
            ints.append(zlib.crc32(part.encode("utf-8")))
        else:
            ints.append(int(part) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


def resolve_seed(cli_seed, config_seed, default: int = 0) -> int:
    """--seed beats BLOCKTUNE_SEED beats the config file value."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV_VAR, "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    if config_seed is not None:
        return int(config_seed)
    return default


def load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return d[key]


def build_transactions(d: dict, where: str = "transactions"):
    if "sizes_bytes" in d:
        sizes = d["sizes_bytes"]
    elif "size_bytes" in d:
        sizes = [int(d["size_bytes"])] * int(_req(d, "count", where))
    elif "size_range_bytes" in d:
        lo, hi = d["size_range_bytes"]
        rng = np.random.default_rng(d.get("rng_seed", 0))
        sizes = rng.integers(int(lo), int(hi) + 1,
                             size=int(_req(d, "count", where))).tolist()
    else:
        raise ConfigError(
            f"{where}: need one of sizes_bytes / size_bytes / size_range_bytes")
    return tuple(Transaction(i, int(s)) for i, s in enumerate(sizes))


def build_nodes(items, where: str = "nodes"):
    if not items:
        raise ConfigError(f"{where}: at least one node is required")
    return tuple(NodeProfile(i, float(_req(nd, "bandwidth_bytes_per_sec", where)))
                 for i, nd in enumerate(items))


def build_limits(d: dict, where: str = "limits") -> BlockLimits:
    return BlockLimits(int(_req(d, "lb", where)), int(_req(d, "ub", where)),
                       int(_req(d, "cb", where)))


def build_instance(d: dict, where: str = "instance") -> ProblemInstance:
    return ProblemInstance(
        transactions=build_transactions(_req(d, "transactions", where),
                                        f"{where}.transactions"),
        nodes=build_nodes(_req(d, "nodes", where), f"{where}.nodes"),
        limits=build_limits(_req(d, "limits", where), f"{where}.limits"),
    )


def build_workload(d: dict, where: str = "workload") -> WorkloadProfile:
    kwargs = {
        "arrival_rate_tps": float(_req(d, "arrival_rate_tps", where)),
        "total_tx": int(_req(d, "total_tx", where)),
        "arrival_process": d.get("arrival_process", "fixed"),
        "rng_seed": int(d.get("rng_seed", 0)),
    }
    if "tx_size_range_bytes" in d:
        lo, hi = d["tx_size_range_bytes"]
        kwargs["tx_size_range_bytes"] = (int(lo), int(hi))
    elif "tx_size_bytes" in d:
        kwargs["tx_size_bytes"] = int(d["tx_size_bytes"])
    else:
        raise ConfigError(f"{where}: need tx_size_bytes or tx_size_range_bytes")
    return WorkloadProfile(**kwargs)


def build_cost(d: dict) -> GroundTruthCost:
    try:
        return GroundTruthCost(**d)
    except TypeError as exc:
        raise ConfigError(f"cost: {exc}") from None


def build_block_cut(d: dict, where: str = "block_cut") -> BlockCutRule:
    return BlockCutRule(int(_req(d, "max_tx_count", where)),
                        int(_req(d, "max_bytes", where)),
                        float(_req(d, "timeout_s", where)))


def build_sim_config(d: dict, seed_override=None, where: str = "sim") -> SimConfig:
    seed = resolve_seed(seed_override, d.get("rng_seed"))
    return SimConfig(
        workload=build_workload(_req(d, "workload", where), f"{where}.workload"),
        nodes=build_nodes(_req(d, "nodes", where), f"{where}.nodes"),
        block_cut=build_block_cut(_req(d, "block_cut", where), f"{where}.block_cut"),
        cost=build_cost(d.get("cost", {})),
        rng_seed=seed,
    )


def build_ga_config(d: dict) -> GaConfig:
    try:
        return GaConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"ga: {exc}") from None


def build_surrogate_config(d: dict) -> SurrogateConfig:
    try:
        return SurrogateConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"surrogate: {exc}") from None


@dataclass
class RunManifest:
    """Everything needed to reproduce a run, written next to its outputs."""

    subcommand: str
    config: dict
    seeds: dict
    inputs: list
    outputs: list
    tool_version: str = TOOL_VERSION
    duration_s: float | None = None
    timestamp: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_timestamps: bool = True) -> dict:
        d = {
            "subcommand": self.subcommand,
            "tool_version": self.tool_version,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": [str(p) for p in self.inputs],
            "outputs": [str(p) for p in self.outputs],
        }
        if self.extra:
            d["extra"] = self.extra
        if include_timestamps:
            d["duration_s"] = self.duration_s
            d["timestamp"] = self.timestamp
        return d

    def write(self, path, include_timestamps: bool = True):
        tmp = str(path) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(include_timestamps), fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)


class ManifestClock:
    """Tracks wall-clock duration for a manifest."""

    def __init__(self):
        self.start = time.time()

    def stamp(self, manifest: RunManifest):
        manifest.timestamp = self.start
        manifest.duration_s = time.time() - self.start
        return manifest
