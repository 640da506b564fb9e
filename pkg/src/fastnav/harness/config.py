"""Run configuration: JSON schema, defaults and field-precise validation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from ..fusion import GlobalFusion, LocalFusion

CONFIG_VERSION = 1

DECODER_KINDS = ("greedy", "fast", "beam", "random")


class ConfigError(ValueError):
    """Schema violation; ``field`` is a dotted path such as ``decoders[2].beam_width``."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


@dataclass(frozen=True)
class WorldConfig:
    n_graphs: int = 10
    episodes_per_graph: int = 20
    node_count: int = 100
    mean_degree: float = 4.0
    area_side: float = 25.0
    min_path_hops: int = 4
    max_path_hops: int | None = 7
    success_radius: float = 3.0
    seed: int = 0

    def graph_seed(self, gi: int) -> int:
        return self.seed + gi

    def episode_seed(self, gi: int, ei: int) -> int:
        return 1000 * self.graph_seed(gi) + ei


@dataclass(frozen=True)
class ScorerConfig:
    noise_sigma: float = 2.0
    alignment_weight: float = 2.0
    stop_gain: float = 2.0
    pm_noise: float = 0.3
    speaker_noise: float = 0.1
    seed: int = 1
    perfect: bool = False  # ignore the above and use the noise-free scorer


@dataclass(frozen=True)
class DecoderConfig:
    name: str
    kind: str
    max_steps: int | None = None
    # fast
    strategy: str = "exploit"
    stop: str = "stop_action"
    local: str = "logit_sum"
    global_fusion: str | None = None
    max_expansions: int | None = None
    enqueue_k: int | None = None
    backtrack: bool = True
    # beam
    beam_width: int = 8
    rescore_lambda: float = 0.5
    # random
    steps: int = 5
    seed: int = 0

    @property
    def needs_reranker(self) -> bool:
        return self.kind == "fast" and self.global_fusion == GlobalFusion.MLP_ALL.value


@dataclass(frozen=True)
class AnalysisConfig:
    recovery: bool = True
    pareto: tuple[int, ...] = (1, 2, 3, 5, 10, 20, 40)
    pareto_global: str = "g_pm_final"
    fusion_ablation: bool = True
    ablation_budget: int = 40
    ablation_max_steps: int | None = 8


@dataclass(frozen=True)
class RerankerConfig:
    checkpoint: str | None = None  # None: train in-process on the training world
    profile: str = "desk"
    seed: int = 0
    train_world_seed: int = 500
    train_graphs: int = 10
    budget: int = 40


def default_decoders() -> tuple[DecoderConfig, ...]:
    return (
        DecoderConfig("greedy", "greedy", max_steps=8),
        DecoderConfig("fast_short", "fast", max_steps=8),
        DecoderConfig("fast_long", "fast", strategy="explore", stop="max_expansions",
                      max_expansions=40, global_fusion="g_mlp_all"),
        DecoderConfig("beam8", "beam", max_steps=8, beam_width=8, rescore_lambda=0.5),
        DecoderConfig("random", "random", steps=5),
    )


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    decoders: tuple[DecoderConfig, ...] = field(default_factory=default_decoders)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    reranker: RerankerConfig = field(default_factory=RerankerConfig)
    workers: int = 1
    output_dir: str = "out"

    @property
    def needs_reranker(self) -> bool:
        return any(d.needs_reranker for d in self.decoders)

    def decoder(self, name: str) -> DecoderConfig:
        for d in self.decoders:
            if d.name == name:
                return d
        raise ConfigError(f"no decoder named {name!r}", "decoders")

    def to_json(self) -> str:
        doc = {"schema_version": CONFIG_VERSION, **asdict(self)}
        return json.dumps(doc, indent=2) + "\n"


# ---------------------------------------------------------------------------
# parsing

_SECTIONS = {"world": WorldConfig, "scorer": ScorerConfig, "analysis": AnalysisConfig, "reranker": RerankerConfig}


def _check_type(value: Any, annotation: str, where: str) -> Any:
    base, _, rest = annotation.partition(" | ")
    if value is None:
        if rest == "None":
            return None
        raise ConfigError("must not be null", where)
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", where)
    elif base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", where)
    elif base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", where)
        return float(value)
    elif base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", where)
    elif base.startswith("tuple"):
        if not isinstance(value, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in value):
            raise ConfigError(f"expected a list of integers, got {value!r}", where)
        return tuple(value)
    return value


def _section(cls, raw: Any, where: str, **fixed):
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", where)
    types = {k: f.type for k, f in cls.__dataclass_fields__.items()}
    out = dict(fixed)
    for key, value in raw.items():
        if key not in types:
            raise ConfigError("unknown field", f"{where}.{key}")
        if key not in fixed:
            out[key] = _check_type(value, types[key], f"{where}.{key}")
    return cls(**out)


def _positive(value: float | None, where: str, allow_none: bool = False) -> None:
    if value is None and allow_none:
        return
    if value is None or value < 1:
        raise ConfigError(f"must be >= 1, got {value!r}", where)


def _validate_decoder(d: DecoderConfig, where: str) -> None:
    if d.kind not in DECODER_KINDS:
        raise ConfigError(f"unknown decoder kind {d.kind!r}; expected one of {', '.join(DECODER_KINDS)}", f"{where}.kind")
    for name in ("max_steps", "max_expansions", "enqueue_k"):
        _positive(getattr(d, name), f"{where}.{name}", allow_none=True)
    if d.kind == "beam":
        _positive(d.beam_width, f"{where}.beam_width")
        if not 0.0 <= d.rescore_lambda <= 1.0:
            raise ConfigError("must lie in [0, 1]", f"{where}.rescore_lambda")
    if d.kind == "random" and d.steps < 0:
        raise ConfigError("must be >= 0", f"{where}.steps")
    if d.kind == "fast":
        if d.strategy not in ("explore", "exploit"):
            raise ConfigError(f"unknown strategy {d.strategy!r}", f"{where}.strategy")
        if d.stop not in ("stop_action", "max_expansions"):
            raise ConfigError(f"unknown stop criterion {d.stop!r}", f"{where}.stop")
        if d.stop == "max_expansions" and d.max_expansions is None:
            raise ConfigError("required when stop is max_expansions", f"{where}.max_expansions")
        try:
            LocalFusion.from_name(d.local)
        except ValueError as exc:
            raise ConfigError(str(exc), f"{where}.local") from None
        if d.global_fusion is not None:
            try:
                GlobalFusion(d.global_fusion)
            except ValueError:
                raise ConfigError(f"unknown global fusion {d.global_fusion!r}", f"{where}.global_fusion") from None


def _validate(cfg: RunConfig) -> None:
    w = cfg.world
    for name in ("n_graphs", "episodes_per_graph", "node_count", "min_path_hops"):
        _positive(getattr(w, name), f"world.{name}")
    if w.max_path_hops is not None and w.max_path_hops < w.min_path_hops:
        raise ConfigError("must be >= world.min_path_hops", "world.max_path_hops")
    if w.node_count < 2:
        raise ConfigError("must be >= 2", "world.node_count")
    for name in ("mean_degree", "area_side", "success_radius"):
        if getattr(w, name) <= 0:
            raise ConfigError("must be > 0", f"world.{name}")
    for name in ("noise_sigma", "pm_noise", "speaker_noise"):
        if getattr(cfg.scorer, name) < 0:
            raise ConfigError("must be >= 0", f"scorer.{name}")
    if not cfg.decoders:
        raise ConfigError("at least one decoder is required", "decoders")
    names = set()
    for i, d in enumerate(cfg.decoders):
        if d.name in names:
            raise ConfigError(f"duplicate decoder name {d.name!r}", f"decoders[{i}].name")
        names.add(d.name)
        _validate_decoder(d, f"decoders[{i}]")
    a = cfg.analysis
    for i, m in enumerate(a.pareto):
        _positive(m, f"analysis.pareto[{i}]")
    try:
        GlobalFusion(a.pareto_global)
    except ValueError:
        raise ConfigError(f"unknown global fusion {a.pareto_global!r}", "analysis.pareto_global") from None
    _positive(a.ablation_budget, "analysis.ablation_budget")
    _positive(a.ablation_max_steps, "analysis.ablation_max_steps", allow_none=True)
    r = cfg.reranker
    from ..reranker import PROFILES

    if r.profile not in PROFILES:
        raise ConfigError(f"unknown profile {r.profile!r}; expected one of {', '.join(PROFILES)}", "reranker.profile")
    _positive(r.train_graphs, "reranker.train_graphs")
    _positive(r.budget, "reranker.budget")
    _positive(cfg.workers, "workers")


def parse_config(doc: Any) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object")
    if "schema_version" not in doc:
        raise ConfigError("missing", "schema_version")
    if doc["schema_version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported version {doc['schema_version']!r}", "schema_version")
    kw: dict[str, Any] = {}
    for key, value in doc.items():
        if key == "schema_version":
            continue
        if key in _SECTIONS:
            kw[key] = _section(_SECTIONS[key], value, key)
        elif key == "decoders":
            if not isinstance(value, list):
                raise ConfigError("expected a list", "decoders")
            decs = []
            for i, raw in enumerate(value):
                where = f"decoders[{i}]"
                if not isinstance(raw, dict):
                    raise ConfigError("expected an object", where)
                for req in ("name", "kind"):
                    if not isinstance(raw.get(req), str):
                        raise ConfigError("required string", f"{where}.{req}")
                decs.append(_section(DecoderConfig, raw, where, name=raw["name"], kind=raw["kind"]))
            kw["decoders"] = tuple(decs)
        elif key == "workers":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"expected an integer, got {value!r}", "workers")
            kw["workers"] = value
        elif key == "output_dir":
            if not isinstance(value, str):
                raise ConfigError(f"expected a string, got {value!r}", "output_dir")
            kw["output_dir"] = value
        else:
            raise ConfigError("unknown field", key)
    cfg = RunConfig(**kw)
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(doc)
