"""Run configuration: JSON config file plus flag overrides (flags win)."""

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .bootstrap import CycleConfig
from .errors import ConfigError
from .learner import DEFAULT_FEATURE_DIM, TrainConfig
from .retrieval import DEFAULT_EMBEDDING_DIM
from .text import derive_seed


@dataclass(frozen=True)
class RunConfig:
    train_path: str | None = None
    test_path: str | None = None
    corpus_path: str | None = None
    oracle_path: str | None = None
    index_path: str | None = None
    output_dir: str | None = None
    seed: int | None = None
    encoder_dim: int = DEFAULT_EMBEDDING_DIM
    feature_dim: int = DEFAULT_FEATURE_DIM
    channels: str = "query-features"
    cycle: CycleConfig = field(default_factory=CycleConfig)

    def with_seed_applied(self) -> "RunConfig":
        """Propagate the global seed into cycle and per-module training seeds."""
        if self.seed is None:
            return self
        cycle = replace(
            self.cycle,
            rng_seed=self.seed,
            selector_train=replace(self.cycle.selector_train,
                                   rng_seed=derive_seed(self.seed, "selector-train")),
            answerer_train=replace(self.cycle.answerer_train,
                                   rng_seed=derive_seed(self.seed, "answerer-train")),
        )
        return replace(self, cycle=cycle)


def _build_train_config(raw: dict, name: str) -> TrainConfig:
    allowed = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    return TrainConfig(**raw)


def _build_cycle_config(raw: dict) -> CycleConfig:
    raw = dict(raw)
    selector_train = _build_train_config(raw.pop("selector_train", {}), "cycle.selector_train")
    answerer_train = _build_train_config(raw.pop("answerer_train", {}), "cycle.answerer_train")
    allowed = {f.name for f in fields(CycleConfig)} - {"selector_train", "answerer_train"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in cycle config: {sorted(unknown)}")
    return CycleConfig(selector_train=selector_train, answerer_train=answerer_train, **raw)


_TOP_LEVEL_KEYS = {"paths", "output_dir", "seed", "encoder_dim", "feature_dim", "channels", "cycle"}
_PATH_KEYS = {"train", "test", "corpus", "oracle", "index"}


def load_run_config(path: str | Path | None) -> RunConfig:
    """Parse the JSON config file into a RunConfig; missing file is an error."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    paths = raw.get("paths", {})
    if not isinstance(paths, dict) or set(paths) - _PATH_KEYS:
        raise ConfigError(f"{path}: 'paths' must be an object with keys from {sorted(_PATH_KEYS)}")
    return RunConfig(
        train_path=paths.get("train"),
        test_path=paths.get("test"),
        corpus_path=paths.get("corpus"),
        oracle_path=paths.get("oracle"),
        index_path=paths.get("index"),
        output_dir=raw.get("output_dir"),
        seed=raw.get("seed"),
        encoder_dim=raw.get("encoder_dim", DEFAULT_EMBEDDING_DIM),
        feature_dim=raw.get("feature_dim", DEFAULT_FEATURE_DIM),
        channels=raw.get("channels", "query-features"),
        cycle=_build_cycle_config(raw.get("cycle", {})),
    )


_SELECTION_FLAG_MAP = {"selector": "selector", "dpr": "dpr_order", "random": "random"}
_ANSWERING_FLAG_MAP = {"vote": "voting", "concat": "concatenating"}
_LABELING_FLAG_MAP = {"conj": "predictions_and_weak", "pred-only": "predictions_only"}


def apply_flag_overrides(config: RunConfig, args) -> RunConfig:
    """Overlay command-line flags onto a RunConfig; flags always win."""
    updates = {}
    for flag, attr in (("train", "train_path"), ("test", "test_path"),
                       ("corpus", "corpus_path"), ("oracle", "oracle_path"),
                       ("index", "index_path"), ("output_dir", "output_dir"),
                       ("seed", "seed"), ("encoder_dim", "encoder_dim"),
                       ("feature_dim", "feature_dim"), ("channels", "channels")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[attr] = value
    cycle_updates = {}
    for flag, attr in (("k_candidate", "k_candidate"), ("k_train", "k_train"),
                       ("k_test", "k_test"), ("cycles", "n_cycles")):
        value = getattr(args, flag, None)
        if value is not None:
            cycle_updates[attr] = value
    selection = getattr(args, "selection", None)
    if selection is not None:
        cycle_updates["selection_mode"] = _SELECTION_FLAG_MAP[selection]
    answering = getattr(args, "answering", None)
    if answering is not None:
        cycle_updates["answer_mode"] = _ANSWERING_FLAG_MAP[answering]
    labeling = getattr(args, "labeling", None)
    if labeling is not None:
        cycle_updates["labeling_mode"] = _LABELING_FLAG_MAP[labeling]
    if cycle_updates:
        updates["cycle"] = replace(config.cycle, **cycle_updates)
    if updates:
        config = replace(config, **updates)
    return config.with_seed_applied()
