"""Run configuration: named profiles, flat key=value files and manifests."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .grpo import TrainConfig, VARIANTS
from .policy import Architecture
from .verifier import RewardConfig

PROFILES = ("desk", "paper-shaped")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # run
    profile: str = "desk"
    seed: int = 0
    out: str = "run"
    workers: int = 1
    # inputs
    corpus: str = ""
    heldout: str = ""
    checkpoint: str = ""
    proofs: str = ""
    # generation
    n: int = 300
    heldout_n: int = 100
    depth: int = 3
    scramble: int = 5
    min_scramble: int = 1
    source: str = "desk"
    # policy
    hidden: int = 64
    window: int = 4
    state_aware: bool = True
    init_scale: float = 0.05
    # sampling
    temperature: float = 1.0
    max_len: int = 8
    step_budget: int = 32
    # expert iteration
    ei_rounds: int = 2
    samples_per_stmt: int = 256
    sft_lr: float = 0.3
    sft_epochs: int = 2
    sft_batch: int = 32
    # pool window
    pass_n: int = 32
    window_lo: int = 2
    window_hi: int = 16
    pool_temperature: float = 1.0
    # GRPO
    group_size: int = 8
    epsilon: float = 0.2
    lr: float = 0.1
    statements_per_batch: int = 16
    max_rollout_len: int = 8
    variant: str = "grpo"
    iterations: int = 200
    eval_every: int = 50
    eval_samples: int = 32
    inner_epochs: int = 1
    r_success: float = 1.0
    r_fail: float = -1.0
    # evaluation
    eval_ks: str = "1,16,32,64,128"
    eval_seeds: str = "0,1,2"
    temperatures: str = "0.6,0.8,1.0,1.2,1.4"
    sweep_k: int = 16
    failure_budget: int = 32
    entropy_probes: int = 100
    # repair
    repair_samples: int = 16
    repair_attempts: int = 16
    repair_limit: int = 200

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.n < 0 or self.heldout_n < 0:
            raise ConfigError("n and heldout_n must be >= 0")
        if not 0 <= self.window_lo <= self.window_hi <= self.pass_n:
            raise ConfigError("need 0 <= window_lo <= window_hi <= pass_n")
        if not self.r_success > self.r_fail:
            raise ConfigError("r_success must exceed r_fail")
        for name in ("eval_ks", "eval_seeds"):
            try:
                vals = int_list(getattr(self, name))
            except ValueError:
                raise ConfigError(f"{name} must be a comma-separated list of integers") from None
            if not vals:
                raise ConfigError(f"{name} must not be empty")
        try:
            float_list(self.temperatures)
        except ValueError:
            raise ConfigError("temperatures must be a comma-separated list of numbers") from None

    # derived views -------------------------------------------------------

    @property
    def ks(self) -> list[int]:
        return int_list(self.eval_ks)

    @property
    def seeds(self) -> list[int]:
        return int_list(self.eval_seeds)

    @property
    def temperature_grid(self) -> list[float]:
        return float_list(self.temperatures)

    def architecture(self) -> Architecture:
        return Architecture(window=self.window, hidden=self.hidden, state_aware=self.state_aware)

    def reward(self) -> RewardConfig:
        return RewardConfig(self.r_success, self.r_fail)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            group_size=self.group_size,
            epsilon=self.epsilon,
            lr=self.lr,
            statements_per_batch=self.statements_per_batch,
            max_rollout_len=self.max_rollout_len,
            variant=self.variant,
            iterations=self.iterations,
            eval_every=self.eval_every,
            eval_samples=self.eval_samples,
            inner_epochs=self.inner_epochs,
            temperature=self.temperature,
            step_budget=self.step_budget,
            workers=self.workers,
            seed=self.seed,
            reward=self.reward(),
        )


def int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


# profile overrides on top of the dataclass defaults (which are the desk profile)
PROFILE_OVERRIDES: dict[str, dict] = {
    "desk": {},
    "paper-shaped": {
        "profile": "paper-shaped",
        "source": "paper-shaped",
        "group_size": 32,
        "statements_per_batch": 32,
        "epsilon": 0.2,
        "pass_n": 32,
        "window_lo": 2,
        "window_hi": 16,
        "eval_ks": "32,64,128",
    },
}

# reference values echoed into every manifest as comments
PAPER_VALUES = {
    "group_size": "32",
    "lr": "1e-6 (RL), 5e-5 (SFT)",
    "statements_per_batch": "32",
    "max_rollout_len": "8192",
    "sft_epochs": "2",
    "sft_batch": "32",
    "window": "[2, 16] of pass@32",
    "eval_ks": "32,64,128",
}

FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, raw: str):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None
    return raw


def parse_text(text: str, origin: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment line."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in FIELD_TYPES:
            raise ConfigError(f"{origin}:{lineno}: unknown config key {key!r}")
        values[key] = coerce(key, raw)
    return values


def resolve(profile: str | None = None, file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Profile defaults, then config-file values, then explicit overrides."""
    file_values = dict(file_values or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    name = overrides.get("profile") or profile or file_values.get("profile") or "desk"
    if name not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}")
    values = dict(PROFILE_OVERRIDES[name])
    values.update(file_values)
    values.update(overrides)
    values["profile"] = name
    try:
        return RunConfig(**values)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def load(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {p}: {err.strerror}") from None
    return parse_text(text, str(p))


def render(cfg: RunConfig, command: str = "") -> str:
    lines = [f"# resolved configuration{' for ' + command if command else ''}"]
    lines += [f"# paper value: {k} = {v}" for k, v in PAPER_VALUES.items()]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def write_manifest(cfg: RunConfig, command: str, out_dir) -> Path:
    path = Path(out_dir) / f"manifest_{command}.cfg"
    path.write_text(render(cfg, command))
    return path


def with_paths(cfg: RunConfig, **paths: str) -> RunConfig:
    """Absolute input paths, so a manifest works from any directory."""
    return dataclasses.replace(cfg, **{k: str(Path(v).resolve()) if v else "" for k, v in paths.items()})
