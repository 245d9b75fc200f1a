"""
Run Configuration

A single JSON (or YAML) file drives ingest, train, eval and report. The
loaded config is echoed into every run directory together with its digest,
so any artifact can be reproduced from its directory plus the input data.
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
import yaml


DEFAULT_SCHEMA = {
    "review_id": "review_id",
    "brand": "brand",
    "rating": "rating",
    "timestamp": "ts",
    "text": "text",
}

MODES = ("dbtm", "o_dbtm")

# Read only by eval and report; a trained run stays valid when these change
EVAL_FIELDS = ("same_slice", "p_value_method", "coherence", "polarity_grid", "top_n")


@dataclass
class RunConfig:
    """All knobs of one run. Field defaults follow the reference setting (K=50, batch 256, 50k steps)."""

    # Paths
    input: str = "data/reviews.jsonl"
    output_dir: str = "runs/default"
    schema: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SCHEMA))

    # Corpus
    boundaries: List[Union[str, float]] = field(default_factory=list)
    min_df: int = 20
    max_df_frac: float = 0.5
    ngram_max: int = 3
    stoplist: List[str] = field(default_factory=list)
    validation_fraction: float = 0.10

    # Poisson factorization
    K: int = 50
    a: float = 0.3
    b: float = 0.3
    c: float = 0.3
    d: float = 0.3
    pf_max_iters: int = 200
    pf_rel_tol: float = 1e-4

    # Brand-topic inference
    batch: int = 256
    max_steps: int = 50000
    lr: float = 0.01
    tau: float = 0.5
    init_logscale: float = math.log(0.1)
    max_relaxed_draws: int = 16
    label_smoothing: float = 0.0
    wd_weight: float = 1.0
    checkpoint_interval: int = 1000

    # Dynamics
    mode: str = "dbtm"
    no_meta: bool = False
    sigma_x: float = 0.1
    sigma_eta: float = 0.1
    sigma_beta: float = 0.1
    init_eta_scale: float = 1.0
    fisher_point: str = "z"
    break_direction: str = "degrade"
    beta_interpolation: str = "linear"

    # Evaluation
    same_slice: bool = False
    p_value_method: str = "t"
    coherence: str = "log_conditional"
    polarity_grid: List[float] = field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0])
    top_n: int = 10

    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        for name in ("sigma_x", "sigma_eta", "sigma_beta", "init_eta_scale", "tau", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if self.fisher_point not in ("z", "raw"):
            raise ValueError(f"fisher_point must be 'z' or 'raw', got '{self.fisher_point}'")
        if self.break_direction not in ("degrade", "improve"):
            raise ValueError(f"break_direction must be 'degrade' or 'improve', got '{self.break_direction}'")
        if self.beta_interpolation not in ("linear", "log"):
            raise ValueError(f"beta_interpolation must be 'linear' or 'log', got '{self.beta_interpolation}'")
        if self.p_value_method not in ("t", "z"):
            raise ValueError(f"p_value_method must be 't' or 'z', got '{self.p_value_method}'")
        if self.coherence not in ("log_conditional", "npmi"):
            raise ValueError(f"coherence must be 'log_conditional' or 'npmi', got '{self.coherence}'")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        Build a config from a plain mapping

        Args:
            data: Mapping of field name to value; missing fields keep their defaults

        Returns:
            RunConfig instance
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown config field(s): {', '.join(unknown)}")
        data = dict(data)
        if "schema" in data:
            data["schema"] = {**DEFAULT_SCHEMA, **data["schema"]}
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        """
        Load a run config from JSON or YAML, applying the DBTM_SEED override

        Args:
            path: Path to the config file

        Returns:
            RunConfig instance
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ValueError(f"Config file {path} must contain a mapping at top level")
        config = cls.from_dict(data)
        env_seed = os.environ.get("DBTM_SEED")
        if env_seed is not None:
            config.seed = int(env_seed)
        return config

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def training_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in self.to_dict().items() if k not in EVAL_FIELDS}

    def digest(self) -> str:
        """SHA-256 over the canonical (sorted-key) JSON form of every field that shapes training."""
        canonical = json.dumps(self.training_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def changed_fields(self, other: "RunConfig") -> List[str]:
        """Training fields whose value differs from `other`."""
        mine, theirs = self.training_dict(), other.training_dict()
        return sorted(k for k in mine if mine[k] != theirs.get(k))

    def boundary_seconds(self) -> List[float]:
        """Slice boundaries as UTC seconds; strings are parsed as dates."""
        out = []
        for value in self.boundaries:
            if isinstance(value, (int, float)):
                out.append(float(value))
            else:
                ts = pd.Timestamp(value)
                if ts.tzinfo is None:
                    ts = ts.tz_localize("UTC")
                out.append(ts.timestamp())
        return out

    def write_echo(self, run_dir: Union[str, Path]) -> Path:
        """
        Write config.json and config.sha256 into a run directory

        Args:
            run_dir: Directory receiving the echo

        Returns:
            Path to the written config.json
        """
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        echo_path = run_dir / "config.json"
        with open(echo_path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
        with open(run_dir / "config.sha256", "w", encoding="utf-8") as f:
            f.write(self.digest() + "\n")
        return echo_path


def load_echo(run_dir: Union[str, Path]) -> Optional[RunConfig]:
    """Read back the config echo of a run directory, or None when absent."""
    echo_path = Path(run_dir) / "config.json"
    if not echo_path.exists():
        return None
    with open(echo_path, "r", encoding="utf-8") as f:
        return RunConfig.from_dict(json.load(f))
