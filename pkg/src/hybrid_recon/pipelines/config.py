"""Experiment configuration: ``key = value`` text files with typed defaults."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    """All knobs of one experiment; defaults are the desk-scale settings.

    ``experiment`` selects the lung (spiral, denoising) or t1map (radial,
    subspace) study.  Every random draw is derived from ``seed``.
    """

    experiment: str = "lung"
    matrix_size: int = 48
    coils: int = 4
    seed: int = 0
    train_cases: int = 20
    val_cases: int = 2
    test_cases: int = 5
    noise_sigma: float = 0.0
    # spiral acquisition
    interleaves: int = 80
    samples_per_readout: int = 75
    accelerations: tuple = (2, 3)
    # radial IR acquisition
    spokes_per_repetition: int = 48
    repetitions: int = 17
    spokes_per_frame: int = 4
    repetition_budgets: tuple = (3, 5, 8)
    flip_angle: float = 5.0
    tr: float = 3.67
    components: int = 4
    # networks and training
    blocks: int = 6
    hidden: int = 16
    epochs: int = 40
    stage2_epochs: int = 40
    fit_epochs: int = 300
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-3
    lr_fit: float = 3e-3
    fit_batch: int = 64
    split_pattern: str = "bernoulli"
    out_dir: str = "out"

    def __post_init__(self):
        if self.experiment not in ("lung", "t1map"):
            raise ValueError(f"experiment must be 'lung' or 't1map', got {self.experiment!r}")
        if self.split_pattern not in ("bernoulli", "strided"):
            raise ValueError(f"unknown split_pattern {self.split_pattern!r}")
        if min(self.matrix_size, self.coils, self.train_cases, self.test_cases, self.blocks) < 1:
            raise ValueError("sizes and counts must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def header(self) -> str:
        """One-line summary written at the top of every report."""
        return (f"# experiment={self.experiment} matrix={self.matrix_size} coils={self.coils} "
                f"train={self.train_cases} val={self.val_cases} test={self.test_cases} "
                f"epochs={self.epochs}/{self.stage2_epochs} blocks={self.blocks} "
                f"sigma={self.noise_sigma:g} seed={self.seed}")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(i) for i in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


LUNG_DEFAULTS = ExperimentConfig(experiment="lung", coils=4, noise_sigma=5.0)
T1MAP_DEFAULTS = ExperimentConfig(experiment="t1map", coils=8, noise_sigma=0.01, train_cases=12,
                                  lr_stage1=2e-3, lr_stage2=2e-3)


def default_config(experiment: str) -> ExperimentConfig:
    defaults = {"lung": LUNG_DEFAULTS, "t1map": T1MAP_DEFAULTS}
    if experiment not in defaults:
        raise ValueError(f"experiment must be 'lung' or 't1map', got {experiment!r}")
    return defaults[experiment].replace()


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); unknown keys are rejected.

    ``experiment`` picks the default set the other keys override.
    """
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in items:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(items) - set(types))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    base = default_config(items.get("experiment", "lung"))
    changes = {}
    for key, value in items.items():
        kind = types[key]
        try:
            if kind == "int":
                changes[key] = int(value)
            elif kind == "float":
                changes[key] = float(value)
            elif kind == "tuple":
                changes[key] = _ints(value)
            else:
                changes[key] = value
        except ValueError:
            raise ValueError(f"bad value for {key!r}: {value!r}") from None
    return base.replace(**changes)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
