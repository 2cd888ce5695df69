"""Bundled configurations and the reference compute-SM table."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .config import RunConfig, load_config

# Compute-mode SM counts per application (68 SMs available).
REFERENCE_COMPUTE_SMS: dict[str, dict[str, int]] = {
    "IBL": {
        "p-bfs": 68, "cfd": 68, "dwt2d": 68, "stencil": 68, "r-bfs": 68, "bprob": 68, "sgem": 68, "nw": 68,
        "page-r": 68, "kmeans": 24, "histo": 53, "mri-gri": 34, "spmv": 42, "lbm": 34, "lib": 68,
        "hotsp": 68, "mri-q": 68,
    },
    "Morpheus-Basic": {
        "p-bfs": 32, "cfd": 42, "dwt2d": 42, "stencil": 50, "r-bfs": 34, "bprob": 39, "sgem": 48, "nw": 18,
        "page-r": 42, "kmeans": 37, "histo": 47, "mri-gri": 36, "spmv": 44, "lbm": 32, "lib": 68,
        "hotsp": 68, "mri-q": 68,
    },
    "Morpheus-ALL": {
        "p-bfs": 40, "cfd": 55, "dwt2d": 54, "stencil": 56, "r-bfs": 37, "bprob": 41, "sgem": 54, "nw": 26,
        "page-r": 46, "kmeans": 47, "histo": 52, "mri-gri": 43, "spmv": 47, "lbm": 36, "lib": 68,
        "hotsp": 68, "mri-q": 68,
    },
}
MEMORY_BOUND = ("p-bfs", "cfd", "dwt2d", "stencil", "r-bfs", "bprob", "sgem", "nw", "page-r", "kmeans",
                "histo", "mri-gri", "spmv", "lbm")


def preset_names() -> list[str]:
    root = resources.files(__package__) / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def preset_path(name: str) -> Path:
    path = Path(str(resources.files(__package__) / "presets" / f"{name}.ini"))
    if not path.is_file():
        raise FileNotFoundError(f"no preset named {name!r} (have: {', '.join(preset_names())})")
    return path


def load_preset(name: str) -> RunConfig:
    return load_config(preset_path(name))


def for_application(preset: str, application: str) -> RunConfig:
    """A preset with the reference compute-SM count of one application."""
    system = {"morpheus_basic": "Morpheus-Basic", "morpheus_all": "Morpheus-ALL"}.get(preset, "IBL")
    compute = REFERENCE_COMPUTE_SMS[system][application]
    return load_preset(preset).with_override("gpu.compute_sms", str(compute))
