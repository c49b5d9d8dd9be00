#!/usr/bin/env python3
"""Write a default TOML config for every registered suite into scripts/configs/.

Edit a copy and pass it to ``morreykit run --config``.
"""

from pathlib import Path

from morreykit.config import ExperimentConfig, GridSpec
from morreykit.experiments import REGISTRY

HERE = Path(__file__).parent / "configs"

if __name__ == "__main__":
    HERE.mkdir(exist_ok=True)
    for name, suite in sorted(REGISTRY.items()):
        cfg = ExperimentConfig(name, grid=GridSpec(), params=dict(suite.defaults))
        cfg.save(HERE / f"{name}.toml")
        quick = dict(suite.quick)
        if quick:
            res = quick.pop("resolution", cfg.grid.resolution)
            ExperimentConfig(name, out=f"runs/{name}-quick", grid=GridSpec(resolution=res), params=quick).save(
                HERE / f"{name}-quick.toml"
            )
        print(name)
