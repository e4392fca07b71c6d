"""Named constant settings that keep desk-scale runs small and nontrivial.

The worst-case constants make every sampling probability 1 and every sketch
enormous at small sizes. These presets were calibrated on the synthetic
generators: each keeps sampling active on several levels.
"""

from __future__ import annotations

from .model import Lambdas, Params

PRESETS: dict[str, dict] = {
    # offline construction on [16]^2 with k = 2: sampling below 1 on >= 3 levels
    "offline-small": {"constant_scale": 3e-3, "lambdas": {}},
    # streaming sketches on [16]^2: the smallest guesses overflow, so o* > 1
    "stream-small": {"constant_scale": 1e-5, "lambdas": {}},
    # positive streaming on [512]^2 gaussian mixtures: a few hundred entries
    "gaussian-512": {"constant_scale": 1e-5, "lambdas": {"alpha": 0.05, "l8": 0.3}},
}


def apply_preset(params: Params, name: str) -> Params:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    lam = Lambdas().with_overrides(preset["lambdas"])
    return params.with_(constant_scale=preset["constant_scale"], lambdas=lam)
