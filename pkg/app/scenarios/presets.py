"""
Scenario presets: defaults per config section.

Desk-scale values replace the full-scale runs they are modelled on; each
preset notes what it scales down.
"""

from __future__ import annotations

import copy
from typing import Any, Dict

import numpy as np

PresetValues = Dict[str, Dict[str, Any]]

PRESETS: Dict[str, PresetValues] = {
    # Ellipse split by two counter-rotating vortices (c = 70). Full scale runs
    # 300 steps on adapted meshes with ~2e4 nodes; here K and the base mesh shrink.
    "ellipse_transport": {
        "run": {"scenario": "ellipse_transport"},
        "mesh": {"nx": 64, "ny": 32, "domain": (0.0, 2.0, 0.0, 1.0), "adapt": False},
        "time": {"tau": 2.5e-5, "K": 100},
        "phasefield": {"sigma": 1.0, "eps": 0.02, "kappa": 1.0, "mobility": 1.0, "scaled": True},
        "potential": {"variant": "double_well"},
        "initial": {"shape": "ellipse", "center": (1.0, 0.5), "semi_axes": (0.4, 0.2),
                    "velocity": "ellipse_vortices", "amplitude": 70.0},
        "pod": {"ells": [1, 5, 10, 20], "x_space": "L2", "weights": "trapezoidal", "rom": "ch"},
        "marking": {"theta_r": 0.7, "theta_c": 0.01, "a_max": 40000, "max_cycles": 2},
    },
    # Bubble held in place and split into two squares. Full scale: T = 1,
    # τ = 0.00125, A_max = 8e6 cells; desk scale: 32 × 32, K = 20.
    "rising_bubble_control": {
        "run": {"scenario": "rising_bubble_control"},
        "mesh": {"nx": 32, "ny": 32, "domain": (0.0, 1.0, 0.0, 2.0), "adapt": False},
        "time": {"tau": 0.00125, "K": 20},
        "phasefield": {"sigma": 24.5 * 2.0 / np.pi, "eps": 0.02, "kappa": 1.0,
                       "mobility": 1.0 / 25000.0, "scaled": True},
        "fluid": {"rho1": 1000.0, "rho2": 100.0, "eta1": 10.0, "eta2": 1.0, "gravity": 0.981,
                  "convection": "skew", "coupling": "monolithic"},
        "potential": {"variant": "double_obstacle"},
        "initial": {"shape": "bubble", "center": (0.5, 0.5), "radius": 0.25},
        "control": {"method": "penalization", "layout": "2x4", "xi": 1e-11, "target": "two_squares",
                    "alpha0": 1e-1, "tol_c": 1e-3, "max_iter": 200},
        "marking": {"theta_r": 0.7, "theta_c": 0.01, "a_max": 200000, "shared_mesh": True},
    },
    # Manufactured Stokes flow driven to the vortex v* on the unit square.
    "single_phase_ns": {
        "run": {"scenario": "single_phase_ns"},
        "mesh": {"nx": 16, "ny": 16, "domain": (0.0, 1.0, 0.0, 1.0)},
        "time": {"tau": 0.05, "K": 21},
        "fluid": {"Re": 1.0, "convection": "skew"},
        "initial": {"shape": "none", "velocity": "manufactured", "amplitude": 1.0},
        "pod": {"ells": [4, 8], "x_space": "H1", "weights": "trapezoidal", "rom": "ns"},
    },
    # Circle carried by a wall-bounded vortex; used for eigenvalue decay.
    "transported_circle": {
        "run": {"scenario": "transported_circle"},
        "mesh": {"nx": 32, "ny": 32, "domain": (0.0, 1.0, 0.0, 1.0)},
        "time": {"tau": 1e-3, "K": 60},
        "phasefield": {"sigma": 1.0, "eps": 0.04, "kappa": 1.0, "mobility": 1e-3, "scaled": True},
        "potential": {"variant": "double_well", "s": 1e4},
        "initial": {"shape": "circle", "center": (0.5, 0.28), "radius": 0.15,
                    "velocity": "vortex", "amplitude": 0.5},
        "pod": {"ells": [5, 10, 20], "x_space": "L2", "weights": "uniform", "rom": "ch",
                "compare": ["relaxed_obstacle:2", "relaxed_obstacle:4"], "tail": (20, 20)},
    },
    "custom": {"run": {"scenario": "custom"}},
}


def preset_values(name: str) -> PresetValues:
    """A deep copy of the preset's section values; KeyError for unknown names."""
    return copy.deepcopy(PRESETS[name])
