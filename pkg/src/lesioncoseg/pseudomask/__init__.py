from .gmm import GmmModel, fit_gmm
from .grabcut import (
    DEF_BG, DEF_FG, PROB_BG, PROB_FG, GrabcutParams, GrabcutResult, build_trimap,
    generate_pseudo_mask, grabcut_iterate, grabcut_run,
)
from .maxflow import FlowNetwork, cut_capacity, max_flow

__all__ = [
    "GmmModel",
    "fit_gmm",
    "DEF_BG",
    "DEF_FG",
    "PROB_BG",
    "PROB_FG",
    "GrabcutParams",
    "GrabcutResult",
    "build_trimap",
    "generate_pseudo_mask",
    "grabcut_iterate",
    "grabcut_run",
    "FlowNetwork",
    "cut_capacity",
    "max_flow",
]
