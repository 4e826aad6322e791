from .config import GC10_DET_CLASSES, NEU_DET_CLASSES, ModelConfig, class_names
from .flops import FlopsReport, LayerCost, compare_with_baseline, count_params_flops
from .graph import GraphBuilder, LayerRecord, execute, expected_weights, fold_weights
from .network import (
    Model,
    Network,
    WeightStore,
    build_backbone,
    build_neck_head,
    build_network,
    init_weights,
)
from .units import shuffle_unit_v1, shuffle_unit_v2
from .weights import load_weights, save_weights
from ..ops import weighted_fusion

__all__ = [
    "GC10_DET_CLASSES", "NEU_DET_CLASSES", "ModelConfig", "class_names",
    "FlopsReport", "LayerCost", "compare_with_baseline", "count_params_flops",
    "GraphBuilder", "LayerRecord", "execute", "expected_weights", "fold_weights",
    "Model", "Network", "WeightStore", "build_backbone", "build_neck_head", "build_network", "init_weights",
    "shuffle_unit_v1", "shuffle_unit_v2", "load_weights", "save_weights", "weighted_fusion",
]
