from transnet.models.params import ConvSpec, ConvLayer, Head, ModelParams, default_architecture, init_params
from transnet.models.transnet import (
    TransNetModel,
    build_model,
    backbone_forward,
    backbone_backward,
    head_forward,
    head_logits,
    forward_head,
    forward_full,
    predict,
    predict_with_flip_averaging,
    compile_transformation,
    prune,
    prune_heads,
    select_head,
    head_losses,
    identity_head_index,
    count_parameters,
    count_flops,
    feature_map_sizes,
)
from transnet.models.checkpoint import (
    save_checkpoint,
    load_checkpoint,
    load_any,
    export_json,
    import_json,
    checkpoint_bytes,
    checkpoint_from_bytes,
)

__all__ = [
    "ConvSpec",
    "ConvLayer",
    "Head",
    "ModelParams",
    "default_architecture",
    "init_params",
    "TransNetModel",
    "build_model",
    "backbone_forward",
    "backbone_backward",
    "head_forward",
    "head_logits",
    "forward_head",
    "forward_full",
    "predict",
    "predict_with_flip_averaging",
    "compile_transformation",
    "prune",
    "prune_heads",
    "select_head",
    "head_losses",
    "identity_head_index",
    "count_parameters",
    "count_flops",
    "feature_map_sizes",
    "save_checkpoint",
    "load_checkpoint",
    "load_any",
    "export_json",
    "import_json",
    "checkpoint_bytes",
    "checkpoint_from_bytes",
]
