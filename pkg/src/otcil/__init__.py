"""Optimal-transport calibrated generative replay for class-incremental
prototype classifiers, at desk scale."""

from .config import RunConfig, Schedule, StreamSpec
from .encoder import (
    AnchorSet,
    Encoder,
    adapt_encoder,
    anchors_for_classes,
    contrastive_loss_and_grad,
    encode,
    extract_class_stats,
    init_encoder,
)
from .gaussian import (
    FeatureBatch,
    GaussianStat,
    average_stats,
    estimate_gaussian,
    ledoit_wolf_weight,
    sample_gaussian,
)
from .linalg import spd_inv_sqrt, spd_sqrt
from .pipeline import (
    AccuracyMatrix,
    ExperimentResult,
    PipelineState,
    RunVariant,
    build_replay_batch,
    calibration_fidelity,
    evaluate,
    final_and_average_accuracy,
    init_state,
    load_checkpoint,
    run_experiment,
    run_single,
    run_task,
    save_checkpoint,
)
from .prompts import (
    PromptBank,
    SoftEmbeddingSet,
    ce_loss_and_grad,
    compose_embedding,
    encode_prompt,
    make_projector,
    ortho_loss_and_grad,
    predict,
    predict_batch,
    total_loss,
    train_prompts,
)
from .report import emit_report
from .stream import (
    Task,
    TaskStream,
    export_stream,
    generate_stream,
    import_features,
    read_feature_file,
    write_feature_file,
)
from .transport import (
    TransportMap,
    apply_map_to_stat,
    calibrate_memory,
    compose_maps,
    ot_map,
    ot_map_per_class_averaged,
    w2_distance_sq,
)

__version__ = "0.1.0"
