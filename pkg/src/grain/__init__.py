"""Gradient-based intra-attention structured pruning of a small transformer
encoder, with task-specific distillation, at desk scale.

The package is organized as a numpy library: `autodiff` provides the
dual-channel reverse-mode engine, `model` the maskable encoder, `pruning`
the unit registry / scores / schedule, `distill` the teacher losses,
`embedding` the SVD factorization, `data` the synthetic task, and
`pipeline` the three-stage run. `cli` exposes the `grain` command.
"""

from .autodiff import (
    GradChannel,
    Parameter,
    Tensor,
    backward,
    grad_check,
    no_grad,
    tensor,
)
from .checkpoint import read_checkpoint, write_checkpoint
from .config import RunConfig, parse_config, write_config
from .data import Dataset, batch_iter, gen_synthetic, load_dataset, save_split
from .distill import (
    DistillConfig,
    LayerMap,
    backprop_with_separation,
    build_layer_map,
    distill_losses,
)
from .embedding import FactorizedEmbedding, factorized_lookup, svd_truncate
from .model import (
    AttentionHead,
    EncoderBlock,
    EncoderModel,
    HiddenStates,
    ModelConfig,
    attention_head_forward,
    compact,
    count_prunable_params,
    encoder_forward,
    ffn_forward,
    init_model,
    mha_forward,
    model_density,
)
from .pipeline import AdamW, RunTrace, evaluate, lr_schedule, run_grain, train_teacher
from .pruning import (
    HeadPool,
    ImportanceTable,
    PruningRegistry,
    PruningUnit,
    ScheduleParams,
    UnitKind,
    apply_struct_reg,
    density_schedule,
    dump_scores,
    heads_importance,
    prune_heads_to_density,
    prune_to_density,
    random_scores,
    raw_importance,
    register_units,
    smooth_update,
)
from .report import StructureReport, build_report, format_csv, format_text

__version__ = "0.1.0"
