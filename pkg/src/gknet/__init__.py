"""Global-aware kernel network for image harmonization: model, data synthesis,
objective/metrics, training loop, and inspection tooling."""

from .data import (ImageTriple, SynthesisConfig, DatasetIndex, index_dataset,
                   load_triple, synthesize_composite, foreground_ratio, bucket_of)
from .errors import ConfigurationError, ContractViolationError, GKNetError
from .lre import LongDistanceReferenceExtractor, TransformerConfig
from .model import (GKNet, NetworkConfig, blend, build_model, load_checkpoint,
                    save_checkpoint)
from .modulation import kernel_modulate, kernel_modulate_oracle
from .objectives import LossConfig, MetricsReport, fn_mse_loss, fmse, mse, psnr
from .bt import PairwiseTable, bt_scores
from .scf import SelectiveCorrelationFusion
from .train import (TrainConfig, TrainState, desk_preset, evaluate,
                    paper_preset, resume, train)

__version__ = "0.1.0"
