"""Max-entropy adversarial domain transfer with softlabel alignment for emotion recognition."""

from .data import (EMOTIONS, BalancedSampler, SplitSpec, SynthConfig, UtteranceSample, balanced_batches,
                   generate_synthetic, load_manifest, make_splits, save_samples)
from .losses import (LossWeights, SoftLabelTable, build_softlabel_table, confusion_entropy, domain_ce_loss,
                     emotion_ce_loss, softlabel_loss, total_loss)
from .metrics import AggregateMetrics, RunMetrics, aggregate, evaluate
from .model import ModelBundle, ModelConfig, domain_logits, emotion_logits, encode, encode_batch
from .tensor import Tensor, no_grad
from .trainer import MODES, TrainConfig, TrainLog, adam_step, domain_probe_auc, train

__version__ = "0.1.0"
