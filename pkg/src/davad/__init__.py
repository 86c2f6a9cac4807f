"""Domain-adversarial voice activity detection from raw waveforms.

A self-contained package: reverse-mode autodiff over numpy arrays, a
trainable sinc filterbank front-end, recurrent speech/domain branches
joined by gradient reversal, sliding-window inference, detection error
rate evaluation, and a CLI that runs the full experiment protocol on a
bundled synthetic multi-domain corpus.
"""

from .autograd import CyclicalLr, Sgd, Tape, Tensor, finite_difference_check, gradient_reverse
from .data import SynthSpec, Waveform, generate_synthetic_corpus, load_manifest, read_wav, write_wav
from .inference import FrameScoreSequence, SlidingWindowConfig, apply_file, binarize
from .metrics import DetectionCounts, detection_counts, detection_error_rate
from .model import ModelConfig, VadModel, count_parameters, forward_domain, forward_vad
from .timeline import Timeline
from .training import TrainConfig, augment_additive_noise, domain_loss, train, vad_loss

__version__ = "0.1.0"

__all__ = [
    "CyclicalLr",
    "DetectionCounts",
    "FrameScoreSequence",
    "ModelConfig",
    "Sgd",
    "SlidingWindowConfig",
    "SynthSpec",
    "Tape",
    "Tensor",
    "Timeline",
    "TrainConfig",
    "VadModel",
    "Waveform",
    "apply_file",
    "augment_additive_noise",
    "binarize",
    "count_parameters",
    "detection_counts",
    "detection_error_rate",
    "domain_loss",
    "finite_difference_check",
    "forward_domain",
    "forward_vad",
    "generate_synthetic_corpus",
    "gradient_reverse",
    "load_manifest",
    "read_wav",
    "train",
    "vad_loss",
    "write_wav",
    "__version__",
]
