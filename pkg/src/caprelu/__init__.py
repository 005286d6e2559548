"""
Capped-ReLU dense networks on MNIST: training, attacks and robustness diagnostics.
"""

__version__ = "1.0.0"

from .errors import (ActivationError, CapReluError, CheckpointError, ConfigError, DatasetError,
                     ReportError, ShapeError)
from .nn_core import (ActivationKind, AdamState, DenseLayer, Network, adam_step, build_network,
                      forward, input_gradient, load_checkpoint, loss_and_param_grads,
                      save_checkpoint, set_cap, train)
from .data_io import ImageDataset, batches, load_idx_pair, load_mnist
from .attacks import (AttackSpec, CwConfig, LinfAttackConfig, ZeroGradProbeResult, cw_l2, fgsm, pgd,
                      zero_gradient_probe)
from .analysis import (aggregate_zero_grad, evaluate, evaluate_under_attack,
                       layer_distance_profile, sensitivity_map)
