"""Small hand-differentiated CNN stack."""

from .functional import (conv2d_backward, conv2d_forward, fc_backward, fc_forward,
                         maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward,
                         softmax, softmax_cross_entropy, softmax_cross_entropy_batch)
from .gradcheck import grad_check, grad_check_details, numeric_gradient, relative_error
from .network import (DEFAULT_FEATURE_WIDTH, FeatureVector, LayerSpec, Network,
                      NetworkBuildError, build_depth_net, build_signal_net, extract_features,
                      load_network, save_network)
from .train import (TABLE_I, TABLE_II, EpochStats, TrainConfig, TrainingDivergedError,
                    lr_schedule, sgd_momentum_step, train)
