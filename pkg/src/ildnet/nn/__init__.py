"""Small convolutional networks with exact backpropagation."""
from .layers import FC, Conv, MaxPool, ReLU
from .losses import (HEADS, ClassStats, LossSpec, class_balance_weights, loss_multilabel_logistic,
                     loss_regression, loss_softmax_xent, smooth_l1, smooth_l1_grad, softmax)
from .network import (ForwardCache, Network, NetworkSpec, backward, desk_spec, forward, init_network,
                      load_network, predict, save_network)
from .train import OptConfig, TrainResult, sgd_step, train

__all__ = [
    "FC", "Conv", "MaxPool", "ReLU", "HEADS", "ClassStats", "LossSpec", "class_balance_weights",
    "loss_multilabel_logistic", "loss_regression", "loss_softmax_xent", "smooth_l1", "smooth_l1_grad",
    "softmax", "ForwardCache", "Network", "NetworkSpec", "backward", "desk_spec", "forward",
    "init_network", "load_network", "predict", "save_network", "OptConfig", "TrainResult", "sgd_step", "train",
]
