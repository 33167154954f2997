"""Dense networks with exact reverse-mode gradients and Adam."""
from adaptive_td3bc.nn.gradcheck import GradCheckReport
from adaptive_td3bc.nn.gradcheck import finite_diff_check
from adaptive_td3bc.nn.network import DenseNet
from adaptive_td3bc.nn.network import ForwardCache
from adaptive_td3bc.nn.network import net_backward
from adaptive_td3bc.nn.network import net_forward
from adaptive_td3bc.nn.optim import AdamState
from adaptive_td3bc.nn.optim import adam_step


__all__ = [
    "AdamState",
    "DenseNet",
    "ForwardCache",
    "GradCheckReport",
    "adam_step",
    "finite_diff_check",
    "net_backward",
    "net_forward",
]
