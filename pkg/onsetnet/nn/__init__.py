from onsetnet.nn.gradcheck import grad_check
from onsetnet.nn.losses import l2_penalty, softmax, weighted_soft_xent
from onsetnet.nn.ops import (
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_forward,
    conv3d_backward,
    conv3d_forward,
    dropout_backward,
    dropout_forward,
    linear_backward,
    linear_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
)
from onsetnet.nn.tensor import BatchNormState, ConvSpec, LossSpec, Tensor, as_tensor
