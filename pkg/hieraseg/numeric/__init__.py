from .tensor import Tensor, Function, as_tensor
from .nn import Module, Parameter, Conv2d, Linear, LayerNorm, Scalar
from .optim import SgdOptimizer, sgd_step
from .rng import derive_rng, derive_seed
from .htf import read_htf, write_htf, encode_htf, decode_htf
from . import ops
