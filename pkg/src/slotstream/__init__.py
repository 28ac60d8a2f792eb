"""slotstream: bounded-memory set encoding with a batch-consistent merge.

Encode a set in one pass or in arbitrary batches; the merged result is the
same either way (exactly for max/min, to float reassociation for sum/mean).
"""

from .encoder import (
    AggMode,
    AggregateState,
    PartialEncoding,
    SlotConfig,
    SlotEncoderParams,
    SlotMode,
    SlotSample,
    attention_logits,
    attention_weights,
    encode_batch,
    encode_full,
    finalize,
    init_state,
    merge,
    merge_states,
    sample_slots,
    slot_normalize,
)
from .baselines import (
    DeepSetsParams,
    SoftmaxPoolParams,
    deepsets_encode,
    softmax_pool_full,
    softmax_pool_minibatch,
)
from .errors import (
    ConfigError,
    DataError,
    EmptySetError,
    NumericError,
    ParameterError,
    ParseError,
    SessionError,
    ShapeError,
    SlotStreamError,
    TrainingError,
)
from .hierarchy import EncoderStack, encode_set, encode_stream, validate_stack
from .tensor import (
    LayerNormParams,
    LinearMap,
    Rng,
    apply_linear,
    layer_norm,
    matmul,
    sample_gaussian,
    sigmoid,
)

__version__ = "0.1.0"

__all__ = [
    "AggMode",
    "AggregateState",
    "ConfigError",
    "DataError",
    "DeepSetsParams",
    "EmptySetError",
    "EncoderStack",
    "LayerNormParams",
    "LinearMap",
    "NumericError",
    "ParameterError",
    "ParseError",
    "PartialEncoding",
    "Rng",
    "SessionError",
    "ShapeError",
    "SlotConfig",
    "SlotEncoderParams",
    "SlotMode",
    "SlotSample",
    "SlotStreamError",
    "SoftmaxPoolParams",
    "TrainingError",
    "apply_linear",
    "attention_logits",
    "attention_weights",
    "deepsets_encode",
    "encode_batch",
    "encode_full",
    "encode_set",
    "encode_stream",
    "finalize",
    "init_state",
    "layer_norm",
    "matmul",
    "merge",
    "merge_states",
    "sample_gaussian",
    "sample_slots",
    "sigmoid",
    "slot_normalize",
    "softmax_pool_full",
    "softmax_pool_minibatch",
    "validate_stack",
    "__version__",
]
