import numpy as np
import pytest

from slotstream import (
    AggMode,
    ConfigError,
    EmptySetError,
    EncoderStack,
    Rng,
    SlotMode,
    encode_full,
    encode_set,
    encode_stream,
    validate_stack,
)
from slotstream.consistency import random_partition, relative_discrepancy
from slotstream.models import LayerSpec, make_slot_encoder, make_stack


def bits(a):
    return np.asarray(a).tobytes()


def two_layer_stack(seed=0, d=4, mode1=AggMode.SUM, mode2=AggMode.SUM):
    rng = Rng(seed)
    return make_stack(
        d,
        [LayerSpec(5, 6, 7, mode1), LayerSpec(2, 4, 3, mode2)],
        rng,
    )


class TestValidateStack:
    def test_single_layer_output_shape(self):
        stack = make_stack(5, [LayerSpec(1, 32, 64, AggMode.SUM)], Rng(0))
        assert validate_stack(stack) == (1, 64)

    def test_dimension_mismatch_names_layer_pair(self):
        l0 = make_slot_encoder(4, 3, 5, 32, Rng(1))
        l1 = make_slot_encoder(64, 2, 4, 8, Rng(2))  # expects 64, gets 32
        stack = EncoderStack(((l0, AggMode.SUM), (l1, AggMode.SUM)))
        with pytest.raises(ConfigError, match="layer 1 .* layer 0"):
            validate_stack(stack)

    def test_doubling_slot_dims_chain(self):
        rng = Rng(3)
        stack = make_stack(
            6,
            [
                LayerSpec(4, 32, 64, AggMode.SUM),
                LayerSpec(4, 64, 128, AggMode.SUM),
                LayerSpec(1, 128, 128, AggMode.SUM),
            ],
            rng,
        )
        assert validate_stack(stack) == (1, 128)


class TestEncodeStream:
    def test_single_layer_matches_plain_encoder_bitwise(self):
        rng = Rng(4)
        stack = make_stack(4, [LayerSpec(3, 5, 6, AggMode.MEAN)], rng)
        params, mode = stack.layers[0]
        x = Rng(5).standard_normal(11, 4)
        assert bits(encode_set(stack, x, seed=8)) == bits(encode_full(x, params, mode, seed=8))

    @pytest.mark.parametrize("mode1", list(AggMode))
    def test_stack_level_consistency(self, mode1):
        stack = two_layer_stack(6, mode1=mode1)
        x = Rng(7).standard_normal(40, 4)
        full = encode_set(stack, x, seed=2)
        rng = Rng(8)
        for _ in range(8):
            batches = random_partition(x, rng)
            got = encode_stream(stack, batches, seed=2)
            assert relative_discrepancy(got, full) <= 1e-9

    def test_permutation_across_and_within_batches(self):
        stack = two_layer_stack(9)
        x = Rng(10).standard_normal(24, 4)
        full = encode_set(stack, x, seed=3)
        rng = Rng(11)
        for _ in range(6):
            perm = rng.permutation(24)
            shuffled = np.ascontiguousarray(x[perm])
            batches = [shuffled[:9], shuffled[9:10], shuffled[10:]]
            got = encode_stream(stack, batches, seed=3)
            assert relative_discrepancy(got, full) <= 1e-9

    def test_output_shape_matches_validate(self):
        stack = two_layer_stack(12)
        out = encode_set(stack, Rng(13).standard_normal(7, 4), seed=0)
        assert out.shape == validate_stack(stack)

    def test_empty_stream_rejected(self):
        with pytest.raises(EmptySetError):
            encode_stream(two_layer_stack(14), [], seed=0)

    def test_deterministic_slot_stack_is_seed_independent(self):
        rng = Rng(15)
        stack = make_stack(
            3,
            [
                LayerSpec(4, 5, 6, AggMode.SUM, SlotMode.DETERMINISTIC),
                LayerSpec(1, 3, 2, AggMode.SUM, SlotMode.DETERMINISTIC),
            ],
            rng,
        )
        x = Rng(16).standard_normal(9, 3)
        assert bits(encode_set(stack, x, seed=0)) == bits(encode_set(stack, x, seed=777))

    def test_random_slot_stack_uses_per_layer_seeds(self):
        stack = two_layer_stack(17)
        x = Rng(18).standard_normal(9, 4)
        a = encode_set(stack, x, seed=0)
        b = encode_set(stack, x, seed=1)
        assert bits(a) != bits(b)
