import numpy as np
import pytest

from vcnet.networks import (
    DNNC_RATES,
    CheckpointError,
    Mode,
    build_dnnc,
    build_idn,
    build_rsn,
    build_vcn,
    copy_params,
    decode_checkpoint,
    encode_checkpoint,
    prefixed,
    unprefixed,
)
from vcnet.tensor import ShapeError, Tensor


def _conv_params(cin, cout, k):
    return cout * cin * k * k + cout


class TestShapes:
    @pytest.mark.parametrize("mode,code", [(Mode.FULL, 32), (Mode.LOW, 16)])
    def test_rsn_idn_vcn(self, rng, mode, code):
        x = Tensor(rng.uniform(0, 1, (2, 1, 32, 32)))
        y = build_rsn(mode, 4)(x)
        assert y.shape == (2, 1, code, code)
        assert build_idn(mode, 4)(y).shape == (2, 1, 32, 32)
        assert build_vcn(mode, 4)(y).shape == (2, 1, 32, 32)

    @pytest.mark.parametrize("n", [1, 4, 16])
    def test_dnnc(self, rng, n):
        ae = build_dnnc(n, width=8, blocks=1)
        z = ae.encoder(Tensor(rng.uniform(0, 1, (1, 1, 32, 32))))
        assert z.shape == (1, n, 8, 8)
        assert ae.decoder(z).shape == (1, 1, 32, 32)

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            build_dnnc(3)
        assert DNNC_RATES == (1, 2, 4, 8, 12, 16, 20)

    def test_wrong_channels(self):
        with pytest.raises(ShapeError):
            build_rsn(Mode.FULL, 4)(Tensor(np.zeros((1, 2, 16, 16))))

    def test_odd_extent_in_low_mode(self):
        with pytest.raises(ShapeError):
            build_rsn(Mode.LOW, 4)(Tensor(np.zeros((1, 1, 15, 16))))


class TestParameterCounts:
    def test_reference_width(self):
        w = 128
        first, mid, last = _conv_params(1, w, 9), _conv_params(w, w, 3), _conv_params(w, 1, 9)
        assert build_rsn(Mode.FULL).parameter_count() == first + 5 * mid + last
        assert build_idn(Mode.FULL).parameter_count() == first + 6 * mid + last
        # low mode: the last IDN layer is a 9x9 transposed conv with the same parameter count
        assert build_idn(Mode.LOW).parameter_count() == first + 6 * mid + last
        assert build_rsn(Mode.FULL).params["0.weight"].shape == (128, 1, 9, 9)

    def test_vcn_shares_structure_not_values(self):
        idn, vcn = build_idn(Mode.FULL, 4), build_vcn(Mode.FULL, 4)
        assert idn.layers == vcn.layers
        assert idn.checksum() != vcn.checksum()
        copy_params(idn, vcn)
        assert idn.checksum() == vcn.checksum()


def test_zero_parameters_give_zero_output(rng):
    net = build_idn(Mode.LOW, 4)
    for p in net.params.values():
        p.data[...] = 0
    out = net(Tensor(rng.uniform(size=(1, 1, 8, 8))))
    assert not out.data.any()


def test_seeded_initialization_is_reproducible():
    assert build_rsn(Mode.FULL, 4, seed=5).checksum() == build_rsn(Mode.FULL, 4, seed=5).checksum()
    assert build_rsn(Mode.FULL, 4, seed=5).checksum() != build_rsn(Mode.FULL, 4, seed=6).checksum()


def test_set_trainable_clears_gradients():
    net = build_rsn(Mode.FULL, 4)
    net.set_trainable(False)
    assert all(not p.requires_grad and p.grad is None for p in net.params.values())


class TestCheckpoints:
    def test_roundtrip(self):
        net = build_rsn(Mode.LOW, 4, dtype=np.float32)
        buf = encode_checkpoint(prefixed("rsn", net), {"mode": "low", "qf": 10})
        tensors, meta = decode_checkpoint(buf)
        assert meta == {"mode": "low", "qf": "10"}
        other = build_rsn(Mode.LOW, 4, dtype=np.float32, seed=9)
        other.load_state(unprefixed("rsn", tensors))
        assert other.checksum() == net.checksum()

    def test_deterministic_bytes(self):
        net = build_idn(Mode.FULL, 4)
        assert encode_checkpoint(prefixed("idn", net)) == encode_checkpoint(prefixed("idn", net))

    def test_corruption_detected(self):
        buf = bytearray(encode_checkpoint({"a": np.ones(3)}))
        buf[12] ^= 1
        with pytest.raises(CheckpointError):
            decode_checkpoint(bytes(buf))
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"NOTACKPT" + bytes(8))

    def test_shape_mismatch_on_load(self):
        net = build_rsn(Mode.FULL, 4)
        state = net.state()
        state["0.weight"] = np.zeros((1, 1, 1, 1))
        with pytest.raises(ShapeError):
            net.load_state(state)
        with pytest.raises(KeyError):
            net.load_state({})
