import numpy as np
import pytest

import oracles
from ddta import tensor as T
from ddta.network import (ArchitectureSpec, BadMagic, CheckpointError,
                          InvalidSpec, ShapeDisagreement, TrainedModel,
                          TruncatedCheckpoint, VersionMismatch, build_model,
                          chain_provenance, input_gradient, jacobian_probs,
                          load_checkpoint, logits, predict, save_checkpoint)
from ddta.tensor import Tape, Tensor

DESK = ArchitectureSpec.for_dataset("mnist", "desk")
SMALL = ArchitectureSpec((16, 16, 1), (4, 4, 8, 8), (16, 16), 4)


class TestSpec:
    def test_desk_parameter_count(self):
        # frozen from the per-layer shape sum for the desk widths
        assert DESK.parameter_count() == 25410
        assert DESK.parameter_count() < 200_000

    def test_expanded_layer_counts(self):
        shapes = DESK.parameter_shapes()
        conv = [s for s in shapes if len(s) == 4]
        dense = [s for s in shapes if len(s) == 2]
        assert len(conv) == 4 and len(dense) == 3

    def test_invalid_specs_rejected(self):
        with pytest.raises(InvalidSpec):
            ArchitectureSpec((28, 28, 1), (8, 8, 16), (64, 64))
        with pytest.raises(InvalidSpec):
            ArchitectureSpec((28, 28, 1), (8, 8, 16, 16), (64,))
        with pytest.raises(InvalidSpec):
            ArchitectureSpec((6, 6, 1), (8, 8, 16, 16), (64, 64))
        with pytest.raises(InvalidSpec):
            ArchitectureSpec.for_dataset("mnist", "huge")

    def test_paper_preset_widths(self):
        mnist = ArchitectureSpec.for_dataset("mnist", "paper")
        cifar = ArchitectureSpec.for_dataset("cifar10", "paper")
        assert mnist.conv_channels == (32, 32, 64, 64)
        assert mnist.dense_widths == (200, 200)
        assert cifar.conv_channels == (64, 64, 128, 128)
        assert cifar.dense_widths == (256, 256)
        assert cifar.conv_output_shape() == (5, 5, 128)


class TestBuildModel:
    def test_same_seed_bit_identical(self):
        a = build_model(DESK, seed=5)
        b = build_model(DESK, seed=5)
        for pa, pb in zip(a.params, b.params):
            assert pa.data.tobytes() == pb.data.tobytes()

    def test_different_seed_differs(self):
        a = build_model(DESK, seed=1)
        b = build_model(DESK, seed=2)
        assert any(not np.array_equal(pa.data, pb.data)
                   for pa, pb in zip(a.params, b.params))

    def test_biases_zero(self):
        m = build_model(DESK, seed=3)
        for p in m.params:
            if p.data.ndim == 1:
                assert not p.data.any()


class TestPredict:
    def test_rows_sum_to_one(self, rng):
        m = build_model(DESK, seed=0)
        x = rng.random((5, 28, 28, 1), dtype=np.float32)
        p = predict(m, x, 7.0)
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-5

    def test_argmax_matches_logits_at_any_temperature(self, rng):
        m = build_model(DESK, seed=0)
        x = rng.random((8, 28, 28, 1), dtype=np.float32)
        z = logits(m, x)
        for temp in (1.0, 5.0, 40.0):
            assert np.array_equal(predict(m, x, temp).argmax(1), z.argmax(1))

    def test_zero_image_uniform_output(self):
        m = build_model(DESK, seed=9)
        p = predict(m, np.zeros((1, 28, 28, 1), dtype=np.float32), 1.0)
        assert np.abs(p - 0.1).max() < 1e-3

    def test_shape_mismatch_reported(self):
        m = build_model(DESK, seed=0)
        with pytest.raises(T.ShapeMismatch, match="expected"):
            predict(m, np.zeros((2, 32, 32, 3), dtype=np.float32), 1.0)

    def test_softmax_of_logits_equals_predict(self, rng):
        m = build_model(DESK, seed=1)
        x = rng.random((4, 28, 28, 1), dtype=np.float32)
        tape = Tape()
        via_op = T.softmax_t(tape, Tensor(logits(m, x)), 1.0).data
        assert np.abs(via_op - predict(m, x, 1.0)).max() < 1e-6

    def test_zero_final_weights_give_bias_logits(self, rng):
        m = build_model(DESK, seed=0)
        m.params[-2].data[:] = 0.0
        m.params[-1].data[:] = np.arange(10, dtype=np.float32)
        z = logits(m, rng.random((3, 28, 28, 1), dtype=np.float32))
        assert np.allclose(z, np.tile(np.arange(10), (3, 1)))

    def test_bias_shift_invariance(self, rng):
        m = build_model(DESK, seed=2)
        x = rng.random((3, 28, 28, 1), dtype=np.float32)
        z0, p0 = logits(m, x), predict(m, x, 1.0)
        m.params[-1].data += np.float32(2.5)
        z1, p1 = logits(m, x), predict(m, x, 1.0)
        assert np.allclose(z1 - z0, 2.5, atol=1e-5)
        assert np.abs(p1 - p0).max() < 1e-6


class TestInputGradient:
    def test_constant_head_zero_gradient(self, rng):
        m = build_model(SMALL, seed=0)
        x = rng.random((16, 16, 1), dtype=np.float32)
        g = input_gradient(m, x, lambda tape, out: T.sum_all(tape, T.mul(tape, out, 0.0)),
                           temperature=1.0)
        assert not g.any()

    def test_non_scalar_head_rejected(self, rng):
        m = build_model(SMALL, seed=0)
        x = rng.random((16, 16, 1), dtype=np.float32)
        with pytest.raises(T.GraphError, match="scalar"):
            input_gradient(m, x, lambda tape, out: out, temperature=1.0)

    def test_matches_finite_differences(self, rng):
        m = build_model(SMALL, seed=4)
        # float64 model copy for a clean oracle comparison
        for p in m.params:
            p.data = p.data.astype(np.float64)
        x = rng.random((16, 16, 1)).astype(np.float64)

        def head(tape, probs):
            return T.reshape(tape, T.gather(tape, probs, [2]), ())

        g = input_gradient(m, x, head, temperature=2.0)

        def f():
            tape = Tape()
            z = m.build_logits(tape, Tensor(x[None]))
            p = T.softmax_t(tape, z, 2.0)
            return float(p.data[0, 2])

        (fd,) = oracles.central_differences(f, [x])
        assert oracles.relative_error(g, fd) < 1e-3

    def test_logit_space_head(self, rng):
        m = build_model(SMALL, seed=4)
        x = rng.random((16, 16, 1), dtype=np.float32)

        def head(tape, out):
            return T.reshape(tape, T.gather(tape, out, [0]), ())

        g = input_gradient(m, x, head, temperature=None)
        assert g.shape == x.shape and np.abs(g).max() > 0

    def test_high_temperature_shrinks_gradients(self, rng):
        m = build_model(SMALL, seed=7)
        x = rng.random((16, 16, 1), dtype=np.float32)

        def head(tape, probs):
            return T.reshape(tape, T.gather(tape, probs, [1]), ())

        g1 = np.abs(input_gradient(m, x, head, temperature=1.0)).mean()
        g40 = np.abs(input_gradient(m, x, head, temperature=40.0)).mean()
        assert g40 < g1

    def test_jacobian_probs_matches_input_gradient(self, rng):
        m = build_model(SMALL, seed=3)
        batch = rng.random((3, 16, 16, 1), dtype=np.float32)
        jac = jacobian_probs(m, batch, temperature=1.5)
        assert jac.shape == (3, 4, 16, 16, 1)
        for s in (0, 2):
            for cls in (0, 3):
                def head(tape, probs, cls=cls):
                    return T.reshape(tape, T.gather(tape, probs, [cls]), ())
                g = input_gradient(m, batch[s], head, temperature=1.5)
                assert np.allclose(jac[s, cls], g, atol=1e-6)


class TestCheckpoints:
    def _model(self):
        m = build_model(DESK, seed=12)
        m.temperature = 20.0
        m.provenance = "assistant"
        return m

    def test_round_trip_bit_identity(self, tmp_path, rng):
        m = self._model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, path)
        m2 = load_checkpoint(path)
        assert m2.temperature == np.float32(20.0)
        assert m2.provenance == "assistant"
        assert m2.seed == 12
        assert m2.spec == m.spec
        for pa, pb in zip(m.params, m2.params):
            assert pa.data.tobytes() == pb.data.tobytes()
        x = rng.random((4, 28, 28, 1), dtype=np.float32)
        assert predict(m, x, 1.0).tobytes() == predict(m2, x, 1.0).tobytes()

    def test_chain_step_provenance_round_trip(self, tmp_path):
        m = self._model()
        m.provenance = chain_provenance(5, 7)
        assert m.provenance == "chain-step 5"
        save_checkpoint(m, tmp_path / "c.ckpt")
        assert load_checkpoint(tmp_path / "c.ckpt").provenance == "chain-step 5"

    def test_truncation_is_detected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._model(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-1])
        with pytest.raises(TruncatedCheckpoint):
            load_checkpoint(path)
        path.write_bytes(raw[:10])
        with pytest.raises(TruncatedCheckpoint):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._model(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(BadMagic):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._model(), path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_checkpoint(path)

    def test_shape_disagreement(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(self._model(), path)
        raw = bytearray(path.read_bytes())
        # spec block starts after magic+version+T+provenance+seed = 4+4+4+1+8
        # first dim (input H) at offset 21+4
        raw[25:29] = (32).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_errors_are_distinct_types(self):
        kinds = {BadMagic, VersionMismatch, TruncatedCheckpoint, ShapeDisagreement}
        assert len(kinds) == 4
        assert all(issubclass(k, CheckpointError) for k in kinds)
