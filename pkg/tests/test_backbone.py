"""Bottom-up pathway: separable convs, inception block, stage hierarchy."""

import numpy as np
import pytest

from karma import tensor as T
from karma.backbone import BottomUp, DwSepConv, InceptionSepConv, branch_split, stage_specs
from karma.tensor import Tensor


class TestDwSepConv:
    def test_parameter_count_below_standard(self):
        for k in (2, 3, 5):
            for in_c in (8, 16, 48):
                for out_c in (8, 32, 96):
                    dwsep = in_c * k * k + in_c * out_c + out_c
                    standard = in_c * out_c * k * k + out_c
                    assert dwsep < standard

    def test_module_count_matches_formula(self, rng):
        conv = DwSepConv(6, 10, 3, 1, rng)
        assert conv.num_params() == 6 * 9 + 6 * 10 + 10

    def test_identity_kernels_preserve_input(self, rng):
        x = rng.normal(size=(1, 4, 5, 5))
        conv = DwSepConv(4, 4, 3, 1, rng)
        conv.dw.data[:] = 0.0
        conv.dw.data[:, 1, 1] = 1.0  # center-tap depthwise
        conv.pw.data = np.eye(4)
        conv.bias.data[:] = 0.0
        np.testing.assert_allclose(conv(Tensor(x)).data, x, atol=1e-14)

    def test_equals_two_stage_composition(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 6, 6)))
        conv = DwSepConv(3, 5, 3, 1, rng)
        out = conv(x).data
        stage1 = T.conv2d(x, conv.dw, mode="depthwise", stride=1, padding="same")
        stage2 = T.conv2d(stage1, conv.pw, mode="pointwise")
        ref = stage2.data + conv.bias.data.reshape(1, 5, 1, 1)
        np.testing.assert_allclose(out, ref, atol=1e-14)


class TestInceptionSepConv:
    def test_branch_split_sums(self):
        for out in (48, 96, 192, 384, 576, 1024):
            assert sum(branch_split(out)) == out

    def test_output_channels(self, rng):
        block = InceptionSepConv(3, 48, 1, rng)
        out = block(Tensor(rng.normal(size=(1, 3, 8, 8))))
        assert out.shape == (1, 48, 8, 8)

    def test_zero_input_depends_only_on_biases(self, rng):
        block = InceptionSepConv(3, 48, 1, rng)
        block.eval()
        a = block(Tensor(np.zeros((1, 3, 8, 8)))).data
        b = block(Tensor(np.zeros((1, 3, 8, 8)))).data
        np.testing.assert_array_equal(a, b)

    def test_receptive_field_bound(self, rng):
        # branch RFs are 5x5 and 9x9: an impulse farther than 4 px from the
        # center cannot change the center output (eval mode keeps BN local)
        block = InceptionSepConv(2, 16, 1, rng)
        block.eval()
        base = np.zeros((1, 2, 19, 19))
        out0 = block(Tensor(base)).data[0, :, 9, 9]

        far = base.copy()
        far[0, :, 0, 0] = 100.0  # distance 9 > 4
        out_far = block(Tensor(far)).data[0, :, 9, 9]
        np.testing.assert_array_equal(out_far, out0)

        near = base.copy()
        near[0, :, 9, 6] = 100.0  # distance 3 <= 4
        out_near = block(Tensor(near)).data[0, :, 9, 9]
        assert not np.allclose(out_near, out0)


class TestBottomUp:
    def test_stage_specs(self):
        specs = stage_specs((48, 96, 192, 384, 576))
        assert [s.in_channels for s in specs] == [3, 48, 96, 192, 384]
        assert specs[0].pool_before is False and specs[0].stride == 2
        assert all(s.pool_before and s.stride == 1 for s in specs[1:])

    def test_resolution_and_channel_contract(self, rng):
        net = BottomUp((48, 96, 192, 384, 576), rng)
        net.eval()
        feats = net(Tensor(rng.normal(size=(1, 3, 64, 64))))
        assert [f.shape[1] for f in feats] == [48, 96, 192, 384, 576]
        assert [f.shape[2] for f in feats] == [32, 16, 8, 4, 2]

    @pytest.mark.parametrize("hw", [32, 64])
    def test_halving_per_stage(self, rng, hw):
        net = BottomUp((8, 8, 8, 8, 8), rng)
        net.eval()
        feats = net(Tensor(rng.normal(size=(1, 3, hw, hw))))
        for i, f in enumerate(feats):
            assert f.shape[2] == hw >> (i + 1)
            assert f.shape[3] == hw >> (i + 1)

    def test_c5_shape_at_256(self, rng):
        net = BottomUp((48, 96, 192, 384, 576), rng)
        net.eval()
        with T.no_grad():
            feats = net(Tensor(rng.normal(size=(1, 3, 256, 256))))
        assert feats[-1].shape == (1, 576, 8, 8)

    def test_indivisible_resolution_rejected(self, rng):
        net = BottomUp((8, 8, 8, 8, 8), rng)
        with pytest.raises(ValueError):
            net(Tensor(rng.normal(size=(1, 3, 48, 48))))

    def test_gradient_reaches_stem(self, rng):
        # 64x64 keeps c5 at 2x2; at 1x1 spatial a train-mode batchnorm with
        # batch 1 collapses to a constant and correctly kills the gradient
        net = BottomUp((8, 8, 8, 8, 8), rng)
        x = Tensor(rng.normal(size=(1, 3, 64, 64)))
        feats = net(x)
        T.tsum(feats[-1] ** 2.0).backward()
        for name, p in net.stage1.named_params():
            assert p.grad is not None and np.any(p.grad != 0.0), name
