"""Algebraic contracts of the sampling and deformable-convolution primitives.

Expected values are either hand-computed on tiny inputs or checked against an
independent route: torch's dense conv2d for the zero-offset reduction, and
the two-call sum-of-convolutions form for the fused blend-and-deform op.
"""

import pytest
import torch
import torch.nn.functional as F

from shortcut_v2v import ops

from conftest import check_gradients, offgrid_offsets


def _sample_at(x, r, c):
    coords = torch.tensor([[[[r]], [[c]]]], dtype=x.dtype)
    return ops.bilinear_sample(x, coords).item()


class TestBilinearSample:
    def setup_method(self):
        self.grid = torch.tensor([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2).double()

    def test_integer_coordinates_return_stored_values(self):
        assert _sample_at(self.grid, 0, 0) == 0.0
        assert _sample_at(self.grid, 1, 1) == 3.0
        assert _sample_at(self.grid, 1, 0) == 2.0

    def test_center_averages_four_corners(self):
        assert _sample_at(self.grid, 0.5, 0.5) == pytest.approx(1.5, abs=1e-12)

    def test_fully_outside_is_zero(self):
        assert _sample_at(self.grid, -1.0, -1.0) == 0.0
        assert _sample_at(self.grid, 5.0, 0.0) == 0.0

    def test_linear_ramp_reproduced_exactly(self):
        ramp = torch.arange(4.0).reshape(1, 1, 1, 4).double()
        assert _sample_at(ramp, 0.0, 1.25) == pytest.approx(1.25, abs=1e-12)

    def test_affine_field_reproduced_at_interior_points(self):
        ii, jj = torch.meshgrid(torch.arange(6.0), torch.arange(7.0), indexing="ij")
        field = (2.0 * ii - 3.0 * jj + 1.0).reshape(1, 1, 6, 7).double()
        gen = torch.Generator().manual_seed(3)
        for _ in range(50):
            r = torch.rand(1, generator=gen).item() * 4.0 + 0.5
            c = torch.rand(1, generator=gen).item() * 5.0 + 0.5
            assert _sample_at(field, r, c) == pytest.approx(2 * r - 3 * c + 1, abs=1e-9)

    def test_batch_mismatch_raises(self):
        coords = torch.zeros(2, 2, 1, 1).double()
        with pytest.raises(ValueError):
            ops.bilinear_sample(self.grid, coords)


class TestDeformableConv:
    def test_zero_offset_unit_mask_matches_standard_conv(self):
        gen = torch.Generator().manual_seed(0)
        for trial in range(25):
            b = int(torch.randint(1, 3, (1,), generator=gen))
            c_in = int(torch.randint(1, 9, (1,), generator=gen))
            c_out = int(torch.randint(1, 9, (1,), generator=gen))
            h = int(torch.randint(3, 17, (1,), generator=gen))
            w = int(torch.randint(3, 17, (1,), generator=gen))
            x = torch.randn(b, c_in, h, w, generator=gen, dtype=torch.float64)
            wt = torch.randn(c_out, c_in, 3, 3, generator=gen, dtype=torch.float64)
            mask = torch.ones(b, 9, h, w, dtype=torch.float64)
            channels = 2 if trial % 2 == 0 else 18
            offsets = torch.zeros(b, channels, h, w, dtype=torch.float64)
            got = ops.deformable_conv(wt, x, offsets, mask)
            want = F.conv2d(x, wt, padding=1)
            assert (got - want).abs().max().item() < 1e-5

    def test_one_by_one_kernel_matches_pointwise_conv(self):
        gen = torch.Generator().manual_seed(1)
        x = torch.randn(1, 4, 8, 8, generator=gen, dtype=torch.float64)
        wt = torch.randn(3, 4, 1, 1, generator=gen, dtype=torch.float64)
        got = ops.deformable_conv(
            wt, x, torch.zeros(1, 2, 8, 8).double(), torch.ones(1, 1, 8, 8).double()
        )
        assert (got - F.conv2d(x, wt)).abs().max().item() < 1e-12

    def test_zero_mask_zeroes_output(self):
        gen = torch.Generator().manual_seed(2)
        x = torch.randn(1, 3, 6, 6, generator=gen, dtype=torch.float64)
        wt = torch.randn(2, 3, 3, 3, generator=gen, dtype=torch.float64)
        offsets = torch.randn(1, 18, 6, 6, generator=gen, dtype=torch.float64)
        got = ops.deformable_conv(wt, x, offsets, torch.zeros(1, 9, 6, 6).double())
        assert got.abs().max().item() == 0.0

    def test_half_pixel_shift_on_horizontal_ramp(self):
        h, w = 5, 8
        x = torch.arange(w, dtype=torch.float64).expand(h, w).reshape(1, 1, h, w).clone()
        wt = torch.ones(1, 1, 1, 1, dtype=torch.float64)
        offsets = torch.zeros(1, 2, h, w, dtype=torch.float64)
        offsets[:, 1] = 0.5
        got = ops.deformable_conv(wt, x, offsets, torch.ones(1, 1, h, w).double())
        jj = torch.arange(w - 1, dtype=torch.float64) + 0.5
        assert (got[0, 0, :, : w - 1] - jj).abs().max().item() < 1e-12

    def test_translation_consistency(self):
        gen = torch.Generator().manual_seed(4)
        dy, dx = 2, 1
        big = torch.randn(1, 2, 14, 14, generator=gen, dtype=torch.float64)
        x = big[:, :, : 14 - dy, : 14 - dx]
        shifted = big[:, :, dy:, dx:]  # shifted(i, j) = x(i + dy, j + dx)
        wt = torch.randn(3, 2, 3, 3, generator=gen, dtype=torch.float64)
        h, w = x.shape[2], x.shape[3]
        mask = torch.ones(1, 9, h, w, dtype=torch.float64)
        offsets = torch.zeros(1, 2, h, w, dtype=torch.float64)
        offsets[:, 0] = dy
        offsets[:, 1] = dx
        deformed = ops.deformable_conv(wt, x, offsets, mask)
        baseline = ops.deformable_conv(wt, shifted, torch.zeros_like(offsets), mask)
        interior = (slice(None), slice(None), slice(1, h - 1 - dy), slice(1, w - 1 - dx))
        assert (deformed[interior] - baseline[interior]).abs().max().item() < 1e-5

    def test_global_offsets_equal_repeated_local_offsets(self):
        gen = torch.Generator().manual_seed(5)
        x = torch.randn(2, 3, 7, 9, generator=gen, dtype=torch.float64)
        wt = torch.randn(4, 3, 3, 3, generator=gen, dtype=torch.float64)
        mask = torch.rand(2, 9, 7, 9, generator=gen, dtype=torch.float64)
        goff = torch.randn(2, 2, 7, 9, generator=gen, dtype=torch.float64)
        loff = goff.unsqueeze(1).expand(2, 9, 2, 7, 9).reshape(2, 18, 7, 9)
        got_g = ops.deformable_conv(wt, x, goff, mask)
        got_l = ops.deformable_conv(wt, x, loff, mask)
        assert (got_g - got_l).abs().max().item() < 1e-12

    def test_wrong_mask_channels_raises(self):
        x = torch.zeros(1, 1, 4, 4).double()
        wt = torch.zeros(1, 1, 3, 3).double()
        with pytest.raises(ValueError):
            ops.deformable_conv(
                wt, x, torch.zeros(1, 2, 4, 4).double(), torch.zeros(1, 4, 4, 4).double()
            )

    def test_wrong_offset_channels_raises(self):
        x = torch.zeros(1, 1, 4, 4).double()
        wt = torch.zeros(1, 1, 3, 3).double()
        with pytest.raises(ValueError):
            ops.deformable_conv(
                wt, x, torch.zeros(1, 6, 4, 4).double(), torch.ones(1, 9, 4, 4).double()
            )

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ops.deformable_conv(
                torch.zeros(1, 1, 2, 2).double(),
                torch.zeros(1, 1, 4, 4).double(),
                torch.zeros(1, 2, 4, 4).double(),
                torch.ones(1, 4, 4, 4).double(),
            )


class TestGlobalAlign:
    def test_zero_offsets_reduce_to_downsampled_standard_conv(self):
        gen = torch.Generator().manual_seed(6)
        f = torch.randn(1, 4, 12, 16, generator=gen, dtype=torch.float64)
        wg = torch.randn(4, 4, 3, 3, generator=gen, dtype=torch.float64)
        zero = torch.zeros(1, 2, 6, 8, dtype=torch.float64)
        got = ops.global_align(wg, f, zero)
        half = F.interpolate(f, size=(6, 8), mode="bilinear", align_corners=False)
        want = F.interpolate(
            F.conv2d(half, wg, padding=1), size=(12, 16), mode="bilinear", align_corners=False
        )
        assert (got - want).abs().max().item() < 1e-5

    def test_constant_field_interior_is_constant_times_kernel_sum(self):
        value = 0.75
        f = torch.full((1, 2, 24, 28), value, dtype=torch.float64)
        gen = torch.Generator().manual_seed(7)
        wg = torch.randn(2, 2, 3, 3, generator=gen, dtype=torch.float64)
        offsets = offgrid_offsets(1, 2, 12, 14, generator=gen) * 0.5
        got = ops.global_align(wg, f, offsets)
        expected = value * wg.sum(dim=(1, 2, 3))
        interior = got[:, :, 8:-8, 8:-8]
        for c in range(2):
            assert (interior[:, c] - expected[c]).abs().max().item() < 1e-9

    def test_integer_shift_oracle(self):
        # Twin images: content of `shifted` sits two rows lower than `plain`,
        # so a constant (+1, 0) half-resolution offset must align them.
        gen = torch.Generator().manual_seed(8)
        tall = torch.randn(1, 3, 20, 16, generator=gen, dtype=torch.float64)
        plain = tall[:, :, 2:18, :]
        shifted = tall[:, :, 0:16, :]  # shifted(i) = plain(i - 2)
        wg = torch.randn(3, 3, 3, 3, generator=gen, dtype=torch.float64)

        offsets = torch.zeros(1, 2, 8, 8, dtype=torch.float64)
        offsets[:, 0] = 1.0
        aligned = ops.global_align(wg, shifted, offsets)
        baseline = ops.global_align(wg, plain, torch.zeros_like(offsets))
        interior = (slice(None), slice(None), slice(6, 10), slice(4, 12))
        assert (aligned[interior] - baseline[interior]).abs().max().item() < 1e-4

    def test_odd_sizes_round_trip(self):
        gen = torch.Generator().manual_seed(9)
        f = torch.randn(1, 2, 11, 13, generator=gen, dtype=torch.float64)
        wg = torch.randn(2, 2, 3, 3, generator=gen, dtype=torch.float64)
        offsets = torch.zeros(1, 2, 6, 7, dtype=torch.float64)
        got = ops.global_align(wg, f, offsets)
        assert got.shape == (1, 2, 11, 13)

    def test_wrong_offset_resolution_raises(self):
        f = torch.zeros(1, 2, 12, 12).double()
        wg = torch.zeros(2, 2, 3, 3).double()
        with pytest.raises(ValueError):
            ops.global_align(wg, f, torch.zeros(1, 2, 12, 12).double())


class TestAdabd:
    def _random_instance(self, gen, b=1, c=3, c_out=4, h=8, w=10):
        a = torch.randn(b, c, h, w, generator=gen, dtype=torch.float64)
        f = torch.randn(b, c, h, w, generator=gen, dtype=torch.float64)
        wl = torch.randn(c_out, c, 3, 3, generator=gen, dtype=torch.float64)
        off = torch.randn(b, 18, h, w, generator=gen, dtype=torch.float64)
        mask = torch.rand(b, 9, h, w, generator=gen, dtype=torch.float64)
        return wl, a, f, off, mask

    def test_mask_one_is_standard_conv_of_current(self):
        gen = torch.Generator().manual_seed(10)
        wl, a, f, off, _ = self._random_instance(gen)
        got = ops.adabd(wl, a, f, off, torch.ones(1, 9, 8, 10).double())
        assert (got - F.conv2d(a, wl, padding=1)).abs().max().item() < 1e-5

    def test_mask_zero_is_deformable_conv_of_reference(self):
        gen = torch.Generator().manual_seed(11)
        wl, a, f, off, _ = self._random_instance(gen)
        got = ops.adabd(wl, a, f, off, torch.zeros(1, 9, 8, 10).double())
        want = ops.deformable_conv(wl, f, off, torch.ones(1, 9, 8, 10).double())
        assert (got - want).abs().max().item() < 1e-5

    def test_matches_two_call_decomposition(self):
        gen = torch.Generator().manual_seed(12)
        for _ in range(20):
            wl, a, f, off, mask = self._random_instance(gen)
            fused = ops.adabd(wl, a, f, off, mask)
            split = ops.deformable_conv(wl, a, torch.zeros_like(off), mask) + ops.deformable_conv(
                wl, f, off, 1 - mask
            )
            assert (fused - split).abs().max().item() < 1e-5

    def test_affine_in_mask(self):
        gen = torch.Generator().manual_seed(13)
        wl, a, f, off, m1 = self._random_instance(gen)
        m2 = torch.rand(1, 9, 8, 10, generator=gen, dtype=torch.float64)
        lam = 0.3
        mixed = ops.adabd(wl, a, f, off, lam * m1 + (1 - lam) * m2)
        combo = lam * ops.adabd(wl, a, f, off, m1) + (1 - lam) * ops.adabd(wl, a, f, off, m2)
        assert (mixed - combo).abs().max().item() < 1e-10

    def test_complementary_masks_sum_to_both_branches(self):
        gen = torch.Generator().manual_seed(14)
        wl, a, f, off, mask = self._random_instance(gen)
        ones = torch.ones_like(mask)
        total = ops.adabd(wl, a, f, off, mask) + ops.adabd(wl, a, f, off, 1 - mask)
        both = ops.deformable_conv(wl, a, torch.zeros_like(off), ones) + ops.deformable_conv(
            wl, f, off, ones
        )
        assert (total - both).abs().max().item() < 1e-5

    def test_shape_mismatch_raises(self):
        wl = torch.zeros(1, 1, 3, 3).double()
        a = torch.zeros(1, 1, 4, 4).double()
        f = torch.zeros(1, 1, 5, 4).double()
        with pytest.raises(ValueError):
            ops.adabd(wl, a, f, torch.zeros(1, 18, 4, 4).double(), torch.ones(1, 9, 4, 4).double())


class TestGradients:
    """Autograd vs central finite differences (step 1e-3, double precision),
    with offsets kept at least 0.25 away from grid lines where the bilinear
    kernel is non-smooth."""

    def test_deformable_conv_gradients(self):
        gen = torch.Generator().manual_seed(15)
        x = torch.randn(1, 2, 6, 6, generator=gen, dtype=torch.float64)
        wt = torch.randn(2, 2, 3, 3, generator=gen, dtype=torch.float64)
        off = offgrid_offsets(1, 18, 6, 6, generator=gen)
        mask = (0.2 + 0.6 * torch.rand(1, 9, 6, 6, generator=gen)).double()
        proj = torch.randn(1, 2, 6, 6, generator=gen, dtype=torch.float64)

        def fn(w_, x_, o_, m_):
            return (ops.deformable_conv(w_, x_, o_, m_) * proj).sum()

        failure = check_gradients(fn, [wt, x, off, mask], samples_per_tensor=8)
        assert failure is None, f"gradient mismatch: {failure}"

    def test_adabd_gradients(self):
        gen = torch.Generator().manual_seed(16)
        a = torch.randn(1, 2, 6, 6, generator=gen, dtype=torch.float64)
        f = torch.randn(1, 2, 6, 6, generator=gen, dtype=torch.float64)
        wl = torch.randn(2, 2, 3, 3, generator=gen, dtype=torch.float64)
        off = offgrid_offsets(1, 18, 6, 6, generator=gen)
        mask = (0.2 + 0.6 * torch.rand(1, 9, 6, 6, generator=gen)).double()
        proj = torch.randn(1, 2, 6, 6, generator=gen, dtype=torch.float64)

        def fn(w_, a_, f_, o_, m_):
            return (ops.adabd(w_, a_, f_, o_, m_) * proj).sum()

        failure = check_gradients(fn, [wl, a, f, off, mask], samples_per_tensor=8)
        assert failure is None, f"gradient mismatch: {failure}"

    def test_global_align_gradients(self):
        gen = torch.Generator().manual_seed(17)
        f = torch.randn(1, 2, 8, 8, generator=gen, dtype=torch.float64)
        wg = torch.randn(2, 2, 3, 3, generator=gen, dtype=torch.float64)
        off = offgrid_offsets(1, 2, 4, 4, generator=gen)
        proj = torch.randn(1, 2, 8, 8, generator=gen, dtype=torch.float64)

        def fn(w_, f_, o_):
            return (ops.global_align(w_, f_, o_) * proj).sum()

        failure = check_gradients(fn, [wg, f, off], samples_per_tensor=8)
        assert failure is None, f"gradient mismatch: {failure}"
