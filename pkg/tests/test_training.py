"""Training-loop contracts: pair sampling, frozen-teacher isolation,
logging, and a short end-to-end smoke run that must actually learn."""

import csv
import random

import pytest
import torch

from shortcut_v2v.dataio import SyntheticVideoSpec, generate_video
from shortcut_v2v.losses import PatchDiscriminator, TemporalDiscriminator, loss_gan
from shortcut_v2v.teacher import ToyTranslator
from shortcut_v2v.training import (
    FeatureBank,
    ShortcutTrainConfig,
    TeacherTrainConfig,
    evaluate_shortcut,
    frames_to_tensor,
    freeze,
    make_block_for,
    moving_average,
    prepare_feature_bank,
    sample_pair,
    train_shortcut,
    train_teacher,
)


def tiny_videos(n=3, frames=10, seed0=0):
    out = []
    for seed in range(seed0, seed0 + n):
        spec = SyntheticVideoSpec(
            num_frames=frames, height=32, width=64,
            motion_px_per_frame=1.5, num_shapes=4, seed=seed,
        )
        src, tgt = generate_video(spec)
        out.append((frames_to_tensor(src.frames), frames_to_tensor(tgt.frames)))
    return out


@pytest.fixture(scope="module")
def trained_setup():
    """A briefly trained tiny teacher with feature banks, shared per module."""
    videos = tiny_videos(4)
    teacher, _ = train_teacher(videos[:3], TeacherTrainConfig(base_width=8, steps=200, seed=0))
    train_bank = prepare_feature_bank(teacher, [s for s, _ in videos[:3]], "medium")
    held_bank = prepare_feature_bank(teacher, [s for s, _ in videos[3:]], "medium")
    return teacher, train_bank, held_bank


class TestSampling:
    def test_gap_always_within_interval(self, trained_setup):
        _, bank, _ = trained_setup
        rng = random.Random(0)
        for _ in range(2000):
            v, r, t = sample_pair(rng, bank, alpha=3)
            assert 1 <= t - r <= 3
            assert 0 <= r < t < bank.frames_in(v)

    def test_gap_capped_by_video_length(self):
        bank = FeatureBank(
            a=[torch.zeros(2, 1, 4, 4)], f=[torch.zeros(2, 1, 4, 4)],
            o=[torch.zeros(2, 3, 8, 8)], l_e="down1", l_d="up1",
        )
        rng = random.Random(1)
        for _ in range(50):
            v, r, t = sample_pair(rng, bank, alpha=6)
            assert (r, t) == (0, 1)

    def test_too_short_dataset_rejected(self):
        bank = FeatureBank(
            a=[torch.zeros(1, 1, 4, 4)], f=[torch.zeros(1, 1, 4, 4)],
            o=[torch.zeros(1, 3, 8, 8)], l_e="down1", l_d="up1",
        )
        with pytest.raises(ValueError):
            sample_pair(random.Random(0), bank, alpha=3)


class TestFeatureBank:
    def test_bank_matches_direct_teacher_calls(self, trained_setup):
        teacher, bank, _ = trained_setup
        videos = tiny_videos(1)
        direct = prepare_feature_bank(teacher, [videos[0][0]], "medium")
        with torch.no_grad():
            a = teacher.encode_to(videos[0][0][2:3], "down1")
            f = teacher.middle_to(a, "down1", "up1")
            o = teacher.decode_from(f, "up1")
        assert torch.equal(direct.a[0][2:3], a)
        assert torch.equal(direct.f[0][2:3], f)
        assert torch.equal(direct.o[0][2:3], o)


class TestIsolation:
    def test_teacher_parameters_receive_no_gradient(self, trained_setup):
        teacher, bank, _ = trained_setup
        block = make_block_for(teacher, "medium")
        f_hat = block(bank.f[0][0:1], bank.a[0][0:1], bank.a[0][1:2])
        o_hat = teacher.decode_from(f_hat, "up1")
        o_hat.abs().mean().backward()
        assert all(p.grad is None for p in teacher.parameters())
        assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in block.parameters())

    def test_discriminator_step_leaves_block_untouched(self, trained_setup):
        teacher, bank, _ = trained_setup
        torch.manual_seed(0)
        block = make_block_for(teacher, "medium")
        disc, disc_t = PatchDiscriminator(), TemporalDiscriminator()
        opt_d = torch.optim.Adam(list(disc.parameters()) + list(disc_t.parameters()), lr=1e-3)
        with torch.no_grad():
            f_hat = block(bank.f[0][0:1], bank.a[0][0:1], bank.a[0][1:2])
            o_hat = teacher.decode_from(f_hat, "up1")
        snapshot = [p.clone() for p in block.parameters()]
        l_d, l_dt = loss_gan(disc, disc_t, bank.o[0][0:1], bank.o[0][1:2], o_hat, "discriminator")
        opt_d.zero_grad()
        (l_d + l_dt).backward()
        opt_d.step()
        for before, after in zip(snapshot, block.parameters()):
            assert torch.equal(before, after)

    def test_teacher_checksum_unchanged_by_shortcut_training(self, trained_setup):
        teacher, bank, _ = trained_setup
        checksum = teacher.parameter_checksum()
        block = make_block_for(teacher, "medium")
        train_shortcut(teacher, bank, block, ShortcutTrainConfig(steps=5, alpha=3, seed=0))
        assert teacher.parameter_checksum() == checksum


class TestTeacherTraining:
    def test_l1_decreases(self):
        videos = tiny_videos(2, frames=8, seed0=10)
        _, metrics = train_teacher(videos, TeacherTrainConfig(base_width=8, steps=150, seed=1))
        head, tail = moving_average([m["l1"] for m in metrics], 30)
        assert tail < head

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_teacher([], TeacherTrainConfig(steps=1))


class TestShortcutTraining:
    def test_metrics_logged_and_csv_written(self, trained_setup, tmp_path):
        teacher, bank, _ = trained_setup
        block = make_block_for(teacher, "medium")
        log = tmp_path / "log.csv"
        metrics = train_shortcut(
            teacher, bank, block, ShortcutTrainConfig(steps=4, alpha=3, seed=0), log_path=log
        )
        assert len(metrics) == 4
        with open(log) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        for key in ("step", "align", "feat", "out", "perc", "gan", "t_gan", "d", "d_t", "total"):
            assert key in rows[0]

    def test_invalid_alpha_rejected(self, trained_setup):
        teacher, bank, _ = trained_setup
        block = make_block_for(teacher, "medium")
        with pytest.raises(ValueError):
            train_shortcut(teacher, bank, block, ShortcutTrainConfig(steps=1, alpha=0))

    def test_seeded_runs_are_reproducible(self, trained_setup):
        teacher, bank, _ = trained_setup
        results = []
        for _ in range(2):
            block = make_block_for(teacher, "medium")
            with torch.no_grad():
                for p in block.parameters():
                    p.zero_()
            train_shortcut(teacher, bank, block, ShortcutTrainConfig(steps=3, alpha=3, seed=7))
            results.append([p.detach().clone() for p in block.parameters()])
        for pa, pb in zip(*results):
            assert torch.equal(pa, pb)


class TestSmokeLearning:
    def test_short_run_reduces_alignment_and_feature_losses(self, trained_setup):
        teacher, bank, held = trained_setup
        torch.manual_seed(0)
        block = make_block_for(teacher, "medium")
        before = evaluate_shortcut(teacher, held, block, alpha=3)
        metrics = train_shortcut(
            teacher, bank, block, ShortcutTrainConfig(steps=200, alpha=3, seed=0, lr=1e-3)
        )
        after = evaluate_shortcut(teacher, held, block, alpha=3)
        feat_head, feat_tail = moving_average([m["feat"] for m in metrics], 40)
        align_head, align_tail = moving_average([m["align"] for m in metrics], 40)
        assert feat_tail < feat_head
        assert align_tail < align_head
        assert after["l1_shortcut"] < before["l1_shortcut"]
