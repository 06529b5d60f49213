import numpy as np
import pytest

from motok import tokenize as tk


def rand_video(rng, t=8, c=3, h=32, w=32):
    return rng.random((t, c, h, w)).astype(np.float32)


def test_partition_paper_scale_grid():
    video = np.zeros((16, 3, 224, 224), dtype=np.float32)
    grid = tk.partition_video(video, p=16, t_p=2)
    assert grid.extents == (8, 14, 14)
    assert grid.n_tokens == 1568


def test_partition_degenerate_single_token():
    video = np.random.default_rng(0).random((2, 3, 16, 16)).astype(np.float32)
    grid = tk.partition_video(video, p=16, t_p=2)
    assert grid.extents == (1, 1, 1)
    assert np.array_equal(grid.blocks[0, 0, 0], video)


def test_partition_reassemble_bit_identical():
    video = rand_video(np.random.default_rng(1))
    grid = tk.partition_video(video, p=16, t_p=2)
    assert np.array_equal(tk.reassemble_video(grid), video)


def test_partition_rejects_non_divisible():
    with pytest.raises(ValueError):
        tk.partition_video(np.zeros((7, 3, 32, 32), dtype=np.float32), p=16, t_p=2)
    with pytest.raises(ValueError):
        tk.partition_video(np.zeros((8, 3, 30, 32), dtype=np.float32), p=16, t_p=2)


def test_temporal_average_identical_frames():
    rng = np.random.default_rng(2)
    frame = rng.random((3, 16, 16)).astype(np.float32)
    video = np.stack([frame] * 4)
    grid = tk.partition_video(video, p=16, t_p=2)
    reps = tk.temporal_average(grid)
    assert np.allclose(reps[0, 0, 0], frame, atol=1e-7)


def test_temporal_average_opposite_frames_cancel():
    rng = np.random.default_rng(3)
    frame = rng.standard_normal((3, 16, 16)).astype(np.float32)
    video = np.stack([frame, -frame])
    grid = tk.partition_video(video, p=16, t_p=2)
    assert np.allclose(tk.temporal_average(grid), 0.0, atol=1e-7)


def test_temporal_average_matches_float64_mean():
    rng = np.random.default_rng(4)
    video = rand_video(rng, t=8)
    grid = tk.partition_video(video, p=16, t_p=4)
    reps = tk.temporal_average(grid)
    ref = video.astype(np.float64).reshape(2, 4, 3, 2, 16, 2, 16).transpose(
        0, 3, 5, 1, 2, 4, 6).mean(axis=3)
    assert np.max(np.abs(reps - ref)) < 1e-6


def test_motion_differences_static_video():
    frame = np.random.default_rng(5).random((3, 16, 16)).astype(np.float32)
    video = np.stack([frame] * 8)
    grid = tk.partition_video(video, p=16, t_p=2)
    diffs = tk.motion_differences(tk.temporal_average(grid))
    assert diffs.shape[0] == 3
    assert np.allclose(diffs, 0.0, atol=1e-7)


def test_motion_differences_constant_shift_and_symmetry():
    rng = np.random.default_rng(6)
    reps = np.stack([rng.random((1, 1, 3, 4, 4)), rng.random((1, 1, 3, 4, 4))])
    d1 = tk.motion_differences(reps)
    d2 = tk.motion_differences(reps[::-1])
    assert np.allclose(d1, d2)  # |a-b| == |b-a|
    shifted = np.stack([reps[0], reps[0] + 0.25])
    assert np.allclose(tk.motion_differences(shifted), 0.25, atol=1e-7)


def test_motion_differences_single_slice_empty():
    reps = np.zeros((1, 2, 2, 3, 4, 4))
    assert tk.motion_differences(reps).shape[0] == 0


def test_patch_energy_trivials():
    diffs = np.zeros((2, 1, 1, 3, 4, 4))
    assert np.all(tk.patch_energy(diffs) == 0.0)
    diffs = np.full((1, 2, 2, 3, 4, 4), 0.3)
    assert np.allclose(tk.patch_energy(diffs), 0.3, atol=1e-12)


def test_patch_energy_matches_float64_mean():
    rng = np.random.default_rng(7)
    diffs = rng.random((3, 2, 2, 3, 8, 8)).astype(np.float32)
    e = tk.patch_energy(diffs)
    ref = diffs.astype(np.float64).mean(axis=(3, 4, 5))
    assert np.max(np.abs(e - ref)) < 1e-6


def test_normalize_energies_forced_values():
    out = tk.normalize_energies(np.array([[[2.0]], [[4.0]], [[6.0]]]))
    assert np.allclose(out.ravel(), [0.0, 0.5, 1.0])


def test_normalize_energies_degenerate_all_zero():
    out = tk.normalize_energies(np.full((3, 2, 2), 0.7))
    assert np.all(out == 0.0)


def test_normalize_energies_range():
    rng = np.random.default_rng(8)
    raw = rng.random((5, 3, 3)) * 7 + 1
    out = tk.normalize_energies(raw)
    assert out.min() == 0.0 and out.max() == 1.0


def test_normalize_energies_location_scope():
    raw = np.zeros((3, 1, 2))
    raw[:, 0, 0] = [1.0, 2.0, 3.0]
    raw[:, 0, 1] = [5.0, 5.0, 5.0]  # degenerate location
    out = tk.normalize_energies(raw, scope="location")
    assert np.allclose(out[:, 0, 0], [0.0, 0.5, 1.0])
    assert np.all(out[:, 0, 1] == 0.0)


def test_assemble_energy_tensor_contract():
    normed = np.random.default_rng(9).random((7, 4, 4))
    full = tk.assemble_energy_tensor(normed)
    assert full.shape == (8, 4, 4)
    assert np.all(full[0] == 1.0)
    assert np.array_equal(full[1:], normed)


def test_assemble_energy_tensor_single_slice_video():
    full = tk.assemble_energy_tensor(np.zeros((0, 4, 4)))
    assert full.shape == (1, 4, 4)
    assert np.all(full == 1.0)


def test_select_tokens_strict_inequality():
    energy = np.array([[[1.0]], [[0.5]], [[0.2]]])
    mask = tk.select_tokens(energy, 0.5)
    assert mask.ravel().tolist() == [True, False, False]


def test_select_tokens_tau_bounds():
    for bad in (0.0, 1.0, -0.3, 1.5):
        with pytest.raises(ValueError):
            tk.select_tokens(np.ones((1, 1, 1)), bad)


def test_select_tokens_tiny_tau_keeps_positive_energies():
    rng = np.random.default_rng(10)
    energy = tk.assemble_energy_tensor(rng.random((7, 4, 4)) * 0.9 + 0.05)
    mask = tk.select_tokens(energy, 1e-9)
    assert mask.all()


def test_select_tokens_high_tau_keeps_first_slice():
    rng = np.random.default_rng(11)
    energy = tk.assemble_energy_tensor(rng.random((7, 4, 4)))
    mask = tk.select_tokens(energy, 0.999)
    assert mask[0].all()
    assert np.array_equal(mask[1:], energy[1:] > 0.999)


def test_drop_ratio_counting():
    assert tk.drop_ratio(np.ones((8, 4, 4), dtype=bool)) == 0.0
    mask = np.zeros((8, 4, 4), dtype=bool)
    mask[0] = True
    assert tk.drop_ratio(mask) == pytest.approx(7.0 / 8.0)


def test_gather_tokens_canonical_order_and_counts():
    rng = np.random.default_rng(12)
    video = rand_video(rng)
    grid = tk.partition_video(video, p=16, t_p=2)
    all_mask = np.ones(grid.extents, dtype=bool)
    seq = tk.gather_tokens(grid, all_mask, video_id="v")
    assert len(seq) == grid.n_tokens
    expect = np.indices(grid.extents).reshape(3, -1).T
    assert np.array_equal(seq.indices, expect)

    first = np.zeros(grid.extents, dtype=bool)
    first[0] = True
    seq = tk.gather_tokens(grid, first)
    assert len(seq) == grid.extents[1] * grid.extents[2]
    assert np.all(seq.indices[:, 0] == 0)

    rnd = rng.random(grid.extents) > 0.5
    assert len(tk.gather_tokens(grid, rnd)) == np.count_nonzero(rnd)


def test_mask_monotonic_in_tau_and_first_slice():
    rng = np.random.default_rng(13)
    for _ in range(100):
        energy = tk.assemble_energy_tensor(rng.random((7, 4, 4)))
        prev_mask = None
        prev_rho = -1.0
        for tau in sorted(rng.uniform(0.001, 0.999, size=10)):
            mask = tk.select_tokens(energy, tau)
            assert mask[0].all()  # first-slice retention for every tau
            rho = tk.drop_ratio(mask)
            assert rho >= prev_rho
            assert rho <= 1.0 - 1.0 / energy.shape[0]
            if prev_mask is not None:
                assert np.all(mask <= prev_mask)  # retained(tau2) subset of retained(tau1)
            prev_mask, prev_rho = mask, rho


def test_channel_permutation_invariance():
    rng = np.random.default_rng(14)
    video = rand_video(rng)
    e1 = tk.motion_energy_tensor(video, p=16, t_p=2)
    e2 = tk.motion_energy_tensor(video[:, [2, 0, 1]], p=16, t_p=2)
    assert np.allclose(e1, e2, atol=1e-12)


def test_static_video_collapse():
    frame = np.random.default_rng(15).random((3, 32, 32)).astype(np.float32)
    video = np.broadcast_to(frame, (8, 3, 32, 32)).copy()
    energy = tk.motion_energy_tensor(video, p=16, t_p=2)
    mask = tk.select_tokens(energy, 0.5)
    assert tk.drop_ratio(mask) == pytest.approx(1.0 - 1.0 / 4.0)


def test_pipeline_determinism():
    rng = np.random.default_rng(16)
    video = rand_video(rng)
    e1 = tk.motion_energy_tensor(video, p=16, t_p=2)
    e2 = tk.motion_energy_tensor(video.copy(), p=16, t_p=2)
    assert np.array_equal(e1, e2)
    assert np.array_equal(tk.select_tokens(e1, 0.37), tk.select_tokens(e2, 0.37))


def test_select_matches_bruteforce_on_toy_grids():
    rng = np.random.default_rng(17)
    for _ in range(50):
        energy = rng.random((3, 3, 2))
        tau = rng.uniform(0.01, 0.99)
        mask = tk.select_tokens(energy, tau)
        for t in range(3):
            for x in range(3):
                for y in range(2):
                    assert mask[t, x, y] == (energy[t, x, y] > tau)


def test_fused_energy_matches_composed_ops(kernel_backend):
    rng = np.random.default_rng(18)
    video = rand_video(rng, t=12, h=48, w=32)
    fused = tk.motion_energy_tensor(video, p=16, t_p=2)
    grid = tk.partition_video(video, p=16, t_p=2)
    raw = tk.patch_energy(tk.motion_differences(tk.temporal_average(grid)))
    composed = tk.assemble_energy_tensor(tk.normalize_energies(raw))
    assert np.max(np.abs(fused - composed)) < 1e-12


def test_random_drop_mask_contract():
    rng = np.random.default_rng(19)
    extents = (8, 4, 4)
    assert tk.random_drop_mask(extents, 0.0, rng).all()
    for ratio in (0.25, 0.5, 0.8):
        mask = tk.random_drop_mask(extents, ratio, rng)
        assert mask[0].all()
        achieved = tk.drop_ratio(mask)
        assert abs(achieved - ratio) <= 1.0 / mask.size + 1e-12
    m1 = tk.random_drop_mask(extents, 0.5, np.random.default_rng(1))
    m2 = tk.random_drop_mask(extents, 0.5, np.random.default_rng(2))
    assert np.count_nonzero(m1) == np.count_nonzero(m2)
    assert not np.array_equal(m1, m2)
    with pytest.raises(ValueError):
        tk.random_drop_mask(extents, 0.95, rng)  # above 1 - 1/n_t
