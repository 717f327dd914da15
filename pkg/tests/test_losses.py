import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from fevgan.identity import extract_features
from fevgan.losses import (
    EPS,
    LossReport,
    LossWeights,
    adversarial_losses,
    identity_loss,
    reconstruction_loss,
    total_generator_loss,
)

SCORE = st.floats(0.0, 1.0, allow_nan=False)


# ---------------------------------------------------------------- adversarial

def test_adversarial_midpoint():
    adv_d, adv_g = adversarial_losses(0.5, 0.5)
    assert adv_d.item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert adv_g.item() == pytest.approx(math.log(2), abs=1e-12)
    assert round(adv_d.item(), 4) == 1.3863 and round(adv_g.item(), 4) == 0.6931


def test_adversarial_limits():
    adv_d, _ = adversarial_losses(1.0, 0.0)
    assert 0 <= adv_d.item() < 1e-6
    _, adv_g = adversarial_losses(0.3, 1.0)
    assert 0 <= adv_g.item() < 1e-6


def test_adversarial_batch_is_mean():
    real = torch.tensor([0.9, 0.6], dtype=torch.float64)
    fake = torch.tensor([0.2, 0.4], dtype=torch.float64)
    adv_d, adv_g = adversarial_losses(real, fake)
    expected_d = np.mean([-(math.log(r) + math.log(1 - f)) for r, f in zip([0.9, 0.6], [0.2, 0.4])])
    assert adv_d.item() == pytest.approx(expected_d, rel=1e-12)
    assert adv_g.item() == pytest.approx(-(math.log(0.2) + math.log(0.4)) / 2, rel=1e-12)


@given(SCORE, SCORE)
def test_adversarial_clamped_bound(real, fake):
    bound = -2 * math.log(EPS)
    for v in adversarial_losses(real, fake):
        assert math.isfinite(v.item()) and 0 <= v.item() <= bound


def test_adversarial_float32_extremes_finite():
    s = torch.tensor([0.0, 1.0])
    adv_d, adv_g = adversarial_losses(s, s.flip(0))
    assert torch.isfinite(adv_d) and torch.isfinite(adv_g)


# ---------------------------------------------------------------- reconstruction

def test_reconstruction_fixed_points():
    y = torch.rand(1, 3, 32, 64, 64) * 2 - 1
    assert reconstruction_loss(y, y).item() == 0.0
    assert reconstruction_loss(torch.ones(1, 3, 32, 64, 64), -torch.ones(1, 3, 32, 64, 64)).item() == 2.0


def test_reconstruction_matches_scalar_loop():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-1, 1, (2, 3, 4, 5, 6)), rng.uniform(-1, 1, (2, 3, 4, 5, 6))
    total = 0.0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += abs(x - y)
    oracle = total / a.size
    assert abs(reconstruction_loss(torch.from_numpy(a), torch.from_numpy(b)).item() - oracle) < 1e-6


def test_reconstruction_shape_mismatch():
    with pytest.raises(ValueError):
        reconstruction_loss(torch.zeros(1, 3, 32, 64, 64), torch.zeros(1, 3, 31, 64, 64))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_reconstruction_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (torch.from_numpy(rng.uniform(-1, 1, (1, 3, 4, 4, 4))) for _ in range(3))
    ab, ba = reconstruction_loss(a, b).item(), reconstruction_loss(b, a).item()
    assert ab == ba and ab >= 0
    assert ab <= reconstruction_loss(a, c).item() + reconstruction_loss(c, b).item() + 1e-12
    assert (ab == 0) == torch.equal(a, b)


# ---------------------------------------------------------------- identity

def _video_from(image, n_frames=32):
    # N x 3 x F x H x W
    return image.unsqueeze(2).expand(-1, -1, n_frames, -1, -1).clone()


def test_identity_zero_when_selected_frames_equal_input(backend, synth4):
    img = torch.from_numpy(synth4[0].input_image).permute(2, 0, 1)[None]
    video = torch.rand(1, 3, 32, 64, 64) * 2 - 1
    for k in (0, 10, 21, 31):
        video[:, :, k] = img
    assert identity_loss(backend, img, video).item() == 0.0


def test_identity_matches_brute_force(backend, synth4):
    rng = np.random.default_rng(0)
    image = synth4[1].input_image
    video = rng.uniform(-1, 1, (32, 64, 64, 3)).astype(np.float32)
    ref = extract_features(backend, image).astype(np.float64)
    oracle = 0.0
    for k in (0, 10, 21, 31):
        oracle += np.abs(extract_features(backend, video[k]).astype(np.float64) - ref).mean()
    got = identity_loss(backend, torch.from_numpy(image).permute(2, 0, 1)[None],
                        torch.from_numpy(video).permute(3, 0, 1, 2)[None]).item()
    assert abs(got - oracle) < 1e-5


def test_identity_sum_over_frames(backend, synth4):
    img = torch.from_numpy(synth4[0].input_image).permute(2, 0, 1)[None]
    other = torch.from_numpy(synth4[6].input_image).permute(2, 0, 1)[None]
    video = _video_from(other)
    one = identity_loss(backend, img, video, [3, 5]).item()
    two = identity_loss(backend, img, video, [3, 5, 7, 9]).item()
    assert two == pytest.approx(2 * one, rel=1e-6)


def test_identity_ignores_unselected_frames(backend, synth4):
    img = torch.from_numpy(synth4[0].input_image).permute(2, 0, 1)[None]
    video = torch.rand(1, 3, 32, 64, 64) * 2 - 1
    before = identity_loss(backend, img, video).item()
    video[:, :, 5] = -video[:, :, 5]
    assert identity_loss(backend, img, video).item() == before


def test_identity_batch_mean(backend, synth4):
    imgs = torch.from_numpy(np.stack([synth4[0].input_image, synth4[6].input_image])).permute(0, 3, 1, 2)
    video = torch.rand(2, 3, 32, 64, 64) * 2 - 1
    both = identity_loss(backend, imgs, video).item()
    each = [identity_loss(backend, imgs[i:i + 1], video[i:i + 1]).item() for i in range(2)]
    assert both == pytest.approx(sum(each) / 2, rel=1e-6)


@pytest.mark.parametrize("frames", [[], [32], [-1]])
def test_identity_rejects_bad_frames(backend, frames):
    with pytest.raises(ValueError):
        identity_loss(backend, torch.zeros(1, 3, 64, 64), torch.zeros(1, 3, 32, 64, 64), frames)


# ---------------------------------------------------------------- total

@pytest.mark.parametrize("terms,weights,expected", [
    ((1.0, 0.0, 0.0), LossWeights(), 1.0),
    ((1.0, 0.0, 0.0), LossWeights(3.0, 7.0), 1.0),
    ((0.0, 1.0, 1.0), LossWeights(10.0, 1.0), 11.0),
    ((0.5, 0.2, 0.1), LossWeights(100.0, 10.0), 21.5),
])
def test_total_examples(terms, weights, expected):
    assert total_generator_loss(*terms, weights) == pytest.approx(expected, abs=1e-12)


def test_zero_weights_leave_adversarial_only():
    assert total_generator_loss(0.7, 3.0, 4.0, LossWeights(0.0, 0.0)) == 0.7


@pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
def test_weights_validated(bad):
    with pytest.raises(ValueError):
        LossWeights(lambda1=bad)
    with pytest.raises(ValueError):
        LossWeights(lambda2=bad)


def test_report_csv_roundtrip():
    r = LossReport(1.25, 0.5, 0.1, 0.01, 10.6)
    row = r.csv_row(7).split(",")
    assert LossReport.CSV_HEADER.split(",")[0] == "step" and row[0] == "7"
    assert LossReport(*map(float, row[1:])) == r
