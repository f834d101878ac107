"""Loss-function tests against brute-force oracles and closed forms."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from posegen.discriminators import DiscConfig, PatchGAN, PatchScores
from posegen.losses import (
    ConvFeatureExtractor,
    IdentityExtractor,
    LossReport,
    d_i_loss,
    d_p_loss,
    g_adv_losses,
    recon_loss,
    total_objective,
)


def scores_of(arr: np.ndarray) -> PatchScores:
    t = torch.from_numpy(arr).view(1, 1, *arr.shape)
    return PatchScores(map=t, mean=t.mean())


def oracle_bce(logits: np.ndarray, target: float) -> float:
    """Element-wise binary cross-entropy in float64, no library shortcuts."""
    total = 0.0
    for x in logits.ravel():
        p = 1.0 / (1.0 + math.exp(-float(x)))
        total += -(target * math.log(p) + (1.0 - target) * math.log(1.0 - p))
    return total / logits.size


# ----------------------------------------------------------------- BCE forms

def test_d_loss_matches_bce_oracle():
    rng = np.random.default_rng(0)
    real = rng.normal(0, 2, size=(30, 30))
    fake = rng.normal(0, 2, size=(30, 30))
    expected = oracle_bce(real, 1.0) + oracle_bce(fake, 0.0)
    got = d_i_loss(scores_of(real), scores_of(fake))
    assert abs(float(got) - expected) < 1e-9
    assert abs(float(d_p_loss(scores_of(real), scores_of(fake))) - expected) < 1e-9


def test_d_loss_symmetric_midpoint():
    zero = scores_of(np.zeros((5, 7)))
    assert abs(float(d_i_loss(zero, zero)) - 2 * math.log(2)) < 1e-6


def test_d_loss_saturated_perfect_discriminator():
    real = scores_of(np.full((4, 4), 20.0))
    fake = scores_of(np.full((4, 4), -20.0))
    assert float(d_i_loss(real, fake)) < 1e-8


def test_g_adv_matches_oracle_and_midpoint():
    rng = np.random.default_rng(1)
    fi = rng.normal(0, 2, size=(30, 30))
    fp = rng.normal(0, 2, size=(14, 6))
    gi, gp = g_adv_losses(scores_of(fi), scores_of(fp))
    assert abs(float(gi) - oracle_bce(fi, 1.0)) < 1e-9
    assert abs(float(gp) - oracle_bce(fp, 1.0)) < 1e-9
    zi, zp = g_adv_losses(scores_of(np.zeros((3, 3))), scores_of(np.zeros((3, 3))))
    assert abs(float(zi) - math.log(2)) < 1e-6
    assert abs(float(zp) - math.log(2)) < 1e-6


def test_g_adv_fooled_discriminator_near_zero():
    high = scores_of(np.full((4, 4), 20.0))
    gi, gp = g_adv_losses(high, high)
    assert float(gi) < 1e-8 and float(gp) < 1e-8


def test_g_adv_saturating_variant():
    zero = scores_of(np.zeros((4, 4)))
    gi, _ = g_adv_losses(zero, zero, saturating=True)
    assert abs(float(gi) + math.log(2)) < 1e-6   # log(1 - 0.5) = -ln 2
    # the literal form flattens toward 0 when the critic confidently rejects
    # the fake, and drops toward -inf as the generator starts winning
    low, _ = g_adv_losses(scores_of(np.full((4, 4), -5.0)),
                          scores_of(np.full((4, 4), -5.0)), saturating=True)
    high, _ = g_adv_losses(scores_of(np.full((4, 4), 5.0)),
                           scores_of(np.full((4, 4), 5.0)), saturating=True)
    assert float(high) < float(gi) < float(low) < 0.0


def test_losses_nonnegative_property():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = scores_of(rng.normal(0, 3, size=(6, 6)))
        b = scores_of(rng.normal(0, 3, size=(6, 6)))
        assert float(d_i_loss(a, b)) >= 0
        gi, gp = g_adv_losses(a, b)
        assert float(gi) >= 0 and float(gp) >= 0


# --------------------------------------------------------------- recon_loss

def test_recon_identity_is_zero():
    y = torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1
    l1, perc = recon_loss(y, y.clone(), IdentityExtractor())
    assert float(l1) == 0.0 and float(perc) == 0.0


def test_recon_constant_difference():
    y = torch.zeros(1, 1, 2, 2)
    y_hat = torch.ones(1, 1, 2, 2)
    l1, perc = recon_loss(y, y_hat, IdentityExtractor())
    assert abs(float(l1) - 1.0) < 1e-7
    assert abs(float(perc) - 1.0) < 1e-7


def test_recon_matches_hand_rolled_oracle():
    phi = ConvFeatureExtractor.toy(seed=3).double()
    y = torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1
    y_hat = torch.rand(1, 3, 16, 16, dtype=torch.float64) * 2 - 1
    l1, perc = recon_loss(y, y_hat, phi)

    exp_l1 = np.mean(np.abs(y.numpy() - y_hat.numpy()))
    with torch.no_grad():
        fy = [f.numpy() for f in phi.features(y)]
        fh = [f.numpy() for f in phi.features(y_hat)]
    exp_perc = sum(w * np.mean(np.abs(a - b))
                   for w, a, b in zip(phi.weights, fy, fh))
    assert abs(float(l1) - exp_l1) < 1e-12
    assert abs(float(perc) - exp_perc) < 1e-9


def test_recon_symmetry():
    phi = ConvFeatureExtractor.toy(seed=4)
    a = torch.rand(1, 3, 16, 16) * 2 - 1
    b = torch.rand(1, 3, 16, 16) * 2 - 1
    l1_ab, perc_ab = recon_loss(a, b, phi)
    l1_ba, perc_ba = recon_loss(b, a, phi)
    assert torch.equal(l1_ab, l1_ba)
    assert torch.equal(perc_ab, perc_ba)


def test_recon_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape mismatch"):
        recon_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 16, 16),
                   IdentityExtractor())


# ------------------------------------------------------ perceptual extractor

def test_vgg19_stage_shapes():
    phi = ConvFeatureExtractor.vgg19()
    with torch.no_grad():
        feats = phi.features(torch.zeros(3, 64, 64))
    assert [tuple(f.shape) for f in feats] == [
        (1, 64, 64, 64), (1, 128, 32, 32), (1, 256, 16, 16), (1, 512, 8, 8)]
    assert phi.layer_names == ("relu1_2", "relu2_2", "relu3_2", "relu4_2")
    assert phi.weights == (1.0, 1.0, 1.0, 1.0)


def test_extractor_is_frozen():
    phi = ConvFeatureExtractor.toy(seed=0)
    assert all(not p.requires_grad for p in phi.parameters())
    y_hat = torch.rand(1, 3, 16, 16, requires_grad=True)
    _, perc = recon_loss(torch.zeros(1, 3, 16, 16), y_hat, phi)
    perc.backward()
    assert y_hat.grad is not None
    assert all(p.grad is None for p in phi.parameters())


def test_extractor_seed_determinism():
    a = ConvFeatureExtractor.toy(seed=7)
    b = ConvFeatureExtractor.toy(seed=7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_extractor_weight_file_round_trip(tmp_path):
    phi = ConvFeatureExtractor.vgg19()
    path = tmp_path / "phi.ckpt"
    torch.save(phi.state_dict(), path)
    loaded = ConvFeatureExtractor.vgg19(weights_path=path)
    x = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        fa = phi.features(x)
        fb = loaded.features(x)
    for a, b in zip(fa, fb):
        assert torch.equal(a, b)


def test_extractor_warns_without_weights(caplog):
    with caplog.at_level("WARNING"):
        ConvFeatureExtractor.vgg19()
    assert any("perceptual weights" in r.getMessage() for r in caplog.records)


def test_extractor_validation():
    with pytest.raises(ValueError, match="non-negative"):
        ConvFeatureExtractor(((1, 4),), ("s1",), stage_weights=[-1.0])
    with pytest.raises(ValueError, match="one weight per stage"):
        ConvFeatureExtractor(((1, 4), (1, 8)), ("s1", "s2"), stage_weights=[1.0])


# ------------------------------------------------------------ full objective

def test_total_objective_arithmetic():
    r = total_objective(torch.tensor(1.0), torch.tensor(2.0), torch.tensor(3.0),
                        torch.tensor(4.0), torch.tensor(0.5), torch.tensor(0.6),
                        alpha=1.0, beta=1.0)
    assert isinstance(r, LossReport)
    assert abs(float(r.total_g) - 10.0) < 1e-7


def test_total_objective_zero_weights():
    r = total_objective(torch.tensor(1.5), torch.tensor(0.25), torch.tensor(9.0),
                        torch.tensor(9.0), torch.tensor(0.0), torch.tensor(0.0),
                        alpha=0.0, beta=0.0)
    assert abs(float(r.total_g) - 1.75) < 1e-7


def test_total_objective_rejects_negative_weights():
    z = torch.tensor(0.0)
    with pytest.raises(ValueError, match=">= 0"):
        total_objective(z, z, z, z, z, z, alpha=-0.1, beta=1.0)


@given(vals=st.lists(st.floats(0, 10), min_size=4, max_size=4),
       alpha=st.floats(0, 5), beta=st.floats(0, 5))
@settings(max_examples=50, deadline=None)
def test_total_objective_invariant(vals, alpha, beta):
    l1, perc, gi, gp = (torch.tensor(v, dtype=torch.float64) for v in vals)
    z = torch.tensor(0.0, dtype=torch.float64)
    r = total_objective(l1, perc, gi, gp, z, z, alpha=alpha, beta=beta)
    expected = float(l1) + float(perc) + alpha * float(gi) + beta * float(gp)
    assert math.isclose(float(r.total_g), expected, rel_tol=1e-12, abs_tol=1e-12)
    d = r.as_floats()
    assert set(d) == {"l1", "perceptual", "g_adv_i", "g_adv_p",
                      "d_i_loss", "d_p_loss", "total_g"}


# ------------------------------------------------- gradient direction sanity

def test_g_adv_step_raises_discriminator_score():
    """One generator step on the non-saturating loss should not lower the
    critic's mean sigmoid score when it currently reads the fake as fake."""
    wins = 0
    for seed in range(20):
        torch.manual_seed(seed)
        gen = torch.nn.Conv2d(3, 3, 3, padding=1)
        disc = PatchGAN(DiscConfig(base_channels=8))
        disc.requires_grad_(False)
        z = torch.rand(1, 3, 32, 32) * 2 - 1

        def fake_score():
            return disc(torch.tanh(gen(z)))

        with torch.no_grad():
            if float(torch.sigmoid(fake_score().map).mean()) >= 0.5:
                final = disc.net[-1]
                final.weight.neg_()
                final.bias.neg_()
        with torch.no_grad():
            before = float(torch.sigmoid(fake_score().map).mean())
        assert before < 0.5

        scores = fake_score()
        g_adv, _ = g_adv_losses(scores, scores)
        g_adv.backward()
        with torch.no_grad():
            for p in gen.parameters():
                p -= 0.01 * p.grad
            after = float(torch.sigmoid(fake_score().map).mean())
        if after >= before:
            wins += 1
    assert wins >= 18, f"only {wins}/20 seeds improved the fooled score"
