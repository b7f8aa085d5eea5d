"""Mutation network: losses, framing rules, training-loop invariants."""

import numpy as np
import pytest

from rfevade import amn, phy, tensor as T
from rfevade.amn import (
    AmnError,
    AmnHyper,
    AmnModel,
    FrameSpec,
    LossWeights,
    amn_forward,
    loss_adversarial,
    loss_communication,
    loss_power,
    loss_total,
    make_frames,
    train_amn,
)
from rfevade.eavesdropper import ClassifierModel

RNG = np.random.default_rng(33)


class TestLossAdversarial:
    def test_zero_source_probability(self):
        assert loss_adversarial(np.array([0.0])).item() == 0.0

    def test_half(self):
        assert loss_adversarial(np.array([0.5])).item() == pytest.approx(0.6931, abs=1e-4)

    def test_certain_source_is_clamped_finite(self):
        v = loss_adversarial(np.array([1.0])).item()
        assert v == pytest.approx(-np.log(1e-7), rel=1e-9)
        assert np.isfinite(v)

    def test_targeted_variant(self):
        assert loss_adversarial(None, target_p=np.array([1.0])).item() == 0.0
        assert loss_adversarial(None, target_p=np.array([0.5])).item() == pytest.approx(
            0.6931, abs=1e-4
        )
        assert np.isfinite(loss_adversarial(None, target_p=np.array([0.0])).item())


class TestLossCommunication:
    def test_zero_ber_zeroes_loss(self):
        s_tx = RNG.standard_normal((2, 2, 8))
        s_txp = T.Tensor(RNG.standard_normal((2, 2, 8)))
        assert loss_communication(0.0, s_tx, s_txp).item() == 0.0

    def test_identical_symbols_zero(self):
        s = RNG.standard_normal((2, 2, 8))
        assert loss_communication(0.7, s, T.Tensor(s.copy())).item() == pytest.approx(0.0, abs=1e-12)

    def test_arithmetic_example(self):
        # one symbol, I-axis displacement of 0.5 -> EVM 0.5; b_r = 0.1
        s_tx = np.zeros((1, 2, 1))
        s_txp = T.Tensor(np.array([[[0.5], [0.0]]]))
        assert loss_communication(0.1, s_tx, s_txp).item() == pytest.approx(0.05, abs=1e-9)


class TestLossPower:
    def test_limits(self):
        x = RNG.standard_normal((1, 2, 64))
        assert loss_power(x, T.Tensor(x.copy())).item() == 0.0
        assert loss_power(x, T.Tensor(2 * x)).item() == pytest.approx(1.0, abs=1e-12)
        assert loss_power(x, T.Tensor(1.1 * x)).item() == pytest.approx(0.01, abs=1e-9)

    def test_zero_reference_rejected(self):
        with pytest.raises(AmnError):
            loss_power(np.zeros((1, 2, 8)), T.Tensor(np.ones((1, 2, 8))))

    def test_gradient_matches_finite_differences(self):
        x = RNG.standard_normal((1, 2, 10))
        xs = T.Tensor(RNG.standard_normal((1, 2, 10)), requires_grad=True)
        loss = loss_power(x, xs)
        T.backward(loss)
        eps = 1e-6
        fd = np.zeros_like(xs.data)
        flat = xs.data.reshape(-1)
        fdf = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_power(x, T.Tensor(xs.data)).item()
            flat[i] = orig - eps
            lo = loss_power(x, T.Tensor(xs.data)).item()
            flat[i] = orig
            fdf[i] = (hi - lo) / (2 * eps)
        rel = np.abs(xs.grad - fd).max() / np.abs(fd).max()
        assert rel < 1e-4


class TestLossWeights:
    def test_must_sum_to_one(self):
        LossWeights(0.5, 0.3, 0.2)
        with pytest.raises(AmnError):
            LossWeights(0.5, 0.5, 0.5)

    def test_from_gamma_default_split(self):
        w = LossWeights.from_gamma(0.1)
        assert (w.alpha, w.beta, w.gamma) == pytest.approx((0.63, 0.27, 0.1))

    def test_loss_total_selectors(self):
        la = T.Tensor(np.array(2.0))
        lc = T.Tensor(np.array(3.0))
        lp = T.Tensor(np.array(5.0))
        assert loss_total(la, lc, lp, LossWeights(1.0, 0.0, 0.0)).item() == 2.0
        assert loss_total(la, lc, lp, LossWeights(0.0, 0.0, 1.0)).item() == 5.0
        w = LossWeights(0.63, 0.27, 0.1)
        assert loss_total(la, lc, lp, w).item() == pytest.approx(0.63 * 2 + 0.27 * 3 + 0.1 * 5)


class TestFrameSpec:
    def test_qpsk_hamming74_minimal_frame(self):
        spec = FrameSpec.build("qpsk", "hamming_7_4", 256, 8)
        assert spec.info_bits == 40
        assert spec.coded_bits == 70
        assert spec.symbol_count == 35
        assert spec.n_samples == 280

    @pytest.mark.parametrize("scheme", phy.SCHEMES)
    @pytest.mark.parametrize("codec", ["none", "hamming_7_4", "hamming_12_8"])
    def test_frame_always_covers_window_plus_offset(self, scheme, codec):
        spec = FrameSpec.build(scheme, codec, 256, 8)
        assert spec.n_samples >= 256 + 8
        assert spec.coded_bits % phy.CONSTELLATIONS[scheme].bits_per_symbol == 0
        # minimality: one k-block fewer no longer covers the window
        k = amn.CODECS[codec].k
        n = amn.CODECS[codec].n
        m = spec.info_bits // k
        bps = phy.CONSTELLATIONS[scheme].bits_per_symbol
        smaller = next(
            (mm for mm in range(m - 1, 0, -1) if (mm * n) % bps == 0), None
        )
        if smaller is not None:
            assert (smaller * n // bps) * 8 < 256 + 8


class TestAmnForward:
    def test_patn_with_zeroed_body_is_identity(self):
        spec = FrameSpec.build("qpsk", "hamming_7_4")
        _, frames = make_frames(spec, np.random.default_rng(1), 1)
        model = AmnModel(mode="p_atn", rng=np.random.default_rng(2))
        for p in model.parameters():
            p.data[...] = 0.0
        out = amn_forward(model, phy.IqFrame(frames[0], 8))
        assert np.allclose(out.iq, frames[0], atol=1e-9)

    def test_aae_output_power_normalized(self):
        spec = FrameSpec.build("qpsk", "hamming_7_4")
        _, frames = make_frames(spec, np.random.default_rng(3), 4)
        model = AmnModel(mode="aae", rng=np.random.default_rng(4))
        out = model.forward(T.Tensor(frames), 8)
        per_symbol = (out.data**2).sum(axis=(1, 2)) / spec.symbol_count
        assert np.allclose(per_symbol, 1.0, atol=1e-9)

    def test_fresh_patn_perturbation_positive_finite(self):
        spec = FrameSpec.build("qpsk", "hamming_7_4")
        _, frames = make_frames(spec, np.random.default_rng(5), 1)
        model = AmnModel(mode="p_atn", rng=np.random.default_rng(6))
        out = model.forward(T.Tensor(frames), 8)
        ep = ((out.data - frames) ** 2).sum()
        assert np.isfinite(ep) and ep > 0

    def test_unknown_mode_rejected(self):
        with pytest.raises(AmnError):
            AmnModel(mode="bogus")


@pytest.fixture(scope="module")
def tiny_setup():
    spec = FrameSpec.build("qpsk", "hamming_7_4")
    clf = ClassifierModel(np.random.default_rng(50)).freeze()
    return spec, clf


class TestTraining:
    def test_composition_invariant_logged(self, tiny_setup):
        spec, clf = tiny_setup
        w = LossWeights.from_gamma(0.1)
        hyper = AmnHyper(steps=3, batch_size=4)
        logged = []
        train_amn(spec, clf, w, hyper, seed=1, trace=lambda s, p: logged.append(p))
        assert len(logged) == 3
        for p in logged:
            assert p.l_total == pytest.approx(
                w.alpha * p.l_adv + w.beta * p.l_comm + w.gamma * p.l_pwr, rel=1e-12
            )
            assert p.l_comm == pytest.approx(p.b_r * p.evm_value, rel=1e-9)
            assert p.spr_inverse == p.l_pwr

    def test_seed_determinism(self, tiny_setup):
        spec, clf = tiny_setup
        w = LossWeights.from_gamma(0.1)
        hyper = AmnHyper(steps=2, batch_size=4)
        m1 = train_amn(spec, clf, w, hyper, seed=9)
        m2 = train_amn(spec, clf, w, hyper, seed=9)
        assert m1.param_hash() == m2.param_hash()
        m3 = train_amn(spec, clf, w, hyper, seed=10)
        assert m3.param_hash() != m1.param_hash()

    def test_classifier_untouched(self, tiny_setup):
        spec, clf = tiny_setup
        before = clf.param_hash()
        train_amn(spec, clf, LossWeights.from_gamma(0.5), AmnHyper(steps=2, batch_size=4), seed=3)
        assert clf.param_hash() == before
        assert all(p.grad is None for p in clf.parameters())

    def test_codec_none_pipeline_composes(self, tiny_setup):
        _, clf = tiny_setup
        spec = FrameSpec.build("qpsk", "none")
        logged = []
        train_amn(
            spec, clf, LossWeights.from_gamma(0.1), AmnHyper(steps=2, batch_size=4),
            seed=4, trace=lambda s, p: logged.append(p),
        )
        assert all(np.isfinite(p.l_total) for p in logged)


def test_checkpoint_round_trip(tmp_path):
    model = AmnModel(mode="p_atn", rng=np.random.default_rng(8))
    path = str(tmp_path / "amn.bin")
    model.save(path, manifest_path=path + ".json", seed=8)
    loaded = AmnModel.load(path, mode="p_atn")
    assert loaded.param_hash() == model.param_hash()
    import json

    with open(path + ".json") as f:
        assert json.load(f)["mode"] == "p_atn"
