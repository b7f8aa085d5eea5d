"""Adversarial mutation network, its three-part loss and training loop.

Two output modes share one body (three width-7 convolutions over the
2-channel IQ sequence, tanh between layers):

  aae:   x* = g(theta, x)         the network emits the whole signal
  p_atn: x* = x + g(theta, x)     the network emits a perturbation

Either way the result is power-normalized before transmission. Training
balances three losses: adversarial (source-class confidence at the
eavesdropper), communication (post-FEC BER at the receiver times the
noiseless symbol EVM, with the BER entering as a detached magnitude),
and power (perturbation-to-signal energy ratio).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import phy
from .channel import awgn_noise, split_streams
from .fec import BitBlock, CODECS, fec_decode, fec_encode, whiten

EPS_CLAMP = 1e-7
SNR_TRAIN_RANGE = (5.0, 15.0)


class AmnError(ValueError):
    pass


class AmnDiverged(RuntimeError):
    def __init__(self, step):
        super().__init__(f"total loss became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class LossWeights:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise AmnError("loss weights must be non-negative")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-12:
            raise AmnError(f"loss weights must sum to 1, got {self.alpha + self.beta + self.gamma}")

    @classmethod
    def from_gamma(cls, gamma, alpha_frac=0.7, beta_frac=0.3):
        """Harness default split: alpha and beta share 1 - gamma 70/30."""
        if abs(alpha_frac + beta_frac - 1.0) > 1e-12:
            raise AmnError("alpha_frac + beta_frac must be 1")
        return cls(alpha_frac * (1.0 - gamma), beta_frac * (1.0 - gamma), gamma)


@dataclass
class LossBreakdown:
    l_adv: float
    l_comm: float
    l_pwr: float
    l_total: float
    p_s: float
    b_r: float
    evm_value: float
    spr_inverse: float


@dataclass(frozen=True)
class FrameSpec:
    """Sizing of one transmitted frame.

    Smallest codeword multiple whose coded length fills whole symbols
    and whose sample count covers the eavesdropper window plus the
    maximum time offset.
    """

    scheme: str
    codec_name: str
    info_bits: int
    coded_bits: int
    symbol_count: int
    n_samples: int
    sps: int

    @classmethod
    def build(cls, scheme, codec_name, window=256, sps=8, max_offset=8):
        codec = CODECS[codec_name]
        bps = phy.CONSTELLATIONS[scheme].bits_per_symbol
        m = 1
        while True:
            coded = m * codec.n
            if coded % bps == 0 and (coded // bps) * sps >= window + max_offset:
                break
            m += 1
        return cls(scheme, codec_name, m * codec.k, coded, coded // bps, (coded // bps) * sps, sps)


@dataclass
class AmnHyper:
    steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-3
    window: int = 256


class AmnModel:
    """Three-conv IQ-to-IQ network; mode fixed at construction."""

    CHANNELS = (2, 32, 32, 2)
    KERNEL = 7

    def __init__(self, mode="aae", rng=None):
        if mode not in ("aae", "p_atn"):
            raise AmnError(f"unknown AMN mode {mode!r}")
        self._mode = mode
        if rng is None:
            rng = np.random.default_rng(0)
        self.params = {}
        ch = self.CHANNELS
        for i in range(3):
            fan_in = ch[i] * self.KERNEL
            self.params[f"c{i}.w"] = T.uniform_init(
                rng, (ch[i + 1], ch[i], self.KERNEL), fan_in, f"c{i}.w"
            )
            self.params[f"c{i}.b"] = T.uniform_init(rng, (ch[i + 1],), fan_in, f"c{i}.b")

    @property
    def mode(self):
        return self._mode

    def parameters(self):
        return list(self.params.values())

    def body(self, x):
        h = x
        for i in range(3):
            h = T.conv1d_same(h, self.params[f"c{i}.w"], self.params[f"c{i}.b"])
            if i < 2:
                h = T.tanh(h)
        return h

    def forward_raw(self, x, sps):
        """Pre-normalization output (used by the power comparisons)."""
        g = self.body(x)
        return g if self._mode == "aae" else T.add(x, g)

    def forward(self, x, sps):
        """Mode rule then per-frame power normalization; x is (B, 2, N)."""
        return phy.normalize_power_t(self.forward_raw(x, sps), sps)

    def param_hash(self):
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        return h.hexdigest()

    def save(self, path, manifest_path=None, frame_spec=None, seed=None):
        T.save_checkpoint(path, self.params)
        if manifest_path:
            meta = {"mode": self._mode, "seed": seed}
            if frame_spec is not None:
                meta["frame_spec"] = frame_spec.__dict__
            with open(manifest_path, "w") as f:
                json.dump(meta, f, indent=2)

    @classmethod
    def load(cls, path, mode="aae"):
        model = cls(mode=mode)
        for name, t in T.load_checkpoint(path).items():
            if name not in model.params or model.params[name].shape != t.shape:
                raise AmnError(f"checkpoint tensor {name} does not fit this model")
            model.params[name].data = t.data
        return model


def amn_forward(model, frame):
    """Single-frame convenience wrapper returning an IqFrame."""
    x = T.Tensor(frame.iq[None])
    out = model.forward(x, frame.samples_per_symbol)
    return phy.IqFrame(out.data[0], frame.samples_per_symbol)


# ---------------------------------------------------------------------------
# losses


def loss_adversarial(p_s, target_p=None):
    """Untargeted: -log(1 - p_s); targeted: -log(p_t). Clamped at 1e-7."""
    if target_p is not None:
        pt = target_p if isinstance(target_p, T.Tensor) else T.Tensor(np.asarray(target_p, float))
        return T.mean(T.mul_scalar(T.log(T.clip(pt, EPS_CLAMP, 1.0)), -1.0))
    ps = p_s if isinstance(p_s, T.Tensor) else T.Tensor(np.asarray(p_s, dtype=float))
    miss = T.sub(T.Tensor(np.ones(ps.shape)), T.clip(ps, 0.0, 1.0 - EPS_CLAMP))
    return T.mean(T.mul_scalar(T.log(miss), -1.0))


def loss_communication(b_r, s_tx, s_txp):
    """Post-FEC BER (detached magnitude) times symbol EVM (direction)."""
    return T.mul_scalar(phy.evm_t(s_tx, s_txp), float(b_r))


def loss_power(x, x_star):
    """E_p / E_s on the linear scale; differentiable w.r.t. x_star."""
    x_np = x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=float)
    e_s = float((x_np**2).sum())
    if e_s <= 0:
        raise AmnError("power loss needs a non-zero reference signal")
    e_p = T.tsum(T.square(T.sub(x_star, T.Tensor(x_np))))
    return T.mul_scalar(e_p, 1.0 / e_s)


def loss_total(l_adv, l_comm, l_pwr, w):
    return T.add(
        T.add(T.mul_scalar(l_adv, w.alpha), T.mul_scalar(l_comm, w.beta)),
        T.mul_scalar(l_pwr, w.gamma),
    )


# ---------------------------------------------------------------------------
# frame generation and the training loop


def make_frames(spec, rng, count):
    """Random info bits through FEC + whitening + modulation + shaping.

    Returns (info_bits (count, K), frames (count, 2, N)). With codec
    "none" the whitener is bypassed so the chain matches the prior-work
    configuration exactly.
    """
    codec = CODECS[spec.codec_name]
    c = phy.CONSTELLATIONS[spec.scheme]
    f = phy.make_rrc_filter(sps=spec.sps)
    info = rng.integers(0, 2, (count, spec.info_bits)).astype(np.uint8)
    frames = np.empty((count, 2, spec.n_samples))
    for i in range(count):
        tx = BitBlock(info[i])
        if codec.name != "none":
            tx = whiten(fec_encode(tx, codec))
        frame = phy.normalize_power(phy.pulse_shape(phy.map_symbols(tx, c), f, spec.sps))
        frames[i] = frame.iq
    return info, frames


def receiver_ber_frames(spec, info, x_star_np, snrs, rng):
    """Per-frame post-FEC BER through the noisy receive chain.

    Matched filter -> demod -> dewhiten -> decode; returns a (B,) array.
    """
    codec = CODECS[spec.codec_name]
    c = phy.CONSTELLATIONS[spec.scheme]
    f = phy.make_rrc_filter(sps=spec.sps)
    out = np.empty(x_star_np.shape[0])
    for i in range(x_star_np.shape[0]):
        noisy = phy.IqFrame(x_star_np[i] + awgn_noise((2, spec.n_samples), snrs[i], rng), spec.sps)
        rx = phy.hard_demod(phy.matched_filter_downsample(noisy, f), c)
        if codec.name != "none":
            rx = whiten(rx)
        decoded, _ = fec_decode(rx, codec)
        out[i] = (decoded.bits != info[i]).mean()
    return out


def receiver_ber(spec, info, x_star_np, snrs, rng):
    """Batch-mean post-FEC BER (see receiver_ber_frames)."""
    return float(receiver_ber_frames(spec, info, x_star_np, snrs, rng).mean())


def _decision_symbols(frames, f, sps):
    """(B, 2, N) -> (B, 2, nsym) noiseless matched-filter symbols (numpy)."""
    z = np.fft.ifft(
        np.fft.fft(frames[:, 0] + 1j * frames[:, 1], axis=1)
        * phy._cyclic_kernel_fft(f, frames.shape[2]),
        axis=1,
    )[:, ::sps]
    return np.stack([z.real, z.imag], axis=1)


def train_step(model, spec, classifier, w, rngs, batch_size, window, adam_state):
    """One Fig.-2 style update; returns the logged LossBreakdown."""
    bits_rng, rx_rng, eav_rng = rngs
    f = phy.make_rrc_filter(sps=spec.sps)
    label = classifier.class_order.index(spec.scheme)

    info, frames = make_frames(spec, bits_rng, batch_size)
    x = T.Tensor(frames)
    x_star = model.forward(x, spec.sps)

    # receiver path (detached; BER is the loss magnitude only)
    snr_r = rx_rng.uniform(*SNR_TRAIN_RANGE, size=batch_size)
    b_r = receiver_ber(spec, info, x_star.data, snr_r, rx_rng)

    # eavesdropper path (on tape, classifier frozen)
    snr_e = eav_rng.uniform(*SNR_TRAIN_RANGE, size=batch_size)
    offsets = eav_rng.integers(0, 9, size=batch_size)
    noisy = T.add(x_star, T.Tensor(np.stack([
        awgn_noise((2, spec.n_samples), s, eav_rng) for s in snr_e
    ])))
    windows = T.batch_window(noisy, offsets, window, axis=2)
    probs = classifier.forward(windows)
    p_s = T.reshape(T.tslice(probs, 1, label, label + 1), (batch_size,))

    # noiseless EVM path
    s_tx = _decision_symbols(frames, f, spec.sps)
    s_txp = phy.matched_filter_downsample_t(x_star, f, spec.sps)

    l_adv = loss_adversarial(p_s)
    l_comm = loss_communication(b_r, s_tx, s_txp)
    l_pwr = loss_power(frames, x_star)
    total = loss_total(l_adv, l_comm, l_pwr, w)

    params = model.parameters()
    T.zero_grads(params)
    T.backward(total)
    T.adam_step(params, adam_state)

    return LossBreakdown(
        l_adv=l_adv.item(),
        l_comm=l_comm.item(),
        l_pwr=l_pwr.item(),
        l_total=total.item(),
        p_s=float(p_s.data.mean()),
        b_r=float(b_r),
        evm_value=float(np.mean(np.linalg.norm(s_txp.data - s_tx, axis=1))),
        spr_inverse=l_pwr.item(),
    )


def train_amn(spec, classifier, w, hyper=None, seed=0, mode="aae", trace=None):
    """Train an AMN against a frozen classifier; deterministic per seed.

    `trace`, when given, is called with (step, LossBreakdown) after every
    update. Raises AmnDiverged if the total loss goes non-finite.
    """
    if hyper is None:
        hyper = AmnHyper()
    init_rng, bits_rng, rx_rng, eav_rng = split_streams(seed, 4)
    model = AmnModel(mode=mode, rng=init_rng)
    state = T.AdamState(learning_rate=hyper.learning_rate)
    for step in range(hyper.steps):
        parts = train_step(
            model, spec, classifier, w,
            (bits_rng, rx_rng, eav_rng),
            hyper.batch_size, hyper.window, state,
        )
        if not np.isfinite(parts.l_total):
            raise AmnDiverged(step)
        if trace is not None:
            trace(step, parts)
    return model
