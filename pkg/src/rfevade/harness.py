"""Experiment orchestration: SNR and gamma sweeps, theory reference
curves, Welch PSD, time-domain exports and CSV emission.

CSV files carry one header line and a fixed column order; identical
config plus seeds reproduces identical bytes. The config file is INI
style (key = value under [experiment] / [training] / [eval] sections)
and every key can be overridden by a CLI flag.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import signal as sp_signal
from scipy import special as sp_special

from . import phy
from . import tensor as T
from .amn import FrameSpec, make_frames, receiver_ber
from .channel import awgn_noise, split_streams
from .fec import CODECS, _DECODE

Z95 = 1.959963984540054


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scheme: str = "qpsk"
    codec: str = "hamming_7_4"
    gamma: float = 0.1
    alpha_frac: float = 0.7
    beta_frac: float = 0.3
    seed_classifier: int = 101
    seed_amn: int = 202
    seed_eval: int = 303
    snr_grid: list = field(default_factory=lambda: [float(v) for v in range(0, 15)])
    frames_per_point: int = 200
    window: int = 256
    sps: int = 8
    rolloff: float = 0.35
    filter_span: int = 8
    amn_mode: str = "aae"
    amn_steps: int = 3000
    amn_batch: int = 32
    amn_lr: float = 1e-3
    classifier_epochs: int = 25
    classifier_batch: int = 128
    classifier_lr: float = 1e-3
    count_per_class: int = 10000

    def __post_init__(self):
        if abs(self.alpha_frac + self.beta_frac - 1.0) > 1e-12:
            raise ConfigError("alpha_frac + beta_frac must equal 1")
        if self.scheme not in phy.SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.codec not in CODECS:
            raise ConfigError(f"unknown codec {self.codec!r}")
        grid = list(self.snr_grid)
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("snr_grid must be strictly increasing")


_SECTIONS = {"experiment", "training", "eval"}
_FLOAT_KEYS = {"gamma", "alpha_frac", "beta_frac", "rolloff", "amn_lr", "classifier_lr"}
_LIST_KEYS = {"snr_grid"}
_STR_KEYS = {"scheme", "codec", "amn_mode"}


def parse_config_file(path):
    """INI-style key = value file -> dict of config overrides."""
    import configparser

    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    out = {}
    valid = {f.name for f in fields(ExperimentConfig)}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in valid:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = _parse_value(key, raw)
    return out


def _parse_value(key, raw):
    if key in _STR_KEYS:
        return raw.strip()
    if key in _LIST_KEYS:
        return [float(v) for v in raw.replace(",", " ").split()]
    if key in _FLOAT_KEYS:
        return float(raw)
    return int(raw)


def make_config(file_path=None, **overrides):
    values = parse_config_file(file_path) if file_path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


# ---------------------------------------------------------------------------
# theory reference curves


def _q(x):
    return 0.5 * sp_special.erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def uncoded_ber(scheme, es_n0_db):
    """Closed-form / Gray-approximation channel BER at the given Es/N0."""
    if np.isinf(es_n0_db):
        return 0.0
    g = 10.0 ** (es_n0_db / 10.0)
    if scheme == "bpsk":
        return float(_q(np.sqrt(2.0 * g)))
    if scheme == "qpsk":
        return float(_q(np.sqrt(g)))
    if scheme == "psk8":
        return float(2.0 / 3.0 * _q(np.sqrt(2.0 * g) * np.sin(np.pi / 8.0)))
    if scheme in ("qam16", "qam64"):
        m = 16 if scheme == "qam16" else 64
        k = np.log2(m)
        return float(4.0 / k * (1.0 - 1.0 / np.sqrt(m)) * _q(np.sqrt(3.0 * g / (m - 1.0))))
    raise ConfigError(f"no theory curve for scheme {scheme!r}")


_PATTERN_CACHE = {}


def _decode_patterns(codec_name):
    """All 2^n error patterns -> (pattern weight, post-decode info errors)."""
    if codec_name not in _PATTERN_CACHE:
        spec = CODECS[codec_name]
        n, k = spec.n, spec.k
        H, table = _DECODE[codec_name]
        patterns = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
        patterns = patterns.astype(np.uint8)
        weights = patterns.sum(axis=1)
        r = n - k
        syn = ((patterns @ H.T) % 2) @ (1 << np.arange(r))
        fixed = patterns.copy()
        flip = table[syn]
        rows = np.nonzero(flip >= 0)[0]
        fixed[rows, flip[rows]] ^= 1
        info_errors = fixed[:, :k].sum(axis=1)
        _PATTERN_CACHE[codec_name] = (weights, info_errors)
    return _PATTERN_CACHE[codec_name]


def coded_ber_from_crossover(codec_name, p):
    """Exact post-decode info BER of the hard-decision BSC(p) channel."""
    spec = CODECS[codec_name]
    if p <= 0.0:
        return 0.0
    weights, info_errors = _decode_patterns(codec_name)
    probs = p**weights * (1.0 - p) ** (spec.n - weights)
    return float((probs * info_errors).sum() / spec.k)


def theory_ber(scheme, codec_name, es_n0_db):
    """Reference BER: Q-function curves, plus exhaustive-enumeration
    post-decode rates for the block codes."""
    p = uncoded_ber(scheme, es_n0_db)
    if codec_name == "none":
        return p
    if codec_name not in CODECS:
        raise ConfigError(f"unknown codec {codec_name!r}")
    return coded_ber_from_crossover(codec_name, p)


def wilson_halfwidth(p, n, z=Z95):
    """Half-width of the Wilson score interval for a proportion."""
    if n == 0:
        return 1.0
    denom = 1.0 + z * z / n
    return z * np.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRecord:
    x_value: float
    ber_perturbed: float
    ber_unperturbed: float
    ber_theory_coded: float
    ber_theory_uncoded: float
    accuracy_perturbed: float
    accuracy_baseline: float
    ci_ber_perturbed: float
    ci_ber_unperturbed: float
    ci_accuracy_perturbed: float
    ci_accuracy_baseline: float


CSV_COLUMNS = [f.name for f in fields(SweepRecord)]


def records_to_csv(records):
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for r in records:
        buf.write(",".join(f"{getattr(r, c):.10g}" for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def _eval_point(spec, amn_model, classifier, es_n0_db, frames_per_point, rngs, window):
    """Monte Carlo BER (perturbed / unperturbed) and accuracy at one SNR."""
    bits_rng, rx_rng, eav_rng = rngs
    label = classifier.class_order.index(spec.scheme)
    info, frames = make_frames(spec, bits_rng, frames_per_point)
    x_star = amn_model.forward(T.Tensor(frames), spec.sps).data

    snrs = np.full(frames_per_point, es_n0_db)
    ber_p = receiver_ber(spec, info, x_star, snrs, rx_rng)
    ber_u = receiver_ber(spec, info, frames, snrs, rx_rng)

    offsets = eav_rng.integers(0, 9, size=frames_per_point)
    idx = offsets[:, None] + np.arange(window)[None, :]
    acc = {}
    for key, sig in (("perturbed", x_star), ("baseline", frames)):
        noisy = sig + np.stack(
            [awgn_noise((2, spec.n_samples), es_n0_db, eav_rng) for _ in range(frames_per_point)]
        )
        wins = np.take_along_axis(noisy, idx[:, None, :], axis=2)
        probs = classifier.forward(T.Tensor(wins)).data
        acc[key] = float((probs.argmax(axis=1) == label).mean())
    return ber_p, ber_u, acc["perturbed"], acc["baseline"]


def sweep_snr(config, amn_model, classifier):
    """Fig.-3 style sweep; eval PRNG streams are split per grid point so
    points are order-independent and reproducible."""
    spec = FrameSpec.build(config.scheme, config.codec, config.window, config.sps)
    nbits = spec.info_bits * config.frames_per_point
    records = []
    point_seeds = np.random.SeedSequence(config.seed_eval).spawn(len(config.snr_grid))
    for snr, seed in zip(config.snr_grid, point_seeds):
        rngs = [np.random.default_rng(s) for s in seed.spawn(3)]
        ber_p, ber_u, acc_p, acc_b = _eval_point(
            spec, amn_model, classifier, snr, config.frames_per_point, rngs, config.window
        )
        records.append(
            SweepRecord(
                x_value=snr,
                ber_perturbed=ber_p,
                ber_unperturbed=ber_u,
                ber_theory_coded=theory_ber(config.scheme, config.codec, snr),
                ber_theory_uncoded=uncoded_ber(config.scheme, snr),
                accuracy_perturbed=acc_p,
                accuracy_baseline=acc_b,
                ci_ber_perturbed=wilson_halfwidth(ber_p, nbits),
                ci_ber_unperturbed=wilson_halfwidth(ber_u, nbits),
                ci_accuracy_perturbed=wilson_halfwidth(acc_p, config.frames_per_point),
                ci_accuracy_baseline=wilson_halfwidth(acc_b, config.frames_per_point),
            )
        )
    return records


def sweep_gamma(config, models_by_gamma, classifier, fixed_snr_db=12.0):
    """Fig.-4 style sweep: one trained AMN per gamma, all evaluated at a
    fixed SNR (paper setting: 16-QAM at 12 dB)."""
    records = []
    for gamma in sorted(models_by_gamma):
        cfg = replace(config, gamma=float(gamma), snr_grid=[fixed_snr_db])
        rec = sweep_snr(cfg, models_by_gamma[gamma], classifier)[0]
        rec.x_value = float(gamma)
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# spectral tools


def _to_complex(x):
    if isinstance(x, phy.IqFrame):
        return x.samples
    arr = np.asarray(x)
    if arr.ndim == 2 and arr.shape[0] == 2 and not np.iscomplexobj(arr):
        return arr[0] + 1j * arr[1]
    return arr


def welch_psd(frames, segment=256, overlap=0.5):
    """Linear-power Welch estimate (Hann window, 50% overlap default),
    averaged over frames; returns (freqs in cycles/sample, power density)."""
    if not isinstance(frames, (list, tuple)):
        frames = [frames]
    acc = None
    for fr in frames:
        z = _to_complex(fr)
        if z.size < segment:
            raise ConfigError(f"input of {z.size} samples shorter than one {segment} segment")
        freqs, pxx = sp_signal.welch(
            z,
            fs=1.0,
            window="hann",
            nperseg=segment,
            noverlap=int(segment * overlap),
            return_onesided=False,
            detrend=False,
        )
        acc = pxx if acc is None else acc + pxx
    order = np.argsort(freqs)
    return freqs[order], acc[order] / len(frames)


def psd(frames, segment=256, overlap=0.5):
    """Welch PSD in dB, normalized to a 0 dB peak."""
    freqs, pxx = welch_psd(frames, segment, overlap)
    return freqs, 10.0 * np.log10(np.maximum(pxx, 1e-300) / pxx.max())


def occupied_band_fraction(frames, rolloff, sps, segment=256):
    """Fraction of Welch power outside |f| <= (1 + rolloff) / (2 sps),
    the occupied bandwidth of the shaped signal."""
    freqs, pxx = welch_psd(frames, segment)
    edge = (1.0 + rolloff) / (2.0 * sps)
    out = np.abs(freqs) > edge
    return float(pxx[out].sum() / pxx.sum())


def export_time_trace(x, x_star_aae, x_star_patn, channel_index=1):
    """Sample-indexed CSV of original and both perturbed variants for one
    I/Q channel (imaginary channel by default, as in the figure)."""
    cols = []
    for fr in (x, x_star_aae, x_star_patn):
        iq = fr.iq if isinstance(fr, phy.IqFrame) else np.asarray(fr)
        cols.append(iq[channel_index])
    if not (cols[0].size == cols[1].size == cols[2].size):
        raise ConfigError("time-trace inputs must be aligned frames of equal length")
    buf = io.StringIO()
    buf.write("sample,original,aae,p_atn\n")
    for i in range(cols[0].size):
        buf.write(f"{i},{cols[0][i]:.10g},{cols[1][i]:.10g},{cols[2][i]:.10g}\n")
    return buf.getvalue()


def training_trace_csv(rows):
    """Training-trace CSV: one row per step from LossBreakdown records."""
    buf = io.StringIO()
    buf.write("step,l_adv,l_comm,l_pwr,l_total,p_s,b_r,ep_es\n")
    for step, p in rows:
        buf.write(
            f"{step},{p.l_adv:.10g},{p.l_comm:.10g},{p.l_pwr:.10g},"
            f"{p.l_total:.10g},{p.p_s:.10g},{p.b_r:.10g},{p.spr_inverse:.10g}\n"
        )
    return buf.getvalue()
