"""AWGN links and the eavesdropper's integer sample offset.

Receiver and eavesdropper noise always come from distinct PRNG streams;
`split_streams` hands out child generators so the independence is
structural rather than by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

MAX_OFFSET = 8


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelDraw:
    es_n0_db: float
    noise_seed: int
    offset: int

    def __post_init__(self):
        if not 0 <= self.offset <= MAX_OFFSET:
            raise ChannelError(f"offset {self.offset} outside [0, {MAX_OFFSET}]")


def split_streams(seed, count):
    """Independent child generators (receiver path, eavesdropper path, ...)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def noise_sigma2(es_n0_db):
    """Complex per-sample noise variance for frames normalized to unit
    energy per symbol period (Es = 1): sigma^2 = Es / 10^(EsN0/10).

    The matched filter has unit energy, so the decision-instant SNR is
    exactly Es/N0 under this convention.
    """
    if np.isinf(es_n0_db):
        return 0.0
    return 10.0 ** (-es_n0_db / 10.0)


def awgn_noise(shape, es_n0_db, rng):
    """I/Q noise slab of the given real (2, ...) shape."""
    s2 = noise_sigma2(es_n0_db)
    if s2 == 0.0:
        return np.zeros(shape)
    return rng.normal(scale=np.sqrt(s2 / 2.0), size=shape)


def awgn(frame, es_n0_db, rng):
    """AWGN over an IqFrame; es_n0_db = inf disables the noise."""
    from .phy import IqFrame

    return IqFrame(frame.iq + awgn_noise(frame.iq.shape, es_n0_db, rng), frame.samples_per_symbol)


def awgn_t(x, es_n0_db_per_frame, rng):
    """Tape version over a (B, 2, L) tensor with one SNR draw per frame."""
    snrs = np.broadcast_to(np.asarray(es_n0_db_per_frame, dtype=float), (x.shape[0],))
    noise = np.empty(x.shape)
    for i, snr in enumerate(snrs):
        noise[i] = awgn_noise(x.shape[1:], snr, rng)
    return T.add(x, T.Tensor(noise))


def offset_window(frame, window_len, offset):
    """Contiguous slice [offset, offset + window_len) of an IqFrame's samples."""
    from .phy import IqFrame

    L = frame.iq.shape[1]
    if offset < 0 or offset + window_len > L:
        raise ChannelError(f"window [{offset}, {offset + window_len}) outside frame of {L}")
    return frame.iq[:, offset : offset + window_len]


def offset_window_t(x, window_len, offsets):
    """Tape version: per-frame offsets into a (B, 2, L) tensor."""
    return T.batch_window(x, offsets, window_len, axis=2)
