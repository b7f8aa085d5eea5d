"""Communications-aware adversarial evasion on RF modulation classifiers.

Modules: tensor (autodiff), fec (coding/whitening), phy (modulation and
pulse shaping), channel (AWGN/offset), eavesdropper (AMC classifier),
amn (adversarial mutation network), harness (experiments and CSV export).
"""

__version__ = "0.1.0"
