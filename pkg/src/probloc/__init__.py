"""Probabilistic indoor localization from WiFi RSSI fingerprints.

Everything runs on a small numpy reverse-mode autodiff engine
(:mod:`probloc.autodiff`). The two model families are the convolutional
mixture-density recurrent network for next-location prediction
(:mod:`probloc.cmdrnn`) and the VAE-based semi-supervised recognizer
(:mod:`probloc.vae`).
"""

__version__ = "0.1.0"
