"""Coarse-to-fine training of audio spectrogram transformers at desk scale.

Submodules: ``dsp`` (log-mel front end), ``compress`` (temporal compression),
``tokenizer`` (patches and embeddings), ``model`` (NumPy encoder), ``adapt``
(cross-phase weight migration), ``flops`` (cost model), ``train`` (phase
scheduler), ``data`` (synthetic corpora and WAV manifests), ``cli``.
"""

__version__ = "0.1.0"
