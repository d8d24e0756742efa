"""serann: speech emotion annotation toolkit.

Pipeline stages: audio feature extraction (dsp), discrete speech codes via a
vector-quantized autoencoder (vqvae), prompt-based emotion labeling through a
pluggable chat-completion backend (annotate), a CNN-BLSTM-attention emotion
classifier (classifier), and manifest/split/metric plumbing (corpus). The
``serann`` command line ties the stages together with file-based handoffs.
"""

__version__ = "0.1.0"
