"""Desk-scale low-resource text-to-speech pipeline.

Corpus re-segmentation, language-tagged letter front end, attention
seq2seq acoustic model, WaveNet vocoder with a discretized
mixture-of-logistics output, and an average-model pretrain/fine-tune
transfer workflow.
"""

__version__ = "0.1.0"
