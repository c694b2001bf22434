"""BERT-style pipeline for Arabic verse analysis, built from scratch.

Modules: corpus (records, taxonomies, splits, synthesis), preprocess (text
normalization), tokenizer (WordPiece), autograd (tensors + tape + AdamW),
model (encoder + heads), training (MLM pretraining, fine-tuning,
checkpoints), evaluation (classification reports), cli (pipeline commands).
"""

__version__ = "0.1.0"
