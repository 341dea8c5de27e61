"""Image ranking for potentially idiomatic nominal compounds.

Pipeline: LLM-based compound type detection and meaning generation,
CLIP-embedding cosine ranking, multi-LLM score ensembling, and contrastive
fine-tuning of a projection head over frozen embeddings.
"""

__version__ = "0.1.0"
