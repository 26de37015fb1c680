"""Point-cloud diffusion policy at desk scale.

Pipeline: RGB-D back-projection into world-frame point clouds, a conditioned
encoder-decoder diffusion transformer over action chunks, a full-parameter
pretrain / LoRA-finetune recipe, and a deterministic synthetic manipulation
world for demonstration generation and evaluation.
"""

__version__ = "0.1.0"
