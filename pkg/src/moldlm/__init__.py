"""moldlm: a desk-scale multimodal molecular masked-diffusion language model.

Subpackages and modules:
  numerics  — tensor autodiff, layers, optimizer, checkpoints
  selfies   — constrained molecular string dialect codec and vocabulary
  molgraph  — molecular graphs, fingerprints, toy property/reaction oracles
  encoder   — hybrid graph encoder (message passing + graph-token transformer)
  aligner   — learnable-query cross-attention projector
  dlm       — masked-diffusion transformer backbone and losses
  molpo     — structure preference optimization rewards and loss
  sampler   — iterative denoising samplers with low-confidence remasking
  pipeline  — dataset generation, staged training, metrics, ablations, CLI
"""

__version__ = "0.1.0"
