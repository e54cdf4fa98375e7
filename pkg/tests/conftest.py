import torch

# single-threaded reductions keep results bit-stable across runs
torch.set_num_threads(1)
