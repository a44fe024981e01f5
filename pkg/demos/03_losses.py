"""The training losses on small hand-made inputs.

Run: python3 demos/03_losses.py
"""
import math

import torch
from torch import nn

from mcg.contrastive import icl_loss, memory_response, tcl_loss
from mcg.fusion import lm_loss, vtm_loss

torch.set_default_dtype(torch.float64)

# instance-level: a perfect diagonal still costs something at tau = 1
sim = torch.eye(2)
print(f"ICL(eye, tau=1) = {icl_loss(sim, 1.0).item():.5f}  (log(1 + e^-1) = {math.log(1 + math.exp(-1)):.5f})")
print(f"ICL(eye, tau=0.07) = {icl_loss(sim, 0.07).item():.2e}")
print(f"ICL of a single pair = {icl_loss(torch.tensor([[0.3]]), 0.07).item()}")

# a memory read-out is a convex mix of the memory rows
memory = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
response, rho = memory_response(memory, torch.tensor([[2.0, 0.5]]))
print("memory weights", rho.numpy().round(4), "response", response.numpy().round(4))

# token-level: two pairs, three tokens each, random state maps
torch.manual_seed(0)
video, text = torch.randn(2, 3, 4), torch.randn(2, 3, 4)
sx, sy = nn.Linear(4, 3, bias=False), nn.Linear(4, 3, bias=False)
mask = torch.ones(2, 3, dtype=torch.bool)
print(f"TCL = {tcl_loss(video, text, mask, sx, sy, 0.5).item():.5f}")
mask[1, 2] = False  # padded text tokens drop out of the average
print(f"TCL with one padded token = {tcl_loss(video, text, mask, sx, sy, 0.5).item():.5f}")

# matching and generation at chance
half = torch.full((3, 2), 0.5)
print(f"VTM at chance = {vtm_loss(half, half).item():.6f}  (ln 2 = {math.log(2):.6f})")
logits = torch.zeros(1, 4, 120)
print(f"LM on uniform logits = {lm_loss(logits, torch.tensor([[5, 6, 7, 8]]), torch.ones(1, 4, dtype=torch.bool)).item():.6f}"
      f"  (ln 120 = {math.log(120):.6f})")
