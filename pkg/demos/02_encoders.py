"""Video and text encoders of the toy model, and what their outputs look like.

Run: python3 demos/02_encoders.py
"""
import torch

from mcg.config import toy_config
from mcg.text import pad_batch, toy_vocabulary
from mcg.training import build_model

torch.manual_seed(0)
cfg = toy_config()
model = build_model(cfg, toy_vocabulary())
print(f"{sum(p.numel() for p in model.parameters()):,} parameters")
for group, params in model.parameter_groups().items():
    print(f"  {group:12s} {sum(p.numel() for _, p in params):8,d}")

# 2 clips of 4 frames at 32x32: 16 patches per frame plus one [CLS]
frames = torch.randn(2, cfg.frames, cfg.resolution, cfg.resolution, 3)
video = model.encode_video(frames)
print("video tokens:", tuple(video.shape))

# the text side: word pieces between [CLS] and [SEP], padded to the batch
texts = ["a red square moves left slow", "what color is the square"]
tokens = [model.tokenize(t) for t in texts]
for t, tok in zip(texts, tokens):
    print(f"{t!r} -> {[model.vocab.tokens[i] for i in tok.ids]}")
ids, mask = pad_batch(tokens, model.vocab.pad_id)
text = model.encode_text(ids, mask)
print("text tokens:", tuple(text.shape))

# the [CLS] rows feed the instance-level contrastive head
sim = model.contrastive.similarity(video[:, 0], text[:, 0])
print("cosine similarity between clips and texts:\n", sim.detach().numpy().round(3))

# fusion: text rows cross-attend to the video, [FUS] summarizes the pair
fused, fmask = model.fuse(text, mask, video)
print("fused:", tuple(fused.shape), "match probability:", model.vtm_head(fused[:, 0]).softmax(-1)[:, 0].detach().numpy())
