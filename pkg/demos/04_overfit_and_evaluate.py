"""Train the toy model on the moving-square dataset and evaluate it.

Uses the command line entry points so the whole pipeline runs as a user
would run it. Takes a couple of minutes on one CPU core.

Run: python3 demos/04_overfit_and_evaluate.py [workdir]
"""
import json
import sys
import tempfile
from pathlib import Path

from mcg.cli import run_command

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="mcg-demo-"))
data = work / "data"
print("working in", work)

# 64 clips: every color x direction x speed once, with one question each
run_command(["gen-synthetic", "--out", str(data), "--pairs", "64", "--seed", "1"])
print((data / "manifest.jsonl").read_text().splitlines()[0])

# 500 steps with all three losses
run_command(["pretrain", "--preset", "toy", "--manifest", str(data / "manifest.jsonl"),
             "--vocab", str(data / "vocab.txt"), "--out", str(work / "toy.mcgc"),
             "--history", str(work / "history.jsonl")])
history = [json.loads(line) for line in (work / "history.jsonl").read_text().splitlines()]
for row in history[::100] + history[-1:]:
    print(f"step {row['step']:3d}  icl {row['l_icl']:.3f}  vtm {row['l_vtm']:.3f}  lm {row['l_lm']:.3f}")

# answers on the training set
run_command(["evaluate", "--manifest", str(data / "manifest.jsonl"), "--checkpoint", str(work / "toy.mcgc"),
             "--out", str(work / "report.json")])

# one question at a time; each clip was trained with a single question, so only
# that one is memorized and the other two may well be wrong on a 64-pair overfit
first = json.loads((data / "manifest.jsonl").read_text().splitlines()[0])
clip = data / first["video"]
for question in ("what color is the square", "which way does it move", "how fast does it move"):
    tag = "trained" if question == first["question"] else "unseen"
    print(f"[{tag}] {question} ->", end=" ", flush=True)
    run_command(["answer", "--video", str(clip), "--question", question, "--checkpoint", str(work / "toy.mcgc")])

# multiple choice by matching score; the matching head was trained on captions,
# so the candidates are captions that differ from the true one in a single word
truth = first["caption"]
words = truth.split()
swaps = {1: ["red", "green", "blue", "yellow"], 4: ["left", "right", "up", "down"]}
candidates = [truth] + [" ".join(words[:i] + [w] + words[i + 1:]) for i, opts in swaps.items() for w in opts if w != words[i]]
run_command(["answer", "--video", str(clip), "--question", "", "--checkpoint", str(work / "toy.mcgc"),
             "--choices", *candidates])
