"""Explanation augmentation: the fixed prompts, the offline stub, and the cache.

Run from the repository root:  python3 demos/02_explanations.py
"""

import os
import tempfile

from secpatch import (ExplainerConfig, Label, PatchSample, explain, explanation_prompt,
                      instruction_text)

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "sock_fasync.diff")
with open(FIXTURE, encoding="utf-8") as fh:
    sample = PatchSample(id="kernel-sock-fasync", diff_text=fh.read(),
                         label=Label.NON_SECURITY)

print("Every patch is summarized with the same question:")
print(" ", explanation_prompt(sample).split("\n")[0])
print("and classified against the same instruction:")
print(" ", instruction_text())
print()

with tempfile.TemporaryDirectory() as tmp:
    cfg = ExplainerConfig(cache_dir=os.path.join(tmp, "cache"))  # deterministic_stub
    text = explain(sample, cfg)
    print("stub explanation:", text)

    # The cache is content-addressed by (prompt, model), so a second call is a pure read.
    again = explain(sample, cfg)
    assert again == text
    entries = os.listdir(cfg.cache_dir)
    print(f"cache now holds {len(entries)} entry: {entries[0][:16]}...")
