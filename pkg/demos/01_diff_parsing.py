"""Walk through unified diff parsing: hunks, line tags, and round-tripping.

Run from the repository root:  python3 demos/01_diff_parsing.py
"""

import os

from secpatch import LineTag, MalformedDiff, parse_unified_diff, serialize_diff

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "sock_fasync.diff")

with open(FIXTURE, encoding="utf-8") as fh:
    kernel_patch = fh.read()

parsed = parse_unified_diff(kernel_patch)
print(f"The kernel patch splits into {len(parsed.hunks)} hunks "
      f"({parsed.added_count} added, {parsed.removed_count} removed lines).")
for i, hunk in enumerate(parsed.hunks):
    added = [text.strip() for tag, text in hunk.lines if tag is LineTag.ADDED]
    print(f"  hunk {i}: old lines {hunk.old_start}..{hunk.old_start + hunk.old_count - 1}, "
          f"adds {added}")

# Serialization preserves the parsed structure exactly.
assert parse_unified_diff(serialize_diff(parsed)) == parsed
print("parse -> serialize -> parse is a fixed point.")

# Headers that contradict their bodies are rejected, not repaired.
try:
    parse_unified_diff("@@ -1,0 +1,2 @@\n+only one line\n")
except MalformedDiff as exc:
    print(f"contradictory hunk rejected: {exc}")
