"""Block-W1 between two independent true samples, for several block sizes.

This is the score a perfect model gets under the evaluation protocol.
"""
import sys

from atlasgan.experiment import reference_floor

for name in sys.argv[1:] or ["sphere", "torus"]:
    for bs in (1024, 2048, 4096):
        print(f"{name:6s} block {bs:5d}: {reference_floor(name, block_size=bs):.4f}", flush=True)
