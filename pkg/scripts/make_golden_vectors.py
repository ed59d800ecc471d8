#!/usr/bin/env python3
"""Regenerate the committed wire-format vectors under tests/golden/.

Uses fixed key/nonce/payload values so the emitted bytes are stable; the
test suite decodes these files and checks both the exact bytes and the
decrypted contents. Run from the repository root:

    python3 scripts/make_golden_vectors.py
"""

from pathlib import Path

import numpy as np

from fedsplit.federation import (
    GradientFrame,
    MsgType,
    agent_sender_id,
    encode_frame,
    seal,
    seal_payload,
)
from fedsplit.nn import LayerDelta

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"

KEY = bytes.fromhex(
    "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f")
DELTA_NONCE = bytes.fromhex("00112233445566778899aabb")
DONE_NONCE = bytes.fromhex("ffeeddccbbaa998877665544")

DELTA_WEIGHTS = np.array([[0.5, -0.25, 0.125],
                          [-1.0, 2.0, -4.0]])
DELTA_BIAS = np.array([0.0625, -0.03125, 8.0])


def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    sender_a = agent_sender_id("A")
    sender_b = agent_sender_id("B")

    delta = LayerDelta("2", DELTA_WEIGHTS, DELTA_BIAS)
    delta_frame = seal(delta, KEY, epoch=7, sender_id=sender_a, nonce=DELTA_NONCE)
    delta_frame.seq = 3  # as stamped by the forwarder
    (GOLDEN / "frame_delta.bin").write_bytes(encode_frame(delta_frame))

    done_frame = seal_payload(b"", KEY, 7, sender_b, MsgType.EPOCH_DONE,
                              nonce=DONE_NONCE)
    done_frame.seq = 4
    (GOLDEN / "frame_epoch_done.bin").write_bytes(encode_frame(done_frame))

    hello = GradientFrame(MsgType.HELLO, sender_b, 0)
    (GOLDEN / "frame_hello.bin").write_bytes(encode_frame(hello))

    (GOLDEN / "key.hex").write_text(KEY.hex() + "\n")
    for name in ("frame_delta.bin", "frame_epoch_done.bin", "frame_hello.bin"):
        print(f"wrote {GOLDEN / name} ({(GOLDEN / name).stat().st_size} bytes)")


if __name__ == "__main__":
    main()
