"""Writes golden.qkdp with nothing but the standard library.

Layout: magic, five little-endian u32/u8 header fields, u32-prefixed compact
JSON metadata, then the f32 payload in ascending stage-bit order, layer-major,
head-major, row-major.
"""
import json
import struct
from pathlib import Path

LAYERS, HEADS, N, D_H = 1, 2, 3, 4
BITS = [0, 1, 4, 5]  # pre_ntk query/key, post_rope query/key


def value(bit, layer, head, i, j):
    return (bit * 100 + layer * 50 + head * 16 + i * 4 + j) * 0.25 - 3.0


meta = {
    "model_id": "golden-tiny",
    "schedule": {"kind": "dynamic_ntk", "base": 10000.0, "target_len": 8192, "original_len": 4096},
    "pairing": "interleaved",
    "position_offset": 0,
    "provenance": {"producer": "make_golden.py"},
}
meta_bytes = json.dumps(meta, separators=(",", ":")).encode("utf-8")

bitmap = sum(1 << b for b in BITS)
out = bytearray(b"QKDPv001")
out += struct.pack("<IIIIBB", LAYERS, HEADS, N, D_H, bitmap, 0)
out += struct.pack("<I", len(meta_bytes))
out += meta_bytes
for bit in BITS:
    for layer in range(LAYERS):
        for head in range(HEADS):
            for i in range(N):
                for j in range(D_H):
                    out += struct.pack("<f", value(bit, layer, head, i, j))

Path(__file__).with_name("golden.qkdp").write_bytes(bytes(out))
print(len(out))
