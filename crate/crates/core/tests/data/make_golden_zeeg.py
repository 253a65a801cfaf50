"""Writes golden.zeeg with the standard library only, as an independent
reference for the ZEEG reader and writer."""
import json
import struct
from pathlib import Path

header = {
    "version": 1,
    "sfreq": 256.0,
    "channels": [
        {"label": "Fz", "x": 0.0, "y": 0.0588, "z": 0.0747},
        {"label": "Cz", "x": 0.0, "y": 0.0, "z": 0.095},
        {"label": "Pz", "x": 0.0, "y": -0.0588, "z": 0.0747},
    ],
    "n_samples": 4,
    "scale": 0.5,
}
stored = [
    [1.0, -2.0, 0.25, 3.5],
    [0.0, 1.5, -0.75, 8.0],
    [-4.0, 2.25, 0.125, -1.0],
]
text = json.dumps(header, separators=(",", ":")).encode("utf-8")
body = b"".join(struct.pack("<f", v) for row in stored for v in row)
blob = b"ZEEG0001" + struct.pack("<I", len(text)) + text + body
Path(__file__).with_name("golden.zeeg").write_bytes(blob)
