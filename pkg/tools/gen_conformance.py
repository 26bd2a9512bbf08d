#!/usr/bin/env python3
"""Regenerate testdata/range_coder_vectors.json.

The vectors freeze coder output for fixed tables so any future coder or
table change that breaks bitstream compatibility fails loudly, and so the
suite can check cross-platform reproducibility of table derivation.
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from waveletcodec.entropy import (GaussianParams, PmfTable, TableCache,
                                  encode_gaussian, range_encode)
from waveletcodec.tensor import SeededRng


def gaussian_vector(name: str, seed: int, n: int, lo: float, hi: float):
    rng = SeededRng(seed)
    sigma = rng.uniform((n,), lo, hi)
    sym = np.rint(rng.uniform((n,), -2.0, 2.0) * sigma).astype(np.int64)
    cache = TableCache()
    data = encode_gaussian(sym, GaussianParams(np.zeros(n), sigma), cache)
    return {
        "name": name,
        "kind": "gaussian",
        "sigmas_hex": [float(s).hex() for s in sigma],
        "symbols": [int(k) for k in sym],
        "bytes_hex": data.hex(),
    }


def table_vector(name: str, kmin: int, freqs: list[int], escape: int,
                 symbols: list[int]):
    tab = PmfTable(kmin, np.array(freqs, dtype=np.int64), escape)
    data = range_encode(np.array(symbols, dtype=np.int64), tab)
    return {
        "name": name,
        "kind": "table",
        "table": {"kmin": kmin, "freqs": freqs, "escape": escape},
        "symbols": symbols,
        "bytes_hex": data.hex(),
    }


def main():
    vectors = [
        gaussian_vector("mixed-scales", seed=1001, n=64, lo=0.11, hi=200.0),
        gaussian_vector("small-scales", seed=1002, n=48, lo=0.11, hi=0.8),
        gaussian_vector("large-scales", seed=1003, n=48, lo=20.0, hi=256.0),
        table_vector("uniform-4", -2, [16384, 16384, 16384, 16384], 0,
                     [-2, -1, 0, 1, 1, 0, -1, -2, 0, 0, 1, -2]),
        table_vector("skewed-with-escape", 0, [65000, 518], 18,
                     [0, 0, 1, 0, 2500, 0, -7, 0, 0, 1]),
        table_vector("empty", 0, [65536], 0, []),
    ]
    out = Path(__file__).resolve().parent.parent / "testdata"
    out.mkdir(exist_ok=True)
    path = out / "range_coder_vectors.json"
    path.write_text(json.dumps({"format": 1, "vectors": vectors}, indent=1))
    print(f"wrote {path} ({len(vectors)} vectors)")


if __name__ == "__main__":
    main()
