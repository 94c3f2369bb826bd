"""Convert the digit bundle of the npm ``mnist`` package into gzipped IDX files.

The npm package (MIT licensed, https://www.npmjs.com/package/mnist) ships about
10k MNIST digits as JSON arrays of pixel/255 rounded to three decimals, which
round-trips exactly back to the original bytes.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/build_mnist10k.py package/src/digits data/mnist10k

Per class, the first 80% of digits go to the train split and the rest to test.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(path, array, magic):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + array.astype(np.uint8).tobytes())


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    splits = {"train": ([], []), "t10k": ([], [])}
    for digit in range(10):
        raw = np.asarray(json.loads((src / f"{digit}.json").read_text())["data"])
        pixels = np.rint(raw * 255.0)
        assert np.all(np.abs(pixels / 255.0 - raw) < 6e-4)
        images = pixels.reshape(-1, 28, 28)
        cut = int(round(0.8 * len(images)))
        for name, part in (("train", images[:cut]), ("t10k", images[cut:])):
            splits[name][0].append(part)
            splits[name][1].append(np.full(len(part), digit))
    for name, (images, labels) in splits.items():
        images = np.concatenate(images)
        labels = np.concatenate(labels)
        order = np.random.default_rng(0).permutation(len(labels))
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", images[order], 0x803)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", labels[order], 0x801)
        print(name, images.shape)


if __name__ == "__main__":
    main(*sys.argv[1:3])
