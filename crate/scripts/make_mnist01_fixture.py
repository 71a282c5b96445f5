"""Build the digits-0/1 IDX fixture under data/mnist01/.

Source: the `mnist` npm package (MIT, https://github.com/cazala/mnist), which
ships 10k MNIST digits as JSON arrays of pixel intensities rounded to three
decimals. Rounding `value * 255` recovers the original bytes exactly.

    curl -sO https://registry.npmjs.org/mnist/-/mnist-1.1.0.tgz
    tar xzf mnist-1.1.0.tgz
    python3 scripts/make_mnist01_fixture.py package/src/digits data/mnist01

The first TRAIN_PER_CLASS digits of each class form the training file
(classes interleaved), the remainder the test file.
"""
import json
import struct
import sys
from pathlib import Path

CLASSES = (0, 1)
TRAIN_PER_CLASS = 600
PIXELS = 28 * 28


def load(digits_dir, digit):
    raw = json.loads((Path(digits_dir) / f"{digit}.json").read_text())["data"]
    assert len(raw) % PIXELS == 0
    out = []
    for i in range(len(raw) // PIXELS):
        img = bytes(int(round(v * 255)) for v in raw[i * PIXELS:(i + 1) * PIXELS])
        out.append(img)
    return out


def interleave(per_class):
    rows = []
    longest = max(len(v) for v in per_class.values())
    for i in range(longest):
        for c in CLASSES:
            if i < len(per_class[c]):
                rows.append((per_class[c][i], c))
    return rows


def write_idx(out_dir, stem, rows):
    with open(out_dir / f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for img, _ in rows:
            f.write(img)
    with open(out_dir / f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main():
    digits_dir, out_dir = sys.argv[1], Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    images = {c: load(digits_dir, c) for c in CLASSES}
    train = {c: v[:TRAIN_PER_CLASS] for c, v in images.items()}
    test = {c: v[TRAIN_PER_CLASS:] for c, v in images.items()}
    write_idx(out_dir, "train", interleave(train))
    write_idx(out_dir, "t10k", interleave(test))


if __name__ == "__main__":
    main()
