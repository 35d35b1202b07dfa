#!/usr/bin/env python3
"""Convert the digit JSON files shipped by the npm `mnist` package to IDX.

The npm package (`npm pack mnist`) stores 10,000 MNIST digits as
`src/digits/<d>.json`, each holding a flat list of 784-pixel images with
values in [0, 1] rounded to three decimals. Rounding to 1/1000 is finer than
the byte step 1/255, so `round(v * 255)` recovers the original bytes.

    python3 scripts/mnist_json_to_idx.py package/src/digits out/mnist \
        [--per-class 100 --seed 0]

Without --per-class every digit is written (class-major order). With it, a
balanced subsample is drawn per class with the given seed and shuffled.
"""
import argparse
import json
import os
import random
import struct


def write_idx_images(path, images, rows, cols):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), rows, cols))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_prefix")
    ap.add_argument("--per-class", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    samples = []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0
        imgs = [
            [int(round(v * 255)) for v in flat[i : i + 784]]
            for i in range(0, len(flat), 784)
        ]
        if args.per_class is not None:
            imgs = rng.sample(imgs, args.per_class)
        samples.extend((img, digit) for img in imgs)
    if args.per_class is not None:
        rng.shuffle(samples)

    os.makedirs(os.path.dirname(os.path.abspath(args.out_prefix)), exist_ok=True)
    write_idx_images(args.out_prefix + "-images.idx", [s[0] for s in samples], 28, 28)
    write_idx_labels(args.out_prefix + "-labels.idx", [s[1] for s in samples])
    print(f"wrote {len(samples)} images to {args.out_prefix}-*.idx")


if __name__ == "__main__":
    main()
