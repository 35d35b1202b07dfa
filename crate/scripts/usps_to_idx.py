#!/usr/bin/env python3
"""Convert the USPS `usps_all.mat` file (16x16 digits, 1,100 per class) to IDX.

The MATLAB file holds `data` with shape (256, 1100, 10); column c of class k
is a 16x16 image stored column-major, class index 9 holding the digit 0.

    python3 scripts/usps_to_idx.py usps_all.mat out/usps

Writes `<prefix>-images.idx` and `<prefix>-labels.idx` (11,000 images,
labels 0-9). Requires scipy.
"""
import struct
import sys

import numpy as np
from scipy.io import loadmat


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    data = loadmat(sys.argv[1])["data"]
    images, labels = [], []
    for k in range(data.shape[2]):
        digit = (k + 1) % 10
        for c in range(data.shape[1]):
            img = data[:, c, k].reshape(16, 16, order="F").astype(np.uint8)
            images.append(img.tobytes(order="C"))
            labels.append(digit)
    prefix = sys.argv[2]
    with open(prefix + "-images.idx", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 16, 16))
        for img in images:
            f.write(img)
    with open(prefix + "-labels.idx", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images to {prefix}-*.idx")


if __name__ == "__main__":
    main()
