#!/usr/bin/env python3
"""Generate layer-level profiles for AlexNet and ResNet18 (torchvision layouts).

Logical layers follow a sequential abstraction: a convolution together with its
activation (and a directly following pooling op) is one layer, a residual basic
block is one layer, the global pool is folded into the classifier.

Conventions:
  * macs: multiply-accumulates of conv / linear ops only (BN, ReLU, pooling and
    residual adds are not counted).
  * param_bytes: float32 weights + biases; batch-norm layers store four vectors
    (weight, bias, running mean, running var).
  * out_feature_bytes: float32 output feature map. Layer 0 is the raw RGB input
    image as uint8 (3 x 224 x 224 bytes).

Usage: python3 scripts/gen_profiles.py crates/core/data
"""
import json
import sys
from pathlib import Path

F32 = 4


def conv_out(h, k, s, p):
    return (h + 2 * p - k) // s + 1


def conv(cin, cout, k, s, p, h, bias=True):
    ho = conv_out(h, k, s, p)
    macs = cout * ho * ho * cin * k * k
    params = cout * cin * k * k + (cout if bias else 0)
    return macs, params, ho


def bn(c):
    return 4 * c


def pool(h, k, s, p=0):
    return conv_out(h, k, s, p)


def layer(macs, params, c, h):
    return {"macs": macs, "param_bytes": params * F32, "out_feature_bytes": c * h * h * F32}


def input_layer():
    return {"macs": 0, "param_bytes": 0, "out_feature_bytes": 3 * 224 * 224}


def alexnet():
    layers = [input_layer()]
    h = 224
    # conv1 + relu + maxpool
    m, p, h = conv(3, 64, 11, 4, 2, h)
    h = pool(h, 3, 2)
    layers.append(layer(m, p, 64, h))
    # conv2 + relu + maxpool
    m, p, h = conv(64, 192, 5, 1, 2, h)
    h = pool(h, 3, 2)
    layers.append(layer(m, p, 192, h))
    # conv3, conv4
    m, p, h = conv(192, 384, 3, 1, 1, h)
    layers.append(layer(m, p, 384, h))
    m, p, h = conv(384, 256, 3, 1, 1, h)
    layers.append(layer(m, p, 256, h))
    # conv5 + relu + maxpool (adaptive avgpool to 6x6 is identity here)
    m, p, h = conv(256, 256, 3, 1, 1, h)
    h = pool(h, 3, 2)
    layers.append(layer(m, p, 256, h))
    flat = 256 * h * h
    for fin, fout in [(flat, 4096), (4096, 4096), (4096, 1000)]:
        layers.append({"macs": fin * fout, "param_bytes": (fin * fout + fout) * F32,
                       "out_feature_bytes": fout * F32})
    return {"name": "alexnet", "layers": layers}


def basic_block(cin, cout, stride, h):
    m1, p1, ho = conv(cin, cout, 3, stride, 1, h, bias=False)
    m2, p2, ho = conv(cout, cout, 3, 1, 1, ho, bias=False)
    macs, params = m1 + m2, p1 + p2 + 2 * bn(cout)
    if stride != 1 or cin != cout:
        m3, p3, _ = conv(cin, cout, 1, stride, 0, h, bias=False)
        macs += m3
        params += p3 + bn(cout)
    return macs, params, ho


def resnet18():
    layers = [input_layer()]
    h = 224
    m, p, h = conv(3, 64, 7, 2, 3, h, bias=False)
    p += bn(64)
    h = pool(h, 3, 2, 1)
    layers.append(layer(m, p, 64, h))
    cin = 64
    for cout, stride in [(64, 1), (128, 2), (256, 2), (512, 2)]:
        for s in (stride, 1):
            m, p, h = basic_block(cin, cout, s, h)
            layers.append(layer(m, p, cout, h))
            cin = cout
    layers.append({"macs": 512 * 1000, "param_bytes": (512 * 1000 + 1000) * F32,
                   "out_feature_bytes": 1000 * F32})
    return {"name": "resnet18", "layers": layers}


def synthetic():
    return {"name": "synthetic", "layers": [
        {"macs": 0, "param_bytes": 0, "out_feature_bytes": 100},
        {"macs": 5, "param_bytes": 40, "out_feature_bytes": 50},
        {"macs": 7, "param_bytes": 60, "out_feature_bytes": 200},
        {"macs": 11, "param_bytes": 80, "out_feature_bytes": 30},
    ]}


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
    for prof in (alexnet(), resnet18(), synthetic()):
        text = json.dumps(prof, indent=2) + "\n"
        (out / f"{prof['name']}.json").write_text(text)
        tm = sum(l["macs"] for l in prof["layers"])
        tp = sum(l["param_bytes"] for l in prof["layers"]) // F32
        print(f"{prof['name']}: L={len(prof['layers']) - 1} macs={tm} params={tp}")


if __name__ == "__main__":
    main()
