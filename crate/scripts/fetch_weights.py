"""Downloads the published ImageNet checkpoints, converts them to
safetensors and writes weights.lock.json.

    python scripts/fetch_weights.py --out ~/.cache/mribench/weights
"""

import argparse
import hashlib
import json
import os

import torch
from safetensors.torch import save_file

SOURCES = {
    "mobilenet_v2": "https://download.pytorch.org/models/mobilenet_v2-b0353104.pth",
    "resnet18": "https://download.pytorch.org/models/resnet18-f37072fd.pth",
    "efficientnet_b0": "https://download.pytorch.org/models/efficientnet_b0_rwightman-7f5810bc.pth",
    "vgg16": "https://download.pytorch.org/models/vgg16-397923af.pth",
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=os.path.expanduser("~/.cache/mribench/weights"))
    parser.add_argument("--models", nargs="*", default=list(SOURCES))
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    lock_path = os.path.join(args.out, "weights.lock.json")
    lock = {}
    if os.path.exists(lock_path):
        with open(lock_path) as f:
            lock = json.load(f)
    for name in args.models:
        url = SOURCES[name]
        # check_hash verifies the digest prefix embedded in the file name.
        state = torch.hub.load_state_dict_from_url(url, map_location="cpu", check_hash=True)
        state = {
            k: v.float().contiguous() for k, v in state.items() if not k.endswith("num_batches_tracked")
        }
        file = f"{name}.safetensors"
        path = os.path.join(args.out, file)
        save_file(state, path)
        with open(path, "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()
        lock[name] = {"file": file, "sha256": digest, "source": url}
        print(f"{name}: {path} {digest}")
    with open(lock_path, "w") as f:
        json.dump(lock, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
