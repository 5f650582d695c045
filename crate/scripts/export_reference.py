"""Exports randomly initialized torchvision backbones and their eval-mode
logits so the Rust implementations can be checked tensor-for-tensor.

    python scripts/export_reference.py --out /tmp/parity
    MRIBENCH_PARITY_DIR=/tmp/parity cargo test -p mribench-core --test parity -- --ignored
"""

import argparse
import json
import os

import torch
import torchvision
from safetensors.torch import save_file

MODELS = {
    "mobilenet_v2": (torchvision.models.mobilenet_v2, 64),
    "resnet18": (torchvision.models.resnet18, 64),
    "efficientnet_b0": (torchvision.models.efficientnet_b0, 64),
    "vgg16": (torchvision.models.vgg16, 32),
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True)
    parser.add_argument("--models", nargs="*", default=list(MODELS))
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    torch.manual_seed(0)
    index = {}
    for name in args.models:
        ctor, size = MODELS[name]
        model = ctor(weights=None).eval()
        # Non-trivial running statistics so eval-mode batch norm is exercised.
        with torch.no_grad():
            for m in model.modules():
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.running_mean.uniform_(-0.1, 0.1)
                    m.running_var.uniform_(0.5, 1.5)
                    m.weight.uniform_(0.5, 1.5)
                    m.bias.uniform_(-0.1, 0.1)
        state = {
            k: v.detach().float().contiguous()
            for k, v in model.state_dict().items()
            if not k.endswith("num_batches_tracked")
        }
        x = torch.randn(2, 3, size, size)
        with torch.no_grad():
            logits = model(x)
        state_path = f"{name}.safetensors"
        save_file(state, os.path.join(args.out, state_path))
        save_file({"input": x, "logits": logits}, os.path.join(args.out, f"{name}.io.safetensors"))
        index[name] = {"state": state_path, "size": size}
        print(name, sum(v.numel() for k, v in state.items() if "running" not in k))
    with open(os.path.join(args.out, "index.json"), "w") as f:
        json.dump(index, f, indent=2)


if __name__ == "__main__":
    main()
