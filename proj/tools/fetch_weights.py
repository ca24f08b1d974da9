#!/usr/bin/env python3
"""Export the pretrained feature extractors as TorchScript modules.

Produces, inside --cache:
  vgg19_relu54.pt : (N,3,H,W) in [0,1] -> (N,512,H/16,W/16) relu5_4 features
  vit_b16.pt      : (N,3,224,224) in [0,1] -> (N,196,768) patch tokens (no CLS)
  lpips_alex.pt   : (N,3,H,W) in [0,1] -> list of 5 maps, sqrt(lin_w) * unit-
                    normalized AlexNet stage activations (lin0..lin4)
  dists.pt        : (a,b) -> (N,) DISTS scores

Requires torchvision / transformers / lpips / IQA-PyTorch and network access;
run once, then point cache_dir at the output.
"""

import argparse
import sys


def export_vgg(cache):
    import torch
    import torchvision

    vgg = torchvision.models.vgg19(weights="IMAGENET1K_V1").features[:36].eval()
    mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)

    class Vgg(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.body = vgg
            self.register_buffer("mean", mean)
            self.register_buffer("std", std)

        def forward(self, x):
            return self.body((x - self.mean) / self.std)

    m = torch.jit.trace(Vgg().eval(), torch.rand(1, 3, 224, 224))
    m.save(str(cache / "vgg19_relu54.pt"))
    print("exported vgg19_relu54.pt")


def export_vit(cache):
    import torch
    from transformers import ViTModel

    vit = ViTModel.from_pretrained("google/vit-base-patch16-224").eval()

    class Vit(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.body = vit
            self.register_buffer("mean", torch.tensor([0.5, 0.5, 0.5]).view(1, 3, 1, 1))
            self.register_buffer("std", torch.tensor([0.5, 0.5, 0.5]).view(1, 3, 1, 1))

        def forward(self, x):
            out = self.body(pixel_values=(x - self.mean) / self.std)
            return out.last_hidden_state[:, 1:, :]  # drop CLS

    m = torch.jit.trace(Vit().eval(), torch.rand(1, 3, 224, 224), strict=False)
    m.save(str(cache / "vit_b16.pt"))
    print("exported vit_b16.pt")


def export_lpips(cache):
    import torch
    import lpips

    net = lpips.LPIPS(net="alex", spatial=False).eval()

    class LpipsStack(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.scaler = net.scaling_layer
            self.net = net.net
            self.lins = torch.nn.ModuleList([l.model[-1] for l in net.lins])

        def forward(self, x):
            feats = self.net(self.scaler(2.0 * x - 1.0))
            out = []
            for f, lin in zip(feats, self.lins):
                fn = f / (f.square().sum(1, keepdim=True).sqrt() + 1e-10)
                w = lin.weight.squeeze().clamp(min=0).view(1, -1, 1, 1)
                out.append(fn * w.sqrt())
            return out

    m = torch.jit.trace(LpipsStack().eval(), torch.rand(1, 3, 64, 64))
    m.save(str(cache / "lpips_alex.pt"))
    print("exported lpips_alex.pt")


def export_dists(cache):
    import torch
    import pyiqa

    net = pyiqa.create_metric("dists", as_loss=True)

    class Dists(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.net = net.net

        def forward(self, a, b):
            return self.net(a, b)

    m = torch.jit.trace(
        Dists().eval(), (torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 64))
    )
    m.save(str(cache / "dists.pt"))
    print("exported dists.pt")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cache", required=True)
    args = ap.parse_args()

    from pathlib import Path

    cache = Path(args.cache)
    cache.mkdir(parents=True, exist_ok=True)

    failures = []
    for name, fn in [
        ("vgg19_relu54", export_vgg),
        ("vit_b16", export_vit),
        ("lpips_alex", export_lpips),
        ("dists", export_dists),
    ]:
        try:
            fn(cache)
        except Exception as e:  # noqa: BLE001
            failures.append((name, str(e)))
            print(f"FAILED {name}: {e}", file=sys.stderr)

    if failures:
        print(
            "some extractors could not be exported; stub mode remains available",
            file=sys.stderr,
        )
        sys.exit(1)


if __name__ == "__main__":
    main()
