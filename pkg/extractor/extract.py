#!/usr/bin/env python3
"""Dump Inception-V3 activations for a folder of images as ATN1 bundles.

For every image and every requested layer this writes
``<out>/<image_stem>/<layer>.atn`` in the ATN1 tensor format consumed
by the realism scoring pipeline (little-endian: magic "ATN1", dtype
byte 0x01 = float32, ndim byte 3, three uint32 dims W, H, C, then the
row-major float32 payload). Convolutional layers emit their full
W x H x C activation map; the final fully-connected output is stored
as the 1 x 1 x C special case. All activations are taken after each
block's nonlinearity.

Weights come from torchvision's pretrained ImageNet checkpoint by
default; ``--weights random`` builds a seeded randomly-initialized
network (useful offline and for tests), and ``--weights PATH`` loads a
local state dict. Extraction is deterministic: the same image, weights
and thread count reproduce byte-identical files.
"""

from __future__ import annotations

import argparse
import hashlib
import struct
import sys
import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision.models import Inception_V3_Weights, inception_v3

# "Conv2d_1a_3x" is the canonical spelling of the first layer (and the
# file name the scoring side expects); the network module's long form
# is accepted as an alias and normalized before anything is written.
CANONICAL_NAMES = {"Conv2d_1a_3x3": "Conv2d_1a_3x"}
LAYER_NODES = {
    "Conv2d_1a_3x": "Conv2d_1a_3x3",
    "FC": "fc",
}

DEFAULT_LAYERS = (
    "Conv2d_1a_3x",
    "Conv2d_2b_3x3",
    "Conv2d_3b_1x1",
    "Mixed_5d",
    "Mixed_6e",
    "Mixed_7c",
    "FC",
)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_RESIZE = 342
DEFAULT_CROP = 299

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}

_IDENT_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*\Z")

_ATN_HEADER = struct.Struct("<4sBB3I")


class ExtractError(Exception):
    category = "data-error"


def write_atn(path: Path, data: np.ndarray) -> None:
    """Write one (W, H, C) float32 activation as an ATN1 file."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 3:
        raise ExtractError(f"activation must be 3-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ExtractError("activation contains NaN or Inf")
    w, h, c = arr.shape
    header = _ATN_HEADER.pack(b"ATN1", 0x01, 3, w, h, c)
    path.write_bytes(header + arr.tobytes(order="C"))


def load_image(path: Path, resize: int, crop: int, mean, std) -> torch.Tensor:
    """Decode, resize shorter side, center crop, normalize to (3, crop, crop)."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
    except Exception as exc:
        raise ExtractError(f"cannot decode image {path}: {exc}")
    width, height = img.size
    scale = resize / min(width, height)
    img = img.resize(
        (max(crop, round(width * scale)), max(crop, round(height * scale))),
        Image.BILINEAR,
    )
    left = (img.width - crop) // 2
    top = (img.height - crop) // 2
    img = img.crop((left, top, left + crop, top + crop))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def build_model(weights: str, seed: int):
    """Construct Inception-V3; returns (model, description)."""
    if weights == "pretrained":
        model = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1)
        desc = "pretrained:imagenet1k-v1"
    elif weights == "random":
        torch.manual_seed(seed)
        model = inception_v3(weights=None, aux_logits=False, init_weights=True)
        desc = f"random:seed={seed}"
    else:
        state_path = Path(weights)
        if not state_path.is_file():
            raise ExtractError(f"weights file not found: {state_path}")
        model = inception_v3(weights=None, aux_logits=True, init_weights=False)
        state = torch.load(state_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state, strict=False)
        desc = f"file:{state_path.name}"
    model.eval()
    return model, desc


def weights_sha256(model) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def resolve_layers(model, names):
    """Map each requested layer name to a network module."""
    modules = dict(model.named_modules())
    resolved = {}
    for name in names:
        node = LAYER_NODES.get(name, name)
        if node not in modules:
            raise ExtractError(
                f"unknown layer {name!r}: no node {node!r} in the network"
            )
        resolved[name] = modules[node]
    return resolved


def find_images(images_dir: Path):
    if not images_dir.is_dir():
        raise ExtractError(f"image directory not found: {images_dir}")
    paths = sorted(
        p for p in images_dir.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise ExtractError(f"no images under {images_dir}")
    stems = [p.stem for p in paths]
    for stem in stems:
        if _IDENT_RE.match(stem) is None:
            raise ExtractError(
                f"image name {stem!r} is not usable as a bundle id"
            )
    if len(set(stems)) != len(stems):
        raise ExtractError("duplicate image stems would collide in the output")
    # Cheap decode check first, so a corrupt file aborts the run before
    # the network is built and before any bundle is written.
    for path in paths:
        try:
            with Image.open(path) as img:
                img.verify()
        except Exception as exc:
            raise ExtractError(f"cannot decode image {path}: {exc}")
    return paths


def activations_for(model, layer_modules, batch: torch.Tensor) -> dict:
    """One forward pass; returns requested activations as (W, H, C) arrays."""
    captured = {}
    hooks = []
    for name, module in layer_modules.items():
        hooks.append(
            module.register_forward_hook(
                lambda module, inputs, output, name=name: captured.__setitem__(
                    name, output.detach()
                )
            )
        )
    try:
        with torch.no_grad():
            model(batch)
    finally:
        for hook in hooks:
            hook.remove()
    out = {}
    for name, act in captured.items():
        if act.dim() == 2:  # fully connected: (N, C) -> 1 x 1 x C
            arr = act[0].cpu().numpy().reshape(1, 1, -1)
        elif act.dim() == 4:  # conv: (N, C, H, W) -> (W, H, C)
            arr = act[0].cpu().numpy().transpose(2, 1, 0)
        else:
            raise ExtractError(
                f"layer {name!r} produced unsupported shape {tuple(act.shape)}"
            )
        out[name] = np.ascontiguousarray(arr, dtype=np.float32)
    return out


def write_manifest(path: Path, args, desc: str, sha: str, layers) -> None:
    lines = [
        "extractor-manifest 1",
        "network = inception_v3",
        f"torch = {torch.__version__}",
        f"weights = {desc}",
        f"weights_sha256 = {sha}",
        f"layers = {','.join(layers)}",
        f"resize = {args.resize}",
        f"crop = {args.crop}",
        f"mean = {','.join(str(v) for v in IMAGENET_MEAN)}",
        f"std = {','.join(str(v) for v in IMAGENET_STD)}",
        f"transform_input = {1 if args.weights == 'pretrained' else 0}",
    ]
    path.write_text("\n".join(lines) + "\n")


def extract(args) -> int:
    torch.set_num_threads(args.threads)
    image_paths = find_images(Path(args.images))
    layers = [
        CANONICAL_NAMES.get(n.strip(), n.strip())
        for n in args.layers.split(",")
        if n.strip()
    ]
    if len(set(layers)) != len(layers):
        raise ExtractError(f"duplicate layer in {args.layers!r}")
    model, desc = build_model(args.weights, args.seed)
    layer_modules = resolve_layers(model, layers)
    sha = weights_sha256(model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(
        f"[extract] config: images={args.images} layers={','.join(layers)} "
        f"weights={desc} resize={args.resize} crop={args.crop} "
        f"threads={args.threads} out={out_dir}",
        file=sys.stderr,
    )
    for path in image_paths:
        batch = load_image(
            path, args.resize, args.crop, IMAGENET_MEAN, IMAGENET_STD
        ).unsqueeze(0)
        acts = activations_for(model, layer_modules, batch)
        bundle_dir = out_dir / path.stem
        bundle_dir.mkdir(exist_ok=True)
        for name in layers:
            write_atn(bundle_dir / f"{name}.atn", acts[name])
        print(f"[extract] {path.stem}: {len(layers)} layers", file=sys.stderr)
    if args.manifest:
        write_manifest(out_dir / "manifest.txt", args, desc, sha, layers)
    print(f"bundles_written = {len(image_paths)}")
    print(f"bundles_dir = {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract.py",
        description="Dump Inception-V3 activations as ATN1 bundles.",
    )
    parser.add_argument("--images", required=True, help="directory of image files")
    parser.add_argument(
        "--layers",
        default=",".join(DEFAULT_LAYERS),
        help="comma-separated layer names",
    )
    parser.add_argument("--out", required=True, help="output bundle directory")
    parser.add_argument(
        "--weights",
        default="pretrained",
        help="'pretrained', 'random', or a path to a state-dict file",
    )
    parser.add_argument(
        "--seed", type=int, default=0, help="init seed for --weights random"
    )
    parser.add_argument("--resize", type=int, default=DEFAULT_RESIZE)
    parser.add_argument("--crop", type=int, default=DEFAULT_CROP)
    parser.add_argument(
        "--threads", type=int, default=1,
        help="torch thread count (1 keeps runs bit-identical everywhere)",
    )
    parser.add_argument(
        "--manifest",
        action="store_true",
        help="also write manifest.txt with network and preprocessing details",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return extract(args)
    except ExtractError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
