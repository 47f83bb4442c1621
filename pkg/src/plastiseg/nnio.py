"""Shared tensor/raster conversion and checkpoint plumbing for the two nets."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ArchMismatch, CorruptCheckpoint

PROBE_TOLERANCE = 1e-5


def image_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """HxWx3 uint8 -> (1,3,H,W) float32 in [0,1]."""
    arr = np.asarray(pixels, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def mask_to_tensor(mask01: np.ndarray) -> torch.Tensor:
    """HxW {0,1} -> (1,1,H,W) float32."""
    return torch.from_numpy(np.asarray(mask01, dtype=np.float32))[None, None]


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(1,3,H,W) or (3,H,W) in [0,1] -> HxWx3 uint8, round half up."""
    if t.dim() == 4:
        t = t[0]
    arr = t.detach().permute(1, 2, 0).numpy().astype(np.float64)
    return np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)


def denormalize_batch(t: torch.Tensor) -> np.ndarray:
    """(B,3,H,W) in [0,1] -> (B,H,W,3) uint8, round half up."""
    arr = t.detach().permute(0, 2, 3, 1).numpy().astype(np.float64)
    return np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)


def resize_image(pixels: np.ndarray, size: int) -> np.ndarray:
    im = Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB")
    return np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.uint8)


def resize_mask(mask01: np.ndarray, height: int, width: int) -> np.ndarray:
    im = Image.fromarray((np.asarray(mask01, dtype=np.uint8) * 255), mode="L")
    out = np.asarray(im.resize((width, height), Image.NEAREST))
    return (out >= 128).astype(np.uint8)


def pad_to_multiple(x: torch.Tensor, multiple: int):
    """Zero-pad right/bottom so H and W divide `multiple`; returns (x, (H, W))."""
    h, w = x.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph))
    return x, (h, w)


def crop_to(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    return x[..., : size[0], : size[1]]


def config_hash(arch_config: dict) -> str:
    payload = json.dumps(arch_config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_checkpoint_file(payload: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint_file(path, expected_kind: str) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch raises several unpickling error types
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != expected_kind:
        raise ArchMismatch(
            f"{path}: expected a {expected_kind} checkpoint, "
            f"got {payload.get('kind') if isinstance(payload, dict) else type(payload)}")
    return payload


def verify_probe(module: torch.nn.Module, probe_in, stored_out, what: str):
    """Replay the stored probe input; drift beyond tolerance means corruption."""
    module.eval()
    with torch.no_grad():
        out = module(*probe_in) if isinstance(probe_in, (tuple, list)) else module(probe_in)
    drift = (out - stored_out).abs().max().item()
    if drift > PROBE_TOLERANCE:
        raise CorruptCheckpoint(
            f"{what} probe drift {drift:.3g} exceeds {PROBE_TOLERANCE}")
