"""Shared test utilities: finite-difference gradients and payload audits."""
import json

import torch


def central_difference_grad(fn, x: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """Per-element central finite differences of a scalar-valued fn."""
    grad = torch.zeros_like(x, dtype=torch.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        hi = fn(x).item()
        flat[i] = orig - h
        lo = fn(x).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return grad


def assert_grad_close(analytic: torch.Tensor, numeric: torch.Tensor,
                      rel_tol: float = 1e-3):
    denom = numeric.abs().clamp(min=1e-6)
    rel = ((analytic.double() - numeric) / denom).abs().max().item()
    assert rel <= rel_tol, f"max relative gradient error {rel:.3g} > {rel_tol}"


BLINDING_FORBIDDEN = ("cohort", "synthetic", "truth", "real", "generated",
                      ".png", "path", "/", "\\")


def audit_trial_payload(payload: dict):
    """A trial payload may only expose index, opaque image bytes, progress."""
    assert set(payload.keys()) == {"trial_index", "image", "progress"}
    scrubbed = dict(payload, image="")
    text = json.dumps(scrubbed).lower()
    for token in BLINDING_FORBIDDEN:
        assert token not in text, f"blinding leak: {token!r} in {text}"
