"""Inpainting of masked image regions: an HTTP client for an external
model plus a deterministic local fallback.

The fallback fills the region by iterated boundary-mean diffusion: each
masked pixel repeatedly becomes the average of its four neighbors while
unmasked pixels stay fixed, approaching the harmonic interpolant of the
region boundary. It is deterministic and returns the requested number of
identical candidates, so the rest of the pipeline exercises the same
multi-candidate contract with or without a configured endpoint.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass, field

import httpx
import numpy as np
from PIL import Image
from scipy.ndimage import binary_dilation, convolve

from .errors import ArgumentError, GatewayError

DEFAULT_CANDIDATES = 3
DEFAULT_TIMEOUT = 30.0  # s
FILL_ITERATIONS = 200

_CROSS = np.array([[0.0, 0.25, 0.0], [0.25, 0.0, 0.25], [0.0, 0.25, 0.0]])


@dataclass(frozen=True)
class InpaintRequest:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool, True = fill
    prompt: str = ""
    candidates: int = DEFAULT_CANDIDATES

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float64)
        mask = np.asarray(self.mask).astype(bool)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ArgumentError(f"image must be (H, W, 3), got {image.shape}")
        if mask.shape != image.shape[:2]:
            raise ArgumentError(
                f"mask shape {mask.shape} does not match image {image.shape[:2]}"
            )
        if self.candidates < 1:
            raise ArgumentError("candidate count must be at least 1")
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class InpaintResponse:
    candidates: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.candidates:
            raise ArgumentError("response carries no candidates")
        shape = self.candidates[0].shape
        if any(c.shape != shape for c in self.candidates):
            raise ArgumentError("candidate dimensions differ")


def diffusion_fill(
    image: np.ndarray, mask: np.ndarray, iterations: int = FILL_ITERATIONS
) -> np.ndarray:
    """Harmonic-style fill of the masked region from its boundary values."""
    out = np.asarray(image, dtype=np.float64).copy()
    mask = np.asarray(mask).astype(bool)
    if not mask.any():
        return out
    ring = binary_dilation(mask) & ~mask
    seed = out[ring].mean(axis=0) if ring.any() else out.reshape(-1, 3).mean(axis=0)
    out[mask] = seed
    for _ in range(iterations):
        for c in range(3):
            # nearest-edge padding keeps border pixels averaging real neighbors
            blur = convolve(out[:, :, c], _CROSS, mode="nearest")
            out[:, :, c][mask] = blur[mask]
    return np.clip(out, 0.0, 1.0)


def stub_inpaint(request: InpaintRequest) -> InpaintResponse:
    """Local fallback: identical diffusion-filled candidates, prompt ignored."""
    filled = diffusion_fill(request.image, request.mask)
    return InpaintResponse(candidates=[filled.copy() for _ in range(request.candidates)])


def _encode_png(image: np.ndarray) -> str:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    if data.ndim == 2:
        data = (data > 0).astype(np.uint8) * 255
    buf = io.BytesIO()
    Image.fromarray(data).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_png(payload: str) -> np.ndarray:
    raw = base64.b64decode(payload)
    with Image.open(io.BytesIO(raw)) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr


class InpaintClient:
    """Routes requests to a remote endpoint when configured, else the stub.

    The remote wire format is JSON with base64 PNG payloads:
    request {"image", "mask", "prompt", "candidates"} and
    response {"candidates": [png, ...]}.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self._transport = transport

    def inpaint(self, request: InpaintRequest) -> InpaintResponse:
        if not self.endpoint:
            return stub_inpaint(request)
        payload = {
            "image": _encode_png(request.image),
            "mask": _encode_png(request.mask.astype(np.float64)),
            "prompt": request.prompt,
            "candidates": request.candidates,
        }
        try:
            with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
                reply = client.post(self.endpoint, json=payload)
            reply.raise_for_status()
        except httpx.TimeoutException as exc:
            raise GatewayError(f"inpaint endpoint timed out after {self.timeout}s") from exc
        except httpx.HTTPError as exc:
            raise GatewayError(f"inpaint endpoint failed: {exc}") from exc
        body = reply.json()
        candidates = [_decode_png(c) for c in body.get("candidates", [])]
        if len(candidates) != request.candidates:
            raise GatewayError(
                f"endpoint returned {len(candidates)} candidates, expected {request.candidates}"
            )
        expect = request.image.shape
        if any(c.shape != expect for c in candidates):
            raise GatewayError("endpoint returned candidates with mismatched dimensions")
        return InpaintResponse(candidates=candidates)
