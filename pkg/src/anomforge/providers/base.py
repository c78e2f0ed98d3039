"""Core value types and the five provider interfaces.

Every model the pipeline touches (joint embedding, inpainting, region
proposal, VQA, description generation) is reached through one of the
small protocols below.  The module-level functions are the public
operations: they enforce the shared contracts (L2 normalization on
receipt, dimension checks, non-empty responses) regardless of whether
the backing provider is a mock or a remote server.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np
from PIL import Image

from anomforge.errors import ProviderError, ValidationError

NORM_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Geometry


@dataclass(frozen=True)
class Rect:
    """Integer pixel rectangle; (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"rectangle must have positive size, got {self.w}x{self.h}")

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def contains(self, other: "Rect") -> bool:
        return (
            other.x >= self.x
            and other.y >= self.y
            and other.x + other.w <= self.x + self.w
            and other.y + other.h <= self.y + self.h
        )

    def translate(self, dx: int, dy: int) -> "Rect":
        return Rect(self.x + dx, self.y + dy, self.w, self.h)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Rect":
        try:
            return cls(int(data["x"]), int(data["y"]), int(data["w"]), int(data["h"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed rectangle {data!r}") from exc


@dataclass(frozen=True)
class Region:
    """A proposed object region with detector confidence in [0, 1]."""

    bbox: Rect
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"region confidence {self.confidence} outside [0, 1]")


# ---------------------------------------------------------------------------
# Images


@dataclass(frozen=True)
class RasterImage:
    """Row-major RGB byte image; the only pixel container the pipeline uses."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image must have positive size, got {self.width}x{self.height}")
        expected = self.width * self.height * 3
        if len(self.pixels) != expected:
            raise ValidationError(
                f"pixel buffer holds {len(self.pixels)} bytes, expected {expected} for {self.width}x{self.height} RGB"
            )

    # -- numpy bridge -------------------------------------------------------

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "RasterImage":
        arr = np.ascontiguousarray(array, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"expected HxWx3 array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr.tobytes())

    @classmethod
    def solid(cls, width: int, height: int, color: tuple[int, int, int]) -> "RasterImage":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:, :] = color
        return cls.from_array(arr)

    # -- region surgery -----------------------------------------------------

    def crop(self, rect: Rect) -> "RasterImage":
        if not rect.within(self.width, self.height):
            raise ValidationError(f"crop {rect} outside {self.width}x{self.height} image")
        arr = self.to_array()[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w]
        return RasterImage.from_array(arr)

    def paste(self, rect: Rect, patch: "RasterImage") -> "RasterImage":
        """Return a copy with ``rect`` replaced by ``patch`` (sizes must match)."""
        if (patch.width, patch.height) != (rect.w, rect.h):
            raise ValidationError(
                f"patch is {patch.width}x{patch.height} but target rectangle is {rect.w}x{rect.h}"
            )
        if not rect.within(self.width, self.height):
            raise ValidationError(f"paste target {rect} outside {self.width}x{self.height} image")
        arr = self.to_array().copy()
        arr[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w] = patch.to_array()
        return RasterImage.from_array(arr)

    # -- PNG bridge ---------------------------------------------------------

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.frombytes("RGB", (self.width, self.height), self.pixels).save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "RasterImage":
        try:
            with Image.open(io.BytesIO(data)) as img:
                rgb = img.convert("RGB")
                return cls(width=rgb.width, height=rgb.height, pixels=rgb.tobytes())
        except Exception as exc:
            raise ValidationError(f"cannot decode PNG payload: {exc}") from exc

    def save_png(self, path: Path | str) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    @classmethod
    def load_png(cls, path: Path | str) -> "RasterImage":
        return cls.from_png_bytes(Path(path).read_bytes())

    def content_key(self) -> str:
        """Hex digest identifying the image by its exact pixel content."""
        import hashlib

        digest = hashlib.sha256()
        digest.update(f"{self.width}x{self.height}:".encode())
        digest.update(self.pixels)
        return digest.hexdigest()


# ---------------------------------------------------------------------------
# Embeddings


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension real vector from a joint visual-language space."""

    values: np.ndarray
    dim: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 1:
            raise ValidationError(f"embedding must be one-dimensional, got shape {arr.shape}")
        if arr.shape[0] != self.dim:
            raise ValidationError(f"embedding has {arr.shape[0]} entries but declares dim {self.dim}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embedding contains non-finite entries")

    @classmethod
    def of(cls, values: Sequence[float] | np.ndarray) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float64)
        return cls(values=arr, dim=arr.shape[0])

    def normalized(self) -> "EmbeddingVector":
        """Project onto the unit sphere; the all-zero vector is left alone."""
        norm = float(np.linalg.norm(self.values))
        if norm == 0.0:
            return self
        return EmbeddingVector(values=self.values / norm, dim=self.dim)

    def dot(self, other: "EmbeddingVector") -> float:
        if self.dim != other.dim:
            raise ValidationError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return float(self.values @ other.values)


# ---------------------------------------------------------------------------
# Provider interfaces


class EmbeddingProvider(Protocol):
    dim: int

    def embed_image(self, image: RasterImage) -> EmbeddingVector: ...

    def embed_text(self, text: str) -> EmbeddingVector: ...


class InpaintingProvider(Protocol):
    def inpaint(self, image: RasterImage, mask: Rect, prompt: str, n: int, seed: int) -> list[RasterImage]: ...


class RegionProvider(Protocol):
    def propose_regions(self, image: RasterImage) -> list[Region]: ...


class VQAProvider(Protocol):
    def answer(self, image: RasterImage, prompt: str) -> str: ...


class DescriptionProvider(Protocol):
    def describe(self, text: str) -> str: ...


# ---------------------------------------------------------------------------
# Operations (contract-enforcing wrappers)


def embed_image(provider: EmbeddingProvider, image: RasterImage) -> EmbeddingVector:
    """Embed visual input; the result is L2-normalized on receipt."""
    vector = provider.embed_image(image)
    if vector.dim != provider.dim:
        raise ProviderError(f"provider declared dim {provider.dim} but returned {vector.dim}")
    return vector.normalized()


def embed_text(provider: EmbeddingProvider, text: str) -> EmbeddingVector:
    """Embed text input; the result is L2-normalized on receipt."""
    if not text.strip():
        raise ValidationError("cannot embed empty text")
    vector = provider.embed_text(text)
    if vector.dim != provider.dim:
        raise ProviderError(f"provider declared dim {provider.dim} but returned {vector.dim}")
    return vector.normalized()


def inpaint(
    provider: InpaintingProvider,
    image: RasterImage,
    mask: Rect,
    prompt: str,
    n: int,
    seed: int,
) -> list[RasterImage]:
    """Request ``n`` inpainted variants of ``image`` with ``mask`` replaced."""
    if n < 1:
        raise ValidationError(f"candidate count must be >= 1, got {n}")
    if not prompt.strip():
        raise ValidationError("inpainting prompt must be non-empty")
    if not mask.within(image.width, image.height):
        raise ValidationError(f"mask {mask} outside {image.width}x{image.height} image")
    results = provider.inpaint(image, mask, prompt, n, seed)
    if len(results) != n:
        raise ProviderError(f"requested {n} candidates but provider returned {len(results)}")
    for i, result in enumerate(results):
        if (result.width, result.height) != (image.width, image.height):
            raise ProviderError(
                f"candidate {i} is {result.width}x{result.height}, expected {image.width}x{image.height}"
            )
    return results


def propose_regions(provider: RegionProvider, image: RasterImage) -> list[Region]:
    """Propose object regions, sorted by descending confidence."""
    regions = provider.propose_regions(image)
    if not regions:
        raise ProviderError("region provider returned zero regions")
    for region in regions:
        if not region.bbox.within(image.width, image.height):
            raise ProviderError(f"region {region.bbox} outside {image.width}x{image.height} image")
    return sorted(regions, key=lambda r: (-r.confidence, r.bbox.y, r.bbox.x))


def vqa_answer(provider: VQAProvider, image: RasterImage, prompt: str) -> str:
    """Ask a free-form question about an image."""
    if not prompt.strip():
        raise ValidationError("VQA prompt must be non-empty")
    answer = provider.answer(image, prompt)
    if not answer or not answer.strip():
        raise ProviderError("VQA provider returned an empty response")
    return answer


def describe(provider: DescriptionProvider, text: str) -> str:
    """Fetch a natural-language description for a label or phrase."""
    if not text.strip():
        raise ValidationError("cannot describe empty text")
    result = provider.describe(text)
    if not result or not result.strip():
        raise ProviderError("description provider returned an empty response")
    return result
