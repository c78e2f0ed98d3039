"""JSON-over-HTTP adapters for real model servers.

One POST endpoint per provider kind; images travel as base-64 PNG.

  /embed     {"kind": "image"|"text", "payload": <b64 png | text>}
             -> {"dim": int, "values": [float, ...]}
  /inpaint   {"image": <b64>, "mask": {"x","y","w","h"}, "prompt": str,
              "n": int, "seed": int}
             -> {"images": [<b64>, ...]}
  /regions   {"image": <b64>}
             -> {"regions": [{"x","y","w","h","confidence"}, ...]}
  /vqa       {"image": <b64>, "prompt": str} -> {"answer": str}
  /describe  {"text": str} -> {"description": str}

Adapters never alter payloads; with a trace path set, the verbatim
request and response bodies are appended to a JSONL log.
"""

from __future__ import annotations

import base64
import json
import os
from pathlib import Path

import requests

from anomforge.errors import ProviderError
from anomforge.providers.base import EmbeddingVector, RasterImage, Rect, Region

DEFAULT_TIMEOUT = 60.0

ENV_URLS = {
    "embedding": "ANOMFORGE_EMBED_URL",
    "inpainting": "ANOMFORGE_INPAINT_URL",
    "region": "ANOMFORGE_REGION_URL",
    "vqa": "ANOMFORGE_VQA_URL",
    "description": "ANOMFORGE_DESCRIBE_URL",
}


def env_url(kind: str) -> str | None:
    return os.environ.get(ENV_URLS[kind])


def encode_image(image: RasterImage) -> str:
    return base64.b64encode(image.to_png_bytes()).decode("ascii")


def decode_image(payload: str) -> RasterImage:
    try:
        return RasterImage.from_png_bytes(base64.b64decode(payload))
    except Exception as exc:
        raise ProviderError(f"provider returned an undecodable image payload: {exc}") from exc


class _WireClient:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, trace_path: str | None = None) -> None:
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.trace_path = trace_path

    def _trace(self, request_body: str, response_body: str, status: int) -> None:
        if not self.trace_path:
            return
        entry = {"url": self.url, "status": status, "request": request_body, "response": response_body}
        with Path(self.trace_path).open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def post(self, payload: dict) -> dict:
        body = json.dumps(payload)
        try:
            response = requests.post(
                self.url,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderError(f"provider at {self.url} unreachable: {exc}") from exc
        self._trace(body, response.text, response.status_code)
        if response.status_code != 200:
            raise ProviderError(f"provider at {self.url} returned HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProviderError(f"provider at {self.url} returned invalid JSON") from exc


class RemoteEmbeddingProvider:
    """Wraps a joint embedding server; `dim` is adopted from the first
    response when not configured, then enforced."""

    def __init__(self, url: str, dim: int | None = None, timeout: float = DEFAULT_TIMEOUT, trace_path=None) -> None:
        self._client = _WireClient(url, timeout, trace_path)
        self.dim = dim if dim is not None else 0

    def _embed(self, kind: str, payload: str) -> EmbeddingVector:
        data = self._client.post({"kind": kind, "payload": payload})
        try:
            dim = int(data["dim"])
            values = [float(v) for v in data["values"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed embed response: {data!r}") from exc
        if len(values) != dim:
            raise ProviderError(f"embed response declares dim {dim} but has {len(values)} values")
        if self.dim == 0:
            self.dim = dim
        elif dim != self.dim:
            raise ProviderError(f"provider dim changed from {self.dim} to {dim}")
        return EmbeddingVector.of(values)

    def embed_image(self, image: RasterImage) -> EmbeddingVector:
        return self._embed("image", encode_image(image))

    def embed_text(self, text: str) -> EmbeddingVector:
        return self._embed("text", text)


class RemoteInpaintingProvider:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, trace_path=None) -> None:
        self._client = _WireClient(url, timeout, trace_path)

    def inpaint(self, image: RasterImage, mask: Rect, prompt: str, n: int, seed: int) -> list[RasterImage]:
        data = self._client.post(
            {"image": encode_image(image), "mask": mask.to_dict(), "prompt": prompt, "n": n, "seed": seed}
        )
        payloads = data.get("images")
        if not isinstance(payloads, list):
            raise ProviderError(f"malformed inpaint response: {data!r}")
        return [decode_image(p) for p in payloads]


class RemoteRegionProvider:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, trace_path=None) -> None:
        self._client = _WireClient(url, timeout, trace_path)

    def propose_regions(self, image: RasterImage) -> list[Region]:
        data = self._client.post({"image": encode_image(image)})
        raw = data.get("regions")
        if not isinstance(raw, list):
            raise ProviderError(f"malformed regions response: {data!r}")
        regions = []
        for entry in raw:
            try:
                regions.append(
                    Region(bbox=Rect.from_dict(entry), confidence=float(entry.get("confidence", 1.0)))
                )
            except Exception as exc:
                raise ProviderError(f"malformed region entry {entry!r}: {exc}") from exc
        return regions


class RemoteVQAProvider:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, trace_path=None) -> None:
        self._client = _WireClient(url, timeout, trace_path)

    def answer(self, image: RasterImage, prompt: str) -> str:
        data = self._client.post({"image": encode_image(image), "prompt": prompt})
        answer = data.get("answer")
        if not isinstance(answer, str):
            raise ProviderError(f"malformed vqa response: {data!r}")
        return answer


class RemoteDescriptionProvider:
    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, trace_path=None) -> None:
        self._client = _WireClient(url, timeout, trace_path)

    def describe(self, text: str) -> str:
        data = self._client.post({"text": text})
        description = data.get("description")
        if not isinstance(description, str):
            raise ProviderError(f"malformed describe response: {data!r}")
        return description
