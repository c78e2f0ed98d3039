"""Reference HTTP server exposing any provider bundle over the wire schema.

Used in-process by the protocol tests and runnable standalone to smoke
remote adapters against the mocks:

    python -m anomforge.providers.stub_server --ontology o.json --port 8750

Routes mirror anomforge.providers.remote: /embed, /inpaint, /regions,
/vqa, /describe.
"""

from __future__ import annotations

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from anomforge.errors import AnomforgeError
from anomforge.providers import base as providers
from anomforge.providers.remote import decode_image, encode_image
from anomforge.providers.base import Rect


class ProviderStubServer:
    """Threaded HTTP server delegating wire requests to provider objects."""

    def __init__(
        self,
        embedding=None,
        inpainting=None,
        region=None,
        vqa=None,
        description=None,
        host: str = "127.0.0.1",
        port: int = 0,
    ) -> None:
        bundle = {
            "embedding": embedding,
            "inpainting": inpainting,
            "region": region,
            "vqa": vqa,
            "description": description,
        }

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # silence request logging
                pass

            def _reply(self, status: int, payload: dict) -> None:
                body = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    request = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._reply(400, {"error": "invalid JSON"})
                    return
                try:
                    self._reply(200, self._dispatch(self.path, request))
                except AnomforgeError as exc:
                    self._reply(422, {"error": str(exc)})
                except Exception as exc:  # pragma: no cover - defensive
                    self._reply(500, {"error": str(exc)})

            def _dispatch(self, path: str, request: dict) -> dict:
                if path == "/embed":
                    provider = bundle["embedding"]
                    if request.get("kind") == "image":
                        vector = provider.embed_image(decode_image(request["payload"]))
                    else:
                        vector = provider.embed_text(request["payload"])
                    return {"dim": vector.dim, "values": [float(v) for v in vector.values]}
                if path == "/inpaint":
                    results = bundle["inpainting"].inpaint(
                        decode_image(request["image"]),
                        Rect.from_dict(request["mask"]),
                        request["prompt"],
                        int(request["n"]),
                        int(request["seed"]),
                    )
                    return {"images": [encode_image(img) for img in results]}
                if path == "/regions":
                    regions = bundle["region"].propose_regions(decode_image(request["image"]))
                    return {
                        "regions": [
                            {**region.bbox.to_dict(), "confidence": region.confidence} for region in regions
                        ]
                    }
                if path == "/vqa":
                    answer = bundle["vqa"].answer(decode_image(request["image"]), request["prompt"])
                    return {"answer": answer}
                if path == "/describe":
                    return {"description": bundle["description"].describe(request["text"])}
                raise AnomforgeError(f"unknown route {path}")

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def url(self, route: str) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/{route.lstrip('/')}"

    def start(self) -> "ProviderStubServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "ProviderStubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main(argv=None) -> int:
    from anomforge.ontology import load_ontology
    from anomforge.providers.mock import (
        FixedAnswerVQAProvider,
        MockDescriptionProvider,
        MockEmbeddingProvider,
        MockInpaintingProvider,
    )

    parser = argparse.ArgumentParser(description="Serve mock providers over the anomforge wire protocol")
    parser.add_argument("--ontology", required=True)
    parser.add_argument("--port", type=int, default=8750)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--noise", type=float, default=0.0)
    args = parser.parse_args(argv)

    ontology = load_ontology(args.ontology)
    server = ProviderStubServer(
        embedding=MockEmbeddingProvider(ontology, seed=args.seed, dim=args.dim, noise=args.noise),
        inpainting=MockInpaintingProvider(ontology),
        vqa=FixedAnswerVQAProvider("a mock answer"),
        description=MockDescriptionProvider(ontology),
        port=args.port,
    )
    print(f"serving mock providers on port {server.port} (ctrl-c to stop)")
    try:
        server._server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
