"""Text embeddings used as skillbook keys and retrieval queries.

Two backends implement the same contract:

- :class:`HashingEmbedder` — deterministic feature hashing (lowercase word
  unigrams + bigrams, signed hashing into ``dim`` buckets, L2-normalized).
  Bit-stable across runs and platforms; every test runs on it.
- :class:`RemoteEmbedder` — HTTP client for a real sentence-encoder service
  (``POST /embed {"texts": [...]} -> {"vectors": [[...]]}``).

Empty or whitespace-only text embeds to the zero vector; every other
embedding has unit L2 norm.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_DIM = 256

_WORD_RE = re.compile(r"[a-z0-9]+")


class EmbeddingUnavailableError(Exception):
    """Raised when a remote embedding backend cannot be reached."""


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 if either vector is zero."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        return v
    return v / n


class HashingEmbedder:
    """Signed feature hashing over word unigrams and bigrams.

    Feature index and sign derive from blake2b of the feature string, so
    vectors are identical on every platform.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self.embedder_id = f"hashing-v1-d{dim}"

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        tokens = _WORD_RE.findall(text.lower())
        if not tokens:
            return v
        features = list(tokens)
        features.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
        for feat in features:
            h = int.from_bytes(
                hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest(), "big"
            )
            sign = 1.0 if h & 1 else -1.0
            v[(h >> 1) % self.dim] += sign
        return _normalize(v)

    def embed_many(self, texts: Sequence[str]) -> list:
        return [self.embed(t) for t in texts]


class RemoteEmbedder:
    """Client for an external embedding service.

    The service's vector dimension is negotiated at construction (one probe
    request) and pinned; the skillbook file header records it.
    """

    def __init__(self, url: str, timeout: float = 10.0, client=None):
        import httpx

        self.url = url.rstrip("/")
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)
        probe = self.embed_many(["dimension probe"])
        self.dim = len(probe[0])
        self.embedder_id = f"remote:{self.url}:d{self.dim}"

    def embed_many(self, texts: Sequence[str]) -> list:
        try:
            resp = self._client.post(f"{self.url}/embed", json={"texts": list(texts)})
            resp.raise_for_status()
            vectors = resp.json()["vectors"]
        except Exception as exc:  # noqa: BLE001 - normalized error surface
            raise EmbeddingUnavailableError(str(exc)) from exc
        out = []
        for text, vec in zip(texts, vectors):
            v = np.asarray(vec, dtype=np.float64)
            out.append(np.zeros_like(v) if not text.strip() else _normalize(v))
        return out

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


@dataclass(frozen=True)
class EmbeddingKey:
    """Key identifying a skillbook entry: action vector, object vector, and
    an optional scene vector.  The global key carries ``is_global`` and zero
    vectors; retrieval never scores it."""

    v_act: tuple
    v_obj: tuple
    v_scene: Optional[tuple]
    action_text: str
    object_texts: tuple
    is_global: bool = False

    @property
    def act(self) -> np.ndarray:
        return np.asarray(self.v_act)

    @property
    def obj(self) -> np.ndarray:
        return np.asarray(self.v_obj)

    @property
    def scene(self) -> Optional[np.ndarray]:
        return None if self.v_scene is None else np.asarray(self.v_scene)


def embed_key(
    embedder,
    action_text: str,
    object_texts: Sequence[str],
    scene=None,
) -> EmbeddingKey:
    """Build a non-global key.

    The object vector is the renormalized mean of the per-object embeddings
    (order-independent), or the zero vector for an empty object list.  When
    a scene is given, its canonical digest is embedded as the scene vector.
    """
    if not action_text:
        raise ValueError("action_text must be non-empty for a non-global key")
    v_act = embedder.embed(action_text)
    objs = list(object_texts)
    if objs:
        v_obj = _normalize(np.mean([embedder.embed(t) for t in objs], axis=0))
    else:
        v_obj = np.zeros(embedder.dim, dtype=np.float64)
    v_scene = None
    if scene is not None:
        v_scene = tuple(embedder.embed(scene.digest()))
    return EmbeddingKey(
        v_act=tuple(v_act),
        v_obj=tuple(v_obj),
        v_scene=v_scene,
        action_text=action_text,
        object_texts=tuple(objs),
        is_global=False,
    )


def global_key(dim: int) -> EmbeddingKey:
    """The shared key under which task-invariant guidance is stored."""
    zero = tuple(np.zeros(dim))
    return EmbeddingKey(
        v_act=zero,
        v_obj=zero,
        v_scene=None,
        action_text="",
        object_texts=(),
        is_global=True,
    )
