"""Content-addressed blob storage.

Large payloads (model parameters, noised gradients) live off-chain; the
chain records only their SHA-256 digests. A blob store resolves those
digests back to bytes. Writes are idempotent: the key is the content.
"""

from __future__ import annotations

import os

from .codec import sha256


class BlobError(KeyError):
    """Digest does not resolve in this store."""


class MemoryBlobStore:
    """Dict-backed store for in-process sessions and tests."""

    def __init__(self) -> None:
        self._blobs: dict[bytes, bytes] = {}

    def put(self, data: bytes) -> bytes:
        digest = sha256(data)
        self._blobs[digest] = data
        return digest

    def get(self, digest: bytes) -> bytes:
        try:
            return self._blobs[digest]
        except KeyError:
            raise BlobError(digest.hex()) from None

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)


class FileBlobStore:
    """Directory of files named by lowercase hex digest."""

    def __init__(self, root: str) -> None:
        self.root = root
        os.makedirs(root, exist_ok=True)

    def _path(self, digest: bytes) -> str:
        return os.path.join(self.root, digest.hex())

    def put(self, data: bytes) -> bytes:
        digest = sha256(data)
        path = self._path(digest)
        if not os.path.exists(path):
            tmp = path + ".tmp"
            with open(tmp, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        return digest

    def get(self, digest: bytes) -> bytes:
        try:
            with open(self._path(digest), "rb") as f:
                return f.read()
        except FileNotFoundError:
            raise BlobError(digest.hex()) from None

    def __contains__(self, digest: bytes) -> bool:
        return os.path.exists(self._path(digest))

    def __len__(self) -> int:
        return len([n for n in os.listdir(self.root) if not n.endswith(".tmp")])
