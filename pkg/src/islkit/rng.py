"""Deterministic, splittable random streams.

Every sampler in the package draws from a :class:`RandomSource`, a thin
wrapper over the counter-based Philox bit generator.  A source is keyed by
a 64-bit seed plus a path of substream labels; distinct labels yield
statistically independent streams, so the noise / data / projection streams
of a training run never interact.  Gaussians are produced by Box-Muller on
the raw uniform stream, which keeps output identical across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RandomSource"]

# smallest value substituted for a raw 0.0 draw so open-interval uniforms
# never touch the endpoints
_TINY = 2.0**-54


def _derive_key(seed: int, path: tuple[str, ...]) -> int:
    label = str(int(seed)) + "/" + "/".join(path)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


class RandomSource:
    """Seeded random stream with named, independent substreams.

    Two sources built from the same seed and split path produce bit-identical
    draw sequences.  Splitting is cheap; each split starts a fresh Philox
    counter under a key derived from the (seed, labels) path, so handing
    splits to parallel workers is safe.
    """

    def __init__(self, seed: int, _path: tuple[str, ...] = ()):
        if not (0 <= int(seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.path = _path
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(self.seed, _path)))

    def split(self, label: str) -> "RandomSource":
        """Derive an independent substream named by ``label``."""
        return RandomSource(self.seed, self.path + (str(label),))

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, path={'/'.join(self.path) or '.'})"

    # -- primitive draws ---------------------------------------------------

    def uniform(self, size=None) -> np.ndarray:
        """Uniform float64 draws on [0, 1)."""
        return self._gen.random(size)

    def open_uniform(self, size=None) -> np.ndarray:
        """Uniform draws on the open interval (0, 1).

        A raw 0.0 (probability 2^-53 per draw) is nudged to 2^-54 so inverse
        CDFs with singularities at the endpoints stay finite.
        """
        u = self._gen.random(size)
        return np.maximum(u, _TINY)

    def normal(self, size=None) -> np.ndarray:
        """Standard normal draws via Box-Muller on the uniform stream."""
        shape = () if size is None else (tuple(size) if np.iterable(size) else (int(size),))
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        # 1 - U lies in (0, 1], so the log below is always finite.
        u1 = 1.0 - self._gen.random(half)
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integer draws on [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_index(self, weights: np.ndarray, size: int) -> np.ndarray:
        """Categorical draws: indices distributed according to ``weights``."""
        w = np.asarray(weights, dtype=np.float64)
        cum = np.cumsum(w)
        cum /= cum[-1]
        u = self._gen.random(size)
        return np.searchsorted(cum, u, side="right")
