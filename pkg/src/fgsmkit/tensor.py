"""Dense tensor helpers and a portable seedable RNG.

Tensors are plain ``numpy.ndarray`` values (row-major). The helpers here add
shape checking and the few semantics the rest of the package pins down
(left-to-right matmul accumulation, lowest-index argmax ties, SplitMix64
randomness).
"""

import numpy as np

DEFAULT_DTYPE = np.float32

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (used for seed derivation)."""
    z = np.array([(x + 0x9E3779B97F4A7C15) & _MASK64], dtype=np.uint64)
    return int(_mix(z)[0])


class Rng:
    """SplitMix64 stream.

    The generator is counter based, so a block of ``n`` words is produced in
    one vectorised call and the stream is identical on every platform.
    Uniforms take the high 53 bits; normals use Box-Muller.
    """

    def __init__(self, seed: int):
        if not 0 <= seed <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.state = seed

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
        self.state = (self.state + n * 0x9E3779B97F4A7C15) & _MASK64
        return _mix(z)

    def uniform(self, shape=(), low=0.0, high=1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape=(), mean=0.0, stddev=1.0) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform((2, pairs))
        # 1 - u lies in (0, 1], keeps the log finite
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (mean + stddev * z).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def spawn(self, stream_index: int) -> "Rng":
        """Independent child stream: seed = splitmix(parent_seed + index)."""
        return Rng(splitmix64((self.seed + stream_index) & _MASK64))


def _check_shape(shape):
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise ValueError(f"shape must be non-empty with positive dims, got {shape}")
    return shape


def zeros(shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def randn(shape, rng: Rng, mean=0.0, stddev=1.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
    if not stddev > 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    return rng.normal(_check_shape(shape), mean, stddev).astype(dtype)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a, b):
    _same_shape(a, b)
    return a + b


def sub(a, b):
    _same_shape(a, b)
    return a - b


def mul(a, b):
    _same_shape(a, b)
    return a * b


def scale(a, c):
    return a * np.asarray(c, dtype=a.dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product with plain left-to-right accumulation over the
    inner index, so results equal a naive triple loop bit for bit."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    dtype = np.result_type(a, b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=dtype)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def sign(a: np.ndarray) -> np.ndarray:
    return np.sign(a)


def clip(a: np.ndarray, lo, hi) -> np.ndarray:
    if lo > hi:
        raise ValueError(f"clip bounds inverted: lo={lo} > hi={hi}")
    return np.clip(a, np.asarray(lo, dtype=a.dtype), np.asarray(hi, dtype=a.dtype))


def argmax(a: np.ndarray, axis=-1) -> np.ndarray:
    # numpy returns the first occurrence, i.e. ties go to the lowest index
    return np.argmax(a, axis=axis)


def all_finite(a: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(a)))
