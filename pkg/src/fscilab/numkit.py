"""Deterministic numeric core.

Dense float64 vectors/matrices live in plain numpy arrays; this module adds
the named-parameter container, the counter-based seeded RNG, the SGD update,
softmax/cosine primitives, and the finite-difference gradient checker that
every hand-derived loss in the repo is validated against.
"""

import hashlib

import numpy as np

from .errors import (
    DegenerateVectorError,
    NumericError,
    ParameterError,
    ShapeError,
)


def as_f64(values, name="array"):
    """Coerce to a float64 numpy array, rejecting non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


class SeededRng:
    """Counter-based RNG (Philox) so that one seed yields one bit-exact
    draw sequence on every platform."""

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def normal(self, shape=None):
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, shape=None):
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high=None):
        return int(self._gen.integers(low, high))

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def derive(self, label):
        """Independent substream keyed by a string label (stable across runs)."""
        digest = hashlib.blake2b(
            f"{self.seed}/{label}".encode("utf-8"), digest_size=8
        ).digest()
        return SeededRng(int.from_bytes(digest, "little"))


class ParamSet:
    """Named collection of float64 arrays with deterministic iteration order.

    Insertion order is the iteration order; names are unique. Arithmetic
    helpers return new ParamSets so callers keep single-writer semantics.
    """

    def __init__(self, items=()):
        self._arrays = {}
        pairs = items.items() if isinstance(items, dict) else items
        for name, arr in pairs:
            if name in self._arrays:
                raise ParameterError(f"duplicate parameter name {name!r}")
            self._arrays[name] = as_f64(arr, name)

    def __len__(self):
        return len(self._arrays)

    def __contains__(self, name):
        return name in self._arrays

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, arr):
        self._arrays[name] = as_f64(arr, name)

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self):
        return ParamSet((n, a.copy()) for n, a in self._arrays.items())

    def zeros_like(self):
        return ParamSet((n, np.zeros_like(a)) for n, a in self._arrays.items())

    def same_layout(self, other):
        if self.names() != other.names():
            return False
        return all(self[n].shape == other[n].shape for n in self._arrays)

    def add(self, other, scale=1.0):
        if not self.same_layout(other):
            raise ShapeError("ParamSet layouts differ")
        return ParamSet(
            (n, self[n] + scale * other[n]) for n in self._arrays
        )

    def l2_sq(self):
        return float(sum(np.sum(a * a) for a in self._arrays.values()))

    def to_flat(self):
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self._arrays.values()])

    def from_flat(self, flat):
        out = ParamSet()
        pos = 0
        for n, a in self._arrays.items():
            out[n] = flat[pos : pos + a.size].reshape(a.shape)
            pos += a.size
        if pos != flat.size:
            raise ShapeError("flat vector length does not match ParamSet")
        return out


def softmax_with_temperature(scores, tau):
    """Stable softmax of scores/tau (max-subtracted)."""
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    s = as_f64(scores, "scores")
    if s.ndim != 1 or s.size == 0:
        raise ParameterError("scores must be a nonempty 1-d vector")
    z = s / tau
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def cosine_similarity(u, v):
    """u.v / (|u||v|), clamped to [-1, 1] against rounding."""
    u = as_f64(u, "u")
    v = as_f64(v, "v")
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"dim mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def sgd_step(params, grads, lr, weight_decay=0.0):
    """One SGD update: p <- p - lr * (g + weight_decay * p); lr=0 is the
    identity."""
    if lr < 0:
        raise ParameterError(f"lr must be nonnegative, got {lr}")
    if weight_decay < 0:
        raise ParameterError(f"weight_decay must be nonnegative, got {weight_decay}")
    if not params.same_layout(grads):
        raise ShapeError("params and grads have different names or shapes")
    for name in params.names():
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for {name!r}")
    return ParamSet(
        (n, p - lr * (grads[n] + weight_decay * p)) for n, p in params.items()
    )


def gradcheck(fn, params, epsilon=1e-6):
    """Compare fn's analytic gradients against central differences.

    fn(ParamSet) -> (loss, grads). Returns the max over coordinates of
    |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
    """
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    loss0, analytic = fn(params)
    if not np.isfinite(loss0):
        raise NumericError("loss is non-finite at the evaluation point")
    if not params.same_layout(analytic):
        raise ShapeError("analytic gradient layout does not match params")

    worst = 0.0
    work = params.copy()
    for name in params.names():
        flat_p = work[name].ravel()
        flat_a = analytic[name].ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + epsilon
            up, _ = fn(work)
            flat_p[i] = orig - epsilon
            down, _ = fn(work)
            flat_p[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"loss non-finite while perturbing {name!r}")
            numeric = (up - down) / (2.0 * epsilon)
            a = flat_a[i]
            rel = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            if rel > worst:
                worst = rel
    return worst
