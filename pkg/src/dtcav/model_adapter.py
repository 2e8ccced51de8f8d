"""Uniform access to middle-layer activations and gradients.

Two adapters share the same surface:

* ``AnalyticAdapter`` - a closed-form reference model. Activations are a
  fixed seeded linear map of the flattened input (rows zero-mean, so a global
  intensity offset maps to the zero vector). Each target class k has a scalar
  head h_k(a) = w_k . a + (eps/2) a^T D_k a with seeded w_k and diagonal D_k,
  giving the exact gradient w_k + eps * D_k * a.
* ``FileBackedAdapter`` - reads tensors exported by an external model from
  ``activations.npy`` / ``gradients_<target>.npy`` / ``index.json``
  (one row per example id).
"""

import json
from pathlib import Path

import numpy as np

TARGETS = ("LV", "RV", "MYO", "FOREGROUND_SUM")
STRUCTURE_TARGETS = ("LV", "RV", "MYO")


class AdapterError(ValueError):
    pass


class AnalyticAdapter:
    def __init__(
        self,
        input_size: int = 348,
        latent_dim: int = 64,
        seed: int = 0,
        epsilon: float = 0.1,
        head_vectors: dict[str, np.ndarray] | None = None,
        head_diagonals: dict[str, np.ndarray] | None = None,
    ):
        self.input_size = int(input_size)
        self.latent_dim = int(latent_dim)
        self.epsilon = float(epsilon)
        n_pixels = self.input_size * self.input_size
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((self.latent_dim, n_pixels))
        self._weights = w - w.mean(axis=1, keepdims=True)

        self._heads: dict[str, np.ndarray] = {}
        self._diags: dict[str, np.ndarray] = {}
        for t in STRUCTURE_TARGETS:
            self._heads[t] = rng.standard_normal(self.latent_dim)
            self._diags[t] = rng.uniform(-1.0, 1.0, self.latent_dim)
        self._heads["FOREGROUND_SUM"] = sum(self._heads[t] for t in STRUCTURE_TARGETS)
        self._diags["FOREGROUND_SUM"] = sum(self._diags[t] for t in STRUCTURE_TARGETS)
        for t, v in (head_vectors or {}).items():
            self._set_head(self._heads, t, v)
        for t, v in (head_diagonals or {}).items():
            self._set_head(self._diags, t, v)

    def _set_head(self, table, target, vec):
        if target not in TARGETS:
            raise AdapterError(f"unknown target {target!r}")
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.latent_dim,):
            raise AdapterError(f"head vector for {target} has shape {vec.shape}")
        table[target] = vec

    def _check(self, inputs):
        for x in inputs:
            if x.shape != (self.input_size, self.input_size):
                raise AdapterError(
                    f"input shape {x.shape} != ({self.input_size}, {self.input_size})"
                )

    def activations(self, inputs) -> np.ndarray:
        self._check(inputs)
        if not len(inputs):
            return np.zeros((0, self.latent_dim))
        flat = np.stack([np.asarray(x, dtype=np.float64).ravel() for x in inputs])
        return flat @ self._weights.T

    def head_value(self, activation: np.ndarray, target: str) -> float:
        """Scalar head h_k(a); the quantity whose gradient is reported."""
        if target not in TARGETS:
            raise AdapterError(f"unknown target {target!r}")
        a = np.asarray(activation, dtype=np.float64)
        w, d = self._heads[target], self._diags[target]
        return float(w @ a + 0.5 * self.epsilon * a @ (d * a))

    def gradients(self, inputs, target: str) -> np.ndarray:
        if target not in TARGETS:
            raise AdapterError(f"unknown target {target!r}")
        acts = self.activations(inputs)
        return self._heads[target][None, :] + self.epsilon * self._diags[target][None, :] * acts


class FileBackedAdapter:
    def __init__(self, store_dir):
        self.store_dir = Path(store_dir)
        index = json.loads((self.store_dir / "index.json").read_text())
        self._rows = {str(ex): int(row) for row, ex in enumerate(index["examples"])}
        self._acts = np.load(self.store_dir / "activations.npy")
        self.latent_dim = self._acts.shape[1]
        self._grads: dict[str, np.ndarray] = {}

    def _lookup(self, example_ids) -> np.ndarray:
        rows = []
        for ex in example_ids:
            if ex not in self._rows:
                raise AdapterError(f"no exported tensors for example {ex!r}")
            rows.append(self._rows[ex])
        return np.asarray(rows, dtype=np.int64)

    def activations(self, example_ids) -> np.ndarray:
        return self._acts[self._lookup(example_ids)]

    def gradients(self, example_ids, target: str) -> np.ndarray:
        if target not in self._grads:
            path = self.store_dir / f"gradients_{target}.npy"
            if not path.is_file():
                raise AdapterError(f"missing gradient file {path}")
            grads = np.load(path)
            if grads.shape != self._acts.shape:
                raise AdapterError(
                    f"gradient shape {grads.shape} != activation shape {self._acts.shape}"
                )
            self._grads[target] = grads
        return self._grads[target][self._lookup(example_ids)]


def write_store(store_dir, example_ids, activations, gradients_by_target) -> None:
    """Write the file-backed adapter contract (the exporter's output format)."""
    store_dir = Path(store_dir)
    store_dir.mkdir(parents=True, exist_ok=True)
    activations = np.asarray(activations, dtype=np.float32)
    if activations.ndim != 2 or activations.shape[0] != len(example_ids):
        raise AdapterError("activations must be (n_examples, d)")
    np.save(store_dir / "activations.npy", activations)
    for target, grads in gradients_by_target.items():
        grads = np.asarray(grads, dtype=np.float32)
        if grads.shape != activations.shape:
            raise AdapterError(f"gradients for {target} must match activations shape")
        np.save(store_dir / f"gradients_{target}.npy", grads)
    (store_dir / "index.json").write_text(
        json.dumps({"examples": list(example_ids)}, indent=2)
    )
