"""Observable-function dictionaries lifting plant states into feature space.

A dictionary maps a plant state vector to an N-dimensional feature vector
g(x).  Fitted predictors and synthesized gains operate on g(x), so every
dictionary carries a serializable descriptor that lets a saved gain be
re-deployed with the matching lift.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ObservableDictionary",
    "monomial_dictionary",
    "monomials_deg2",
    "probe_dictionary",
    "identity_dictionary",
    "dictionary_from_descriptor",
]


@dataclass(frozen=True)
class ObservableDictionary:
    """A deterministic map from state vectors to feature vectors.

    Attributes
    ----------
    name : str
        Registry name used in descriptors.
    n_features : int
        Feature count N.
    evaluate : callable
        Maps an array of shape (..., state_dim) to (..., N).  Must be
        deterministic: repeated evaluation on the same state is bitwise
        identical.
    labels : tuple of str
        Per-feature names, state coordinates first when the dictionary
        embeds the state.
    params : dict
        Constructor parameters, enough to rebuild the dictionary.
    """

    name: str
    n_features: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    labels: tuple = ()
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=float))

    def descriptor(self):
        """Serializable {name, params} record stored alongside models."""
        return {"name": self.name, "params": dict(self.params)}


def _monomial_label(exponents):
    parts = []
    for i, e in enumerate(exponents):
        if e == 0:
            continue
        base = f"x{i + 1}"
        parts.append(base if e == 1 else f"{base}^{e}")
    return "*".join(parts) if parts else "1"


def monomial_dictionary(exponents):
    """Dictionary of monomials given as a list of exponent tuples.

    ``exponents=[(1, 0), (0, 1), (2, 0)]`` yields g(x) = [x1, x2, x1^2].
    Feature ordering follows the given list; put state coordinates first
    so that output-weight matrices align with features.
    """
    exps = [tuple(int(e) for e in row) for row in exponents]
    if not exps:
        raise ValueError("need at least one exponent tuple")
    dim = len(exps[0])
    if any(len(row) != dim for row in exps):
        raise ValueError("exponent tuples must have uniform length")
    if any(e < 0 for row in exps for e in row):
        raise ValueError("exponents must be nonnegative")
    emat = np.array(exps, dtype=float)  # (N, dim)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != dim:
            raise ValueError(f"expected state dimension {dim}, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite state")
        # product over coordinates of x_i**e_i, batched over leading axes
        return np.prod(x[..., None, :] ** emat, axis=-1)

    labels = tuple(_monomial_label(row) for row in exps)
    return ObservableDictionary(
        name="monomials",
        n_features=len(exps),
        evaluate=evaluate,
        labels=labels,
        params={"exponents": [list(row) for row in exps]},
    )


def monomials_deg2():
    """Monomials of a 2-state plant up to second order.

    Ordering is fixed: g(x) = [x1, x2, x1^2, x2^2, x1*x2].
    """
    return monomial_dictionary([(1, 0), (0, 1), (2, 0), (0, 2), (1, 1)])


def probe_dictionary(probes, field_len):
    """Dictionary sampling a spatial field at fixed probe indices.

    The feature vector is the field at the probe indices, in probe order.
    """
    idx = np.asarray(probes, dtype=int)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("probes must be a nonempty index vector")
    if np.any(idx < 0) or np.any(idx >= field_len):
        raise ValueError(f"probe index out of range for field length {field_len}")

    def evaluate(y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != field_len:
            raise ValueError(f"expected field length {field_len}, got {y.shape[-1]}")
        return y[..., idx]

    labels = tuple(f"y[{i}]" for i in idx)
    return ObservableDictionary(
        name="probes",
        n_features=idx.size,
        evaluate=evaluate,
        labels=labels,
        params={"probes": idx.tolist(), "field_len": int(field_len)},
    )


def identity_dictionary(dim):
    """Identity lift, for data that is already in feature space."""

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != dim:
            raise ValueError(f"expected state dimension {dim}, got {x.shape[-1]}")
        return x

    return ObservableDictionary(
        name="identity",
        n_features=dim,
        evaluate=evaluate,
        labels=tuple(f"x{i + 1}" for i in range(dim)),
        params={"dim": int(dim)},
    )


_REGISTRY = {
    "monomials": lambda params: monomial_dictionary(params["exponents"]),
    "probes": lambda params: probe_dictionary(params["probes"], params["field_len"]),
    "identity": lambda params: identity_dictionary(params["dim"]),
}


def dictionary_from_descriptor(descriptor):
    """Rebuild a dictionary from a {name, params} descriptor."""
    name = descriptor["name"]
    if name not in _REGISTRY:
        raise KeyError(f"unknown dictionary '{name}'")
    return _REGISTRY[name](descriptor.get("params", {}))
