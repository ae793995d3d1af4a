"""Named parameter storage with per-name freezing."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["ParameterStore"]


class ParameterStore:
    """A flat, ordered map of unique names to trainable tensors.

    Frozen parameters keep ``requires_grad=False``: they act as constants in
    the graph and the optimizer skips them, so their bytes never change.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, value, dtype=None) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value), dtype=dtype)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    # -- freezing ------------------------------------------------------------

    def freeze(self, *names: str) -> None:
        for name in names:
            self._check(name)
            self._frozen.add(name)
            self._params[name].requires_grad = False

    def unfreeze(self, *names: str) -> None:
        for name in names:
            self._check(name)
            self._frozen.discard(name)
            self._params[name].requires_grad = True

    def freeze_prefix(self, prefix: str) -> list[str]:
        hit = [n for n in self._params if n.startswith(prefix)]
        self.freeze(*hit)
        return hit

    def unfreeze_all(self) -> None:
        self.unfreeze(*list(self._frozen))

    def is_frozen(self, name: str) -> bool:
        self._check(name)
        return name in self._frozen

    def frozen_names(self) -> list[str]:
        return sorted(self._frozen)

    def _check(self, name: str) -> None:
        if name not in self._params:
            raise KeyError(f"unknown parameter: {name!r}")

    # -- gradients / state -----------------------------------------------------

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = set(self._params) - set(state)
        if strict and missing:
            raise KeyError(f"missing parameters in state: {sorted(missing)}")
        for name, arr in state.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unexpected parameter in state: {name!r}")
                continue
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name!r}: {t.data.shape} vs {arr.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)
