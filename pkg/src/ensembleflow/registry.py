"""Registry resolving ModelSpec.function_ref names to callables.

A model function has the signature::

    fn(params, inputs, state, window, resolution) -> (outputs, new_state)

where ``params`` is a name->value mapping, ``inputs`` maps input variable
names to aligned SeriesWindows covering the task's input window, ``state``
is the opaque state threaded from the same scenario branch's previous step
(None at step 0 and for stateless models), ``window`` is the [lo, hi)
output window and ``resolution`` its ticks per sample.  ``outputs`` maps
every declared output variable name to a value array with one entry per
output sample; ``new_state`` is ignored for stateless models.
"""

from __future__ import annotations

from typing import Callable


class ModelRegistry:
    def __init__(self):
        self._functions: dict[str, Callable] = {}

    def register(self, name: str, fn: Callable) -> None:
        if name in self._functions:
            raise ValueError(f"function {name!r} already registered")
        self._functions[name] = fn

    def has(self, name: str) -> bool:
        return name in self._functions

    def resolve(self, name: str) -> Callable:
        try:
            return self._functions[name]
        except KeyError:
            raise KeyError(f"no registered model function named {name!r}") from None

    def names(self) -> list[str]:
        return sorted(self._functions)
