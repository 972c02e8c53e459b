from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import GradTape, Tensor


class NondeterministicFunction(RuntimeError):
    pass


def _as_scalar(out) -> float:
    data = out.data if isinstance(out, Tensor) else np.asarray(out)
    if data.size != 1:
        raise ValueError("gradient check needs a scalar-valued function")
    return float(data.reshape(()))


def check_gradients(
    function: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    step: float = 1e-5,
    mode: str = "float64",
    per_param: bool = False,
):
    """Compare tape gradients with central differences.

    The error for one parameter tensor is ``max |analytic - numeric|`` scaled by
    ``max |numeric|`` of that tensor, so entries whose true gradient is ~0 do not
    turn difference round-off into a huge ratio. Returns the worst tensor, or a
    per-parameter dict when ``per_param`` is set.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if mode != "float64":
        raise ValueError("gradient checks run in float64 mode only")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        return _as_scalar(function({k: Tensor(v) for k, v in values.items()}))

    f0 = evaluate(base)
    if evaluate(base) != f0:
        raise NondeterministicFunction("function output differs between identical calls")

    with GradTape() as tape:
        watched = tape.watch_all(base)
        loss = function(watched)
    analytic = tape.gradient(loss)

    errors = {}
    for name, value in base.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = evaluate(base)
            flat[i] = orig - step
            fm = evaluate(base)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * step)
        scale = float(np.abs(numeric).max(initial=0.0))
        errors[name] = float(np.abs(grad - numeric).max(initial=0.0)) / (scale + 1e-12)
    if per_param:
        return errors
    return max(errors.values(), default=0.0)
