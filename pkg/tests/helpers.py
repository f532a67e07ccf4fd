"""Shared oracles for the test modules."""
import numpy as np

from mbrec import ndcore as nd
from mbrec.gradcheck import central_difference, relative_error


def op_grad_error(fn, arrays, seed=0, h=1e-6):
    """Tape gradient vs central differences for ``sum(w * fn(*inputs))``."""
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=float) for a in arrays]
    with nd.Tape() as tape:
        ts = [tape.watch(a, f"x{i}") for i, a in enumerate(arrays)]
        out = fn(*ts)
        w = rng.normal(size=out.shape)
        loss = nd.sum(out * w)
        grads = tape.backward(loss)

    def f():
        return float(np.sum(fn(*[nd.Tensor(a) for a in arrays]).data * w))

    return max(relative_error(grads[f"x{i}"], central_difference(f, a, h)) for i, a in enumerate(arrays))


# the 2-user / 3-item / view+buy log shipped as mbrec.FIXTURE
FIXTURE_LINES = [
    "u1\ti1\tview",
    "u1\ti2\tview",
    "u1\ti1\tbuy",
    "u2\ti3\tview",
    "u2\ti2\tbuy",
    "u1\ti2\tbuy",
]
