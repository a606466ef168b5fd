import numpy as np
import pytest

from vcnet.config import ConfigError, read_kv, write_kv
from vcnet.optim import AdamState, NonFiniteGradient, adam_step, lr_at
from vcnet.tensor import Tensor


def _adam_reference(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_adam_matches_scalar_reference():
    grads = [0.3, -1.2, 0.05, 2.0]
    p = Tensor(np.array([1.5]))
    state = AdamState(lr=0.01)
    for g in grads:
        adam_step({"p": p}, {"p": np.array([g])}, state)
    assert p.data[0] == pytest.approx(_adam_reference(1.5, grads, 0.01), rel=1e-12)
    assert state.step == 4


def test_first_step_moves_by_lr():
    p = Tensor(np.array([0.0, 0.0]))
    adam_step({"p": p}, {"p": np.array([5.0, -1e-3])}, AdamState(), lr=1e-3)
    np.testing.assert_allclose(p.data, [-1e-3, 1e-3], rtol=1e-4)


def test_non_finite_gradient_aborts_before_update():
    a, b = Tensor(np.ones(2)), Tensor(np.ones(2))
    with pytest.raises(NonFiniteGradient):
        adam_step({"a": a, "b": b}, {"a": np.ones(2), "b": np.array([np.nan, 0.0])}, AdamState())
    np.testing.assert_array_equal(a.data, [1.0, 1.0])


def test_lr_breakpoints():
    total = 50
    sched = [lr_at(s, total) for s in range(total)]
    assert sched[0] == 1e-4 and sched[29] == 1e-4
    assert sched[30] == 5e-5 and sched[39] == 5e-5
    assert sched[40] == 2.5e-5 and sched[49] == 2.5e-5
    assert lr_at(0, 3, 1e-3) == 1e-3
    with pytest.raises(ValueError):
        lr_at(50, 50)


def test_kv_files(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nK = 3\nmode: low  # trailing\n\n")
    assert read_kv(p) == {"K": "3", "mode": "low"}
    write_kv(p, {"a": 1, "b": "x"})
    assert read_kv(p) == {"a": "1", "b": "x"}
    p.write_text("no separator here\n")
    with pytest.raises(ConfigError):
        read_kv(p)
