import numpy as np
import pytest

from simac.layers import (
    Adam,
    Linear,
    Module,
    TransformerBlock,
    load_checkpoint,
    save_checkpoint,
)
from simac.tensor import Tensor


class Pair(Module):
    def __init__(self, rng):
        self.a = Linear(3, 2, rng)
        self.blocks = [Linear(2, 2, rng), Linear(2, 1, rng, bias=False)]


def test_named_parameters_walk_children_and_lists():
    names = [n for n, _ in Pair(np.random.default_rng(0)).named_parameters()]
    assert names == ["a.weight", "a.bias", "blocks.0.weight", "blocks.0.bias", "blocks.1.weight"]


def test_checkpoint_round_trip(tmp_path):
    m = Pair(np.random.default_rng(0))
    save_checkpoint(tmp_path / "ck", m.state_dict())
    idx = (tmp_path / "ck.idx").read_text().splitlines()
    assert idx[0] == "a.weight\t3,2\t0"
    other = Pair(np.random.default_rng(1))
    other.load_state_dict(load_checkpoint(tmp_path / "ck"))
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), other.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)


def test_checkpoint_mismatch_is_reported(tmp_path):
    save_checkpoint(tmp_path / "ck", {"a.weight": np.zeros((3, 2))})
    with pytest.raises(KeyError, match="mismatch"):
        Pair(np.random.default_rng(0)).load_state_dict(load_checkpoint(tmp_path / "ck"))


def test_adam_with_zero_gradient_keeps_parameters():
    m = Pair(np.random.default_rng(0))
    before = m.state_dict()
    opt = Adam(m.parameters())
    for p in m.parameters():
        p.grad = np.zeros_like(p.data)
    opt.step()
    for n, p in m.named_parameters():
        np.testing.assert_array_equal(p.data, before[n])


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)


def test_key_mask_hides_positions():
    rng = np.random.default_rng(3)
    blk = TransformerBlock(8, 2, 2, rng)
    x = rng.standard_normal((1, 5, 8))
    mask = np.array([[1, 1, 1, 0, 0]])
    y1 = blk(Tensor(x), mask).data
    x2 = x.copy()
    x2[0, 3:] = rng.standard_normal((2, 8))
    y2 = blk(Tensor(x2), mask).data
    np.testing.assert_array_equal(y1[0, :3], y2[0, :3])
