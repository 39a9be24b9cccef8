import numpy as np
import pytest

from todcl import autograd as ag
from todcl.adapters import AdapterBank, AdapterConflictError, AdapterParams, adapter_forward, select_adapter
from todcl.autograd import Tensor
from todcl.model import LmConfig, TransformerLM

from helpers import gradcheck


@pytest.fixture
def base():
    return TransformerLM(LmConfig(vocab_size=15, d_model=8, n_layers=2, n_heads=2, d_ff=16, max_seq_len=16), seed=1)


def test_fresh_adapter_is_exact_identity(base):
    bank = AdapterBank(base)
    a = bank.spawn("t1", bottleneck=4, init_seed=7)
    toks = np.array([[1, 9, 10, 11], [1, 12, 13, 0]])
    np.testing.assert_array_equal(base.forward(toks).data, base.forward(toks, a).data)


def test_adapter_formula_on_normalised_row():
    d = 4
    a = AdapterParams.init("t", d, 1, bottleneck=d)
    a.weights["l0.w_e"].data = np.eye(d)
    a.weights["l0.w_d"].data = np.eye(d)
    h = np.array([[0.5, -1.0, 2.0, 0.1]])
    ln = (h - h.mean()) / np.sqrt(h.var() + 1e-5)
    out = adapter_forward(Tensor(h), a, 0).data
    np.testing.assert_allclose(out, np.maximum(ln, 0) + h, atol=1e-12)


def test_adapter_gradcheck():
    a = AdapterParams.init("t", 6, 1, bottleneck=3, seed=2)
    a.weights["l0.w_d"].data = np.random.default_rng(0).normal(size=(3, 6))
    h = Tensor(np.random.default_rng(1).normal(size=(2, 6)), requires_grad=True)
    w = np.random.default_rng(2).normal(size=(2, 6))
    err = gradcheck(lambda: ag.tensor_sum(ag.mul(adapter_forward(h, a, 0), Tensor(w))), [h] + a.parameters())
    assert err < 1e-4


def test_parameter_count(base):
    a = AdapterBank(base).spawn("t", bottleneck=5)
    d, L, b = 8, 2, 5
    assert a.num_params() == L * (2 * d + 2 * d * b)


def test_errors(base):
    bank = AdapterBank(base)
    a = bank.spawn("t", 3)
    with pytest.raises(AdapterConflictError):
        bank.spawn("t", 3)
    with pytest.raises(IndexError):
        adapter_forward(Tensor(np.zeros((1, 8))), a, 2)
    with pytest.raises(ag.ShapeError):
        adapter_forward(Tensor(np.zeros((1, 7))), a, 0)
    with pytest.raises(ValueError):
        AdapterBank(base).select([9, 10])
    with pytest.raises(ValueError):
        AdapterParams.init("x", 8, 2, bottleneck=0)


def test_selection_ties_go_to_first(base):
    bank = AdapterBank(base)
    bank.spawn("a", 3)
    bank.spawn("b", 3)
    idx, alpha = select_adapter(bank, [9, 10, 11])
    assert alpha[0] == alpha[1] and idx == 0


def test_selection_picks_lowest_perplexity(base):
    bank = AdapterBank(base)
    bank.spawn("a", 3)
    b = bank.spawn("b", 3)
    # push adapter b toward predicting token 10 everywhere
    b.weights["l1.w_d"].data[:] = 0.0
    b.weights["l1.w_e"].data[:] = 1.0
    b.weights["l1.w_d"].data[:, :] = 5 * base.params["tok_emb"].data[10] / 3
    alpha = bank.perplexities([[10, 10, 10]])
    assert alpha.shape == (1, 2)
    assert bank.select([10, 10, 10])[0] == int(np.argmin(alpha[0]))
    assert bank.perplexities([[10, 10, 10]], upto=1).shape == (1, 1)


def test_snapshot_restore(base):
    a = AdapterBank(base).spawn("t", 3)
    snap = a.snapshot()
    fp = a.fingerprint()
    a.weights["l0.w_e"].data += 1
    assert a.fingerprint() != fp
    a.restore(snap)
    assert a.fingerprint() == fp
