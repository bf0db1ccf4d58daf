import pytest
import torch

from mmmrec.corpus import Visit
from mmmrec.errors import ValidationError
from mmmrec.patient import PatientEncoder, VisitCodes, embed_visit, encode_patient


@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return PatientEncoder(10, 10, emb_dim=4, dim=3).double()


def test_embed_singleton_and_idempotent():
    table = torch.randn(6, 4, dtype=torch.float64)
    assert torch.equal(embed_visit([2], table), table[2])
    torch.testing.assert_close(embed_visit([2, 2], table), table[2], rtol=0, atol=1e-15)
    torch.testing.assert_close(embed_visit([1, 3], table), (table[1] + table[3]) / 2)
    assert torch.equal(embed_visit([0, 5], torch.zeros(6, 4)), torch.zeros(4))


def test_embed_out_of_range():
    with pytest.raises(ValidationError, match="code 6"):
        embed_visit([1, 6], torch.zeros(6, 2))
    with pytest.raises(ValidationError):
        embed_visit([], torch.zeros(6, 2))


def test_zero_params_give_zero_state(encoder):
    with torch.no_grad():
        for p in encoder.parameters():
            p.zero_()
    h = encode_patient([Visit([1, 2], [3], {0})], encoder)
    assert torch.equal(h, torch.zeros(3, dtype=torch.float64))


def test_first_visit_is_length_one_sequence(encoder):
    visits = [Visit([1, 2], [3], {0}), Visit([4], [5], {1})]
    seq = encoder.sequence_outputs(VisitCodes.from_visits(visits))
    torch.testing.assert_close(seq[0], encode_patient(visits[:1], encoder), rtol=0, atol=0)
    torch.testing.assert_close(seq[1], encode_patient(visits, encoder), rtol=0, atol=0)


def test_order_sensitivity(encoder):
    a, b = Visit([1, 2], [3], {0}), Visit([7], [8, 9], {1})
    assert not torch.allclose(encode_patient([a, b], encoder), encode_patient([b, a], encoder))


def test_shape_up_to_29_visits(encoder):
    visits = [Visit([t % 10], [(t * 3) % 10], {0}) for t in range(29)]
    codes = VisitCodes.from_visits(visits)
    for t in (1, 7, 29):
        h = encoder(codes.prefix(t))
        assert h.shape == (3,) and torch.isfinite(h).all()


def test_deterministic(encoder):
    visits = [Visit([1, 2], [3], {0}), Visit([4], [], {1})]
    assert torch.equal(encode_patient(visits, encoder), encode_patient(visits, encoder))


def test_visit_without_procedures_pools_to_zero(encoder):
    codes = VisitCodes.from_visits([Visit([1], [], {0})])
    h = encoder(codes)
    assert torch.isfinite(h).all()


def test_empty_history():
    with pytest.raises(ValidationError):
        VisitCodes.from_visits([])


def test_prefix_bounds():
    codes = VisitCodes.from_visits([Visit([1], [2], {0}), Visit([3, 4], [5], {1})])
    assert codes.prefix(1).dx.tolist() == [1]
    assert codes.prefix(2).dx.tolist() == [1, 3, 4]
    with pytest.raises(ValidationError):
        codes.prefix(3)


def test_gradient_wrt_w1_matches_finite_differences(encoder):
    visits = [Visit([1, 2, 3], [4], {0})]
    codes = VisitCodes.from_visits(visits)
    W = encoder.project.weight
    g = torch.randn(3, dtype=torch.float64)

    def f():
        return (encoder(codes) * g).sum()

    f().backward()
    analytic = W.grad.clone()
    numeric = torch.zeros_like(W)
    eps = 1e-6
    with torch.no_grad():
        for idx in torch.cartesian_prod(*(torch.arange(s) for s in W.shape)):
            i, j = idx.tolist()
            W[i, j] += eps
            up = f().item()
            W[i, j] -= 2 * eps
            down = f().item()
            W[i, j] += eps
            numeric[i, j] = (up - down) / (2 * eps)
    rel = (analytic - numeric).norm() / numeric.norm()
    assert rel < 1e-4
