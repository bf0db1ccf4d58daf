import pytest
import torch
from torch import nn

from mmmrec.drug import ElfDrugEncoder, PatchCNN, encode_drug, make_mlp, standardize
from mmmrec.errors import ValidationError
from mmmrec.features import compute_features, read_features, write_features


@pytest.fixture
def cnn():
    torch.manual_seed(0)
    return PatchCNN(8, feat_dim=5, channels=(2, 3)).double()


def test_cnn_output_shape(cnn):
    assert cnn(torch.rand(7, 8, 8, dtype=torch.float64)).shape == (7, 5)
    assert PatchCNN(10, 4)(torch.rand(2, 10, 10)).shape == (2, 4)


def test_cnn_rejects_tiny_patches():
    with pytest.raises(ValidationError):
        PatchCNN(3)


def test_encode_single_patch(cnn):
    p = torch.rand(1, 8, 8, dtype=torch.float64)
    assert torch.equal(encode_drug(p, cnn), cnn(p)[0])


def test_encode_duplicates_and_dominance(cnn):
    p = torch.rand(6, 8, 8, dtype=torch.float64)
    c = encode_drug(p, cnn)
    assert torch.equal(encode_drug(torch.cat([p, p]), cnn), c)
    feats = cnn(p)
    for j in range(6):
        assert torch.all(c >= feats[j])
    # each coordinate is attained by some patch
    assert torch.all((feats == c).any(dim=0))


def test_encode_empty(cnn):
    with pytest.raises(ValidationError):
        encode_drug(torch.zeros(0, 8, 8), cnn)


def test_project_identity_and_zero():
    mlp = make_mlp(4, 4, hidden=None).double()
    with torch.no_grad():
        mlp.weight.copy_(torch.eye(4))
        mlp.bias.zero_()
    C = torch.randn(5, 4, dtype=torch.float64)
    assert torch.equal(mlp(C), C)
    zero = make_mlp(4, 3)
    for p in zero.parameters():
        nn.init.zeros_(p)
    assert torch.equal(zero(C.float()), torch.zeros(5, 3))


def test_project_row_permutation():
    torch.manual_seed(1)
    mlp = make_mlp(6, 3).double()
    C = torch.randn(7, 6, dtype=torch.float64)
    perm = torch.randperm(7)
    assert torch.equal(mlp(C[perm]), mlp(C)[perm])


def _encoder(n=5, dim=3, feat=4):
    torch.manual_seed(2)
    return ElfDrugEncoder(n, dim, feat, mlp_hidden=6, features=torch.randn(n, feat)).double()


def test_global_vector_zero_state():
    enc = _encoder()
    with torch.no_grad():
        enc.global_ff.weight.zero_()
        enc.global_ff.bias.zero_()
    Y = torch.randn(5, 3, dtype=torch.float64)
    m_a, m_g = enc.global_vector(torch.zeros(3, dtype=torch.float64), Y)
    assert torch.equal(m_a, torch.full((5,), 0.5, dtype=torch.float64))
    # constant input: LN maps to its bias, zero at init
    assert torch.equal(m_g, torch.zeros(5, dtype=torch.float64))


def test_global_vector_ranges_and_layernorm():
    enc = _encoder()
    Y = enc.project(enc.drug_features())
    h = torch.randn(3, dtype=torch.float64) * 3
    m_a, m_g = enc.global_vector(h, Y)
    assert torch.all((m_a > 0) & (m_a < 1))
    assert abs(m_g.mean().item()) < 1e-6
    # undo the eps guard: the normalised vector has unit variance
    z = m_a + torch.relu(enc.global_ff(m_a))
    var = z.var(unbiased=False)
    assert abs((m_g * torch.sqrt((var + 1e-5) / var)).var(unbiased=False).item() - 1.0) < 1e-6
    torch.testing.assert_close(m_g, (z - z.mean()) / torch.sqrt(var + 1e-5), rtol=1e-12, atol=1e-12)


def test_m_a_monotone():
    enc = _encoder()
    Y = torch.randn(5, 3, dtype=torch.float64)
    h = torch.randn(3, dtype=torch.float64)
    base, _ = enc.global_vector(h, Y)
    Y2 = Y.clone()
    Y2[2] += 0.3 * h / h.norm()
    bumped, _ = enc.global_vector(h, Y2)
    assert bumped[2] > base[2]
    assert torch.equal(torch.cat([bumped[:2], bumped[3:]]), torch.cat([base[:2], base[3:]]))


def test_global_vector_dim_mismatch():
    with pytest.raises(ValidationError):
        _encoder().global_vector(torch.zeros(4, dtype=torch.float64), torch.zeros(5, 3, dtype=torch.float64))


def test_global_vector_gradient_fd():
    enc = _encoder()
    Y = enc.project(enc.drug_features()).detach()
    h = torch.randn(3, dtype=torch.float64, requires_grad=True)
    w = torch.randn(5, dtype=torch.float64)
    (enc.global_vector(h, Y)[1] * w).sum().backward()
    eps = 1e-6
    numeric = torch.zeros(3, dtype=torch.float64)
    with torch.no_grad():
        for k in range(3):
            d = torch.zeros(3, dtype=torch.float64)
            d[k] = eps
            numeric[k] = ((enc.global_vector(h + d, Y)[1] * w).sum() - (enc.global_vector(h - d, Y)[1] * w).sum()) / (2 * eps)
    assert (h.grad - numeric).norm() / numeric.norm() < 1e-4


def test_standardize():
    C = torch.tensor([[1.0, 5.0], [3.0, 5.0]])
    S = standardize(C)
    assert torch.allclose(S[:, 0], torch.tensor([-1.0, 1.0]), atol=1e-5)
    assert torch.equal(S[:, 1], torch.zeros(2))


def test_frozen_encoder_matches_encode_drug():
    torch.manual_seed(3)
    cnn = PatchCNN(8, 4, (2, 2))
    patches = torch.rand(3, 5, 8, 8)
    enc = ElfDrugEncoder(3, 2, 4, cnn=cnn, patches=patches)
    expected = torch.stack([encode_drug(p, cnn) for p in patches])
    assert torch.equal(enc.features, expected)
    assert all(not p.requires_grad for p in cnn.parameters())


def test_trainable_cnn_receives_gradients():
    torch.manual_seed(3)
    cnn = PatchCNN(8, 4, (2, 2))
    enc = ElfDrugEncoder(3, 2, 4, cnn=cnn, patches=torch.rand(3, 2, 8, 8), train_cnn=True)
    m_a, m_g = enc(torch.randn(2))
    m_g.pow(2).sum().backward()
    assert cnn.conv1.weight.grad is not None and cnn.conv1.weight.grad.abs().sum() > 0


def test_encoder_needs_inputs():
    with pytest.raises(ValidationError):
        ElfDrugEncoder(3, 2, 4)
    with pytest.raises(ValidationError):
        ElfDrugEncoder(3, 2, 4, features=torch.zeros(3, 5))


def test_features_csv_roundtrip(tmp_path):
    torch.manual_seed(4)
    feats = compute_features(torch.rand(3, 2, 8, 8).numpy(), PatchCNN(8, 4, (2, 2)))
    write_features(tmp_path / "f.csv", feats)
    back = read_features(tmp_path / "f.csv", 3)
    assert (back == feats.astype(float)).all()
    with pytest.raises(ValidationError):
        read_features(tmp_path / "f.csv", 4)
