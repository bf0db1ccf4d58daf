import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmmrec import elf
from mmmrec.elf import (
    ANGSTROM_TO_BOHR, DENSITY_FLOOR, Atom, ElfVolume, PseudoMolecule, assemble_patches, elf_kernel, extract_patches,
    patch_count, promolecular_fields, read_elfv, single_atom_kinetic_energy, synth_elf, synth_molecule,
    thomas_fermi_reference, volume_checksum, write_elfv,
)
from mmmrec.errors import FormatError, ValidationError

DIMS = (24, 24, 4)
SP = (0.25, 0.25, 0.25)


def atom(pos, zeta=1.0, n=1.0, label="H"):
    return Atom(label, tuple(pos), zeta, n)


def centre(dims=DIMS):
    return [(d - 1) * 0.25 / 2 for d in dims[:2]] + [0.25]


# ---------------------------------------------------------------- kernel


def test_kernel_chi_zero_gives_one():
    rho = np.full((3, 4, 2), 0.3)
    grad = np.zeros((3,) + rho.shape)
    assert np.array_equal(elf_kernel(rho, grad, np.zeros_like(rho)), np.ones_like(rho))


def test_kernel_homogeneous_gas_reference_is_half():
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.01, 2.0, size=(4, 4, 3))
    grad = rng.normal(size=(3,) + rho.shape)
    tau = thomas_fermi_reference(rho) + (grad**2).sum(0) / (8 * rho)
    np.testing.assert_allclose(elf_kernel(rho, grad, tau), 0.5, atol=1e-12)


def test_kernel_floor_gives_zero():
    rho = np.array([0.0, DENSITY_FLOOR, 2 * DENSITY_FLOOR]).reshape(3, 1, 1)
    out = elf_kernel(rho, np.zeros((3, 3, 1, 1)), np.ones_like(rho))
    assert out[0, 0, 0] == 0.0 and out[1, 0, 0] == 0.0 and out[2, 0, 0] > 0.0


def test_kernel_shape_mismatch():
    with pytest.raises(ValidationError):
        elf_kernel(np.ones((2, 2, 2)), np.zeros((3, 2, 2, 1)), np.ones((2, 2, 2)))
    with pytest.raises(ValidationError):
        elf_kernel(np.ones((2, 2, 2)), np.zeros((3, 2, 2, 2)), np.ones((2, 2, 1)))


def test_kernel_accepts_1d_fields():
    rho = np.array([0.5, 1.0])
    out = elf_kernel(rho, np.zeros((3, 2)), np.zeros(2))
    assert out.shape == (2,) and np.all(out == 1.0)


def test_kernel_pauli_term_clamped():
    # tau below the von Weizsaecker bound would give a negative D
    rho = np.full((1, 1, 1), 0.5)
    grad = np.ones((3, 1, 1, 1))
    assert elf_kernel(rho, grad, np.zeros_like(rho))[0, 0, 0] == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_kernel_range_property(seed):
    rng = np.random.default_rng(seed)
    rho = rng.exponential(size=(3, 3, 2)) * rng.choice([0, 1e-12, 1], size=(3, 3, 2))
    grad = rng.normal(scale=3, size=(3, 3, 3, 2))
    tau = rng.exponential(scale=5, size=(3, 3, 2))
    out = elf_kernel(rho, grad, tau)
    assert np.all((out >= 0) & (out <= 1))


# ---------------------------------------------------------------- fields


def test_single_atom_density_at_nucleus():
    c = centre()
    c[2] = 0.5
    mol = PseudoMolecule([atom(c)])
    rho, grad, tau = promolecular_fields(mol, DIMS, SP, margin=2.0)
    axes = elf.grid_axes(DIMS, SP)
    idx = tuple(int(np.argmin(np.abs(a - v))) for a, v in zip(axes, c))
    r = math.dist([a[i] for a, i in zip(axes, idx)], c) * ANGSTROM_TO_BOHR
    assert rho[idx] == pytest.approx(math.exp(-2 * r) / math.pi, rel=1e-12)
    if r == 0:
        assert rho[idx] == pytest.approx(1 / math.pi, rel=1e-14)


def test_single_atom_tau_matches_closed_form():
    mol = PseudoMolecule([atom(centre(), zeta=1.625, n=4.0, label="C")])
    rho, grad, tau = promolecular_fields(mol, DIMS, SP)
    np.testing.assert_allclose(tau, single_atom_kinetic_energy(1.625, rho), rtol=1e-12, atol=1e-300)


def test_single_atom_elf_identity():
    mol = PseudoMolecule([atom(centre(), zeta=2.275, n=6.0, label="O")])
    rho, grad, tau = promolecular_fields(mol, DIMS, SP)
    out = elf_kernel(rho, grad, tau)
    live = rho > DENSITY_FLOOR
    assert live.any()
    assert np.max(np.abs(out[live] - 1.0)) < 1e-9
    assert np.all(out[~live] == 0.0)


def test_translation_by_one_voxel():
    dims = (28, 28, 6)
    c = centre(dims)
    mol = PseudoMolecule([atom(c), atom([c[0] + 1.1, c[1] - 0.4, 0.5], 1.95, 5.0, "N")])
    a = promolecular_fields(mol, dims, SP)
    b = promolecular_fields(mol.translated([0.25, 0.0, 0.0]), dims, SP)
    np.testing.assert_allclose(b[0][1:], a[0][:-1], rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(b[1][:, 1:], a[1][:, :-1], rtol=1e-10, atol=1e-300)
    np.testing.assert_allclose(b[2][1:], a[2][:-1], rtol=1e-10, atol=1e-300)
    # the ELF permutes the same way
    ea, eb = elf_kernel(*a), elf_kernel(*b)
    np.testing.assert_allclose(eb[1:], ea[:-1], atol=1e-12)


def test_far_atoms_decouple():
    dims = (64, 28, 2)
    y = (28 - 1) * 0.25 / 2
    a1 = atom([3.0, y, 0.0])
    a2 = atom([13.0, y, 0.0])
    both = promolecular_fields(PseudoMolecule([a1, a2]), dims, SP)[0]
    alone = promolecular_fields(PseudoMolecule([a1]), dims, SP)[0]
    near = elf.grid_axes(dims, SP)[0] < 5.0
    assert np.max(np.abs(both[near] - alone[near])) < 1e-6


def test_margin_enforced_in_plane():
    with pytest.raises(ValidationError, match="edge"):
        promolecular_fields(PseudoMolecule([atom([1.0, 3.0, 0.25])]), DIMS, SP)
    with pytest.raises(ValidationError, match="slab"):
        promolecular_fields(PseudoMolecule([atom([3.0, 3.0, 5.0])]), DIMS, SP)


def test_pseudomolecule_validation():
    with pytest.raises(ValidationError):
        PseudoMolecule([])
    with pytest.raises(ValidationError):
        PseudoMolecule([atom([0, 0, 0], zeta=0.0)])


# ---------------------------------------------------------------- synth


def test_synth_elf_deterministic_and_distinct():
    a, b = synth_elf(0, 1), synth_elf(0, 1)
    assert a == b
    assert volume_checksum(a) != volume_checksum(synth_elf(1, 1))
    assert a.values.min() >= 0 and a.values.max() <= 1


def test_synth_molecule_atom_count_and_spacing():
    for drug in range(20):
        mol = synth_molecule(drug, 5)
        assert 3 <= len(mol.atoms) <= 12
        pos = mol.positions
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        assert np.all(d[np.triu_indices(len(pos), 1)] >= 1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 500), st.integers(0, 50))
def test_synthetic_volumes_in_range(drug, seed):
    vol = synth_elf(drug, seed, (40, 40, 2))
    assert vol.values.min() >= 0.0 and vol.values.max() <= 1.0


def test_synth_rejects_small_grid():
    with pytest.raises(ValidationError):
        synth_molecule(0, 1, dims=(10, 10, 2))


# ---------------------------------------------------------------- volume type


def test_volume_invariants():
    with pytest.raises(ValidationError):
        ElfVolume(np.full((2, 2, 2), 1.5))
    with pytest.raises(ValidationError):
        ElfVolume(np.zeros((2, 2, 2)), (0.25, 0.25, 0.3))
    with pytest.raises(ValidationError):
        ElfVolume(np.zeros((2, 2)))


# ---------------------------------------------------------------- patches


def test_patch_counts():
    assert len(extract_patches(ElfVolume(np.zeros((64, 64, 4))), 32)) == 16
    ps = extract_patches(ElfVolume(np.ones((33, 33, 1))), 32)
    assert len(ps) == 4 == patch_count((33, 33, 1), 32)
    # the far tiles are mostly padding
    assert ps.patches[3].sum() == 1.0
    assert ps.patches[1].sum() == 32.0


def test_patch_ordering():
    vals = np.random.default_rng(0).uniform(size=(5, 7, 3))
    ps = extract_patches(ElfVolume(vals), 4)
    k, x0, y0 = ps.origins[5]
    # slice 0 has 2x2 tiles, so patch 5 is slice 1, tile row 0, tile col 1
    assert (k, x0, y0) == (1, 0, 4)
    np.testing.assert_array_equal(ps.patches[5][:4, :3], vals[0:4, 4:7, 1])
    assert np.all(ps.patches[5][:, 3] == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 3), st.integers(1, 9))
def test_patch_roundtrip_and_partition(nx, ny, nz, p):
    if p > max(nx, ny):
        return
    vals = np.random.default_rng(nx * 100 + ny).uniform(size=(nx, ny, nz))
    ps = extract_patches(ElfVolume(vals), p)
    assert len(ps) == patch_count((nx, ny, nz), p)
    np.testing.assert_array_equal(assemble_patches(ps, (nx, ny, nz)), vals)
    # every voxel is covered by exactly one patch
    cover = np.zeros((nx, ny, nz), dtype=int)
    for k, x0, y0 in ps.origins:
        cover[x0:x0 + p, y0:y0 + p, k] += 1
    assert np.all(cover == 1)


def test_patch_errors():
    vol = ElfVolume(np.zeros((8, 6, 1)))
    with pytest.raises(ValidationError):
        extract_patches(vol, 0)
    with pytest.raises(ValidationError):
        extract_patches(vol, 9)


# ---------------------------------------------------------------- file format


def test_elfv_roundtrip_exact(tmp_path):
    vol = synth_elf(3, 2, (48, 40, 4))
    write_elfv(tmp_path / "v.elfv", vol)
    back = read_elfv(tmp_path / "v.elfv")
    assert back == vol and back.dims == (48, 40, 4)


def test_elfv_layout_x_fastest(tmp_path):
    vals = np.arange(2 * 3 * 1, dtype=float).reshape(2, 3, 1) / 10
    write_elfv(tmp_path / "v.elfv", ElfVolume(vals))
    lines = (tmp_path / "v.elfv").read_text().splitlines()
    assert lines[0] == "ELFV1 2 3 1 0.25 0.25 0.25"
    assert lines[1].split() == ["0.0", "0.3"]


def test_elfv_precision_mode(tmp_path):
    vol = synth_elf(0, 1, (40, 40, 2))
    write_elfv(tmp_path / "v.elfv", vol, precision=6)
    back = read_elfv(tmp_path / "v.elfv")
    np.testing.assert_allclose(back.values, vol.values, rtol=1e-5, atol=1e-12)


@pytest.mark.parametrize("text, err", [
    ("ELFV2 1 1 1 0.25 0.25 0.25\n0.5\n", FormatError),
    ("ELFV1 1 1\n0.5\n", FormatError),
    ("ELFV1 2 1 1 0.25 0.25 0.25\n0.5\n", FormatError),
    ("ELFV1 1 1 1 0.25 0.25 0.25\nabc\n", FormatError),
    ("ELFV1 1 1 1 0.25 0.25 0.25\n1.5\n", ValidationError),
])
def test_elfv_rejects(tmp_path, text, err):
    (tmp_path / "bad.elfv").write_text(text)
    with pytest.raises(err):
        read_elfv(tmp_path / "bad.elfv")
