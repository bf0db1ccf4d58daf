"""Electron localization function volumes.

Volumes are axis-aligned grids whose third axis is the slicing axis, fixed at
0.25 Angstrom between molecular planes. Synthetic volumes come from a
promolecular density built out of 1s Slater atoms, which keeps the ELF
closed-form and cheap while preserving its qualitative structure (values near
1 around isolated centres, dips where atomic densities overlap).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, ValidationError

SLICE_SPACING = 0.25
DENSITY_FLOOR = 1e-10
ANGSTROM_TO_BOHR = 1.0 / 0.529177210903
DEFAULT_DIMS = (64, 64, 8)
DEFAULT_PATCH_SIZE = 32
MAGIC = "ELFV1"

# Slater exponents (bohr^-1) and valence electron counts.
ELEMENTS = {
    "H": (1.0, 1.0),
    "C": (1.625, 4.0),
    "N": (1.95, 5.0),
    "O": (2.275, 6.0),
}


@dataclass
class ElfVolume:
    values: np.ndarray
    spacing: tuple[float, float, float] = (SLICE_SPACING, SLICE_SPACING, SLICE_SPACING)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValidationError(f"ELF volume must be a non-empty 3D grid, got shape {self.values.shape}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValidationError(f"spacing must be three positive lengths, got {self.spacing}")
        if abs(self.spacing[2] - SLICE_SPACING) > 1e-12:
            raise ValidationError(f"slice spacing must be {SLICE_SPACING} A, got {self.spacing[2]}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("ELF volume contains non-finite values")
        lo, hi = self.values.min(), self.values.max()
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"ELF values must lie in [0, 1], found range [{lo}, {hi}]")

    @property
    def dims(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, ElfVolume):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.values, other.values)


@dataclass
class PatchSet:
    drug_id: int
    patches: np.ndarray  # (n, p, p)
    patch_size: int
    # (slice, x offset, y offset) of each patch's first voxel
    origins: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.patches)


@dataclass
class Atom:
    element: str
    position: tuple[float, float, float]  # Angstrom
    zeta: float
    n_electrons: float


@dataclass
class PseudoMolecule:
    atoms: list[Atom]

    def __post_init__(self):
        if not self.atoms:
            raise ValidationError("a molecule needs at least one atom")
        for atom in self.atoms:
            if not atom.zeta > 0 or not atom.n_electrons > 0:
                raise ValidationError(f"atom {atom.element} needs zeta > 0 and electron count > 0")

    @property
    def positions(self):
        return np.array([a.position for a in self.atoms], dtype=np.float64)

    def translated(self, offset):
        offset = np.asarray(offset, dtype=np.float64)
        return PseudoMolecule(
            [Atom(a.element, tuple(np.asarray(a.position) + offset), a.zeta, a.n_electrons) for a in self.atoms]
        )

    def formula(self):
        return "".join(a.element for a in self.atoms)


def grid_axes(dims, spacing, origin=(0.0, 0.0, 0.0)):
    """Voxel-centre coordinates (Angstrom) along each axis."""
    return tuple(origin[i] + np.arange(dims[i]) * spacing[i] for i in range(3))


def thomas_fermi_reference(rho):
    return kernels.thomas_fermi(rho)


def elf_kernel(rho, grad_rho, tau, floor=DENSITY_FLOOR):
    """ELF from density, density gradient (leading axis of length 3) and
    kinetic energy density, all in atomic units. Voxels with density at or
    below ``floor`` are vacuum and get 0."""
    rho = np.asarray(rho, dtype=np.float64)
    grad_rho = np.asarray(grad_rho, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if grad_rho.shape != (3,) + rho.shape or tau.shape != rho.shape:
        raise ValidationError(
            f"field shapes disagree: rho {rho.shape}, grad {grad_rho.shape}, tau {tau.shape}"
        )
    if np.any(rho < 0):
        raise ValidationError("density must be non-negative")
    if rho.ndim != 3:
        # the kernels work on 3D grids
        out = kernels.elf_kernel(
            rho.reshape(-1, 1, 1), grad_rho.reshape(3, -1, 1, 1), tau.reshape(-1, 1, 1), floor
        )
        return out.reshape(rho.shape)
    return kernels.elf_kernel(rho, grad_rho, tau, floor)


def promolecular_fields(mol, dims, spacing, origin=(0.0, 0.0, 0.0), margin=2.0):
    """Sample density, gradient and kinetic energy density of ``mol`` on the
    grid. Positions and spacing are in Angstrom; fields are returned in
    atomic units.

    The in-plane axes must leave ``margin`` Angstrom between every atom and
    the grid edge. Along the slicing axis atoms only have to lie inside the
    slab, since the planes cut through the molecule.
    """
    axes = grid_axes(dims, spacing, origin)
    pos = mol.positions
    for atom, p in zip(mol.atoms, pos):
        for ax in (0, 1):
            lo, hi = axes[ax][0] + margin, axes[ax][-1] - margin
            if not lo - 1e-9 <= p[ax] <= hi + 1e-9:
                raise ValidationError(
                    f"atom {atom.element} at {tuple(p)} is within {margin} A of the grid edge on axis {ax}"
                )
        if not axes[2][0] - 1e-9 <= p[2] <= axes[2][-1] + 1e-9:
            raise ValidationError(f"atom {atom.element} at {tuple(p)} lies outside the slab")
    zeta = np.array([a.zeta for a in mol.atoms])
    nelec = np.array([a.n_electrons for a in mol.atoms])
    bohr_axes = [a * ANGSTROM_TO_BOHR for a in axes]
    return kernels.promolecular_fields(pos * ANGSTROM_TO_BOHR, zeta, nelec, *bohr_axes)


def synth_molecule(drug_id, seed, dims=DEFAULT_DIMS, spacing=SLICE_SPACING, margin=2.0):
    """Seeded 3-12 atom pseudo-molecule centred in the grid's plane.

    Atoms are placed by rejection sampling inside a disc that respects the
    in-plane margin, at least 1 A apart, and within the slab along z.
    """
    rng = np.random.default_rng([seed, drug_id])
    n_atoms = int(rng.integers(3, 13))
    labels = rng.choice(["C", "C", "C", "N", "O", "H"], size=n_atoms)
    extent = [(d - 1) * spacing for d in dims]
    centre = np.array([extent[0] / 2, extent[1] / 2])
    radius = min(extent[0], extent[1]) / 2 - margin - 0.5
    if radius <= 0:
        raise ValidationError(f"grid {dims} is too small for a {margin} A margin")
    positions = []
    for _ in range(10_000):
        if len(positions) == n_atoms:
            break
        xy = centre + rng.uniform(-radius, radius, size=2)
        if np.hypot(*(xy - centre)) > radius:
            continue
        z = rng.uniform(0.0, extent[2])
        p = np.array([xy[0], xy[1], z])
        if all(np.linalg.norm(p - q) >= 1.0 for q in positions):
            positions.append(p)
    else:
        if len(positions) < n_atoms:
            raise ValidationError(f"could not place {n_atoms} atoms 1 A apart in grid {dims}")
    atoms = []
    for label, p in zip(labels, positions):
        zeta, n = ELEMENTS[str(label)]
        atoms.append(Atom(str(label), tuple(float(v) for v in p), zeta, n))
    return PseudoMolecule(atoms)


def synth_elf(drug_id, seed, dims=DEFAULT_DIMS, spacing=SLICE_SPACING):
    mol = synth_molecule(drug_id, seed, dims, spacing)
    sp = (spacing, spacing, SLICE_SPACING)
    rho, grad, tau = promolecular_fields(mol, dims, sp)
    return ElfVolume(elf_kernel(rho, grad, tau), sp)


def extract_patches(vol, p=DEFAULT_PATCH_SIZE, drug_id=-1):
    """Cut every slice into p x p tiles, zero-padding the far borders.

    Tiles are ordered by slice, then tile row (x), then tile column (y).
    """
    nx, ny, nz = vol.dims
    if p < 1:
        raise ValidationError(f"patch size must be >= 1, got {p}")
    if p > max(nx, ny):
        raise ValidationError(f"patch size {p} exceeds the in-plane grid {nx}x{ny}")
    tx, ty = -(-nx // p), -(-ny // p)
    padded = np.zeros((tx * p, ty * p, nz))
    padded[:nx, :ny, :] = vol.values
    # (tx, p, ty, p, nz) -> (nz, tx, ty, p, p)
    tiles = padded.reshape(tx, p, ty, p, nz).transpose(4, 0, 2, 1, 3).reshape(-1, p, p)
    k, i, j = np.meshgrid(np.arange(nz), np.arange(tx), np.arange(ty), indexing="ij")
    origins = np.stack([k.ravel(), i.ravel() * p, j.ravel() * p], axis=1)
    return PatchSet(drug_id, np.ascontiguousarray(tiles), p, origins)


def assemble_patches(patches, dims):
    """Inverse of :func:`extract_patches`: rebuild the unpadded grid."""
    nx, ny, nz = dims
    p = patches.patch_size
    out = np.zeros((-(-nx // p) * p, -(-ny // p) * p, nz))
    for tile, (k, x0, y0) in zip(patches.patches, patches.origins):
        out[x0 : x0 + p, y0 : y0 + p, k] = tile
    return out[:nx, :ny, :]


def write_elfv(path, vol, precision=None):
    """Write ``vol`` in the text ``.elfv`` format.

    With ``precision=None`` each value is written as its shortest round-trip
    decimal, so reading returns bit-identical data. An integer precision
    writes that many significant digits instead, like a cube file.
    """
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    flat = vol.values.ravel(order="F")
    if precision is None:
        tokens = [repr(float(v)) for v in flat]
    else:
        fmt = f"%.{int(precision)}g"
        tokens = [fmt % v for v in flat]
    lines = [f"{MAGIC} {nx} {ny} {nz} {sx!r} {sy!r} {sz!r}"]
    lines.extend(" ".join(tokens[i : i + nx]) for i in range(0, len(tokens), nx))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_elfv(path):
    text = Path(path).read_text(encoding="utf-8")
    header, _, body = text.partition("\n")
    parts = header.split()
    if len(parts) != 7 or parts[0] != MAGIC:
        raise FormatError(f"{path}: bad header {header[:60]!r}")
    try:
        nx, ny, nz = (int(v) for v in parts[1:4])
        spacing = tuple(float(v) for v in parts[4:7])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header {header[:60]!r}") from exc
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path}: non-positive dimensions in header")
    try:
        values = np.array(body.split(), dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric payload") from exc
    expected = nx * ny * nz
    if values.size != expected:
        raise FormatError(f"{path}: expected {expected} values, found {values.size}")
    return ElfVolume(values.reshape((nx, ny, nz), order="F"), spacing)


def volume_checksum(vol):
    return hashlib.sha256(np.ascontiguousarray(vol.values).tobytes()).hexdigest()


def single_atom_kinetic_energy(zeta, rho):
    """Closed-form von Weizsaecker kinetic energy density of one 1s Slater
    orbital: |grad rho|^2 / (8 rho) = zeta^2 rho / 2."""
    return 0.5 * zeta * zeta * np.asarray(rho)


def patch_count(dims, p):
    nx, ny, nz = dims
    return nz * math.ceil(nx / p) * math.ceil(ny / p)
