"""Time the compiled and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeats N]

Reports the best-of-N wall time per kernel and backend, and checks that the
two backends agree before timing anything.
"""
import argparse
import timeit

import numpy as np

from mmmrec import elf, kernels
from mmmrec.elf import ANGSTROM_TO_BOHR, DENSITY_FLOOR, grid_axes, synth_molecule


def field_inputs(dims=(64, 64, 8), n_molecules=4):
    jobs = []
    for drug in range(n_molecules):
        mol = synth_molecule(drug, seed=1, dims=dims)
        axes = [a * ANGSTROM_TO_BOHR for a in grid_axes(dims, (elf.SLICE_SPACING,) * 3)]
        zeta = np.array([a.zeta for a in mol.atoms])
        nelec = np.array([a.n_electrons for a in mol.atoms])
        jobs.append((mol.positions * ANGSTROM_TO_BOHR, zeta, nelec, *axes))
    return jobs


def ddi_inputs(n_visits=2000, n_drugs=250, n_cids=250, seed=0):
    rng = np.random.default_rng(seed)
    pred = rng.random((n_visits, n_drugs)) < 0.03
    cid_index = np.arange(n_drugs) % n_cids
    adj = np.triu(rng.random((n_cids, n_cids)) < 0.16, 1)
    return pred, cid_index, (adj | adj.T).astype(np.uint8)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.implementations()
    if "cython" not in impls:
        print("compiled extension not built; only the numpy backend is available")

    fields = field_inputs()
    elf_args = impls["python"].promolecular_fields(*fields[0])
    ddi = ddi_inputs()
    cases = {
        "promolecular_fields (4 molecules, 64x64x8)": lambda impl: [impl.promolecular_fields(*f) for f in fields],
        "elf_kernel (64x64x8)": lambda impl: impl.elf_kernel(*elf_args, DENSITY_FLOOR),
        "ddi_pair_counts (2000 visits, 250 drugs)": lambda impl: impl.ddi_pair_counts(*ddi),
    }

    if "cython" in impls:
        a = impls["python"].promolecular_fields(*fields[0])
        b = impls["cython"].promolecular_fields(*fields[0])
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-300)
        for x, y in zip(impls["python"].ddi_pair_counts(*ddi), impls["cython"].ddi_pair_counts(*ddi)):
            assert np.array_equal(x, y)

    print(f"{'kernel':45s} {'backend':8s} {'best (ms)':>10s} {'speed-up':>9s}")
    for name, fn in cases.items():
        times = {}
        for backend, impl in impls.items():
            times[backend] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeats)) * 1e3
        for backend, t in times.items():
            ratio = times["python"] / t
            print(f"{name:45s} {backend:8s} {t:10.2f} {ratio:8.1f}x")


if __name__ == "__main__":
    main()
