"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled path is benchmarked and tested against. All quantities are in
atomic units (bohr, hartree).
"""
import numpy as np

THOMAS_FERMI_CONSTANT = 0.3 * (3.0 * np.pi**2) ** (2.0 / 3.0)


def promolecular_fields(positions, zeta, nelec, xs, ys, zs):
    """Density, density gradient and kinetic energy density of a sum of 1s
    Slater atoms sampled on the tensor grid ``xs x ys x zs``.

    Returns ``rho`` of shape (nx, ny, nz), ``grad`` of shape (3, nx, ny, nz)
    and ``tau`` of shape (nx, ny, nz).
    """
    positions = np.asarray(positions, dtype=np.float64)
    shape = (len(xs), len(ys), len(zs))
    rho = np.zeros(shape)
    grad = np.zeros((3,) + shape)
    tau = np.zeros(shape)
    X = np.asarray(xs, dtype=np.float64)[:, None, None]
    Y = np.asarray(ys, dtype=np.float64)[None, :, None]
    Z = np.asarray(zs, dtype=np.float64)[None, None, :]
    for (px, py, pz), z_a, n_a in zip(positions, zeta, nelec):
        dx = np.broadcast_to(X - px, shape)
        dy = np.broadcast_to(Y - py, shape)
        dz = np.broadcast_to(Z - pz, shape)
        r = np.sqrt(dx * dx + dy * dy + dz * dz)
        rho_a = n_a * z_a**3 / np.pi * np.exp(-2.0 * z_a * r)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(r > 0.0, -2.0 * z_a * rho_a / r, 0.0)
        gx = coef * dx
        gy = coef * dy
        gz = coef * dz
        with np.errstate(divide="ignore", invalid="ignore"):
            tau_a = np.where(rho_a > 0.0, (gx * gx + gy * gy + gz * gz) / (8.0 * rho_a), 0.0)
        rho += rho_a
        grad[0] += gx
        grad[1] += gy
        grad[2] += gz
        tau += tau_a
    return rho, grad, tau


def thomas_fermi(rho):
    return THOMAS_FERMI_CONSTANT * np.asarray(rho, dtype=np.float64) ** (5.0 / 3.0)


def elf_kernel(rho, grad, tau, floor):
    rho = np.asarray(rho, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    out = np.zeros(rho.shape)
    live = rho > floor
    r = rho[live]
    g2 = grad[0][live] ** 2 + grad[1][live] ** 2 + grad[2][live] ** 2
    pauli = np.maximum(0.0, tau[live] - g2 / (8.0 * r))
    chi = pauli / thomas_fermi(r)
    out[live] = 1.0 / (1.0 + chi * chi)
    return out


def ddi_pair_counts(pred, cid_index, cid_adj):
    """Interacting and total unordered CID pairs for each row of ``pred``."""
    pred = np.asarray(pred, dtype=bool)
    cid_index = np.asarray(cid_index)
    cid_adj = np.asarray(cid_adj)
    n = pred.shape[0]
    inter = np.zeros(n, dtype=np.int64)
    total = np.zeros(n, dtype=np.int64)
    for v in range(n):
        u = np.unique(cid_index[pred[v]])
        k = len(u)
        total[v] = k * (k - 1) // 2
        if k > 1:
            inter[v] = np.triu(cid_adj[np.ix_(u, u)], 1).sum()
    return inter, total
