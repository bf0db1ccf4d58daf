# cython: language_level=3
"""Compiled versions of the grid and pair-counting kernels.

Signatures and results match :mod:`mmmrec._kernels_py`; the loops are fused
so no per-atom temporaries of grid size are allocated.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, pow, M_PI

cnp.import_array()

cdef double THOMAS_FERMI_CONSTANT = 0.3 * pow(3.0 * M_PI * M_PI, 2.0 / 3.0)


def promolecular_fields(positions, zeta, nelec, xs, ys, zs):
    cdef double[:, ::1] pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef double[::1] zt = np.ascontiguousarray(zeta, dtype=np.float64)
    cdef double[::1] ne = np.ascontiguousarray(nelec, dtype=np.float64)
    cdef double[::1] gx_ = np.ascontiguousarray(xs, dtype=np.float64)
    cdef double[::1] gy_ = np.ascontiguousarray(ys, dtype=np.float64)
    cdef double[::1] gz_ = np.ascontiguousarray(zs, dtype=np.float64)
    cdef Py_ssize_t nx = gx_.shape[0], ny = gy_.shape[0], nz = gz_.shape[0]
    cdef Py_ssize_t na = pos.shape[0]
    rho_arr = np.zeros((nx, ny, nz))
    grad_arr = np.zeros((3, nx, ny, nz))
    tau_arr = np.zeros((nx, ny, nz))
    cdef double[:, :, ::1] rho = rho_arr
    cdef double[:, :, :, ::1] grad = grad_arr
    cdef double[:, :, ::1] tau = tau_arr
    cdef Py_ssize_t i, j, k, a
    cdef double dx, dy, dz, r, rho_a, coef, gx, gy, gz, pref
    for a in range(na):
        pref = ne[a] * zt[a] * zt[a] * zt[a] / M_PI
        for i in range(nx):
            dx = gx_[i] - pos[a, 0]
            for j in range(ny):
                dy = gy_[j] - pos[a, 1]
                for k in range(nz):
                    dz = gz_[k] - pos[a, 2]
                    r = sqrt(dx * dx + dy * dy + dz * dz)
                    rho_a = pref * exp(-2.0 * zt[a] * r)
                    if r > 0.0:
                        coef = -2.0 * zt[a] * rho_a / r
                    else:
                        coef = 0.0
                    gx = coef * dx
                    gy = coef * dy
                    gz = coef * dz
                    rho[i, j, k] += rho_a
                    grad[0, i, j, k] += gx
                    grad[1, i, j, k] += gy
                    grad[2, i, j, k] += gz
                    if rho_a > 0.0:
                        tau[i, j, k] += (gx * gx + gy * gy + gz * gz) / (8.0 * rho_a)
    return rho_arr, grad_arr, tau_arr


def thomas_fermi(rho_in):
    """Uniform-gas kinetic energy density, with the same ``pow`` the ELF
    kernel uses so reference fields built from it are exact."""
    arr = np.asarray(rho_in, dtype=np.float64)
    cdef double[::1] r = np.ascontiguousarray(arr.ravel())
    out_arr = np.empty(r.shape[0])
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(r.shape[0]):
        out[i] = THOMAS_FERMI_CONSTANT * pow(r[i], 5.0 / 3.0)
    return out_arr.reshape(arr.shape)


def elf_kernel(rho_in, grad_in, tau_in, double floor):
    cdef double[:, :, ::1] rho = np.ascontiguousarray(rho_in, dtype=np.float64)
    cdef double[:, :, :, ::1] grad = np.ascontiguousarray(grad_in, dtype=np.float64)
    cdef double[:, :, ::1] tau = np.ascontiguousarray(tau_in, dtype=np.float64)
    cdef Py_ssize_t nx = rho.shape[0], ny = rho.shape[1], nz = rho.shape[2]
    out_arr = np.zeros((nx, ny, nz))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double r, g2, pauli, chi
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                r = rho[i, j, k]
                if not (r > floor):
                    continue
                g2 = (grad[0, i, j, k] * grad[0, i, j, k]
                      + grad[1, i, j, k] * grad[1, i, j, k]
                      + grad[2, i, j, k] * grad[2, i, j, k])
                pauli = tau[i, j, k] - g2 / (8.0 * r)
                if pauli < 0.0:
                    pauli = 0.0
                chi = pauli / (THOMAS_FERMI_CONSTANT * pow(r, 5.0 / 3.0))
                out[i, j, k] = 1.0 / (1.0 + chi * chi)
    return out_arr


def ddi_pair_counts(pred_in, cid_index_in, cid_adj_in):
    cdef cnp.uint8_t[:, ::1] pred = np.ascontiguousarray(pred_in, dtype=np.uint8)
    cdef cnp.int64_t[::1] cid_index = np.ascontiguousarray(cid_index_in, dtype=np.int64)
    cdef cnp.uint8_t[:, ::1] adj = np.ascontiguousarray(cid_adj_in, dtype=np.uint8)
    cdef Py_ssize_t n = pred.shape[0], m = pred.shape[1], n_cid = adj.shape[0]
    inter_arr = np.zeros(n, dtype=np.int64)
    total_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] inter = inter_arr
    cdef cnp.int64_t[::1] total = total_arr
    seen_arr = np.zeros(n_cid, dtype=np.uint8)
    buf_arr = np.zeros(m, dtype=np.int64)
    cdef cnp.uint8_t[::1] seen = seen_arr
    cdef cnp.int64_t[::1] buf = buf_arr
    cdef Py_ssize_t v, d, a, b, cnt
    cdef cnp.int64_t c, hits
    for v in range(n):
        cnt = 0
        for d in range(m):
            if pred[v, d]:
                c = cid_index[d]
                if not seen[c]:
                    seen[c] = 1
                    buf[cnt] = c
                    cnt += 1
        hits = 0
        for a in range(cnt):
            for b in range(a + 1, cnt):
                hits += adj[buf[a], buf[b]]
        for a in range(cnt):
            seen[buf[a]] = 0
        inter[v] = hits
        total[v] = cnt * (cnt - 1) // 2
    return inter_arr, total_arr
