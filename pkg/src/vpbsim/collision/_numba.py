"""Compiled inner loops for the lattice collision operators.

Conventions shared by every kernel: the lattice is cell-centred with n
nodes per axis, first node ``lo`` and spacing ``h``; profiles are (n, n, n)
arrays. Post-collision states use the sigma parametrisation

    v' = c + (r/2) sigma,   u' = c - (r/2) sigma,   c = (u+v)/2, r = |u-v|,

in which the |cos theta| angular kernel integrates to one half of the plain
sphere measure. ``powt[k]`` holds |g|^gamma chi(|g|) h^3 for |g|^2 = k h^2.
Points outside the lattice hull interpolate to zero.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _tri(R, lo, h, n, px, py, pz):
    fx = (px - lo) / h
    fy = (py - lo) / h
    fz = (pz - lo) / h
    if fx < 0.0 or fy < 0.0 or fz < 0.0 or fx > n - 1 or fy > n - 1 or fz > n - 1:
        return 0.0
    ix = min(int(fx), n - 2)
    iy = min(int(fy), n - 2)
    iz = min(int(fz), n - 2)
    tx = fx - ix
    ty = fy - iy
    tz = fz - iz
    c00 = R[ix, iy, iz] * (1 - tx) + R[ix + 1, iy, iz] * tx
    c01 = R[ix, iy, iz + 1] * (1 - tx) + R[ix + 1, iy, iz + 1] * tx
    c10 = R[ix, iy + 1, iz] * (1 - tx) + R[ix + 1, iy + 1, iz] * tx
    c11 = R[ix, iy + 1, iz + 1] * (1 - tx) + R[ix + 1, iy + 1, iz + 1] * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    return c0 * (1 - tz) + c1 * tz


@njit(cache=True)
def gain_sum(R1, R2, W, lo, h, n, sig, sw, powt, same, emax, m0):
    """out[v] = sum_{u != v} powt W[u] 1/2 sum_s w_s R1(u') R2(v').

    Pairs are grouped by centre c on the doubled lattice and by |u-v|^2, so
    the angular sum is evaluated once per distinct (c, r). When ``same`` is
    true R1 is R2 and ``sig`` lists antipodal pairs as (first half, second
    half), so only the first half is visited. Pairs whose collision energy
    about ``m0``, |u-m0|^2 + |v-m0|^2 = 2|c-m0|^2 + r^2/2, exceeds ``emax``
    are skipped.
    """
    out = np.zeros((n, n, n))
    nr = powt.shape[0]
    cache = np.zeros(nr)
    stamp = -np.ones(nr, dtype=np.int64)
    M = sig.shape[0]
    half = M // 2 if same else M
    fac = 1.0 if same else 0.5
    cid = 0
    top = 2 * (n - 1)
    for a in range(2 * n - 1):
        cx = lo + 0.5 * a * h
        dxl = max(-a, a - top)
        dxh = min(a, top - a)
        for b in range(2 * n - 1):
            cy = lo + 0.5 * b * h
            dyl = max(-b, b - top)
            dyh = min(b, top - b)
            for c in range(2 * n - 1):
                cz = lo + 0.5 * c * h
                dzl = max(-c, c - top)
                dzh = min(c, top - c)
                cid += 1
                ex = cx - m0[0]
                ey = cy - m0[1]
                ez = cz - m0[2]
                elim = (emax - 2.0 * (ex * ex + ey * ey + ez * ez)) * 2.0 / (h * h)
                if elim < 1.0:
                    continue
                for dx in range(dxl, dxh + 1, 2):
                    i = (a - dx) >> 1
                    i2 = (a + dx) >> 1
                    for dy in range(dyl, dyh + 1, 2):
                        j = (b - dy) >> 1
                        j2 = (b + dy) >> 1
                        for dz in range(dzl, dzh + 1, 2):
                            r2 = dx * dx + dy * dy + dz * dz
                            if r2 == 0 or r2 > elim:
                                continue
                            if stamp[r2] != cid:
                                hr = 0.5 * np.sqrt(r2) * h
                                s = 0.0
                                for m in range(half):
                                    hx = hr * sig[m, 0]
                                    hy = hr * sig[m, 1]
                                    hz = hr * sig[m, 2]
                                    s += sw[m] * _tri(R1, lo, h, n, cx - hx, cy - hy, cz - hz) \
                                        * _tri(R2, lo, h, n, cx + hx, cy + hy, cz + hz)
                                cache[r2] = fac * s
                                stamp[r2] = cid
                            k = (c - dz) >> 1
                            k2 = (c + dz) >> 1
                            out[i2, j2, k2] += powt[r2] * W[i, j, k] * cache[r2]
    return out


@njit(cache=True)
def k2_matrix(lo, h, n, sig, sw, powt, mu, sqmu):
    """Dense K_2 on the lattice, rows v and columns u, acting on f.

    K_2 f(v) = sqrt(mu(v)) sum_u powt mu(u) sum_s w_s 1[u' in hull] I(f/sqrt(mu))(v').
    """
    N = n * n * n
    K = np.zeros((N, N))
    M = sig.shape[0]
    inv = 1.0 / sqmu
    for iv in range(N):
        vi = iv // (n * n)
        vj = (iv // n) % n
        vk = iv % n
        vx = lo + vi * h
        vy = lo + vj * h
        vz = lo + vk * h
        for iu in range(N):
            if iu == iv:
                continue
            ui = iu // (n * n)
            uj = (iu // n) % n
            uk = iu % n
            dx = ui - vi
            dy = uj - vj
            dz = uk - vk
            r2 = dx * dx + dy * dy + dz * dz
            base = sqmu[iv] * mu[iu] * powt[r2]
            if base == 0.0:
                continue
            cx = vx + 0.5 * dx * h
            cy = vy + 0.5 * dy * h
            cz = vz + 0.5 * dz * h
            hr = 0.5 * np.sqrt(r2) * h
            for m in range(M):
                # u' must lie in the hull for the sqrt(mu) factor to survive
                px = cx - hr * sig[m, 0]
                py = cy - hr * sig[m, 1]
                pz = cz - hr * sig[m, 2]
                fx = (px - lo) / h
                fy = (py - lo) / h
                fz = (pz - lo) / h
                if fx < 0.0 or fy < 0.0 or fz < 0.0 or fx > n - 1 or fy > n - 1 or fz > n - 1:
                    continue
                qx = cx + hr * sig[m, 0]
                qy = cy + hr * sig[m, 1]
                qz = cz + hr * sig[m, 2]
                gx = (qx - lo) / h
                gy = (qy - lo) / h
                gz = (qz - lo) / h
                if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > n - 1 or gy > n - 1 or gz > n - 1:
                    continue
                ix = min(int(gx), n - 2)
                iy = min(int(gy), n - 2)
                iz = min(int(gz), n - 2)
                tx = gx - ix
                ty = gy - iy
                tz = gz - iz
                amp = base * sw[m]
                for a in range(2):
                    wa = tx if a == 1 else 1.0 - tx
                    for b in range(2):
                        wb = ty if b == 1 else 1.0 - ty
                        for c in range(2):
                            wc = tz if c == 1 else 1.0 - tz
                            j = ((ix + a) * n + iy + b) * n + iz + c
                            K[iv, j] += amp * wa * wb * wc * inv[j]
    return K


@njit(cache=True)
def pair_sum(F, powt, n):
    """Direct punctured sum out[v] = sum_{u != v} powt[|u-v|^2] F[u] (oracle)."""
    out = np.zeros((n, n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                s = 0.0
                for a in range(n):
                    for b in range(n):
                        for c in range(n):
                            r2 = (a - i) ** 2 + (b - j) ** 2 + (c - k) ** 2
                            if r2 == 0:
                                continue
                            s += powt[r2] * F[a, b, c]
                out[i, j, k] = s
    return out
