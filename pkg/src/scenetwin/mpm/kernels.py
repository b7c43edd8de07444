"""Single-threaded numba kernels for the MLS-MPM transfer cycle.

Everything runs in fixed particle/node order with no threading, so a run
is bit-deterministic for identical inputs. Kernels report failures via an
integer status (0 ok, 1 inversion, 2 out of margin, 3 non-finite) plus
the offending particle index; wrappers turn these into exceptions.

Status codes double as the contract with sim.py; keep them in sync.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_INVERSION = 1
STATUS_MARGIN = 2
STATUS_NONFINITE = 3

MODEL_ELASTIC = 0
MODEL_SAND = 1

COLLIDER_NONE = 0
COLLIDER_PLANE = 1
COLLIDER_HEIGHTFIELD = 2

MODE_SLIP = 0
MODE_STICKY = 1
MODE_SEPARATE = 2


@njit(cache=True)
def quadratic_weights(fx):
    """Quadratic B-spline weights for one axis; fx in [0.5, 1.5]."""
    w0 = 0.5 * (1.5 - fx) ** 2
    w1 = 0.75 - (fx - 1.0) ** 2
    w2 = 0.5 * (fx - 0.5) ** 2
    return w0, w1, w2


@njit(cache=True)
def _det3(F):
    return (
        F[0, 0] * (F[1, 1] * F[2, 2] - F[1, 2] * F[2, 1])
        - F[0, 1] * (F[1, 0] * F[2, 2] - F[1, 2] * F[2, 0])
        + F[0, 2] * (F[1, 0] * F[2, 1] - F[1, 1] * F[2, 0])
    )


@njit(cache=True)
def polar_rotation(F, out):
    """Orthogonal polar factor of F (det > 0) via Newton iteration.

    R_{k+1} = (R_k + R_k^{-T}) / 2 converges quadratically to the same
    rotation as U V^T from the SVD; the inverse-transpose comes from the
    adjugate so no factorization is needed.
    """
    for r in range(3):
        for c in range(3):
            out[r, c] = F[r, c]
    for _ in range(30):
        a = out[0, 0]
        b = out[0, 1]
        c = out[0, 2]
        d = out[1, 0]
        e = out[1, 1]
        f = out[1, 2]
        g = out[2, 0]
        h = out[2, 1]
        i = out[2, 2]
        det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
        if det == 0.0:
            return False
        inv = 1.0 / det
        n00 = (e * i - f * h) * inv
        n01 = -(b * i - c * h) * inv
        n02 = (b * f - c * e) * inv
        n10 = -(d * i - f * g) * inv
        n11 = (a * i - c * g) * inv
        n12 = -(a * f - c * d) * inv
        n20 = (d * h - e * g) * inv
        n21 = -(a * h - b * g) * inv
        n22 = (a * e - b * d) * inv
        # average with the transpose of the inverse
        r00 = 0.5 * (a + n00)
        r01 = 0.5 * (b + n10)
        r02 = 0.5 * (c + n20)
        r10 = 0.5 * (d + n01)
        r11 = 0.5 * (e + n11)
        r12 = 0.5 * (f + n21)
        r20 = 0.5 * (g + n02)
        r21 = 0.5 * (h + n12)
        r22 = 0.5 * (i + n22)
        diff = (
            abs(r00 - a) + abs(r01 - b) + abs(r02 - c)
            + abs(r10 - d) + abs(r11 - e) + abs(r12 - f)
            + abs(r20 - g) + abs(r21 - h) + abs(r22 - i)
        )
        out[0, 0] = r00
        out[0, 1] = r01
        out[0, 2] = r02
        out[1, 0] = r10
        out[1, 1] = r11
        out[1, 2] = r12
        out[2, 0] = r20
        out[2, 1] = r21
        out[2, 2] = r22
        if diff < 1e-14:
            break
    return True


@njit(cache=True)
def corotated_stress(F, lam, mu, sigma):
    """sigma = 2 mu (F - R) F^T + lambda J (J - 1) I; returns False on inversion."""
    J = _det3(F)
    if J <= 0.0:
        return False
    R = np.empty((3, 3))
    if not polar_rotation(F, R):
        return False
    lj = lam * J * (J - 1.0)
    for r in range(3):
        for c in range(3):
            acc = 0.0
            for k in range(3):
                acc += (F[r, k] - R[r, k]) * F[c, k]
            sigma[r, c] = 2.0 * mu * acc
        sigma[r, r] += lj
    return True


@njit(cache=True)
def transfer_p2g(
    positions, velocities, masses, volumes, def_grad, affine,
    lam_p, mu_p, grid_m, grid_v, n, dx, inv_dx, dt,
):
    """Scatter mass, momentum and fused MLS-MPM stress impulse to the grid.

    The stress enters the momentum transfer as the standard MLS term
    -(4 dt / dx^2) w V sigma (x_i - x_p) folded into the per-particle
    affine matrix.
    """
    stress_coeff = -4.0 * dt * inv_dx * inv_dx
    sigma = np.empty((3, 3))
    Q = np.empty((3, 3))
    for p in range(positions.shape[0]):
        px = positions[p, 0] * inv_dx
        py = positions[p, 1] * inv_dx
        pz = positions[p, 2] * inv_dx
        bx = int(np.floor(px - 0.5))
        by = int(np.floor(py - 0.5))
        bz = int(np.floor(pz - 0.5))
        if bx < 0 or by < 0 or bz < 0 or bx + 2 >= n or by + 2 >= n or bz + 2 >= n:
            return STATUS_MARGIN, p
        fx = px - bx
        fy = py - by
        fz = pz - bz
        wx0, wx1, wx2 = quadratic_weights(fx)
        wy0, wy1, wy2 = quadratic_weights(fy)
        wz0, wz1, wz2 = quadratic_weights(fz)
        wx = (wx0, wx1, wx2)
        wy = (wy0, wy1, wy2)
        wz = (wz0, wz1, wz2)

        if not corotated_stress(def_grad[p], lam_p[p], mu_p[p], sigma):
            return STATUS_INVERSION, p
        m = masses[p]
        sv = stress_coeff * volumes[p]
        # Q = stress impulse + mass-weighted affine velocity matrix
        for r in range(3):
            for c in range(3):
                Q[r, c] = sv * sigma[r, c] + m * affine[p, r, c]
        mvx = m * velocities[p, 0]
        mvy = m * velocities[p, 1]
        mvz = m * velocities[p, 2]
        for i in range(3):
            dpx = (i - fx) * dx
            for j in range(3):
                dpy = (j - fy) * dx
                wij = wx[i] * wy[j]
                for k in range(3):
                    dpz = (k - fz) * dx
                    w = wij * wz[k]
                    gi = bx + i
                    gj = by + j
                    gk = bz + k
                    grid_v[gi, gj, gk, 0] += w * (mvx + Q[0, 0] * dpx + Q[0, 1] * dpy + Q[0, 2] * dpz)
                    grid_v[gi, gj, gk, 1] += w * (mvy + Q[1, 0] * dpx + Q[1, 1] * dpy + Q[1, 2] * dpz)
                    grid_v[gi, gj, gk, 2] += w * (mvz + Q[2, 0] * dpx + Q[2, 1] * dpy + Q[2, 2] * dpz)
                    grid_m[gi, gj, gk] += w * m
    return STATUS_OK, -1


@njit(cache=True)
def _heightfield_sample(hf, x0, z0, h, x, z):
    """Bilinear height lookup clamped to the grid edge."""
    nz, nx = hf.shape
    u = (x - x0) / h
    v = (z - z0) / h
    if u < 0.0:
        u = 0.0
    if v < 0.0:
        v = 0.0
    if u > nx - 1.0:
        u = nx - 1.0
    if v > nz - 1.0:
        v = nz - 1.0
    iu = int(u)
    iv = int(v)
    if iu > nx - 2:
        iu = nx - 2
    if iv > nz - 2:
        iv = nz - 2
    fu = u - iu
    fv = v - iv
    return (
        hf[iv, iu] * (1 - fu) * (1 - fv)
        + hf[iv, iu + 1] * fu * (1 - fv)
        + hf[iv + 1, iu] * (1 - fu) * fv
        + hf[iv + 1, iu + 1] * fu * fv
    )


@njit(cache=True)
def grid_update(
    grid_m, grid_v,
    lo0, lo1, lo2, hi0, hi1, hi2,
    n, dx, dt, gx, gy, gz,
    col_kind, col_mode, col_mu, plane_h, hf, hf_x0, hf_z0, hf_spacing,
):
    """Momentum -> velocity, gravity, domain band and collider response."""
    band = 3
    for i in range(lo0, hi0):
        x = i * dx
        for j in range(lo1, hi1):
            y = j * dx
            for k in range(lo2, hi2):
                m = grid_m[i, j, k]
                if m <= 0.0:
                    grid_v[i, j, k, 0] = 0.0
                    grid_v[i, j, k, 1] = 0.0
                    grid_v[i, j, k, 2] = 0.0
                    continue
                inv_m = 1.0 / m
                vx = grid_v[i, j, k, 0] * inv_m + gx * dt
                vy = grid_v[i, j, k, 1] * inv_m + gy * dt
                vz = grid_v[i, j, k, 2] * inv_m + gz * dt
                # domain boundary: zero the outward normal component
                if i < band and vx < 0.0:
                    vx = 0.0
                if i >= n - band and vx > 0.0:
                    vx = 0.0
                if j < band and vy < 0.0:
                    vy = 0.0
                if j >= n - band and vy > 0.0:
                    vy = 0.0
                if k < band and vz < 0.0:
                    vz = 0.0
                if k >= n - band and vz > 0.0:
                    vz = 0.0
                if col_kind != COLLIDER_NONE:
                    z = k * dx
                    if col_kind == COLLIDER_PLANE:
                        surf = plane_h
                        nx_ = 0.0
                        ny_ = 1.0
                        nz_ = 0.0
                    else:
                        surf = _heightfield_sample(hf, hf_x0, hf_z0, hf_spacing, x, z)
                        hxp = _heightfield_sample(hf, hf_x0, hf_z0, hf_spacing, x + hf_spacing, z)
                        hxm = _heightfield_sample(hf, hf_x0, hf_z0, hf_spacing, x - hf_spacing, z)
                        hzp = _heightfield_sample(hf, hf_x0, hf_z0, hf_spacing, x, z + hf_spacing)
                        hzm = _heightfield_sample(hf, hf_x0, hf_z0, hf_spacing, x, z - hf_spacing)
                        nx_ = -(hxp - hxm) / (2.0 * hf_spacing)
                        ny_ = 1.0
                        nz_ = -(hzp - hzm) / (2.0 * hf_spacing)
                        norm = np.sqrt(nx_ * nx_ + ny_ * ny_ + nz_ * nz_)
                        nx_ /= norm
                        ny_ /= norm
                        nz_ /= norm
                    if y <= surf:
                        vn = vx * nx_ + vy * ny_ + vz * nz_
                        if vn < 0.0:
                            if col_mode == MODE_STICKY:
                                vx = 0.0
                                vy = 0.0
                                vz = 0.0
                            else:
                                tx = vx - vn * nx_
                                ty = vy - vn * ny_
                                tz = vz - vn * nz_
                                if col_mode == MODE_SLIP:
                                    tn = np.sqrt(tx * tx + ty * ty + tz * tz)
                                    if tn > 1e-30:
                                        fac = 1.0 + col_mu * vn / tn   # vn < 0
                                        if fac < 0.0:
                                            fac = 0.0
                                        tx *= fac
                                        ty *= fac
                                        tz *= fac
                                    else:
                                        tx = 0.0
                                        ty = 0.0
                                        tz = 0.0
                                vx = tx
                                vy = ty
                                vz = tz
                grid_v[i, j, k, 0] = vx
                grid_v[i, j, k, 1] = vy
                grid_v[i, j, k, 2] = vz


@njit(cache=True)
def _clamp_singular(F, lo, hi):
    U, s, Vt = np.linalg.svd(F)
    for i in range(3):
        if s[i] < lo:
            s[i] = lo
        elif s[i] > hi:
            s[i] = hi
    out = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            acc = 0.0
            for k in range(3):
                acc += U[r, k] * s[k] * Vt[k, c]
            out[r, c] = acc
    return out


@njit(cache=True)
def _sand_project(F, lam, mu, alpha):
    """Drucker-Prager return mapping on the Hencky strain (Klar-style)."""
    U, s, Vt = np.linalg.svd(F)
    e0 = np.log(max(s[0], 1e-10))
    e1 = np.log(max(s[1], 1e-10))
    e2 = np.log(max(s[2], 1e-10))
    tr = e0 + e1 + e2
    if tr > 0.0:
        # expansion: all strain is plastic
        ne0 = 0.0
        ne1 = 0.0
        ne2 = 0.0
    else:
        h0 = e0 - tr / 3.0
        h1 = e1 - tr / 3.0
        h2 = e2 - tr / 3.0
        hn = np.sqrt(h0 * h0 + h1 * h1 + h2 * h2)
        dg = hn + (3.0 * lam + 2.0 * mu) / (2.0 * mu) * tr * alpha
        if dg <= 0.0 or hn < 1e-12:
            ne0 = e0
            ne1 = e1
            ne2 = e2
        else:
            ne0 = e0 - dg * h0 / hn
            ne1 = e1 - dg * h1 / hn
            ne2 = e2 - dg * h2 / hn
    s0 = np.exp(ne0)
    s1 = np.exp(ne1)
    s2 = np.exp(ne2)
    out = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            out[r, c] = U[r, 0] * s0 * Vt[0, c] + U[r, 1] * s1 * Vt[1, c] + U[r, 2] * s2 * Vt[2, c]
    return out


@njit(cache=True)
def transfer_g2p(
    positions, velocities, def_grad, affine,
    lam_p, mu_p, model_p, grid_v, n, dx, inv_dx, dt,
    clamp_inversion, sand_alpha,
):
    """Gather velocities and affine field, update F, advect, clamp margin.

    Returns (status, particle, clamped_count). Velocity is replaced by the
    grid interpolation (PIC-style MLS transfer).
    """
    coeff = 4.0 * inv_dx * inv_dx
    margin = 3.0 * dx
    hi_pos = n * dx - margin
    clamped = 0
    for p in range(positions.shape[0]):
        px = positions[p, 0] * inv_dx
        py = positions[p, 1] * inv_dx
        pz = positions[p, 2] * inv_dx
        bx = int(np.floor(px - 0.5))
        by = int(np.floor(py - 0.5))
        bz = int(np.floor(pz - 0.5))
        if bx < 0 or by < 0 or bz < 0 or bx + 2 >= n or by + 2 >= n or bz + 2 >= n:
            return STATUS_MARGIN, p, clamped
        fx = px - bx
        fy = py - by
        fz = pz - bz
        wx0, wx1, wx2 = quadratic_weights(fx)
        wy0, wy1, wy2 = quadratic_weights(fy)
        wz0, wz1, wz2 = quadratic_weights(fz)
        wx = (wx0, wx1, wx2)
        wy = (wy0, wy1, wy2)
        wz = (wz0, wz1, wz2)
        nvx = 0.0
        nvy = 0.0
        nvz = 0.0
        c00 = 0.0
        c01 = 0.0
        c02 = 0.0
        c10 = 0.0
        c11 = 0.0
        c12 = 0.0
        c20 = 0.0
        c21 = 0.0
        c22 = 0.0
        for i in range(3):
            dpx = (i - fx) * dx
            for j in range(3):
                dpy = (j - fy) * dx
                wij = wx[i] * wy[j]
                for k in range(3):
                    dpz = (k - fz) * dx
                    w = wij * wz[k]
                    gi = bx + i
                    gj = by + j
                    gk = bz + k
                    gvx = grid_v[gi, gj, gk, 0]
                    gvy = grid_v[gi, gj, gk, 1]
                    gvz = grid_v[gi, gj, gk, 2]
                    nvx += w * gvx
                    nvy += w * gvy
                    nvz += w * gvz
                    cw = coeff * w
                    c00 += cw * gvx * dpx
                    c01 += cw * gvx * dpy
                    c02 += cw * gvx * dpz
                    c10 += cw * gvy * dpx
                    c11 += cw * gvy * dpy
                    c12 += cw * gvy * dpz
                    c20 += cw * gvz * dpx
                    c21 += cw * gvz * dpy
                    c22 += cw * gvz * dpz
        if not (np.isfinite(nvx) and np.isfinite(nvy) and np.isfinite(nvz)):
            return STATUS_NONFINITE, p, clamped
        velocities[p, 0] = nvx
        velocities[p, 1] = nvy
        velocities[p, 2] = nvz
        affine[p, 0, 0] = c00
        affine[p, 0, 1] = c01
        affine[p, 0, 2] = c02
        affine[p, 1, 0] = c10
        affine[p, 1, 1] = c11
        affine[p, 1, 2] = c12
        affine[p, 2, 0] = c20
        affine[p, 2, 1] = c21
        affine[p, 2, 2] = c22
        # F <- (I + dt C) F
        f = def_grad[p]
        g00 = 1.0 + dt * c00
        g01 = dt * c01
        g02 = dt * c02
        g10 = dt * c10
        g11 = 1.0 + dt * c11
        g12 = dt * c12
        g20 = dt * c20
        g21 = dt * c21
        g22 = 1.0 + dt * c22
        n00 = g00 * f[0, 0] + g01 * f[1, 0] + g02 * f[2, 0]
        n01 = g00 * f[0, 1] + g01 * f[1, 1] + g02 * f[2, 1]
        n02 = g00 * f[0, 2] + g01 * f[1, 2] + g02 * f[2, 2]
        n10 = g10 * f[0, 0] + g11 * f[1, 0] + g12 * f[2, 0]
        n11 = g10 * f[0, 1] + g11 * f[1, 1] + g12 * f[2, 1]
        n12 = g10 * f[0, 2] + g11 * f[1, 2] + g12 * f[2, 2]
        n20 = g20 * f[0, 0] + g21 * f[1, 0] + g22 * f[2, 0]
        n21 = g20 * f[0, 1] + g21 * f[1, 1] + g22 * f[2, 1]
        n22 = g20 * f[0, 2] + g21 * f[1, 2] + g22 * f[2, 2]
        f[0, 0] = n00
        f[0, 1] = n01
        f[0, 2] = n02
        f[1, 0] = n10
        f[1, 1] = n11
        f[1, 2] = n12
        f[2, 0] = n20
        f[2, 1] = n21
        f[2, 2] = n22
        if model_p[p] == MODEL_SAND:
            def_grad[p] = _sand_project(f, lam_p[p], mu_p[p], sand_alpha)
        elif clamp_inversion:
            d = _det3(f)
            if d <= 1e-3 or d >= 1e3:
                def_grad[p] = _clamp_singular(f, 0.1, 10.0)
        # advect and clamp to the margin band as a last resort
        for ax in range(3):
            newp = positions[p, ax] + dt * velocities[p, ax]
            if newp < margin:
                newp = margin
                velocities[p, ax] = 0.0
                clamped += 1
            elif newp > hi_pos:
                newp = hi_pos
                velocities[p, ax] = 0.0
                clamped += 1
            positions[p, ax] = newp
    return STATUS_OK, -1, clamped
