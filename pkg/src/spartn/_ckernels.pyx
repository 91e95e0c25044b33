# Ray-marching kernels over a dense voxel grid (compiled backend).
#
# Rays are given in continuous grid-index coordinates: sample i of ray r sits
# at og[r] + t * dg[r] with t = t0 + (i + u) * dt, dt = (t1 - t0) / n, where u
# is the jitter (0.5 when no jitter array is passed).  Densities are per unit
# of ray parameter t.
from libc.math cimport exp, floor
from libc.stdlib cimport malloc, free


cdef inline bint _corners(int nx, int ny, int nz, double gx, double gy, double gz,
                          Py_ssize_t* idx, double* w) noexcept nogil:
    cdef double fx, fy, fz
    cdef int ix, iy, iz
    if gx < 0.0 or gy < 0.0 or gz < 0.0:
        return False
    if gx > nx - 1 or gy > ny - 1 or gz > nz - 1:
        return False
    ix = <int>floor(gx)
    iy = <int>floor(gy)
    iz = <int>floor(gz)
    if ix > nx - 2:
        ix = nx - 2
    if iy > ny - 2:
        iy = ny - 2
    if iz > nz - 2:
        iz = nz - 2
    fx = gx - ix
    fy = gy - iy
    fz = gz - iz
    cdef Py_ssize_t base = (<Py_ssize_t>ix * ny + iy) * nz + iz
    cdef Py_ssize_t sx = <Py_ssize_t>ny * nz
    cdef Py_ssize_t sy = nz
    idx[0] = base
    idx[1] = base + 1
    idx[2] = base + sy
    idx[3] = base + sy + 1
    idx[4] = base + sx
    idx[5] = base + sx + 1
    idx[6] = base + sx + sy
    idx[7] = base + sx + sy + 1
    w[0] = (1 - fx) * (1 - fy) * (1 - fz)
    w[1] = (1 - fx) * (1 - fy) * fz
    w[2] = (1 - fx) * fy * (1 - fz)
    w[3] = (1 - fx) * fy * fz
    w[4] = fx * (1 - fy) * (1 - fz)
    w[5] = fx * (1 - fy) * fz
    w[6] = fx * fy * (1 - fz)
    w[7] = fx * fy * fz
    return True


def render_rays(double[:, :, ::1] density, double[:, :, :, ::1] color,
                double[::1] bg, double[:, ::1] og, double[:, ::1] dg,
                double[::1] t0, double[::1] t1, int n, double[:, ::1] jitter,
                double[:, ::1] out_rgb, double[::1] out_T, double[:, ::1] out_w):
    cdef int nx = density.shape[0], ny = density.shape[1], nz = density.shape[2]
    cdef Py_ssize_t R = og.shape[0]
    cdef bint has_jit = jitter.shape[0] > 0
    cdef bint has_w = out_w.shape[0] > 0
    cdef double* dens = &density[0, 0, 0]
    cdef double* col = &color[0, 0, 0, 0]
    cdef Py_ssize_t r, c
    cdef int i, k
    cdef double dt, t, u, sig, trans, alpha, wgt, cr, cg, cb
    cdef Py_ssize_t idx[8]
    cdef double w[8]
    with nogil:
        for r in range(R):
            trans = 1.0
            cr = 0.0
            cg = 0.0
            cb = 0.0
            if t1[r] > t0[r]:
                dt = (t1[r] - t0[r]) / n
                for i in range(n):
                    u = jitter[r, i] if has_jit else 0.5
                    t = t0[r] + (i + u) * dt
                    if not _corners(nx, ny, nz, og[r, 0] + t * dg[r, 0],
                                    og[r, 1] + t * dg[r, 1], og[r, 2] + t * dg[r, 2],
                                    idx, w):
                        if has_w:
                            out_w[r, i] = 0.0
                        continue
                    sig = 0.0
                    for k in range(8):
                        sig = sig + w[k] * dens[idx[k]]
                    alpha = 1.0 - exp(-sig * dt)
                    wgt = trans * alpha
                    if has_w:
                        out_w[r, i] = wgt
                    for k in range(8):
                        c = 3 * idx[k]
                        cr = cr + wgt * w[k] * col[c]
                        cg = cg + wgt * w[k] * col[c + 1]
                        cb = cb + wgt * w[k] * col[c + 2]
                    trans = trans * (1.0 - alpha)
            elif has_w:
                for i in range(n):
                    out_w[r, i] = 0.0
            out_rgb[r, 0] = cr + trans * bg[0]
            out_rgb[r, 1] = cg + trans * bg[1]
            out_rgb[r, 2] = cb + trans * bg[2]
            out_T[r] = trans


def loss_grad_rays(double[:, :, ::1] density, double[:, :, :, ::1] color,
                   double[::1] bg, double[:, ::1] og, double[:, ::1] dg,
                   double[::1] t0, double[::1] t1, int n, double[:, ::1] jitter,
                   double[:, ::1] target, double scale,
                   double[:, :, ::1] grad_density, double[:, :, :, ::1] grad_color,
                   unsigned char[::1] touched, double[::1] grad_bg):
    """Accumulate d(loss)/d(params) for loss = scale * sum_r |C_r - target_r|^2.

    Returns the loss.  ``touched`` marks every voxel that received gradient.
    """
    cdef int nx = density.shape[0], ny = density.shape[1], nz = density.shape[2]
    cdef Py_ssize_t R = og.shape[0]
    cdef bint has_jit = jitter.shape[0] > 0
    cdef double* dens = &density[0, 0, 0]
    cdef double* col = &color[0, 0, 0, 0]
    cdef double* gd = &grad_density[0, 0, 0]
    cdef double* gc = &grad_color[0, 0, 0, 0]
    cdef unsigned char* tch = &touched[0]
    cdef Py_ssize_t* sidx = <Py_ssize_t*>malloc(n * 8 * sizeof(Py_ssize_t))
    cdef double* sw = <double*>malloc(n * 8 * sizeof(double))
    cdef double* ssig = <double*>malloc(n * sizeof(double))
    cdef double* scol = <double*>malloc(n * 3 * sizeof(double))
    cdef double* strans = <double*>malloc((n + 1) * sizeof(double))
    cdef char* sin_ = <char*>malloc(n * sizeof(char))
    if not sidx or not sw or not ssig or not scol or not strans or not sin_:
        free(sidx); free(sw); free(ssig); free(scol); free(strans); free(sin_)
        raise MemoryError()
    cdef Py_ssize_t r, c, q
    cdef int i, k
    cdef double dt, t, u, sig, alpha, wgt, loss = 0.0
    cdef double C0, C1, C2, g0, g1, g2, s0, s1, s2, dsig, gdotc, gdots
    cdef double tN
    try:
        with nogil:
            for r in range(R):
                C0 = 0.0
                C1 = 0.0
                C2 = 0.0
                strans[0] = 1.0
                dt = 0.0
                if t1[r] > t0[r]:
                    dt = (t1[r] - t0[r]) / n
                    for i in range(n):
                        u = jitter[r, i] if has_jit else 0.5
                        t = t0[r] + (i + u) * dt
                        sin_[i] = _corners(nx, ny, nz, og[r, 0] + t * dg[r, 0],
                                           og[r, 1] + t * dg[r, 1],
                                           og[r, 2] + t * dg[r, 2],
                                           &sidx[8 * i], &sw[8 * i])
                        if not sin_[i]:
                            ssig[i] = 0.0
                            scol[3 * i] = 0.0
                            scol[3 * i + 1] = 0.0
                            scol[3 * i + 2] = 0.0
                            strans[i + 1] = strans[i]
                            continue
                        sig = 0.0
                        s0 = 0.0
                        s1 = 0.0
                        s2 = 0.0
                        for k in range(8):
                            q = sidx[8 * i + k]
                            sig = sig + sw[8 * i + k] * dens[q]
                            s0 = s0 + sw[8 * i + k] * col[3 * q]
                            s1 = s1 + sw[8 * i + k] * col[3 * q + 1]
                            s2 = s2 + sw[8 * i + k] * col[3 * q + 2]
                        ssig[i] = sig
                        scol[3 * i] = s0
                        scol[3 * i + 1] = s1
                        scol[3 * i + 2] = s2
                        alpha = 1.0 - exp(-sig * dt)
                        wgt = strans[i] * alpha
                        C0 = C0 + wgt * s0
                        C1 = C1 + wgt * s1
                        C2 = C2 + wgt * s2
                        strans[i + 1] = strans[i] * (1.0 - alpha)
                    tN = strans[n]
                else:
                    tN = 1.0
                C0 = C0 + tN * bg[0]
                C1 = C1 + tN * bg[1]
                C2 = C2 + tN * bg[2]
                g0 = C0 - target[r, 0]
                g1 = C1 - target[r, 1]
                g2 = C2 - target[r, 2]
                loss = loss + scale * (g0 * g0 + g1 * g1 + g2 * g2)
                g0 = 2.0 * scale * g0
                g1 = 2.0 * scale * g1
                g2 = 2.0 * scale * g2
                grad_bg[0] += tN * g0
                grad_bg[1] += tN * g1
                grad_bg[2] += tN * g2
                if not t1[r] > t0[r]:
                    continue
                # suffix radiance: everything composited after sample i
                s0 = C0
                s1 = C1
                s2 = C2
                for i in range(n):
                    if not sin_[i]:
                        continue
                    wgt = strans[i] - strans[i + 1]
                    s0 = s0 - wgt * scol[3 * i]
                    s1 = s1 - wgt * scol[3 * i + 1]
                    s2 = s2 - wgt * scol[3 * i + 2]
                    gdotc = g0 * scol[3 * i] + g1 * scol[3 * i + 1] + g2 * scol[3 * i + 2]
                    gdots = g0 * s0 + g1 * s1 + g2 * s2
                    dsig = dt * (strans[i + 1] * gdotc - gdots)
                    for k in range(8):
                        q = sidx[8 * i + k]
                        gd[q] += sw[8 * i + k] * dsig
                        c = 3 * q
                        gc[c] += sw[8 * i + k] * wgt * g0
                        gc[c + 1] += sw[8 * i + k] * wgt * g1
                        gc[c + 2] += sw[8 * i + k] * wgt * g2
                        tch[q] = 1
    finally:
        free(sidx); free(sw); free(ssig); free(scol); free(strans); free(sin_)
    return loss
