"""Pure-Python twins of the kernels in ``_core.pyx``.

Used when the extension is not built or ``INVLEARN_PURE_PYTHON=1`` is set.
The arithmetic follows the compiled version step for step.
"""
import numpy as np


def jacobi_eigh(m, tol, max_sweeps):
    a = np.array(m, dtype=np.float64, order="C")
    n = a.shape[0]
    vt = np.eye(n)
    thresh = tol * np.sqrt(np.sum(a * a))
    iu = np.triu_indices(n, 1)
    sweep = 0
    converged = False
    while sweep <= max_sweeps:
        if np.sqrt(2.0 * np.sum(a[iu] ** 2)) <= thresh:
            converged = True
            break
        if sweep == max_sweeps:
            break
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # negligible against both diagonals: zero it and skip
                if (sweep > 4 and abs(a[p, p]) + 100.0 * abs(apq) == abs(a[p, p])
                        and abs(a[q, q]) + 100.0 * abs(apq) == abs(a[q, q])):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[:, p] = a[p, :]
                a[:, q] = a[q, :]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = vt[p, :].copy(), vt[q, :].copy()
                vt[p, :] = c * vp - s * vq
                vt[q, :] = s * vp + c * vq
    return np.diagonal(a).copy(), np.ascontiguousarray(vt.T), sweep, converged


def prox_power(v, tau, p, tol, max_iter):
    v = np.asarray(v, dtype=np.float64)
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), v.shape)
    a = np.abs(v)
    k = 1.0 / (p - 1.0)
    out = np.zeros_like(a)
    live = a > 0.0
    if not live.any():
        return out
    a_l, t_l = a[live], tau[live]
    u = np.minimum(a_l / t_l, a_l ** (p - 1.0))
    scale = np.maximum(a_l, 1.0)
    active = np.ones(u.shape, dtype=bool)
    for _ in range(max_iter):
        h = u ** k + t_l * u - a_l
        active &= np.abs(h) > tol * scale
        if not active.any():
            break
        dh = k * u ** (k - 1.0) + t_l
        un = u - h / dh
        un = np.where(un <= 0.0, 0.5 * u, un)
        active &= un != u
        u = np.where(active, un, u)
    out[live] = u ** k
    return np.copysign(out, v)
