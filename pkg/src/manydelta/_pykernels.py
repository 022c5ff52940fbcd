"""Pure-Python path integrators.

Statement-for-statement twin of the compiled ``_kernels`` module.  Both draw
normals from the same bit generator in the same order, so a path produced by
either backend from the same stream is the same path.
"""
import math

import numpy as np
from scipy.special import k0e, k1e

SQRT2 = math.sqrt(2.0)
INF = math.inf

STATUS_HORIZON = 0
STATUS_CONTACTS = 1
STATUS_STOPPED = 2
STATUS_BUDGET = 3
STATUS_BLOWUP = 4


def _k0e(x):
    return float(k0e(x))


def _k1e(x):
    return float(k1e(x))


def kappa(r, beta, eps):
    s = eps + r * r
    x = math.sqrt(2.0 * beta * s)
    k = _k0e(x) * math.exp(-x)
    return eps / (s * s * k * k)


def integrate_particles(
    x0, y0, up, lo, beta, drift_w, model_w, stop_mask, active_edge, eps,
    dt_max, dt_min, dt_scale, rho_f, delta_c, taming_cap,
    t_max, max_contacts, eta, max_steps, bit_generator, noise, record,
):
    n = len(x0)
    m = len(beta)
    x = [float(v) for v in x0]
    y = [float(v) for v in y0]
    up = [int(v) for v in up]
    lo = [int(v) for v in lo]
    beta = [float(v) for v in beta]
    drift_w = [float(v) for v in drift_w]
    model_w = [float(v) for v in model_w]
    stop_mask = [bool(v) for v in stop_mask]
    xn = [0.0] * n
    yn = [0.0] * n
    bx = [0.0] * n
    by = [0.0] * n
    wx = [0.0] * n
    wy = [0.0] * n
    rx = [0.0] * m
    ry = [0.0] * m
    r = [0.0] * m
    rn = [0.0] * m
    sqb = [math.sqrt(b) for b in beta]
    sq2b = [math.sqrt(2.0 * b) for b in beta]
    watch = [w > 0.0 for w in model_w]
    near = [watch[e] or drift_w[e] > 0.0 for e in range(m)]
    fixed = noise is not None
    gen = None
    if fixed:
        nz_re = np.ascontiguousarray(np.real(noise), dtype=np.float64)
        nz_im = np.ascontiguousarray(np.imag(noise), dtype=np.float64)
        max_steps = min(max_steps, nz_re.shape[0])
    else:
        gen = np.random.Generator(bit_generator)
    t = 0.0
    step = 0
    status = STATUS_HORIZON
    n_contacts = 0
    acc_weight = acc_aring = acc_occ = 0.0
    contacts = []

    for e in range(m):
        rx[e] = (x[up[e]] - x[lo[e]]) / SQRT2
        ry[e] = (y[up[e]] - y[lo[e]]) / SQRT2
        r[e] = math.sqrt(rx[e] * rx[e] + ry[e] * ry[e])
    armed = [watch[e] and r[e] > delta_c for e in range(m)]

    if record:
        tape_t = [0.0]
        tape_z = [[v for j in range(n) for v in (x[j], y[j])]]
        tape_w = []
        tape_b = []

    while t < t_max:
        if step >= max_steps:
            status = STATUS_BUDGET
            break
        rmin2 = INF
        rnear = INF
        for e in range(m):
            rc = r[e] if r[e] > rho_f else rho_f
            if watch[e] and rc * rc < rmin2:
                rmin2 = rc * rc
            if near[e] and rc < rnear:
                rnear = rc
        if fixed:
            dt = dt_max
        else:
            dt = dt_max if rmin2 == INF else dt_max * rmin2 / dt_scale
            if dt < dt_min:
                dt = dt_min
            if dt > dt_max:
                dt = dt_max
        if t + dt > t_max:
            dt = t_max - t

        shift = INF
        for e in range(m):
            if watch[e]:
                rc = r[e] if r[e] > rho_f else rho_f
                xe = sq2b[e] * rc
                if xe < shift:
                    shift = xe
        ksum = 0.0
        wb = 0.0
        for e in range(m):
            if watch[e]:
                rc = r[e] if r[e] > rho_f else rho_f
                xe = sq2b[e] * rc
                kw = model_w[e] * _k0e(xe) * math.exp(-(xe - shift))
                ksum += kw
                wb += beta[e] * kw
        inc_weight = wb / ksum * dt if ksum > 0.0 else 0.0
        inc_aring = 0.0
        inc_occ = 0.0
        if active_edge >= 0 and eps > 0.0:
            kap = kappa(r[active_edge], beta[active_edge], eps)
            other = 0.0
            for e in range(m):
                if e != active_edge and watch[e]:
                    rc = r[e] if r[e] > rho_f else rho_f
                    xe = sq2b[e] * rc
                    other += model_w[e] / model_w[active_edge] * _k0e(xe) * math.exp(-xe)
            inc_aring = other * kap * dt
            inc_occ = kap * dt

        for j in range(n):
            bx[j] = 0.0
            by[j] = 0.0
        shift = INF
        for e in range(m):
            if drift_w[e] > 0.0:
                rc = r[e] if r[e] > rho_f else rho_f
                xe = sq2b[e] * rc
                if xe < shift:
                    shift = xe
        if shift < INF:
            ksum = 0.0
            for e in range(m):
                if drift_w[e] > 0.0:
                    rc = r[e] if r[e] > rho_f else rho_f
                    xe = sq2b[e] * rc
                    ksum += drift_w[e] * _k0e(xe) * math.exp(-(xe - shift))
            for e in range(m):
                if drift_w[e] > 0.0 and r[e] > 0.0:
                    rc = r[e] if r[e] > rho_f else rho_f
                    xe = sq2b[e] * rc
                    coef = drift_w[e] * sqb[e] * _k1e(xe) * math.exp(-(xe - shift)) / ksum
                    ux = rx[e] / r[e]
                    uy = ry[e] / r[e]
                    bx[up[e]] -= coef * ux
                    by[up[e]] -= coef * uy
                    bx[lo[e]] += coef * ux
                    by[lo[e]] += coef * uy
            if taming_cap > 0.0 and dt > 0.0:
                bmax = 0.0
                for j in range(n):
                    coef = math.sqrt(bx[j] * bx[j] + by[j] * by[j])
                    if coef > bmax:
                        bmax = coef
                cap = taming_cap * rnear / dt
                if bmax > cap:
                    scale = cap / bmax
                    for j in range(n):
                        bx[j] *= scale
                        by[j] *= scale

        if fixed:
            for j in range(n):
                wx[j] = float(nz_re[step, j])
                wy[j] = float(nz_im[step, j])
        else:
            sd = math.sqrt(dt)
            draws = gen.standard_normal(2 * n)
            for j in range(n):
                wx[j] = sd * float(draws[2 * j])
                wy[j] = sd * float(draws[2 * j + 1])

        for j in range(n):
            xn[j] = x[j] + bx[j] * dt + wx[j]
            yn[j] = y[j] + by[j] * dt + wy[j]
            if not (math.isfinite(xn[j]) and math.isfinite(yn[j])):
                status = STATUS_BLOWUP
        if status == STATUS_BLOWUP:
            break

        theta = 1.0
        hit = -1
        if eta > 0.0:
            for e in range(m):
                rx[e] = (xn[up[e]] - xn[lo[e]]) / SQRT2
                ry[e] = (yn[up[e]] - yn[lo[e]]) / SQRT2
                rn[e] = math.sqrt(rx[e] * rx[e] + ry[e] * ry[e])
                if stop_mask[e] and rn[e] <= eta and r[e] > eta:
                    th = (r[e] - eta) / (r[e] - rn[e])
                    if th < theta:
                        theta = th
                        hit = e
            if hit >= 0:
                for j in range(n):
                    wx[j] *= theta
                    wy[j] *= theta
                    xn[j] = x[j] + bx[j] * (theta * dt) + wx[j]
                    yn[j] = y[j] + by[j] * (theta * dt) + wy[j]
                dt = theta * dt
                inc_weight *= theta
                inc_aring *= theta
                inc_occ *= theta

        acc_weight += inc_weight
        acc_aring += inc_aring
        acc_occ += inc_occ
        t += dt
        step += 1
        for j in range(n):
            x[j] = xn[j]
            y[j] = yn[j]
        for e in range(m):
            rx[e] = (x[up[e]] - x[lo[e]]) / SQRT2
            ry[e] = (y[up[e]] - y[lo[e]]) / SQRT2
            r[e] = math.sqrt(rx[e] * rx[e] + ry[e] * ry[e])

        if record:
            tape_t.append(t)
            tape_z.append([v for j in range(n) for v in (x[j], y[j])])
            tape_w.append([v for j in range(n) for v in (wx[j], wy[j])])
            tape_b.append([v for j in range(n) for v in (bx[j], by[j])])

        for e in range(m):
            if watch[e]:
                if armed[e] and r[e] <= delta_c:
                    contacts.append((t, e, r[e]))
                    n_contacts += 1
                    armed[e] = False
                elif not armed[e] and r[e] > 2.0 * delta_c:
                    armed[e] = True
        if hit >= 0:
            status = STATUS_STOPPED
            break
        if max_contacts > 0 and n_contacts >= max_contacts:
            status = STATUS_CONTACTS
            break

    out = {
        "t": t,
        "x": np.array(x),
        "y": np.array(y),
        "status": status,
        "steps": step,
        "contacts": contacts,
        "acc_weight": acc_weight,
        "acc_aring": acc_aring,
        "acc_occ": acc_occ,
    }
    if record:
        out["times"] = np.array(tape_t)
        out["states"] = np.array(tape_z).reshape(-1, 2 * n)
        out["noise"] = np.array(tape_w).reshape(-1, 2 * n)
        out["drift"] = np.array(tape_b).reshape(-1, 2 * n)
    return out


def integrate_relative(
    x0, y0, beta, dt_max, dt_min, dt_scale, rho_f, taming_cap, t_max,
    eps, q, max_steps, bit_generator, record,
):
    gen = np.random.Generator(bit_generator)
    sq2b = math.sqrt(2.0 * beta)
    x = float(x0)
    y = float(y0)
    t = 0.0
    acc_occ = 0.0
    acc_lap = 0.0
    step = 0
    status = STATUS_HORIZON
    if record:
        tape = [(0.0, math.sqrt(x * x + y * y), 0.0)]
    while t < t_max:
        if step >= max_steps:
            status = STATUS_BUDGET
            break
        r = math.sqrt(x * x + y * y)
        rc = r if r > rho_f else rho_f
        dt = dt_max * rc * rc / dt_scale
        if dt < dt_min:
            dt = dt_min
        if dt > dt_max:
            dt = dt_max
        if t + dt > t_max:
            dt = t_max - t
        if eps > 0.0:
            kap = kappa(r, beta, eps)
            acc_occ += kap * dt
            acc_lap += math.exp(-q * t) * kap * dt
        mag = sq2b * _k1e(sq2b * rc) / _k0e(sq2b * rc)
        if taming_cap > 0.0 and mag * dt > taming_cap * rc:
            mag = taming_cap * rc / dt
        if r > 0.0:
            ux = x / r
            uy = y / r
        else:
            ux = 0.0
            uy = 0.0
        sd = math.sqrt(dt)
        draws = gen.standard_normal(2)
        wx = sd * float(draws[0])
        wy = sd * float(draws[1])
        x = x - mag * ux * dt + wx
        y = y - mag * uy * dt + wy
        if not (math.isfinite(x) and math.isfinite(y)):
            status = STATUS_BLOWUP
            break
        t += dt
        step += 1
        if record:
            tape.append((t, math.sqrt(x * x + y * y), ux * wx + uy * wy))
    out = {
        "t": t, "x": x, "y": y, "status": status, "steps": step,
        "acc_occ": acc_occ, "acc_lap": acc_lap,
    }
    if record:
        data = np.array(tape).reshape(-1, 3)
        out["times"] = data[:, 0]
        out["radius"] = data[:, 1]
        out["radial_noise"] = data[1:, 2]
    return out


def integrate_bessel(dim, r0, dts, dbs, rho_f):
    n = len(dts)
    out = np.empty(n + 1)
    r = float(r0)
    clamps = 0
    out[0] = r
    for k in range(n):
        rc = r if r > rho_f else rho_f
        r = r + (dim - 1.0) / (2.0 * rc) * float(dts[k]) + float(dbs[k])
        if r < rho_f:
            r = rho_f
            clamps += 1
        out[k + 1] = r
    return out, clamps
