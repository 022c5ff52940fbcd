# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path integrators.

Every routine here has a line-by-line twin in ``_pykernels``; keep the two in
step so that both backends consume the random stream in the same order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, isfinite, INFINITY
from cpython.pycapsule cimport PyCapsule_GetPointer
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal
from scipy.special.cython_special cimport k0e, k1e

cnp.import_array()

cdef double SQRT2 = sqrt(2.0)

DEF STATUS_HORIZON = 0
DEF STATUS_CONTACTS = 1
DEF STATUS_STOPPED = 2
DEF STATUS_BUDGET = 3
DEF STATUS_BLOWUP = 4


cdef inline double kappa(double r, double beta, double eps) noexcept nogil:
    cdef double s = eps + r * r
    cdef double x = sqrt(2.0 * beta * s)
    cdef double k = k0e(x) * exp(-x)
    return eps / (s * s * k * k)


cdef class _Tape:
    """Growable row storage for recorded paths."""
    cdef public object data
    cdef public Py_ssize_t size

    def __init__(self, Py_ssize_t width, Py_ssize_t capacity=256):
        self.data = np.empty((capacity, width), dtype=np.float64)
        self.size = 0

    cdef double[:, ::1] slot(self):
        if self.size == self.data.shape[0]:
            grown = np.empty((2 * self.data.shape[0], self.data.shape[1]), dtype=np.float64)
            grown[:self.size] = self.data
            self.data = grown
        self.size += 1
        return self.data

    def trimmed(self):
        return self.data[:self.size].copy()


cdef bitgen_t* _bitgen(object bit_generator):
    capsule = bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


def integrate_particles(
    const double[::1] x0, const double[::1] y0,
    const long[::1] up, const long[::1] lo,
    const double[::1] beta, const double[::1] drift_w, const double[::1] model_w,
    const unsigned char[::1] stop_mask,
    long active_edge, double eps,
    double dt_max, double dt_min, double dt_scale,
    double rho_f, double delta_c, double taming_cap,
    double t_max, long max_contacts, double eta, long max_steps,
    object bit_generator, object noise, bint record,
):
    """Euler-Maruyama integration of the particle system with pairwise K0 drift.

    Returns a dict with the terminal state, status, contact events, running
    integrals and, when ``record`` is set, the full tape.
    """
    cdef Py_ssize_t n = x0.shape[0], m = beta.shape[0]
    cdef Py_ssize_t j, e, step = 0, hit
    cdef double[::1] x = np.array(x0, dtype=np.float64)
    cdef double[::1] y = np.array(y0, dtype=np.float64)
    cdef double[::1] xn = np.empty(n), yn = np.empty(n)
    cdef double[::1] bx = np.empty(n), by = np.empty(n)
    cdef double[::1] wx = np.empty(n), wy = np.empty(n)
    cdef double[::1] rx = np.empty(m), ry = np.empty(m), r = np.empty(m), rn = np.empty(m)
    cdef double[::1] sqb = np.empty(m), sq2b = np.empty(m)
    cdef unsigned char[::1] armed = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] watch = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] near = np.zeros(m, dtype=np.uint8)
    cdef bint fixed = noise is not None
    cdef const double[:, ::1] nz_re
    cdef const double[:, ::1] nz_im
    cdef bitgen_t* rng = NULL
    cdef double t = 0.0, dt, sd, rc, rmin2, rnear, xe, shift, ksum, kw, wb, coef, ux, uy
    cdef double bmax, cap, scale, theta, th, kap, other, acc_weight = 0.0, acc_aring = 0.0, acc_occ = 0.0
    cdef double inc_weight, inc_aring, inc_occ
    cdef int status = STATUS_HORIZON
    cdef long n_contacts = 0
    cdef double[:, ::1] row
    contacts = []
    cdef _Tape tape_t = None, tape_z = None, tape_w = None, tape_b = None

    if fixed:
        nz_re = np.ascontiguousarray(np.real(noise), dtype=np.float64)
        nz_im = np.ascontiguousarray(np.imag(noise), dtype=np.float64)
        max_steps = min(max_steps, nz_re.shape[0])
    else:
        rng = _bitgen(bit_generator)

    for e in range(m):
        sqb[e] = sqrt(beta[e])
        sq2b[e] = sqrt(2.0 * beta[e])
        watch[e] = model_w[e] > 0.0
        near[e] = watch[e] or drift_w[e] > 0.0
        rx[e] = (x[up[e]] - x[lo[e]]) / SQRT2
        ry[e] = (y[up[e]] - y[lo[e]]) / SQRT2
        r[e] = sqrt(rx[e] * rx[e] + ry[e] * ry[e])
        armed[e] = watch[e] and r[e] > delta_c

    if record:
        tape_t = _Tape(1)
        tape_z = _Tape(2 * n)
        tape_w = _Tape(2 * n)
        tape_b = _Tape(2 * n)
        row = tape_t.slot()
        row[0, 0] = 0.0
        row = tape_z.slot()
        for j in range(n):
            row[tape_z.size - 1, 2 * j] = x[j]
            row[tape_z.size - 1, 2 * j + 1] = y[j]

    while t < t_max:
        if step >= max_steps:
            status = STATUS_BUDGET
            break
        rmin2 = INFINITY
        rnear = INFINITY
        for e in range(m):
            rc = r[e] if r[e] > rho_f else rho_f
            if watch[e] and rc * rc < rmin2:
                rmin2 = rc * rc
            if near[e] and rc < rnear:
                rnear = rc
        if fixed:
            dt = dt_max
        else:
            dt = dt_max if rmin2 == INFINITY else dt_max * rmin2 / dt_scale
            if dt < dt_min:
                dt = dt_min
            if dt > dt_max:
                dt = dt_max
        if t + dt > t_max:
            dt = t_max - t

        # running integrals at the left endpoint
        shift = INFINITY
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
                kw = model_w[e] * k0e(xe) * exp(-(xe - shift))
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
                    other += model_w[e] / model_w[active_edge] * k0e(xe) * exp(-xe)
            inc_aring = other * kap * dt
            inc_occ = kap * dt

        # drift
        for j in range(n):
            bx[j] = 0.0
            by[j] = 0.0
        shift = INFINITY
        for e in range(m):
            if drift_w[e] > 0.0:
                rc = r[e] if r[e] > rho_f else rho_f
                xe = sq2b[e] * rc
                if xe < shift:
                    shift = xe
        if shift < INFINITY:
            ksum = 0.0
            for e in range(m):
                if drift_w[e] > 0.0:
                    rc = r[e] if r[e] > rho_f else rho_f
                    xe = sq2b[e] * rc
                    ksum += drift_w[e] * k0e(xe) * exp(-(xe - shift))
            for e in range(m):
                if drift_w[e] > 0.0 and r[e] > 0.0:
                    rc = r[e] if r[e] > rho_f else rho_f
                    xe = sq2b[e] * rc
                    coef = drift_w[e] * sqb[e] * k1e(xe) * exp(-(xe - shift)) / ksum
                    ux = rx[e] / r[e]
                    uy = ry[e] / r[e]
                    bx[up[e]] -= coef * ux
                    by[up[e]] -= coef * uy
                    bx[lo[e]] += coef * ux
                    by[lo[e]] += coef * uy
            if taming_cap > 0.0 and dt > 0.0:
                bmax = 0.0
                for j in range(n):
                    coef = sqrt(bx[j] * bx[j] + by[j] * by[j])
                    if coef > bmax:
                        bmax = coef
                cap = taming_cap * rnear / dt
                if bmax > cap:
                    scale = cap / bmax
                    for j in range(n):
                        bx[j] *= scale
                        by[j] *= scale

        # noise
        if fixed:
            for j in range(n):
                wx[j] = nz_re[step, j]
                wy[j] = nz_im[step, j]
        else:
            sd = sqrt(dt)
            for j in range(n):
                wx[j] = sd * random_standard_normal(rng)
                wy[j] = sd * random_standard_normal(rng)

        for j in range(n):
            xn[j] = x[j] + bx[j] * dt + wx[j]
            yn[j] = y[j] + by[j] * dt + wy[j]
            if not (isfinite(xn[j]) and isfinite(yn[j])):
                status = STATUS_BLOWUP
        if status == STATUS_BLOWUP:
            break

        # stopping radius, located by linear interpolation inside the step
        theta = 1.0
        hit = -1
        if eta > 0.0:
            for e in range(m):
                rx[e] = (xn[up[e]] - xn[lo[e]]) / SQRT2
                ry[e] = (yn[up[e]] - yn[lo[e]]) / SQRT2
                rn[e] = sqrt(rx[e] * rx[e] + ry[e] * ry[e])
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
            r[e] = sqrt(rx[e] * rx[e] + ry[e] * ry[e])

        if record:
            row = tape_t.slot()
            row[tape_t.size - 1, 0] = t
            row = tape_z.slot()
            for j in range(n):
                row[tape_z.size - 1, 2 * j] = x[j]
                row[tape_z.size - 1, 2 * j + 1] = y[j]
            row = tape_w.slot()
            for j in range(n):
                row[tape_w.size - 1, 2 * j] = wx[j]
                row[tape_w.size - 1, 2 * j + 1] = wy[j]
            row = tape_b.slot()
            for j in range(n):
                row[tape_b.size - 1, 2 * j] = bx[j]
                row[tape_b.size - 1, 2 * j + 1] = by[j]

        for e in range(m):
            if watch[e]:
                if armed[e] and r[e] <= delta_c:
                    contacts.append((t, e, r[e]))
                    n_contacts += 1
                    armed[e] = 0
                elif not armed[e] and r[e] > 2.0 * delta_c:
                    armed[e] = 1
        if hit >= 0:
            status = STATUS_STOPPED
            break
        if max_contacts > 0 and n_contacts >= max_contacts:
            status = STATUS_CONTACTS
            break

    out = {
        "t": t,
        "x": np.asarray(x).copy(),
        "y": np.asarray(y).copy(),
        "status": status,
        "steps": step,
        "contacts": contacts,
        "acc_weight": acc_weight,
        "acc_aring": acc_aring,
        "acc_occ": acc_occ,
    }
    if record:
        out["times"] = tape_t.trimmed()[:, 0]
        out["states"] = tape_z.trimmed()
        out["noise"] = tape_w.trimmed()
        out["drift"] = tape_b.trimmed()
    return out


def integrate_relative(
    double x0, double y0, double beta,
    double dt_max, double dt_min, double dt_scale,
    double rho_f, double taming_cap, double t_max,
    double eps, double q, long max_steps,
    object bit_generator, bint record,
):
    """Planar relative motion of a single interacting pair.

    Its modulus is the radial process with drift 1/(2r) - khat1/(r K0).
    Running integrals: kernel occupation and its exp(-q s) discounted form.
    """
    cdef bitgen_t* rng = _bitgen(bit_generator)
    cdef double sq2b = sqrt(2.0 * beta)
    cdef double x = x0, y = y0, r, rc, dt, sd, fac, mag, ux, uy, wx, wy, db, kap
    cdef double t = 0.0, acc_occ = 0.0, acc_lap = 0.0
    cdef long step = 0
    cdef int status = STATUS_HORIZON
    cdef double[:, ::1] row
    cdef _Tape tape = None
    if record:
        tape = _Tape(3)
        row = tape.slot()
        row[0, 0] = 0.0
        row[0, 1] = sqrt(x * x + y * y)
        row[0, 2] = 0.0
    while t < t_max:
        if step >= max_steps:
            status = STATUS_BUDGET
            break
        r = sqrt(x * x + y * y)
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
            acc_lap += exp(-q * t) * kap * dt
        mag = sq2b * k1e(sq2b * rc) / k0e(sq2b * rc)
        if taming_cap > 0.0 and mag * dt > taming_cap * rc:
            mag = taming_cap * rc / dt
        if r > 0.0:
            ux = x / r
            uy = y / r
        else:
            ux = 0.0
            uy = 0.0
        sd = sqrt(dt)
        wx = sd * random_standard_normal(rng)
        wy = sd * random_standard_normal(rng)
        x = x - mag * ux * dt + wx
        y = y - mag * uy * dt + wy
        if not (isfinite(x) and isfinite(y)):
            status = STATUS_BLOWUP
            break
        t += dt
        step += 1
        if record:
            db = ux * wx + uy * wy
            row = tape.slot()
            row[tape.size - 1, 0] = t
            row[tape.size - 1, 1] = sqrt(x * x + y * y)
            row[tape.size - 1, 2] = db
    out = {
        "t": t, "x": x, "y": y, "status": status, "steps": step,
        "acc_occ": acc_occ, "acc_lap": acc_lap,
    }
    if record:
        data = tape.trimmed()
        out["times"] = data[:, 0]
        out["radius"] = data[:, 1]
        out["radial_noise"] = data[1:, 2]
    return out


def integrate_bessel(double dim, double r0, const double[::1] dts, const double[::1] dbs, double rho_f):
    """Euler scheme for dr = (dim - 1)/(2 r) dt + dB driven by supplied increments."""
    cdef Py_ssize_t k, n = dts.shape[0]
    cdef double[::1] out = np.empty(n + 1)
    cdef double r = r0, rc
    cdef long clamps = 0
    out[0] = r
    for k in range(n):
        rc = r if r > rho_f else rho_f
        r = r + (dim - 1.0) / (2.0 * rc) * dts[k] + dbs[k]
        if r < rho_f:
            r = rho_f
            clamps += 1
        out[k + 1] = r
    return np.asarray(out), clamps
