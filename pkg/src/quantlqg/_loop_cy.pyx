# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loop kernel.

Operation-for-operation mirror of _kernel_py.run_kernel; the two must
stay bit-identical (same summation order, libm floor/log/sqrt, 64-bit
counter RNG, no FMA contraction).  Any change here must be made in the
pure kernel too, and vice versa.
"""

import numpy as np

from libc.math cimport floor, isfinite, log, sqrt

cdef unsigned long long GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef double Q_LIMIT = 9007199254740992.0

BACKEND_NAME = "cython"


cdef inline unsigned long long mix64(unsigned long long z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double counter_u01(unsigned long long key, unsigned long long t,
                               unsigned long long i) nogil:
    cdef unsigned long long z = mix64(key + GOLDEN * (t + 1))
    z = mix64(z + GOLDEN * (i + 1))
    return ((z >> 11) + 0.5) * INV_2_53


cdef inline double counter_centered(unsigned long long key, unsigned long long t,
                                    unsigned long long i, double width) nogil:
    return (counter_u01(key, t, i) - 0.5) * width


cdef double norm_ppf(double p) nogil:
    # Wichura's PPND16; expression nesting matches _rng.norm_ppf exactly.
    cdef double q = p - 0.5
    cdef double r, num, den, x
    if -0.425 <= q <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r
                    + 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r
                  + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r
                + 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0)
        den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r
                    + 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r
                  + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r
                + 4.2313330701600911252e+1) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r
                  + 3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r
                + 4.63033784615654529590e+0) * r + 1.42343711074968357734e+0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r
                + 2.05319162663775882187e+0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r
                + 5.46378491116411436990e+0) * r + 6.65790464350110377720e+0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    x = num / den
    return -x if q < 0.0 else x


cdef inline double counter_gauss(unsigned long long key, unsigned long long t,
                                 unsigned long long i) nogil:
    return norm_ppf(counter_u01(key, t, i))


def run_kernel(double[:, ::1] A, double[:, ::1] B, double[:, ::1] K,
               double[:, ::1] C, double[:, ::1] J, double[:, ::1] L,
               double[:, ::1] R_cl, double[:, ::1] Lw, double[:, ::1] Qc,
               double[:, ::1] Phic, double delta,
               unsigned long long key_w, unsigned long long key_d,
               double[:, ::1] X, double[:, ::1] U, double[:, ::1] E,
               double[:, ::1] D, double[:, ::1] V, long long[:, ::1] Q,
               double[::1] stage):
    cdef Py_ssize_t T = stage.shape[0]
    cdef Py_ssize_t m = C.shape[0]
    cdef Py_ssize_t udim = K.shape[0]

    scratch = np.zeros((10, max(m, udim)), dtype=np.float64)
    cdef double[:, ::1] sc = scratch
    cdef double[::1] x = sc[0]
    cdef double[::1] xp = sc[1]
    cdef double[::1] e = sc[2]
    cdef double[::1] qt = sc[3]
    cdef double[::1] vv = sc[4]
    cdef double[::1] xq = sc[5]
    cdef double[::1] uv = sc[6]
    cdef double[::1] z = sc[7]
    cdef double[::1] w = sc[8]
    cdef double[::1] xn = sc[9]
    xpn_arr = np.zeros(max(m, udim), dtype=np.float64)
    cdef double[::1] xpn = xpn_arr

    cdef double half = 0.5 * delta
    cdef double vtol = delta * 1e-12
    cdef double max_resid = 0.0
    cdef long long v_bad = 0
    cdef Py_ssize_t t, i, k, j
    cdef double s, s2, d, y, qf, rec, val, c1, c2, resid
    cdef long long q
    cdef double tmp

    for i in range(m):
        x[i] = X[0, i]
        xp[i] = 0.0

    for t in range(T):
        for i in range(m):
            e[i] = x[i] - xp[i]
            E[t, i] = e[i]
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += C[i, k] * e[k]
            d = counter_centered(key_d, <unsigned long long> t, <unsigned long long> i, delta)
            y = s + d
            qf = floor(y / delta + 0.5)
            if not (-Q_LIMIT < qf < Q_LIMIT):
                return max_resid, v_bad, t
            q = <long long> qf
            rec = q * delta - d
            val = rec - s
            if not (-half - vtol < val <= half + vtol):
                v_bad += 1
            D[t, i] = d
            Q[t, i] = q
            V[t, i] = val
            qt[i] = rec
            vv[i] = val
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += J[i, k] * qt[k]
            xq[i] = xp[i] + s
        for j in range(udim):
            s = 0.0
            for k in range(m):
                s += K[j, k] * xq[k]
            uv[j] = s
            U[t, j] = s
        for i in range(m):
            z[i] = counter_gauss(key_w, <unsigned long long> t, <unsigned long long> i)
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += Lw[i, k] * z[k]
            w[i] = s
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += A[i, k] * x[k]
            s2 = 0.0
            for k in range(udim):
                s2 += B[i, k] * uv[k]
            xn[i] = s + s2 + w[i]
            if not isfinite(xn[i]):
                return max_resid, v_bad, t
            X[t + 1, i] = xn[i]
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += A[i, k] * xq[k]
            s2 = 0.0
            for k in range(udim):
                s2 += B[i, k] * uv[k]
            xpn[i] = s + s2
        c1 = 0.0
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += Qc[i, k] * xn[k]
            c1 += xn[i] * s
        c2 = 0.0
        for j in range(udim):
            s = 0.0
            for k in range(udim):
                s += Phic[j, k] * uv[k]
            c2 += uv[j] * s
        stage[t] = c1 + c2
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += R_cl[i, k] * e[k]
            s2 = 0.0
            for k in range(m):
                s2 += L[i, k] * vv[k]
            resid = ((xn[i] - xpn[i]) - (s - s2 + w[i]))
            if resid < 0.0:
                resid = -resid
            if resid > max_resid:
                max_resid = resid
        for i in range(m):
            tmp = x[i]
            x[i] = xn[i]
            xn[i] = tmp
            tmp = xp[i]
            xp[i] = xpn[i]
            xpn[i] = tmp

    return max_resid, v_bad, -1
