"""Pure-Python loop kernel, the fallback when the compiled one is absent.

The compiled kernel (_loop_cy) repeats this file operation for operation:
same summation order, same scratch layout, same RNG evaluation.  Keeping
the two bit-identical is a hard requirement (tested), so resist any
"obvious" vectorization here; every sum must stay a scalar left-to-right
accumulation.
"""

import math

from ._rng import counter_centered, counter_gauss

BACKEND_NAME = "python"

# |q| beyond 2^53 cannot be held exactly in a double; treat as divergence.
_Q_LIMIT = 9007199254740992.0


def matvec(M, v, out):
    """out = M v with fixed scalar summation order (k ascending)."""
    rows = len(out)
    cols = len(v)
    for i in range(rows):
        s = 0.0
        for k in range(cols):
            s += M[i][k] * v[k]
        out[i] = s
    return out


def run_kernel(A, B, K, C, J, L, R_cl, Lw, Qc, Phic, delta,
               key_w, key_d, X, U, E, D, V, Q, stage):
    """Run the closed loop for T steps, filling the per-step arrays.

    X has T+1 rows with X[0] already holding x_0; all other arrays have T
    rows.  Returns (max_audit_residual, v_violations, diverged_at) where
    diverged_at is -1 or the step at which the state left the
    representable range.
    """
    T = len(stage)
    m = len(C)
    udim = len(K)

    A = [list(row) for row in A]
    B = [list(row) for row in B]
    K = [list(row) for row in K]
    C = [list(row) for row in C]
    J = [list(row) for row in J]
    L = [list(row) for row in L]
    R_cl = [list(row) for row in R_cl]
    Lw = [list(row) for row in Lw]
    Qc = [list(row) for row in Qc]
    Phic = [list(row) for row in Phic]

    x = [float(X[0][i]) for i in range(m)]
    xp = [0.0] * m
    e = [0.0] * m
    qt = [0.0] * m
    vv = [0.0] * m
    xq = [0.0] * m
    uv = [0.0] * udim
    z = [0.0] * m
    w = [0.0] * m
    xn = [0.0] * m
    xpn = [0.0] * m

    half = 0.5 * delta
    vtol = delta * 1e-12
    max_resid = 0.0
    v_bad = 0
    floor_ = math.floor
    isfinite = math.isfinite

    for t in range(T):
        for i in range(m):
            e[i] = x[i] - xp[i]
            E[t][i] = e[i]
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += C[i][k] * e[k]
            d = counter_centered(key_d, t, i, delta)
            y = s + d
            qf = floor_(y / delta + 0.5)
            if not (-_Q_LIMIT < qf < _Q_LIMIT):
                return max_resid, v_bad, t
            q = int(qf)
            rec = q * delta - d
            val = rec - s
            if not (-half - vtol < val <= half + vtol):
                v_bad += 1
            D[t][i] = d
            Q[t][i] = q
            V[t][i] = val
            qt[i] = rec
            vv[i] = val
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += J[i][k] * qt[k]
            xq[i] = xp[i] + s
        for j in range(udim):
            s = 0.0
            for k in range(m):
                s += K[j][k] * xq[k]
            uv[j] = s
            U[t][j] = s
        for i in range(m):
            z[i] = counter_gauss(key_w, t, i)
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += Lw[i][k] * z[k]
            w[i] = s
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += A[i][k] * x[k]
            s2 = 0.0
            for k in range(udim):
                s2 += B[i][k] * uv[k]
            xn[i] = s + s2 + w[i]
            if not isfinite(xn[i]):
                return max_resid, v_bad, t
            X[t + 1][i] = xn[i]
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += A[i][k] * xq[k]
            s2 = 0.0
            for k in range(udim):
                s2 += B[i][k] * uv[k]
            xpn[i] = s + s2
        c1 = 0.0
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += Qc[i][k] * xn[k]
            c1 += xn[i] * s
        c2 = 0.0
        for j in range(udim):
            s = 0.0
            for k in range(udim):
                s += Phic[j][k] * uv[k]
            c2 += uv[j] * s
        stage[t] = c1 + c2
        for i in range(m):
            s = 0.0
            for k in range(m):
                s += R_cl[i][k] * e[k]
            s2 = 0.0
            for k in range(m):
                s2 += L[i][k] * vv[k]
            resid = abs((xn[i] - xpn[i]) - (s - s2 + w[i]))
            if resid > max_resid:
                max_resid = resid
        x, xn = xn, x
        xp, xpn = xpn, xp

    return max_resid, v_bad, -1
