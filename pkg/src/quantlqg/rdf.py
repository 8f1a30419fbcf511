"""Bitrate floor R(gamma) for the coded LQG loop.

The floor is the optimum of a small determinant-maximization program over
the asymptotic estimator covariance P and distortion covariance Pi:

    minimize    (log2 det W - log2 det Pi) / 2
    subject to  trace(Theta P) + trace(W S) <= gamma
                P <= A P A' + W
                [[P - Pi, P A'], [A P, A P A' + W]] >= 0

solved here with a plain logarithmic-barrier interior-point method.  At
desk scale (m <= 6) the Newton systems are tiny, so nothing clever is
needed beyond exact gradients/Hessians of the log-det barriers.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadParameter,
    DegeneratePi,
    DimensionMismatch,
    Infeasible,
    NoConvergence,
    NonFinite,
)
from .synthesis import ControllerGains, PlantModel, spectral_radius

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class RdfProblem:
    plant: PlantModel
    gains: ControllerGains
    gamma: float

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0.0:
            raise BadParameter(f"gamma must be positive and finite, got {self.gamma}")


@dataclass(frozen=True)
class RdfSolution:
    P: np.ndarray
    Pi: np.ndarray
    rate_bits: float
    dual_gap: float
    constraint_residuals: list


@dataclass(frozen=True)
class RateCurvePoint:
    gamma: float
    rate_bits: float | None
    error: str | None


def _sym(a):
    return (a + a.T) / 2.0


def _basis(m):
    mats = []
    for i in range(m):
        for j in range(i, m):
            E = np.zeros((m, m))
            E[i, j] = 1.0
            E[j, i] = 1.0
            mats.append(E)
    return mats


def _vec(M, m):
    return np.array([M[i, j] for i in range(m) for j in range(i, m)])


def _mat(x, m):
    M = np.zeros((m, m))
    k = 0
    for i in range(m):
        for j in range(i, m):
            M[i, j] = x[k]
            M[j, i] = x[k]
            k += 1
    return M


def _chol_logdet(X):
    """log det of a symmetric matrix, None if it is not PD."""
    try:
        c = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return None
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def _log2det_psd(X):
    ev = np.linalg.eigvalsh(_sym(X))
    if ev.min() <= 0.0:
        return None
    return float(np.sum(np.log2(ev)))


class _BarrierCore:
    """Barrier value/gradient/Hessian over the stacked coordinates
    (svec(P), svec(Pi)); basis directions are unit symmetric matrices, so
    each coordinate is literally a matrix entry."""

    def __init__(self, A, W, Theta, gamma_slack):
        m = A.shape[0]
        self.m = m
        self.A = A
        self.W = W
        self.gamma_slack = gamma_slack
        self.basis = _basis(m)
        self.n = len(self.basis)
        self.M1 = [_sym(A @ E @ A.T - E) for E in self.basis]
        self.M2p = []
        for E in self.basis:
            blk = np.zeros((2 * m, 2 * m))
            blk[:m, :m] = E
            blk[:m, m:] = E @ A.T
            blk[m:, :m] = A @ E
            blk[m:, m:] = A @ E @ A.T
            self.M2p.append(_sym(blk))
        self.M2q = []
        for E in self.basis:
            blk = np.zeros((2 * m, 2 * m))
            blk[:m, :m] = -E
            self.M2q.append(blk)
        self.ctheta = np.array([float(np.sum(Theta * E)) for E in self.basis])

    def split(self, x):
        return _mat(x[: self.n], self.m), _mat(x[self.n:], self.m)

    def constraint_state(self, x):
        """Returns (s, X1, X2, P, Pi) without any definiteness checks."""
        P, Pi = self.split(x)
        A, W, m = self.A, self.W, self.m
        s = self.gamma_slack - float(self.ctheta @ x[: self.n])
        X1 = _sym(A @ P @ A.T + W - P)
        X2 = np.zeros((2 * m, 2 * m))
        X2[:m, :m] = P - Pi
        X2[:m, m:] = P @ A.T
        X2[m:, :m] = A @ P
        X2[m:, m:] = A @ P @ A.T + W
        return s, X1, _sym(X2), P, Pi

    def value(self, x, t):
        s, X1, X2, P, Pi = self.constraint_state(x)
        if s <= 0.0:
            return None
        l1 = _chol_logdet(X1)
        l2 = _chol_logdet(X2)
        lq = _chol_logdet(Pi)
        if l1 is None or l2 is None or lq is None:
            return None
        return t * (-lq) - math.log(s) - l1 - l2

    def grad_hess(self, x, t):
        s, X1, X2, P, Pi = self.constraint_state(x)
        n = self.n
        g = np.zeros(2 * n)
        H = np.zeros((2 * n, 2 * n))

        # scalar budget constraint: -ln(s)
        g[:n] += self.ctheta / s
        H[:n, :n] += np.outer(self.ctheta, self.ctheta) / (s * s)

        # -ln det X1 (P only)
        X1i = np.linalg.inv(X1)
        Y1 = [X1i @ M for M in self.M1]
        for d in range(n):
            g[d] += -float(np.trace(Y1[d]))
        for d in range(n):
            for e in range(d, n):
                v = float(np.sum(Y1[d] * Y1[e].T))
                H[d, e] += v
                if e != d:
                    H[e, d] += v

        # -ln det X2 (P and Pi)
        X2i = np.linalg.inv(X2)
        Y2 = [X2i @ M for M in self.M2p] + [X2i @ M for M in self.M2q]
        for d in range(2 * n):
            g[d] += -float(np.trace(Y2[d]))
        for d in range(2 * n):
            for e in range(d, 2 * n):
                v = float(np.sum(Y2[d] * Y2[e].T))
                H[d, e] += v
                if e != d:
                    H[e, d] += v

        # objective term t * (-ln det Pi)
        Qi = np.linalg.inv(Pi)
        Yq = [Qi @ E for E in self.basis]
        for d in range(n):
            g[n + d] += -t * float(np.trace(Yq[d]))
        for d in range(n):
            for e in range(d, n):
                v = t * float(np.sum(Yq[d] * Yq[e].T))
                H[n + d, n + e] += v
                if e != d:
                    H[n + e, n + d] += v
        return g, H


def _initial_point(A, W, Theta, gamma_slack, core):
    """A strictly feasible (P, Pi).

    Preferred start is half the stationary state covariance with
    Pi = 0.5 min-eig(W) I, but that covariance only exists for stable A,
    so unstable plants fall back to a shrinking multiple of the identity
    (always strictly feasible for small enough tau).
    """
    m = A.shape[0]

    def pack(P, Pi):
        return np.concatenate([_vec(P, m), _vec(Pi, m)])

    candidates = []
    if spectral_radius(A) < 1.0 - 1e-9:
        vec_x = np.linalg.solve(np.eye(m * m) - np.kron(A, A), W.reshape(-1))
        X_stat = _sym(vec_x.reshape(m, m))
        P0 = 0.5 * X_stat
        pi0 = 0.5 * float(np.linalg.eigvalsh(W).min())
        for _ in range(60):
            candidates.append((P0, pi0 * np.eye(m)))
            pi0 *= 0.5

    tau = 0.5 * float(np.linalg.eigvalsh(W).min()) / (1.0 + np.linalg.norm(A, 2) ** 2)
    tr_theta = float(np.trace(Theta))
    if tr_theta > 0.0:
        tau = min(tau, 0.5 * gamma_slack / tr_theta)
    for _ in range(80):
        N = _sym(tau * (A @ A.T) + W)
        schur = _sym(tau * np.eye(m) - tau * tau * (A.T @ np.linalg.solve(N, A)))
        lam = float(np.linalg.eigvalsh(schur).min())
        if lam > 0.0:
            candidates.append((tau * np.eye(m), 0.5 * lam * np.eye(m)))
        tau *= 0.5

    for P0, Pi0 in candidates:
        x0 = pack(P0, Pi0)
        if core.value(x0, 1.0) is not None:
            return x0
    raise NoConvergence("could not construct a strictly feasible starting point")


def solve_rdf(problem: RdfProblem) -> RdfSolution:
    """Barrier solve of the rate program; see the module docstring.

    The reported dual_gap is the barrier suboptimality certificate
    nu / t at the final barrier parameter, converted to bits.
    """
    plant, gains = problem.plant, problem.gains
    A, W = plant.A, plant.W
    Theta, S = gains.Theta, gains.S
    m = plant.m
    gamma_slack = problem.gamma - float(np.trace(W @ S))
    if gamma_slack <= 1e-12:
        raise Infeasible(
            f"gamma={problem.gamma:.6g} is at or below the hard floor trace(WS)={float(np.trace(W @ S)):.6g}"
        )

    core = _BarrierCore(A, W, Theta, gamma_slack)
    x = _initial_point(A, W, Theta, gamma_slack, core)

    nu = 3 * m + 1  # total barrier degree: scalar + m-block + 2m-block
    gap_target_bits = 1e-6
    t = 1.0
    t_final = nu / (2.0 * _LN2 * gap_target_bits)
    while True:
        # center at this t
        for _ in range(200):
            g, H = core.grad_hess(x, t)
            try:
                step = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                H = H + (1e-12 * max(1.0, float(np.trace(H)) / len(g))) * np.eye(len(g))
                step = np.linalg.solve(H, -g)
            if not np.all(np.isfinite(step)):
                raise NonFinite("Newton step is not finite")
            decrement = float(-g @ step)
            if decrement <= 1e-9:
                break
            base = core.value(x, t)
            alpha = 1.0
            for _ in range(80):
                cand = core.value(x + alpha * step, t)
                if cand is not None and cand <= base - 0.01 * alpha * decrement:
                    break
                alpha *= 0.5
            else:
                break  # no further progress at this centering
            if cand >= base:
                # Armijo accepted on a sub-ulp margin: the objective is flat
                # to float64 here, so the stage cannot descend any further.
                break
            x = x + alpha * step
        else:
            # Cap reached while still crawling.  A tiny Newton decrement
            # certifies the iterate is within `decrement` of the stage
            # center (self-concordant bound), so only a large one is a
            # genuine centering failure.
            if decrement > 1e-6:
                raise NoConvergence("barrier centering exceeded its iteration cap")
        if t >= t_final:
            break
        t = min(10.0 * t, t_final * 1.0000001)

    P, Pi = core.split(x)
    P, Pi = _sym(P), _sym(Pi)
    l2w = _log2det_psd(W)
    l2pi = _log2det_psd(Pi)
    if l2pi is None:
        raise DegeneratePi("optimizer returned a singular distortion covariance")
    raw = 0.5 * (l2w - l2pi)
    rate = max(0.0, raw)
    dual_gap = nu / (2.0 * _LN2 * t)
    sol = RdfSolution(P=P, Pi=Pi, rate_bits=rate, dual_gap=dual_gap, constraint_residuals=[])
    residuals = check_solution(problem, sol)
    return RdfSolution(P=P, Pi=Pi, rate_bits=rate, dual_gap=dual_gap, constraint_residuals=residuals)


def check_solution(problem: RdfProblem, candidate: RdfSolution) -> list:
    """Signed feasibility margins and a from-scratch objective recompute.

    Margins are smallest eigenvalues / slacks, so negative means violated.
    Pure verification: nothing is mutated, nothing raised; a singular Pi
    is reported through the degenerate_pi flag instead of a log-det blowup.
    """
    plant, gains = problem.plant, problem.gains
    A, W = plant.A, plant.W
    m = plant.m
    P = _sym(np.asarray(candidate.P, dtype=float))
    Pi = _sym(np.asarray(candidate.Pi, dtype=float))
    if P.shape != (m, m) or Pi.shape != (m, m):
        raise DimensionMismatch("candidate dimensions disagree with the plant")

    cost_slack = problem.gamma - float(np.trace(gains.Theta @ P)) - float(np.trace(W @ gains.S))
    pred_margin = float(np.linalg.eigvalsh(_sym(A @ P @ A.T + W - P)).min())
    X2 = np.zeros((2 * m, 2 * m))
    X2[:m, :m] = P - Pi
    X2[:m, m:] = P @ A.T
    X2[m:, :m] = A @ P
    X2[m:, m:] = A @ P @ A.T + W
    schur_margin = float(np.linalg.eigvalsh(_sym(X2)).min())
    p_margin = float(np.linalg.eigvalsh(P).min())
    pi_margin = float(np.linalg.eigvalsh(Pi).min())

    l2pi = _log2det_psd(Pi)
    degenerate = l2pi is None
    if degenerate:
        raw = math.inf
        objective_gap = math.inf
    else:
        raw = 0.5 * (_log2det_psd(W) - l2pi)
        objective_gap = abs(candidate.rate_bits - max(0.0, raw))
    return [
        ("cost_slack", cost_slack),
        ("prediction_margin", pred_margin),
        ("schur_margin", schur_margin),
        ("p_margin", p_margin),
        ("pi_margin", pi_margin),
        ("raw_rate_bits", raw),
        ("rate_clamped", 1.0 if (not degenerate and raw < 0.0) else 0.0),
        ("objective_gap", objective_gap),
        ("degenerate_pi", 1.0 if degenerate else 0.0),
    ]


def rate_curve(plant: PlantModel, gains: ControllerGains, gammas) -> list:
    """R(gamma) over an ascending budget grid.

    Per-point failures (e.g. an infeasible gamma) are captured in the
    returned rows rather than aborting the sweep; the computed rates must
    be nonincreasing in gamma to within 1e-6 bits.
    """
    gammas = [float(g) for g in gammas]
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise BadParameter("gammas must be strictly increasing")
    rows = []
    for g in gammas:
        try:
            sol = solve_rdf(RdfProblem(plant=plant, gains=gains, gamma=g))
            rows.append(RateCurvePoint(gamma=g, rate_bits=sol.rate_bits, error=None))
        except (Infeasible, NoConvergence, DegeneratePi, BadParameter) as exc:
            rows.append(RateCurvePoint(gamma=g, rate_bits=None, error=f"{type(exc).__name__}: {exc}"))
    ok = [r for r in rows if r.rate_bits is not None]
    for a, b in zip(ok, ok[1:]):
        if b.rate_bits > a.rate_bits + 1e-6:
            raise NoConvergence(
                f"rate curve not monotone: R({a.gamma})={a.rate_bits:.8f} < R({b.gamma})={b.rate_bits:.8f}"
            )
    return rows
