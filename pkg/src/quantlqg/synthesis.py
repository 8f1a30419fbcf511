"""Controller and coder synthesis for linear-quadratic plants.

Everything here is deterministic dense linear algebra at small state
dimension: solve the control Riccati equation, factor the information
deficit of the estimator into a sensitivity matrix, and assemble the
time-invariant filter that both ends of the channel will run.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadParameter,
    DegenerateCoder,
    DimensionMismatch,
    NoConvergence,
    NonFinite,
    NotOrdered,
    NotStabilizable,
    Singular,
    UnstableFilter,
)

_SYM_TOL = 1e-9


def _as_matrix(x, rows, cols, name):
    a = np.asarray(x, dtype=float)
    if a.shape != (rows, cols):
        raise DimensionMismatch(f"{name} must be {rows}x{cols}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{name} contains non-finite entries")
    return a


def _sym(a):
    return (a + a.T) / 2.0


def _check_symmetric(a, name):
    if a.size and np.max(np.abs(a - a.T)) > _SYM_TOL * (1.0 + np.max(np.abs(a))):
        raise BadParameter(f"{name} is not symmetric")
    return _sym(a)


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time plant x_{t+1} = A x_t + B u_t + w_t, w_t ~ N(0, W).

    Q and Phi weight the running cost E[|x|^2_Q + |u|^2_Phi]; X0 is the
    covariance of the Gaussian initial state.  Symmetric blocks are
    symmetrized on entry, definiteness is checked, stabilizability of
    (A, B) is the solver's gate (see solve_dare).
    """

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    Phi: np.ndarray
    X0: np.ndarray
    m: int = field(init=False)
    u: int = field(init=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        m = A.shape[0]
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2 or B.shape[0] != m:
            raise DimensionMismatch(f"B must have {m} rows, got {B.shape}")
        u = B.shape[1]
        object.__setattr__(self, "A", _as_matrix(A, m, m, "A"))
        object.__setattr__(self, "B", _as_matrix(B, m, u, "B"))
        object.__setattr__(self, "W", _check_symmetric(_as_matrix(self.W, m, m, "W"), "W"))
        object.__setattr__(self, "Q", _check_symmetric(_as_matrix(self.Q, m, m, "Q"), "Q"))
        object.__setattr__(self, "Phi", _check_symmetric(_as_matrix(self.Phi, u, u, "Phi"), "Phi"))
        object.__setattr__(self, "X0", _check_symmetric(_as_matrix(self.X0, m, m, "X0"), "X0"))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "u", u)
        scale = 1.0 + float(np.max(np.abs(self.W)))
        if np.linalg.eigvalsh(self.W).min() <= 1e-12 * scale:
            raise NotOrdered("W must be positive definite")
        if np.linalg.eigvalsh(self.Phi).min() <= 0.0:
            raise NotOrdered("Phi must be positive definite")
        for name, mat in (("Q", self.Q), ("X0", self.X0)):
            if np.linalg.eigvalsh(mat).min() < -1e-10 * (1.0 + np.max(np.abs(mat))):
                raise NotOrdered(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class ControllerGains:
    """Stabilizing Riccati solution S, feedback K, and estimation weight
    Theta = K^T (B^T S B + Phi) K."""

    S: np.ndarray
    K: np.ndarray
    Theta: np.ndarray


@dataclass(frozen=True)
class CoderSynthesis:
    """Everything both channel ends need to run in lockstep.

    P_hat / P_plus are the posterior / prior error covariances, C the
    sensitivity matrix applied to the innovation before quantization with
    step Delta, J the filter gain, L = A J, R_cl = A - L C the innovation
    recursion matrix, and rate_bound the SDP rate floor in bits.
    """

    P_hat: np.ndarray
    P_plus: np.ndarray
    C: np.ndarray
    Delta: float
    J: np.ndarray
    L: np.ndarray
    R_cl: np.ndarray
    rate_bound: float


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"spectral_radius needs a square matrix, got {M.shape}")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def gelfand_sequence(M, ns):
    """(|M^n|_2)^(1/n) for each n in ns; converges to the spectral radius.

    Powers are accumulated incrementally, so ns must be ascending.
    """
    M = np.asarray(M, dtype=float)
    ns = list(ns)
    if any(n <= 0 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
        raise BadParameter("ns must be strictly ascending positive integers")
    out = []
    power = np.eye(M.shape[0])
    k = 0
    for n in ns:
        while k < n:
            power = power @ M
            k += 1
        out.append(float(np.linalg.norm(power, 2)) ** (1.0 / n))
    return out


def stabilizable_check(A, B) -> bool:
    """PBH test: every eigenvalue of A on or outside the unit circle must
    be controllable through B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    m = A.shape[0]
    scale = max(1.0, float(np.linalg.norm(A, 2)) + float(np.linalg.norm(B, 2)) if A.size else 1.0)
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - 1e-9:
            continue
        pencil = np.hstack([A - lam * np.eye(m), B.astype(complex)])
        smin = np.linalg.svd(pencil, compute_uv=False)[-1]
        if smin <= 1e-9 * scale:
            return False
    return True


def solve_dare(plant: PlantModel) -> ControllerGains:
    """Stabilizing solution of the control Riccati equation.

    Uses the structured doubling iteration (quadratically convergent),
    falling back to the plain fixed-point sweep if doubling stalls.  The
    result is validated on two counts: relative residual below 1e-9 and
    closed-loop spectral radius strictly inside the unit circle.
    """
    if not stabilizable_check(plant.A, plant.B):
        raise NotStabilizable("(A, B) has an uncontrollable unstable mode")
    A, B, Q, Phi = plant.A, plant.B, plant.Q, plant.Phi
    m = plant.m
    eye = np.eye(m)

    G = B @ np.linalg.solve(Phi, B.T)
    Ak, Gk, Hk = A.copy(), _sym(G), Q.copy()
    S = None
    try:
        for _ in range(100):
            T = np.linalg.solve(eye + Gk @ Hk, np.hstack([Ak, Gk]))
            TA, TG = T[:, :m], T[:, m:]
            Hn = _sym(Hk + Ak.T @ Hk @ TA)
            Gk = _sym(Gk + Ak @ TG @ Ak.T)
            Ak = Ak @ TA
            delta = np.max(np.abs(Hn - Hk))
            Hk = Hn
            if delta <= 1e-14 * (1.0 + np.max(np.abs(Hk))):
                S = Hk
                break
    except np.linalg.LinAlgError:
        S = None

    if S is None:
        # Fixed-point sweep: linear convergence, generous cap.
        S = Q.copy()
        for _ in range(10_000):
            BtSB = B.T @ S @ B + Phi
            BtSA = B.T @ S @ A
            Sn = _sym(A.T @ S @ A - BtSA.T @ np.linalg.solve(BtSB, BtSA) + Q)
            delta = np.max(np.abs(Sn - S))
            S = Sn
            if delta <= 1e-14 * (1.0 + np.max(np.abs(S))):
                break
        else:
            raise NoConvergence("Riccati iteration hit its cap without converging")

    BtSB = B.T @ S @ B + Phi
    BtSA = B.T @ S @ A
    K = -np.linalg.solve(BtSB, BtSA)
    residual = A.T @ S @ A - S - BtSA.T @ np.linalg.solve(BtSB, BtSA) + Q
    rel = np.max(np.abs(residual)) / (1.0 + np.max(np.abs(S)))
    if not np.isfinite(rel) or rel > 1e-9:
        raise NoConvergence(f"Riccati residual {rel:.3e} above tolerance")
    if spectral_radius(A + B @ K) >= 1.0:
        raise NoConvergence("Riccati solution is not stabilizing")
    Theta = _sym(K.T @ BtSB @ K)
    return ControllerGains(S=S, K=K, Theta=Theta)


def sensitivity_factorization(p_hat, p_plus, delta: float) -> np.ndarray:
    """Sensitivity matrix C with C^T C * 12/Delta^2 = inv(P_hat) - inv(P_plus).

    Taken as the symmetric PSD square root (eigendecomposition), so modes
    carrying no information come out as exact zeros rather than noise.
    Requires P_hat <= P_plus; an eigenvalue of the information deficit
    below -1e-8 means the pair is not ordered.
    """
    if not (delta > 0.0) or not np.isfinite(delta):
        raise BadParameter(f"delta must be positive and finite, got {delta}")
    p_hat = _sym(np.asarray(p_hat, dtype=float))
    p_plus = _sym(np.asarray(p_plus, dtype=float))
    if p_hat.shape != p_plus.shape:
        raise DimensionMismatch("P_hat and P_plus must have identical shapes")
    for name, mat in (("P_hat", p_hat), ("P_plus", p_plus)):
        ev_min = np.linalg.eigvalsh(mat).min()
        if ev_min <= 1e-14 * (1.0 + np.max(np.abs(mat))):
            raise Singular(f"{name} is numerically singular (min eig {ev_min:.3e})")
    D = _sym(np.linalg.inv(p_hat) - np.linalg.inv(p_plus))
    lam, V = np.linalg.eigh(D)
    if lam.min() < -1e-8:
        raise NotOrdered(f"information deficit has eigenvalue {lam.min():.3e} < -1e-8")
    # Negative noise is clamped to zero; so are positive values at the
    # float noise floor, which keeps truly uninformative modes exact.
    floor = 64.0 * np.finfo(float).eps * max(1.0, float(lam.max(initial=0.0)))
    lam = np.where(lam < floor, 0.0, lam)
    root = _sym(V @ np.diag(np.sqrt(lam)) @ V.T)
    return (delta / np.sqrt(12.0)) * root


def kalman_synthesis(A, p_plus, C, delta: float, open_loop: bool = False):
    """Filter gain J, predictor gain L = A J, and recursion matrix
    R_cl = A - L C for the dithered-quantizer measurement channel.

    The effective measurement noise is white with covariance
    (Delta^2/12) I; the recursion must be strictly stable.  An all-zero C
    means the coder carries no information, which is rejected unless the
    caller explicitly opts into open-loop operation.
    """
    if not (delta > 0.0) or not np.isfinite(delta):
        raise BadParameter(f"delta must be positive and finite, got {delta}")
    A = np.asarray(A, dtype=float)
    p_plus = _sym(np.asarray(p_plus, dtype=float))
    C = np.asarray(C, dtype=float)
    if not open_loop and (C.size == 0 or np.max(np.abs(C)) == 0.0):
        raise DegenerateCoder(
            "sensitivity matrix is identically zero (rate-0 coder); "
            "pass open_loop=True to run without a channel"
        )
    m = A.shape[0]
    noise = (delta * delta / 12.0) * np.eye(m)
    gram = _sym(C @ p_plus @ C.T + noise)
    try:
        J = np.linalg.solve(gram, C @ p_plus).T
    except np.linalg.LinAlgError as exc:  # pragma: no cover - gram is PD by construction
        raise Singular("innovation gram matrix is singular") from exc
    L = A @ J
    R_cl = A - L @ C
    rho = spectral_radius(R_cl)
    if rho >= 1.0 - 1e-9:
        raise UnstableFilter(f"filter recursion has spectral radius {rho:.6f}")
    return J, L, R_cl
