"""Closed-loop simulation: quantized innovation coding with identical
time-invariant Kalman filters at both channel ends.

Per step t: the encoder forms the innovation e_t = x_t - x_pred, quantizes
C e_t + d_t with shared dither d_t, and sends the prefix codeword for the
lattice symbol.  The decoder recovers the symbol exactly, both ends apply
the same measurement update and certainty-equivalent input, and therefore
hold bit-identical filter states forever.  run_loop executes this with a
fused kernel (compiled if available); run_lockstep executes it through the
step-level API with two genuinely separate filter states and audits their
synchrony, serving as the reference implementation.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernel_py
from ._rng import STREAM_DITHER, STREAM_INIT, STREAM_NOISE, counter_centered, counter_gauss, derive_key
from .codec import Codeword, decode, encode
from .errors import (
    BadParameter,
    DegenerateCoder,
    DesyncDetected,
    DimensionMismatch,
    MalformedCodeword,
    NonFinite,
    UnstableFilter,
    ValueOutOfRange,
)
from .quantizer import LatticePoint
from .synthesis import CoderSynthesis, ControllerGains, PlantModel, spectral_radius

try:
    from . import _loop_cy as _default_kernel
except ImportError:  # pragma: no cover - depends on the build environment
    _default_kernel = _kernel_py

KERNEL_BACKEND = _default_kernel.BACKEND_NAME

_AUDIT_TOL = 1e-10


def available_backends() -> tuple:
    names = ["python"]
    if _default_kernel is not _kernel_py:
        names.insert(0, "cython")
    return tuple(names)


def _kernel_module(backend):
    if backend is None:
        return _default_kernel
    if backend == "python":
        return _kernel_py
    if backend == "cython":
        if _default_kernel is _kernel_py:
            raise BadParameter("compiled kernel requested but not built")
        return _default_kernel
    raise BadParameter(f"unknown backend {backend!r}")


# --------------------------------------------------------------------------
# step-level API


@dataclass(frozen=True)
class LoopEndState:
    """Filter state at one channel end: prediction, posterior, step count."""

    x_pred: tuple
    x_post: tuple
    t: int

    @classmethod
    def initial(cls, m: int) -> "LoopEndState":
        # x_pred at t=0 is the agreed zero prior.
        return cls(x_pred=(0.0,) * m, x_post=(0.0,) * m, t=0)

    def bits_equal(self, other: "LoopEndState") -> bool:
        if self.t != other.t or len(self.x_pred) != len(other.x_pred):
            return False
        pairs = list(zip(self.x_pred, other.x_pred)) + list(zip(self.x_post, other.x_post))
        return all(float(a).hex() == float(b).hex() for a, b in pairs)


def _matvec(M, v):
    out = [0.0] * M.shape[0]
    _kernel_py.matvec(M, v, out)
    return out


def _filter_update(state, qtilde, plant, gains, synthesis):
    """Shared measurement update + certainty-equivalent input + prediction.

    Both channel ends call exactly this function on exactly the same
    numbers, which is what makes lockstep synchrony structural rather
    than approximate.
    """
    jq = _matvec(synthesis.J, qtilde)
    x_post = [state.x_pred[i] + jq[i] for i in range(len(jq))]
    u = _matvec(gains.K, x_post)
    ax = _matvec(plant.A, x_post)
    bu = _matvec(plant.B, u)
    x_pred = [ax[i] + bu[i] for i in range(len(ax))]
    new_state = LoopEndState(
        x_pred=tuple(float(v) for v in x_pred),
        x_post=tuple(float(v) for v in x_post),
        t=state.t + 1,
    )
    return [float(v) for v in u], new_state


def encoder_step(state, x_t, d_t, plant, gains, synthesis, pmf):
    """One encoder step: innovation, dithered quantization, codeword.

    Returns (codeword, symbol, updated state).  The encoder mirrors the
    decoder update with the recovered symbol, so its state tracks the
    decoder's bit for bit.
    """
    m = len(state.x_pred)
    x_t = np.asarray(x_t, dtype=float).reshape(m)
    d_t = np.asarray(d_t, dtype=float).reshape(m)
    e = [float(x_t[i]) - state.x_pred[i] for i in range(m)]
    ce = _matvec(synthesis.C, e)
    delta = synthesis.Delta
    coords = []
    qtilde = []
    for i in range(m):
        y = ce[i] + float(d_t[i])
        k = int(math.floor(y / delta + 0.5))
        coords.append(k)
        qtilde.append(k * delta - float(d_t[i]))
    symbol = LatticePoint(coords=tuple(coords), Delta=delta)
    word = encode(symbol, pmf)
    _, new_state = _filter_update(state, qtilde, plant, gains, synthesis)
    return word, symbol, new_state


def decoder_step(state, a_t, d_t, plant, gains, synthesis, pmf):
    """One decoder step: decode symbol, update filter, emit the input."""
    m = len(state.x_pred)
    if isinstance(a_t, Codeword):
        bits = a_t.bits
    else:
        bits = str(a_t)
    symbol, used = decode(bits, pmf)
    if used != len(bits):
        raise MalformedCodeword(
            f"codeword carries {len(bits) - used} trailing bits beyond one symbol"
        )
    d_t = np.asarray(d_t, dtype=float).reshape(m)
    delta = synthesis.Delta
    qtilde = [symbol.coords[i] * delta - float(d_t[i]) for i in range(m)]
    u, new_state = _filter_update(state, qtilde, plant, gains, synthesis)
    return u, new_state


# --------------------------------------------------------------------------
# traces


@dataclass
class Trace:
    """Complete per-step record of one closed-loop run.

    X holds T+1 rows (x_0 .. x_T); every other array holds T rows.  The
    stage cost at row t is |x_{t+1}|^2_Q + |u_t|^2_Phi.  codewords is None
    unless the run was asked to keep the bit strings (lengths are always
    recorded).
    """

    X: np.ndarray
    U: np.ndarray
    E: np.ndarray
    D: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    lengths: np.ndarray
    stage: np.ndarray
    seed: int
    Delta: float
    backend: str
    audit_residual: float
    codewords: list = None

    @property
    def T(self) -> int:
        return int(self.stage.shape[0])

    @property
    def mean_bitrate_bits(self) -> float:
        return float(np.mean(self.lengths))

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.stage))

    def running_bitrate(self) -> np.ndarray:
        return np.cumsum(self.lengths) / np.arange(1, self.T + 1)

    def running_cost(self) -> np.ndarray:
        return np.cumsum(self.stage) / np.arange(1, self.T + 1)

    def innovation_cov(self, start: int = 0) -> np.ndarray:
        seg = self.E[start:]
        if seg.shape[0] == 0:
            raise BadParameter("empty innovation segment")
        return (seg.T @ seg) / seg.shape[0]

    def summary(self) -> dict:
        return {
            "mean_bitrate_bits": self.mean_bitrate_bits,
            "mean_cost": self.mean_cost,
            "T": self.T,
            "seed": self.seed,
        }

    def to_csv(self, path):
        m = self.E.shape[1]
        udim = self.U.shape[1]
        header = (
            ["t"]
            + [f"x_{i}" for i in range(m)]
            + [f"u_{j}" for j in range(udim)]
            + [f"e_{i}" for i in range(m)]
            + [f"q_{i}" for i in range(m)]
            + ["len_bits", "stage_cost"]
        )
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for t in range(self.T):
                row = [str(t)]
                row += [repr(float(v)) for v in self.X[t]]
                row += [repr(float(v)) for v in self.U[t]]
                row += [repr(float(v)) for v in self.E[t]]
                row += [str(int(v)) for v in self.Q[t]]
                row.append(str(int(self.lengths[t])))
                row.append(repr(float(self.stage[t])))
                fh.write(",".join(row) + "\n")

    def write_summary_json(self, path):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            json.dump(self.summary(), fh, sort_keys=True)
            fh.write("\n")


def burn_in_steps(R_cl) -> int:
    """Steps to discard before histogramming: 10x the time for the
    innovation recursion to contract by a factor of 100."""
    rho = spectral_radius(R_cl)
    if rho >= 1.0:
        raise UnstableFilter(f"recursion spectral radius {rho:.6f} is not contracting")
    if rho <= 0.0:
        return 1
    return max(1, math.ceil(10.0 * math.log(100.0) / (-math.log(rho))))


def _psd_root(M) -> np.ndarray:
    lam, vec = np.linalg.eigh(np.asarray(M, dtype=float))
    lam = np.clip(lam, 0.0, None)
    return vec @ np.diag(np.sqrt(lam)) @ vec.T


def _draw_x0(plant, key_init):
    root = _psd_root(plant.X0)
    z = [counter_gauss(key_init, 0, i) for i in range(plant.m)]
    return _matvec(root, z)


def _check_loop_inputs(plant, synthesis, seed, horizon, open_loop):
    if horizon < 1:
        raise BadParameter(f"horizon must be at least 1, got {horizon}")
    if not (0 <= seed < 2**64):
        raise BadParameter("seed must be a 64-bit unsigned integer")
    C = np.asarray(synthesis.C, dtype=float)
    if C.shape != (plant.m, plant.m):
        raise DimensionMismatch("sensitivity matrix shape disagrees with the plant")
    if not open_loop and np.max(np.abs(C)) == 0.0:
        raise DegenerateCoder(
            "sensitivity matrix is identically zero (rate-0 coder); "
            "pass open_loop=True to run without a channel"
        )


def _symbol_table(Q, pmf, keep_codewords):
    """Codeword lengths per step from the unique symbols, with a
    loss-free round-trip audit per distinct symbol."""
    uniq, inv = np.unique(Q, axis=0, return_inverse=True)
    lut = np.empty(uniq.shape[0], dtype=np.int64)
    words = [None] * uniq.shape[0] if keep_codewords else None
    for r in range(uniq.shape[0]):
        coords = tuple(int(v) for v in uniq[r])
        word = encode(coords, pmf)
        got, used = decode(word.bits, pmf)
        if got.coords != coords or used != word.length:
            raise DesyncDetected(
                f"codec failed the loss-free round trip on symbol {coords}"
            )  # pragma: no cover - would be a codec bug
        lut[r] = word.length
        if keep_codewords:
            words[r] = word.bits
    lengths = lut[inv.reshape(-1)]
    codewords = [words[i] for i in inv.reshape(-1)] if keep_codewords else None
    return lengths, codewords


def run_loop(plant: PlantModel, gains: ControllerGains, synthesis: CoderSynthesis,
             pmf, seed: int, horizon: int, *, keep_codewords: bool = False,
             backend: str = None, open_loop: bool = False) -> Trace:
    """Simulate the full coded loop for `horizon` steps.

    Noise, dither, and the initial state come from three independently
    keyed counter substreams of `seed`, so any two runs with equal inputs
    are bit-identical regardless of backend.
    """
    _check_loop_inputs(plant, synthesis, seed, horizon, open_loop)
    if pmf.m != plant.m:
        raise DimensionMismatch("pmf dimension disagrees with the plant")
    if pmf.Delta != synthesis.Delta:
        raise BadParameter("pmf lattice step disagrees with the synthesis")
    kern = _kernel_module(backend)
    T = int(horizon)
    m, udim = plant.m, plant.u

    key_d = derive_key(seed, STREAM_DITHER)
    key_w = derive_key(seed, STREAM_NOISE)
    key_i = derive_key(seed, STREAM_INIT)

    def cmat(M):
        return np.ascontiguousarray(np.asarray(M, dtype=np.float64))

    Lw = cmat(np.linalg.cholesky(plant.W))
    X = np.zeros((T + 1, m), dtype=np.float64)
    X[0] = _draw_x0(plant, key_i)
    U = np.zeros((T, udim), dtype=np.float64)
    E = np.zeros((T, m), dtype=np.float64)
    D = np.zeros((T, m), dtype=np.float64)
    V = np.zeros((T, m), dtype=np.float64)
    Q = np.zeros((T, m), dtype=np.int64)
    stage = np.zeros(T, dtype=np.float64)

    max_resid, v_bad, diverged = kern.run_kernel(
        cmat(plant.A), cmat(plant.B), cmat(gains.K), cmat(synthesis.C),
        cmat(synthesis.J), cmat(synthesis.L), cmat(synthesis.R_cl), Lw,
        cmat(plant.Q), cmat(plant.Phi), float(synthesis.Delta),
        key_w, key_d, X, U, E, D, V, Q, stage,
    )
    if diverged >= 0:
        raise NonFinite(f"state left the representable range at step {diverged}")
    if v_bad:
        raise ValueOutOfRange(
            f"{v_bad} reconstruction errors fell outside (-Delta/2, Delta/2]"
        )  # pragma: no cover - would contradict the quantizer algebra
    if max_resid > _AUDIT_TOL:
        raise DesyncDetected(
            f"innovation recursion residual {max_resid:.3e} exceeds {_AUDIT_TOL:g}"
        )

    lengths, codewords = _symbol_table(Q, pmf, keep_codewords)
    return Trace(X=X, U=U, E=E, D=D, V=V, Q=Q, lengths=lengths, stage=stage,
                 seed=seed, Delta=synthesis.Delta, backend=kern.BACKEND_NAME,
                 audit_residual=float(max_resid), codewords=codewords)


def run_lockstep(plant: PlantModel, gains: ControllerGains, synthesis: CoderSynthesis,
                 pmf, seed: int, horizon: int, *, open_loop: bool = False) -> Trace:
    """Reference run through the step-level API with two separate filter
    states, auditing encoder/decoder synchrony bit for bit every step.

    Produces arrays identical to run_loop for the same inputs (tested);
    much slower, intended for verification at modest horizons.
    """
    _check_loop_inputs(plant, synthesis, seed, horizon, open_loop)
    T = int(horizon)
    m, udim = plant.m, plant.u
    delta = synthesis.Delta

    key_d = derive_key(seed, STREAM_DITHER)
    key_w = derive_key(seed, STREAM_NOISE)
    key_i = derive_key(seed, STREAM_INIT)
    Lw = np.asarray(np.linalg.cholesky(plant.W), dtype=float)

    X = np.zeros((T + 1, m), dtype=np.float64)
    X[0] = _draw_x0(plant, key_i)
    U = np.zeros((T, udim), dtype=np.float64)
    E = np.zeros((T, m), dtype=np.float64)
    D = np.zeros((T, m), dtype=np.float64)
    V = np.zeros((T, m), dtype=np.float64)
    Q = np.zeros((T, m), dtype=np.int64)
    stage = np.zeros(T, dtype=np.float64)
    lengths = np.zeros(T, dtype=np.int64)
    codewords = []

    enc = LoopEndState.initial(m)
    dec = LoopEndState.initial(m)
    x = [float(v) for v in X[0]]
    max_resid = 0.0

    for t in range(T):
        d_t = [counter_centered(key_d, t, i, delta) for i in range(m)]
        e = [x[i] - enc.x_pred[i] for i in range(m)]
        word, symbol, enc_next = encoder_step(enc, x, d_t, plant, gains, synthesis, pmf)
        u, dec_next = decoder_step(dec, word, d_t, plant, gains, synthesis, pmf)
        if not enc_next.bits_equal(dec_next):
            raise DesyncDetected(f"encoder and decoder states diverged at step {t}")

        ce = _matvec(synthesis.C, e)
        for i in range(m):
            E[t, i] = e[i]
            D[t, i] = d_t[i]
            Q[t, i] = symbol.coords[i]
            rec = symbol.coords[i] * delta - d_t[i]
            V[t, i] = rec - ce[i]
        for j in range(udim):
            U[t, j] = u[j]
        lengths[t] = word.length
        codewords.append(word.bits)

        z = [counter_gauss(key_w, t, i) for i in range(m)]
        w = _matvec(Lw, z)
        ax = _matvec(plant.A, x)
        bu = _matvec(plant.B, u)
        xn = [ax[i] + bu[i] + w[i] for i in range(m)]
        X[t + 1] = xn

        qx = _matvec(plant.Q, xn)
        c1 = 0.0
        for i in range(m):
            c1 += xn[i] * qx[i]
        pu = _matvec(plant.Phi, u)
        c2 = 0.0
        for j in range(udim):
            c2 += u[j] * pu[j]
        stage[t] = c1 + c2

        re = _matvec(synthesis.R_cl, e)
        lv = _matvec(synthesis.L, [float(V[t, i]) for i in range(m)])
        for i in range(m):
            resid = abs((xn[i] - dec_next.x_pred[i]) - (re[i] - lv[i] + w[i]))
            max_resid = max(max_resid, resid)
        if max_resid > _AUDIT_TOL:
            raise DesyncDetected(
                f"innovation recursion residual {max_resid:.3e} exceeds {_AUDIT_TOL:g} at step {t}"
            )

        x = xn
        enc, dec = enc_next, dec_next

    return Trace(X=X, U=U, E=E, D=D, V=V, Q=Q, lengths=lengths, stage=stage,
                 seed=seed, Delta=delta, backend="lockstep",
                 audit_residual=float(max_resid), codewords=codewords)
