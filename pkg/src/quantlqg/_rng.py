"""Counter-based random number primitives.

Every draw is a pure function of (key, t, i), so streams can be evaluated
at any time index in any order and two ends of a channel can regenerate
the same values independently.  The compiled loop kernel re-implements
these routines in C; both sides must stay bit-for-bit identical, which is
why the arithmetic below is spelled out scalar by scalar (no numpy, no
math.fma, fixed evaluation order).
"""

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Substream salts, xor-folded into the master seed.  Keep in sync with the
# compiled kernel.
STREAM_DITHER = 0x9D2C5680D1F3A4B1
STREAM_NOISE = 0x5851F42D4C957F2D
STREAM_INIT = 0x14057B7EF767814F

_INV_2_53 = 2.0 ** -53


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche on 64-bit words."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, salt: int) -> int:
    """Key for one substream of a master seed."""
    return mix64((seed ^ salt) & _MASK64)


def counter_u64(key: int, t: int, i: int) -> int:
    z = mix64((key + _GOLDEN * (t + 1)) & _MASK64)
    return mix64((z + _GOLDEN * (i + 1)) & _MASK64)


def counter_u01(key: int, t: int, i: int) -> float:
    """Uniform draw in the open interval (0, 1).

    (h >> 11) + 0.5 is an exact double for any 53-bit h, and the final
    scaling by 2**-53 is a power-of-two multiply, so no rounding occurs.
    """
    return ((counter_u64(key, t, i) >> 11) + 0.5) * _INV_2_53


def counter_centered(key: int, t: int, i: int, width: float) -> float:
    """Uniform draw in [-width/2, width/2)."""
    return (counter_u01(key, t, i) - 0.5) * width


def counter_gauss(key: int, t: int, i: int) -> float:
    return norm_ppf(counter_u01(key, t, i))


def norm_ppf(p: float) -> float:
    """Standard normal quantile (Wichura's PPND16 rational approximation).

    Accurate to ~1e-16 relative for p in (0, 1); evaluation order matters
    here because the compiled kernel repeats it verbatim.
    """
    q = p - 0.5
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
    r = math.sqrt(-math.log(r))
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
