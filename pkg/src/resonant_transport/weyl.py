"""Weyl quantization of symbols on the circle, realized on truncated mode space.

In the Fourier basis ``e_j = exp(ijx)`` the Weyl quantization of
``a(x, xi) = sum_n a_n(xi) exp(inx)`` has matrix entries::

    M[k, j] = a_{k-j}((k + j) / 2)

Symbols here are combinations of three fiber profiles with x-dependent
coefficients::

    a(x, xi) = p0(x) + xi p1(x) + |xi| (1 - chi(xi)) p2(x)

which covers every symbol used by the transport generator and the virial
functional.  ``chi`` is the fixed cutoff equal to 1 on ``|xi| <= 1/2`` and
0 on ``|xi| >= 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, RegionTooSmall
from .spectral import StateVector, TorusField, from_samples, grid, sobolev_norm

__all__ = [
    "chi",
    "Symbol",
    "WeylMatrix",
    "weyl_matrix",
    "quadratic_form",
    "poisson_bracket",
    "commutator_check",
    "garding_constant",
    "build_atilde",
    "build_initial_datum",
    "datum_bandwidth",
]


def chi(xi):
    """Fiber cutoff: 1 for ``|xi| <= 1/2``, 0 for ``|xi| >= 1``, quintic smoothstep between."""
    t = np.clip((np.abs(np.asarray(xi, float)) - 0.5) / 0.5, 0.0, 1.0)
    return 1.0 - (10 * t**3 - 15 * t**4 + 6 * t**5)


def abs_cut(xi):
    """``|xi| (1 - chi(xi))``."""
    xi = np.asarray(xi, float)
    return np.abs(xi) * (1.0 - chi(xi))


def _coeffs(f, K=None):
    if f is None:
        return None
    return f if isinstance(f, TorusField) else TorusField(np.asarray(f, complex))


@dataclass(frozen=True)
class Symbol:
    """``p0(x) + xi p1(x) + |xi| (1 - chi(xi)) p2(x)``; any part may be ``None``."""

    const: TorusField | None = None
    linear: TorusField | None = None
    abscut: TorusField | None = None

    @classmethod
    def multiplication(cls, p):
        return cls(const=_coeffs(p))

    @classmethod
    def transport(cls, w):
        """The generator symbol ``i xi w(x)``."""
        w = _coeffs(w)
        return cls(linear=TorusField(1j * w.coeffs, is_real=False))

    @classmethod
    def profile_abs(cls, a):
        """``|xi| (1 - chi) a(x)`` for a real profile ``a``."""
        return cls(abscut=_coeffs(a))

    def _parts(self):
        return [(name, getattr(self, name)) for name in ("const", "linear", "abscut") if getattr(self, name) is not None]

    @property
    def bandwidth(self):
        return max((f.K for _, f in self._parts()), default=0)

    @property
    def is_affine(self):
        return self.abscut is None

    def terms(self, tol=0.0):
        """Flat list ``(n, kind, coefficient)``."""
        out = []
        for name, f in self._parts():
            for n, c in zip(f.wavenumbers, f.coeffs):
                if abs(c) > tol:
                    out.append((int(n), name, complex(c)))
        return out

    def is_real(self, tol=1e-14):
        return all(np.allclose(f.coeffs, np.conj(f.coeffs[::-1]), atol=tol, rtol=0) for _, f in self._parts())

    def is_imaginary(self, tol=1e-14):
        return all(np.allclose(f.coeffs, -np.conj(f.coeffs[::-1]), atol=tol, rtol=0) for _, f in self._parts())

    def diagonal_values(self, n, j):
        """Entries ``M[j + n, j]`` for an array of column indices ``j``."""
        mid = j + 0.5 * n
        out = np.zeros(np.shape(j), dtype=complex)
        if self.const is not None and abs(n) <= self.const.K:
            out += self.const.coeff(n)
        if self.linear is not None and abs(n) <= self.linear.K:
            out += self.linear.coeff(n) * mid
        if self.abscut is not None and abs(n) <= self.abscut.K:
            out += self.abscut.coeff(n) * abs_cut(mid)
        return out

    def __neg__(self):
        neg = lambda f: None if f is None else TorusField(-f.coeffs, is_real=f.is_real)
        return Symbol(neg(self.const), neg(self.linear), neg(self.abscut))

    def __call__(self, x, xi):
        """Pointwise value (used by tests)."""
        out = 0.0
        if self.const is not None:
            out = out + TorusField(self.const.coeffs)(x)
        if self.linear is not None:
            out = out + np.asarray(xi) * TorusField(self.linear.coeffs)(x)
        if self.abscut is not None:
            out = out + abs_cut(xi) * TorusField(self.abscut.coeffs)(x)
        return out


class WeylMatrix:
    """Banded matrix of ``Op^w(a)`` on modes ``|k| <= K``.

    Diagonals are generated from the symbol on demand, so very large
    truncations cost only ``O(K * bandwidth)`` per product.
    """

    def __init__(self, symbol: Symbol, K: int, tag: str = ""):
        self.symbol = symbol
        self.K = int(K)
        self.tag = tag
        self.offsets = [n for n in range(-symbol.bandwidth, symbol.bandwidth + 1) if abs(n) <= 2 * self.K]
        self._diag_cache = {}

    @property
    def size(self):
        return 2 * self.K + 1

    def diagonal(self, n):
        """Entries ``M[j + n, j]`` for all valid ``j`` (length ``size - |n|``)."""
        if n not in self._diag_cache:
            j = np.arange(-self.K, self.K + 1 - n) if n >= 0 else np.arange(-self.K - n, self.K + 1)
            self._diag_cache[n] = self.symbol.diagonal_values(n, j)
        return self._diag_cache[n]

    def matvec(self, u):
        u = np.asarray(u.coeffs if isinstance(u, StateVector) else u)
        if u.shape[-1] != self.size:
            raise DimensionError(f"vector of length {u.shape[-1]} against matrix of size {self.size}")
        out = np.zeros(u.shape, dtype=complex)
        N = self.size
        for n in self.offsets:
            d = self.diagonal(n)
            if not np.any(d):
                continue
            if n >= 0:
                out[..., n:] += d * u[..., : N - n]
            else:
                out[..., : N + n] += d * u[..., -n:]
        return out

    __matmul__ = matvec

    def to_dense(self):
        M = np.zeros((self.size, self.size), dtype=complex)
        for n in self.offsets:
            d = self.diagonal(n)
            idx = np.arange(d.size)
            if n >= 0:
                M[idx + n, idx] = d
            else:
                M[idx, idx - n] = d
        return M

    def to_banded(self):
        """``(l, u, ab)`` in the layout expected by ``scipy.linalg.solve_banded``."""
        l = max([-n for n in self.offsets if n < 0] + [n for n in self.offsets if n > 0] + [0])
        ab = np.zeros((2 * l + 1, self.size), dtype=complex)
        for n in self.offsets:
            d = self.diagonal(n)
            # entry (i, j) with i = j + n sits in row l + i - j = l + n
            if n >= 0:
                ab[l + n, : self.size - n] = d
            else:
                ab[l + n, -n:] = d
        return l, l, ab

    def is_hermitian(self, tol=1e-12):
        return all(
            np.allclose(self.diagonal(n), np.conj(self.diagonal(-n)), atol=tol, rtol=0) for n in self.offsets
        )

    def is_skew_hermitian(self, tol=1e-12):
        return all(
            np.allclose(self.diagonal(n), -np.conj(self.diagonal(-n)), atol=tol, rtol=0) for n in self.offsets
        )

    def to_csv(self, path):
        M = self.to_dense()
        k = np.arange(-self.K, self.K + 1)
        with open(path, "w") as fh:
            fh.write("k,j,re,im\n")
            for a in range(self.size):
                for b in range(self.size):
                    if M[a, b] != 0:
                        fh.write(f"{k[a]},{k[b]},{M[a, b].real!r},{M[a, b].imag!r}\n")


def weyl_matrix(a: Symbol, K, tag="") -> WeylMatrix:
    return WeylMatrix(a, K, tag)


def quadratic_form(M: WeylMatrix, u: StateVector) -> complex:
    """``<M u, u>`` with the pairing ``sum_k (Mu)_k conj(u_k)``."""
    c = np.asarray(u.coeffs)
    if c.size != M.size:
        raise DimensionError(f"state with cutoff {(c.size - 1) // 2} against matrix cutoff {M.K}")
    return complex(np.vdot(c, M.matvec(c)))


def garding_constant(a: Symbol, K, order=1.0, n_vectors=64, seed=0):
    """Empirical lower-bound constant for ``Op^w(a)`` sampled on random states.

    Returns ``max(0, max_u -Re<Op^w(a) u, u> / ||u||_{(order-1)/2}^2)`` over
    ``n_vectors`` random states with Gaussian coefficients under random
    algebraic decay.  For ``a >= 0`` of degree ``order`` this is a sampled
    stand-in for the Garding constant; it is a lower estimate only.
    """
    M = weyl_matrix(a, K)
    rng = np.random.default_rng(seed)
    k = np.arange(-K, K + 1)
    worst = 0.0
    for _ in range(n_vectors):
        decay = rng.uniform(0.0, 2.0)
        c = (rng.normal(size=k.size) + 1j * rng.normal(size=k.size)) / (1.0 + np.abs(k)) ** decay
        u = StateVector(c)
        worst = max(worst, -quadratic_form(M, u).real / sobolev_norm(u, 0.5 * (order - 1.0)) ** 2)
    return float(worst)


def poisson_bracket(f: Symbol, g: Symbol) -> Symbol:
    """``{f, g} = d_xi f d_x g - d_x f d_xi g`` for symbols affine in ``xi``."""
    if not (f.is_affine and g.is_affine):
        raise ValueError("closed-form bracket is implemented for xi-affine symbols only")
    zero = TorusField.zeros(0, is_real=True)
    f0, f1 = f.const or zero, f.linear or zero
    g0, g1 = g.const or zero, g.linear or zero
    mul = lambda a, b: _product(a, b)
    const = mul(f1, g0.derivative()) - mul(f0.derivative(), g1)
    lin = mul(f1, g1.derivative()) - mul(f1.derivative(), g1)
    return Symbol(const=const, linear=lin)


def _product(a: TorusField, b: TorusField) -> TorusField:
    """Exact product of two trigonometric polynomials (direct convolution)."""
    c = np.convolve(a.coeffs, b.coeffs)
    return TorusField(c, is_real=False)


def commutator_check(f: Symbol, g: Symbol, K):
    """Compare ``i [Op f, Op g]`` with ``Op({f, g})`` on the block ``|k| <= K/2``."""
    F = weyl_matrix(f, K).to_dense()
    G = weyl_matrix(g, K).to_dense()
    lhs = 1j * (F @ G - G @ F)
    rhs = weyl_matrix(poisson_bracket(f, g), K).to_dense()
    c = K // 2
    sl = slice(K - c, K + c + 1)
    diff = np.abs(lhs[sl, sl] - rhs[sl, sl])
    return {"max_discrepancy": float(np.max(diff)), "block": c, "K": int(K), "scale": float(np.max(np.abs(rhs[sl, sl]), initial=0.0))}


def build_atilde(E, K):
    """Symbol ``|xi| (1 - chi) a~(x)`` of the escape profile and its matrix."""
    profile = E.a_tilde if hasattr(E, "a_tilde") else E
    sym = Symbol.profile_abs(profile)
    return sym, weyl_matrix(sym, K, tag="a_tilde")


def _smoothstep(s):
    s = np.clip(np.asarray(s, float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def _taper(x, a, b):
    """1 on the middle half of [a, b], 0 outside [a + L/8, b - L/8], smooth between."""
    L = b - a
    x = a + np.mod(x - a, 2 * np.pi)
    rise = _smoothstep((x - (a + L / 8)) / (L / 8))
    fall = _smoothstep(((b - L / 8) - x) / (L / 8))
    return np.where((x > a) & (x < b), rise * fall, 0.0)


def _pick_arc(W_region):
    arcs = [tuple(w) for w in W_region]
    if not arcs:
        raise RegionTooSmall("W_region is empty")
    return max(arcs, key=lambda w: w[1] - w[0])


def datum_bandwidth(W_region, tol=1e-10, n=1 << 15):
    """Smallest cutoff ``Kb`` holding all but ``tol`` (relative L2) of the taper's spectrum."""
    a, b = _pick_arc(W_region)
    vals = _taper(grid(n), a, b)
    p = np.abs(np.fft.fft(vals) / n) ** 2
    k = np.abs(np.fft.fftfreq(n, 1.0 / n))
    order = np.argsort(k)
    tail = np.cumsum(p[order][::-1])[::-1]
    tail = tail / tail[0]
    ok = np.nonzero(tail < tol**2)[0]
    return int(k[order][ok[0]]) if ok.size else n // 2


def build_initial_datum(W_region, xi0, K, min_nodes=16, check_bandwidth=True) -> StateVector:
    """``chi3(x) exp(i xi0 x) / ||chi3||`` with ``chi3`` a smooth taper inside ``W_region``.

    The taper is 1 on the middle half of the longest arc of ``W_region`` and
    vanishes outside its central three quarters.  It is built from samples
    on the ``2K+1`` node grid, so it vanishes exactly on nodes outside the
    support and the L2 normalisation holds to round-off.
    """
    a, b = _pick_arc(W_region)
    n = 2 * K + 1
    if 0.75 * (b - a) < min_nodes * 2 * np.pi / n:
        raise RegionTooSmall(f"arc of length {b - a:.3g} holds fewer than {min_nodes} grid nodes")
    if check_bandwidth:
        bw = datum_bandwidth(W_region)
        if abs(xi0) + bw > K:
            raise ValueError(f"xi0 + bandwidth = {abs(xi0) + bw} exceeds cutoff {K}")
    x = grid(n)
    vals = _taper(x, a, b) * np.exp(1j * xi0 * x)
    c = from_samples(vals, K, is_real=False).coeffs
    c = c / np.linalg.norm(c)
    return StateVector(c, 0.0)
