"""Truncated Fourier representation of functions on the circle and the 2-torus.

Convention shared by every module::

    u(x) = sum_k u_k exp(i k x),        u_k = (1/2pi) int u(x) exp(-i k x) dx
    V(t, x) = sum_{k,l} v_{k,l} exp(i (k x + l t))

A :class:`TorusField` with cutoff ``K`` stores ``coeffs[k + K]`` for
``|k| <= K``; a :class:`SpaceTimeField` stores ``coeffs[k + Kx, l + Kt]``.
All containers are immutable (their arrays are flagged read-only).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .exceptions import InvalidGrid

__all__ = [
    "TorusField",
    "SpaceTimeField",
    "StateVector",
    "to_coefficients",
    "from_samples",
    "sobolev_norm",
    "derivative",
    "multiply",
    "grid",
    "trig_eval",
]

DEFAULT_CUTOFF = 128
_CHUNK = 1 << 22


def _frozen(a, dtype=complex):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def grid(n):
    """``n`` equispaced nodes ``2 pi j / n`` on [0, 2pi)."""
    return 2.0 * np.pi * np.arange(n) / n


def trig_eval(coeffs, x):
    """Evaluate ``sum_k c_k exp(ikx)`` (centered storage) at arbitrary points."""
    coeffs = np.asarray(coeffs)
    K = (coeffs.shape[-1] - 1) // 2
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    out = np.empty(flat.shape, dtype=complex)
    ks = np.arange(-K, K + 1)
    step = max(1, _CHUNK // (2 * K + 1))
    for start in range(0, flat.size, step):
        xs = flat[start:start + step]
        out[start:start + step] = np.exp(1j * np.outer(xs, ks)) @ coeffs
    return out.reshape(x.shape)


def _centered_from_fft(spec, K):
    """Pick modes ``-K..K`` out of an (unnormalised-by-caller) FFT vector."""
    n = spec.shape[-1]
    idx = np.arange(-K, K + 1) % n
    return spec[..., idx]


def _fft_from_centered(coeffs, n):
    K = (coeffs.shape[-1] - 1) // 2
    if n < 2 * K + 1:
        raise InvalidGrid(f"{n} points cannot carry {2 * K + 1} modes")
    spec = np.zeros(coeffs.shape[:-1] + (n,), dtype=complex)
    spec[..., np.arange(-K, K + 1) % n] = coeffs
    return spec


def _real_check(coeffs, atol=1e-12):
    scale = max(1.0, float(np.max(np.abs(coeffs), initial=0.0)))
    return bool(np.allclose(coeffs, np.conj(coeffs[::-1]), atol=atol * scale, rtol=0))


@dataclass(frozen=True)
class TorusField:
    """Function on the circle stored as centered Fourier coefficients.

    ``tail`` records the L2 mass discarded when the field was produced by a
    truncating operation (products, resampling); it is diagnostic only.
    """

    coeffs: np.ndarray
    is_real: bool = False
    tail: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim != 1 or c.size % 2 == 0:
            raise InvalidGrid("TorusField needs an odd-length 1-D coefficient array")
        if self.is_real:
            c = 0.5 * (c + np.conj(c[::-1]))
        object.__setattr__(self, "coeffs", _frozen(c))

    # -- constructors -------------------------------------------------
    @classmethod
    def zeros(cls, K, is_real=True):
        return cls(np.zeros(2 * K + 1), is_real=is_real)

    @classmethod
    def constant(cls, value, K=0):
        c = np.zeros(2 * K + 1, dtype=complex)
        c[K] = value
        return cls(c, is_real=np.isrealobj(value) or np.imag(value) == 0)

    @classmethod
    def from_modes(cls, modes: Mapping[int, complex], K=None, is_real=None):
        if K is None:
            K = max((abs(k) for k in modes), default=0)
        c = np.zeros(2 * K + 1, dtype=complex)
        for k, v in modes.items():
            if abs(k) <= K:
                c[k + K] += v
        if is_real is None:
            is_real = _real_check(c)
        return cls(c, is_real=is_real)

    @classmethod
    def from_function(cls, f: Callable, K, oversample=4, is_real=None):
        n = oversample * (2 * K + 1)
        vals = np.asarray(f(grid(n)), dtype=complex)
        if is_real is None:
            is_real = bool(np.all(np.abs(vals.imag) <= 1e-14 * max(1.0, np.max(np.abs(vals)))))
        return from_samples(vals, K, is_real=is_real)

    # -- basic views --------------------------------------------------
    @property
    def K(self):
        return (self.coeffs.size - 1) // 2

    @property
    def wavenumbers(self):
        return np.arange(-self.K, self.K + 1)

    def coeff(self, k):
        return self.coeffs[k + self.K] if abs(k) <= self.K else 0.0

    @property
    def mean(self):
        return self.coeffs[self.K]

    def to_samples(self, n=None):
        n = 2 * self.K + 1 if n is None else int(n)
        vals = np.fft.ifft(_fft_from_centered(self.coeffs, n)) * n
        return vals.real if self.is_real else vals

    def __call__(self, x):
        vals = trig_eval(self.coeffs, x)
        return vals.real if self.is_real else vals

    def derivative(self):
        return TorusField(1j * self.wavenumbers * self.coeffs, is_real=self.is_real)

    def with_cutoff(self, K):
        """Zero-pad or truncate to cutoff ``K`` (truncation mass goes to ``tail``)."""
        if K >= self.K:
            c = np.zeros(2 * K + 1, dtype=complex)
            c[K - self.K:K + self.K + 1] = self.coeffs
            return TorusField(c, is_real=self.is_real, tail=self.tail)
        kept = self.coeffs[self.K - K:self.K + K + 1]
        lost = np.sqrt(max(0.0, np.sum(np.abs(self.coeffs) ** 2) - np.sum(np.abs(kept) ** 2)))
        return TorusField(kept, is_real=self.is_real, tail=float(np.hypot(self.tail, lost)))

    def sup_norm(self, n=None):
        n = n or max(64, 16 * (2 * self.K + 1))
        return float(np.max(np.abs(self.to_samples(n))))

    # -- arithmetic ----------------------------------------------------
    def _aligned(self, other):
        K = max(self.K, other.K)
        return self.with_cutoff(K).coeffs, other.with_cutoff(K).coeffs

    def __add__(self, other):
        if isinstance(other, TorusField):
            a, b = self._aligned(other)
            return TorusField(a + b, is_real=self.is_real and other.is_real)
        c = np.array(self.coeffs)
        c[self.K] += other
        return TorusField(c, is_real=self.is_real and np.isrealobj(other))

    __radd__ = __add__

    def __neg__(self):
        return TorusField(-self.coeffs, is_real=self.is_real)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        if isinstance(scalar, TorusField):
            return multiply(self, scalar)
        return TorusField(self.coeffs * scalar, is_real=self.is_real and np.isrealobj(scalar))

    __rmul__ = __mul__

    # -- serialization -------------------------------------------------
    def to_modes(self, tol=0.0):
        return [
            {"k": int(k), "re": float(c.real), "im": float(c.imag)}
            for k, c in zip(self.wavenumbers, self.coeffs)
            if abs(c) > tol
        ]

    @classmethod
    def from_mode_list(cls, modes, K=None):
        return cls.from_modes({int(m["k"]): complex(m["re"], m.get("im", 0.0)) for m in modes}, K=K)


def to_coefficients(samples):
    """Exact trigonometric interpolant of ``2K+1`` equispaced samples."""
    samples = np.asarray(samples)
    n = samples.shape[-1]
    if samples.ndim != 1 or n < 3 or n % 2 == 0:
        raise InvalidGrid(f"need an odd number (>= 3) of samples, got {n}")
    is_real = np.isrealobj(samples) or bool(np.all(samples.imag == 0))
    return from_samples(samples, (n - 1) // 2, is_real=is_real)


def from_samples(samples, K, is_real=None):
    """Coefficients ``|k| <= K`` of the interpolant of ``n >= 2K+1`` samples."""
    samples = np.asarray(samples)
    n = samples.shape[-1]
    if n < 2 * K + 1:
        raise InvalidGrid(f"{n} samples cannot resolve cutoff {K}")
    spec = np.fft.fft(samples) / n
    kept = _centered_from_fft(spec, K)
    lost = np.sqrt(max(0.0, np.sum(np.abs(spec) ** 2) - np.sum(np.abs(kept) ** 2)))
    if is_real is None:
        is_real = np.isrealobj(samples)
    return TorusField(kept, is_real=bool(is_real), tail=float(lost))


def derivative(f: TorusField) -> TorusField:
    return f.derivative()


def multiply(f: TorusField, g: TorusField, K=None) -> TorusField:
    """Pointwise product computed on an alias-free grid, then cut to ``K``.

    The exact product has cutoff ``f.K + g.K``; the default keeps all of it.
    """
    full = f.K + g.K
    n = 2 * (2 * full + 1)
    vals = f.to_samples(n) * g.to_samples(n)
    prod = from_samples(vals, full, is_real=f.is_real and g.is_real)
    prod = TorusField(prod.coeffs, is_real=prod.is_real)
    return prod if K is None else prod.with_cutoff(K)


@dataclass(frozen=True)
class StateVector:
    """Complex Fourier coefficients of the PDE state at ``time_stamp``."""

    coeffs: np.ndarray
    time_stamp: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim != 1 or c.size % 2 == 0:
            raise InvalidGrid("StateVector needs an odd-length 1-D coefficient array")
        object.__setattr__(self, "coeffs", _frozen(c))

    @classmethod
    def from_field(cls, f: TorusField, time_stamp=0.0):
        return cls(f.coeffs, time_stamp)

    @classmethod
    def from_function(cls, f, K, oversample=4, time_stamp=0.0):
        return cls.from_field(TorusField.from_function(f, K, oversample=oversample, is_real=False), time_stamp)

    @property
    def K(self):
        return (self.coeffs.size - 1) // 2

    @property
    def wavenumbers(self):
        return np.arange(-self.K, self.K + 1)

    def l2(self):
        return float(np.linalg.norm(self.coeffs))

    def as_field(self):
        return TorusField(self.coeffs, is_real=False)

    def to_samples(self, n=None):
        return self.as_field().to_samples(n)

    def with_cutoff(self, K):
        return StateVector(self.as_field().with_cutoff(K).coeffs, self.time_stamp)


def sobolev_norm(u, s):
    """``( sum_k <k>^{2s} |u_k|^2 )^{1/2}`` with ``<k> = (1 + k^2)^{1/2}``."""
    c = np.asarray(u.coeffs)
    K = (c.size - 1) // 2
    k = np.arange(-K, K + 1)
    w = (1.0 + k.astype(float) ** 2) ** s
    return float(np.sqrt(np.sum(w * np.abs(c) ** 2)))


@dataclass(frozen=True)
class SpaceTimeField:
    """Function ``V(t, x)`` on the 2-torus; ``coeffs[k + Kx, l + Kt] = v_{k,l}``."""

    coeffs: np.ndarray
    is_real: bool = False
    tail: float = field(default=0.0, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim != 2 or c.shape[0] % 2 == 0 or c.shape[1] % 2 == 0:
            raise InvalidGrid("SpaceTimeField needs odd-by-odd coefficient array")
        if self.is_real:
            c = 0.5 * (c + np.conj(c[::-1, ::-1]))
        object.__setattr__(self, "coeffs", _frozen(c))

    # -- constructors -------------------------------------------------
    @classmethod
    def zeros(cls, Kx, Kt, is_real=True):
        return cls(np.zeros((2 * Kx + 1, 2 * Kt + 1)), is_real=is_real)

    @classmethod
    def from_modes(cls, modes: Mapping[tuple, complex], Kx=None, Kt=None, is_real=None):
        if Kx is None:
            Kx = max((abs(k) for k, _ in modes), default=0)
        if Kt is None:
            Kt = max((abs(l) for _, l in modes), default=0)
        c = np.zeros((2 * Kx + 1, 2 * Kt + 1), dtype=complex)
        for (k, l), v in modes.items():
            if abs(k) <= Kx and abs(l) <= Kt:
                c[k + Kx, l + Kt] += v
        if is_real is None:
            scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
            is_real = bool(np.allclose(c, np.conj(c[::-1, ::-1]), atol=1e-12 * scale, rtol=0))
        return cls(c, is_real=is_real)

    @classmethod
    def from_function(cls, f: Callable, Kx, Kt, oversample=2, is_real=None):
        nt = oversample * (2 * Kt + 1)
        nx = oversample * (2 * Kx + 1)
        t, x = np.meshgrid(grid(nt), grid(nx), indexing="ij")
        vals = np.asarray(f(t, x), dtype=complex)
        if is_real is None:
            is_real = bool(np.all(np.abs(vals.imag) <= 1e-14 * max(1.0, np.max(np.abs(vals)))))
        return cls.from_grid(vals, Kx, Kt, is_real=is_real)

    @classmethod
    def from_grid(cls, values, Kx, Kt, is_real=None):
        """Fourier coefficients from samples ``values[i_t, i_x]`` on a uniform grid."""
        values = np.asarray(values)
        nt, nx = values.shape
        if nt < 2 * Kt + 1 or nx < 2 * Kx + 1:
            raise InvalidGrid(f"grid {values.shape} cannot resolve cutoffs ({Kx}, {Kt})")
        spec = np.fft.fft2(values) / (nt * nx)  # [l, k]
        li = np.arange(-Kt, Kt + 1) % nt
        ki = np.arange(-Kx, Kx + 1) % nx
        kept = spec[np.ix_(li, ki)].T
        lost = np.sqrt(max(0.0, np.sum(np.abs(spec) ** 2) - np.sum(np.abs(kept) ** 2)))
        if is_real is None:
            is_real = np.isrealobj(values)
        return cls(kept, is_real=bool(is_real), tail=float(lost))

    @classmethod
    def lifted(cls, f: TorusField, m, Kt=None):
        """The completely resonant field ``f(x + m t)``."""
        K = f.K
        Kt = m * K if Kt is None else Kt
        c = np.zeros((2 * K + 1, 2 * Kt + 1), dtype=complex)
        for k in range(-K, K + 1):
            if abs(m * k) <= Kt:
                c[k + K, m * k + Kt] = f.coeffs[k + K]
        return cls(c, is_real=f.is_real)

    @classmethod
    def constant(cls, value, Kx=0, Kt=0):
        c = np.zeros((2 * Kx + 1, 2 * Kt + 1), dtype=complex)
        c[Kx, Kt] = value
        return cls(c, is_real=np.imag(value) == 0)

    # -- views --------------------------------------------------------
    @property
    def Kx(self):
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def Kt(self):
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def k_index(self):
        return np.arange(-self.Kx, self.Kx + 1)

    @property
    def l_index(self):
        return np.arange(-self.Kt, self.Kt + 1)

    def coeff(self, k, l):
        if abs(k) <= self.Kx and abs(l) <= self.Kt:
            return self.coeffs[k + self.Kx, l + self.Kt]
        return 0.0

    def with_cutoffs(self, Kx, Kt):
        c = np.zeros((2 * Kx + 1, 2 * Kt + 1), dtype=complex)
        kx, kt = min(Kx, self.Kx), min(Kt, self.Kt)
        c[Kx - kx:Kx + kx + 1, Kt - kt:Kt + kt + 1] = self.coeffs[
            self.Kx - kx:self.Kx + kx + 1, self.Kt - kt:self.Kt + kt + 1
        ]
        return SpaceTimeField(c, is_real=self.is_real)

    def x_coefficients(self, t):
        """Coefficients in ``x`` of ``V(t, .)`` for each entry of ``t``: shape (..., 2Kx+1)."""
        t = np.asarray(t, dtype=float)
        phase = np.exp(1j * np.multiply.outer(t, self.l_index))
        return phase @ self.coeffs.T

    def at_time(self, t) -> TorusField:
        return TorusField(self.x_coefficients(float(t)), is_real=self.is_real)

    def to_grid(self, nt=None, nx=None):
        nt = 2 * self.Kt + 1 if nt is None else nt
        nx = 2 * self.Kx + 1 if nx is None else nx
        spec = np.zeros((nt, nx), dtype=complex)
        li = np.arange(-self.Kt, self.Kt + 1) % nt
        ki = np.arange(-self.Kx, self.Kx + 1) % nx
        if nt < 2 * self.Kt + 1 or nx < 2 * self.Kx + 1:
            raise InvalidGrid("grid too coarse for the stored modes")
        spec[np.ix_(li, ki)] = self.coeffs.T
        vals = np.fft.ifft2(spec) * (nt * nx)
        return vals.real if self.is_real else vals

    def evaluate(self, t, x):
        """Pointwise values at broadcastable arrays ``t`` and ``x``."""
        t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
        out = np.empty(t.shape, dtype=complex)
        ft, fx = t.ravel(), x.ravel()
        step = max(1, _CHUNK // ((2 * self.Kx + 1) * (2 * self.Kt + 1)) + 1)
        for s in range(0, ft.size, step):
            et = np.exp(1j * np.outer(ft[s:s + step], self.l_index))
            ex = np.exp(1j * np.outer(fx[s:s + step], self.k_index))
            out.ravel()[s:s + step] = np.einsum("pk,kl,pl->p", ex, self.coeffs, et)
        return out.real if self.is_real else out

    def evaluate_rows(self, t_nodes, x_points):
        """Values at ``(t_nodes[i], x_points[i, j])`` for nonuniform ``x`` per row."""
        xc = self.x_coefficients(np.asarray(t_nodes, float))
        out = np.empty(x_points.shape, dtype=complex)
        for i in range(x_points.shape[0]):
            out[i] = trig_eval(xc[i], x_points[i])
        return out.real if self.is_real else out

    def dx(self):
        return SpaceTimeField(1j * self.k_index[:, None] * self.coeffs, is_real=self.is_real)

    def dt(self):
        return SpaceTimeField(1j * self.l_index[None, :] * self.coeffs, is_real=self.is_real)

    def l2(self):
        """L2(T^2) norm with normalised measure (Parseval)."""
        return float(np.linalg.norm(self.coeffs))

    def sup_abs_coeff(self):
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    def is_time_independent(self, tol=0.0):
        mask = self.l_index != 0
        return float(np.max(np.abs(self.coeffs[:, mask]), initial=0.0)) <= tol

    # -- arithmetic ----------------------------------------------------
    def _aligned(self, other):
        Kx, Kt = max(self.Kx, other.Kx), max(self.Kt, other.Kt)
        return self.with_cutoffs(Kx, Kt).coeffs, other.with_cutoffs(Kx, Kt).coeffs

    def __add__(self, other):
        if isinstance(other, SpaceTimeField):
            a, b = self._aligned(other)
            return SpaceTimeField(a + b, is_real=self.is_real and other.is_real)
        c = np.array(self.coeffs)
        c[self.Kx, self.Kt] += other
        return SpaceTimeField(c, is_real=self.is_real and np.imag(other) == 0)

    __radd__ = __add__

    def __neg__(self):
        return SpaceTimeField(-self.coeffs, is_real=self.is_real)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        return SpaceTimeField(self.coeffs * scalar, is_real=self.is_real and np.imag(scalar) == 0)

    __rmul__ = __mul__

    # -- serialization -------------------------------------------------
    def to_modes(self, tol=0.0):
        out = []
        for i, k in enumerate(self.k_index):
            for j, l in enumerate(self.l_index):
                c = self.coeffs[i, j]
                if abs(c) > tol:
                    out.append({"k": int(k), "l": int(l), "re": float(c.real), "im": float(c.imag)})
        return out

    @classmethod
    def from_mode_list(cls, modes, Kx=None, Kt=None):
        return cls.from_modes(
            {(int(m["k"]), int(m["l"])): complex(m["re"], m.get("im", 0.0)) for m in modes},
            Kx=Kx,
            Kt=Kt,
        )
