"""Explicit constants of the self-improvement argument, in exact arithmetic.

The exponent-improvement pipeline uses K = 2 kappa, N = 3 nu, M = 4 and
delta = 1/6. The integer k is the least one with

    C_Gamma^p 2^p D^4 / k^(p-1) < (delta / (3 kappa))^p,

S = 1 + M^k nu + 3 C_A M^k, and for (p-q)/p < ln(1/delta) / (k ln M)

    C_alpha(q) = S / (1 - delta M^(k (p-q)/p)).

M^k overflows doubles for realistic k, so S and C_alpha are carried as
natural logarithms at 256-bit precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Sequence

import mpmath

PREC = 256
M_FIXED = 4
DELTA = Fraction(1, 6)

_ctx = mpmath.mp.clone()
_ctx.prec = PREC
mpf = _ctx.mpf
# relative widening applied to float-path comparisons so the k test stays conservative
_GUARD = mpf(2) ** (-PREC + 16)


class CertificateError(ValueError):
    pass


def _as_fraction(v) -> Fraction | None:
    """Exact rational for ints, Fractions, decimal strings and finite floats."""
    if isinstance(v, Rational):
        return Fraction(v)
    if isinstance(v, str):
        try:
            return Fraction(v)
        except ValueError:
            return None
    if isinstance(v, float) and math.isfinite(v):
        return Fraction(v)
    return None


def _mp(v) -> mpmath.mpf:
    f = _as_fraction(v)
    if f is not None:
        return mpf(f.numerator) / f.denominator
    return mpf(v)


@dataclass(frozen=True)
class LogValue:
    """A nonnegative real stored as its natural log (zero has ln = -inf)."""

    ln: mpmath.mpf

    @classmethod
    def zero(cls) -> "LogValue":
        return cls(mpf("-inf"))

    @property
    def is_zero(self) -> bool:
        return self.ln == mpf("-inf")

    @property
    def log10(self) -> float:
        return float(self.ln / _ctx.ln(10)) if not self.is_zero else -math.inf

    def to_float(self) -> float:
        if self.is_zero:
            return 0.0
        try:
            return float(_ctx.exp(self.ln))
        except OverflowError:
            return math.inf

    def __le__(self, other: "LogValue | float") -> bool:
        if isinstance(other, LogValue):
            return self.ln <= other.ln
        if other < 0:
            return False
        if other == 0:
            return self.is_zero
        return self.ln <= _ctx.ln(_mp(other))

    def ge_float(self, other: float) -> bool:
        if other <= 0:
            return True
        return self.ln >= _ctx.ln(_mp(other))


@dataclass(frozen=True)
class HardyHypotheses:
    p0: float | Fraction | str
    p: float | Fraction | str
    C_gamma: float | Fraction | str
    C_A: float | Fraction | str
    nu: float | Fraction | str
    kappa: float | Fraction | str
    D10k: float | Fraction | str

    def validate(self) -> None:
        p0, p = _mp(self.p0), _mp(self.p)
        if not (1 < p0 < p):
            raise CertificateError("need 1 < p0 < p")
        if not (p / 2 < p0):
            raise CertificateError("need p/2 < p0")
        for name in ("C_gamma", "C_A", "nu"):
            if not _mp(getattr(self, name)) > 0:
                raise CertificateError(f"{name} must be positive")
        if not _mp(self.kappa) > 1:
            raise CertificateError("kappa must exceed 1")
        if not _mp(self.D10k) >= 1:
            raise CertificateError("D(w,10 kappa) must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "HardyHypotheses":
        keys = {"p0": "p0", "p": "p", "C_gamma": "C_gamma", "C_A": "C_A", "nu": "nu", "kappa": "kappa",
                "D10k": "D10k"}
        aliases = {"C_Gamma": "C_gamma", "CGamma": "C_gamma", "CA": "C_A", "D": "D10k", "D10kappa": "D10k"}
        vals = {}
        for k, v in d.items():
            k = aliases.get(k, k)
            if k in keys:
                vals[k] = v
        return cls(**vals)


def k_condition(hyp: HardyHypotheses, k: int) -> bool:
    """C_Gamma^p 2^p D^4 / k^(p-1) < (delta/(3 kappa))^p, decided exactly when possible."""
    fr = {name: _as_fraction(getattr(hyp, name)) for name in ("p", "C_gamma", "D10k", "kappa")}
    p = fr["p"]
    if all(v is not None for v in fr.values()) and p.denominator == 1:
        pi = int(p)
        lhs = fr["C_gamma"] ** pi * 2**pi * fr["D10k"] ** 4
        rhs = (DELTA / (3 * fr["kappa"])) ** pi * Fraction(k) ** (pi - 1)
        return lhs < rhs
    pm = _mp(hyp.p)
    lhs = _mp(hyp.C_gamma) ** pm * mpf(2) ** pm * _mp(hyp.D10k) ** 4 / mpf(k) ** (pm - 1)
    rhs = (mpf(1) / 6 / (3 * _mp(hyp.kappa))) ** pm
    return lhs * (1 + _GUARD) < rhs * (1 - _GUARD)


def minimal_k(hyp: HardyHypotheses) -> int:
    pm = _mp(hyp.p)
    lhs = _mp(hyp.C_gamma) ** pm * mpf(2) ** pm * _mp(hyp.D10k) ** 4
    rhs = (mpf(1) / 6 / (3 * _mp(hyp.kappa))) ** pm
    k = max(1, int(_ctx.floor((lhs / rhs) ** (1 / (pm - 1)))))
    # the float estimate is within a few units; settle it with the exact test
    while k > 1 and k_condition(hyp, k - 1):
        k -= 1
    while not k_condition(hyp, k):
        k += 1
    return k


@dataclass
class ImprovementCertificate:
    hypotheses: HardyHypotheses
    k: int
    ln_S: mpmath.mpf
    theta_max: mpmath.mpf
    q_lower: mpmath.mpf
    K: object = None
    N: object = None
    M: int = M_FIXED
    delta: Fraction = DELTA
    notes: list[str] = field(default_factory=list)

    @property
    def p(self) -> mpmath.mpf:
        return _mp(self.hypotheses.p)

    @property
    def log10_S(self) -> float:
        return float(self.ln_S / _ctx.ln(10))

    @property
    def window(self) -> mpmath.mpf:
        return self.p - self.q_lower

    def theta(self, q) -> mpmath.mpf:
        return (self.p - _mp(q)) / self.p

    def absorption(self, q) -> mpmath.mpf:
        """delta * M^(k theta); below 1 on the certified window."""
        th = self.theta(q)
        if th == 0:
            return mpf(1) / 6
        return _ctx.exp(self.k * th * _ctx.ln(self.M)) / 6

    def ln_c_alpha(self, q) -> mpmath.mpf:
        qm = _mp(q)
        if not (self.q_lower < qm <= self.p):
            raise CertificateError(f"q={q} outside ({self.q_lower}, {self.p}]")
        a = self.absorption(q)
        if a >= 1:
            raise CertificateError("absorption factor is not below 1")
        return self.ln_S - _ctx.log1p(-a)

    def c_alpha(self, q) -> LogValue:
        return LogValue(self.ln_c_alpha(q))

    def q_grid(self, count: int) -> list:
        """Points strictly inside (q_lower, p], spaced in theta."""
        return [self.p - self.window * (mpf(i) / count) for i in range(count)]

    def to_json(self, samples: int = 8) -> dict:
        ln10 = _ctx.ln(10)
        return {
            "K": float(self.K),
            "N": float(self.N),
            "M": self.M,
            "delta": str(self.delta),
            "k": self.k,
            "log10_S": float(self.ln_S / ln10),
            "q_lower": float(self.q_lower),
            "p": float(self.p),
            "theta_max": float(self.theta_max),
            "window": float(self.window),
            "c_alpha_samples": [
                {"q": float(q), "log10_c_alpha": float(self.ln_c_alpha(q) / ln10)}
                for q in self.q_grid(samples)
            ],
        }


def improvement_certificate(hyp: HardyHypotheses) -> ImprovementCertificate:
    hyp.validate()
    k = minimal_k(hyp)
    ln4 = _ctx.ln(M_FIXED)
    nu, CA = _mp(hyp.nu), _mp(hyp.C_A)
    # S = 1 + M^k nu + 3 C_A M^k = M^k (nu + 3 C_A + M^-k)
    ln_S = k * ln4 + _ctx.ln(nu + 3 * CA + _ctx.exp(-k * ln4))
    theta_max = _ctx.ln(6) / (k * ln4)
    p = _mp(hyp.p)
    q_lower = max(_mp(hyp.p0), p * (1 - theta_max))
    if not q_lower < p:
        raise CertificateError("internal error: empty q window")
    return ImprovementCertificate(
        hypotheses=hyp, k=k, ln_S=ln_S, theta_max=theta_max, q_lower=q_lower,
        K=2 * _mp(hyp.kappa), N=3 * _mp(hyp.nu),
    )


def alpha_bound(cert: ImprovementCertificate, q, tau: float) -> LogValue:
    """C_alpha(q) * tau in log space; zero at tau = 0."""
    if tau < 0:
        raise CertificateError("tau must be >= 0")
    ln_c = cert.ln_c_alpha(q)
    if tau == 0:
        return LogValue.zero()
    return LogValue(ln_c + _ctx.ln(_mp(tau)))


def propagate_poincare_constants(C_1, lam, D_half):
    """(C_2, C_A, kappa, nu_min) = (6 C_1 D^2, 6 C_2, 3 lam, 6 C_2)."""
    vals = [_as_fraction(v) for v in (C_1, lam, D_half)]
    if all(v is not None for v in vals):
        C_1, lam, D_half = vals
    if not (C_1 > 0 and lam >= 1 and D_half >= 1):
        raise CertificateError("need C_1 > 0, lambda >= 1, D >= 1")
    C_2 = 6 * C_1 * D_half**2
    C_A = 6 * C_2
    return C_2, C_A, 3 * lam, C_A


def propagate_hardy_constants(C_H, kappa_gamma, C_QC):
    """(C_Gamma, kappa, nu_min) = (4 C_H, kappa_Gamma, max(C_QC, 4 C_H))."""
    vals = [_as_fraction(v) for v in (C_H, kappa_gamma, C_QC)]
    if all(v is not None for v in vals):
        C_H, kappa_gamma, C_QC = vals
    if not (C_H > 0 and kappa_gamma > 1 and C_QC >= 1):
        raise CertificateError("need C_H > 0, kappa > 1, C_QC >= 1")
    C_gamma = 4 * C_H
    return C_gamma, kappa_gamma, max(C_QC, C_gamma)


def hypotheses_from_measurements(p0, p, C_H, kappa_gamma, C_QC, C_1, lam, D_half, D10k,
                                 nu: float | None = None) -> HardyHypotheses:
    """Compose both propagations into hypotheses for :func:`improvement_certificate`.

    The curve form and the Poincare form must share kappa and nu; the larger
    kappa and a nu above both minima are used.
    """
    C_gamma, kap_g, nu_g = propagate_hardy_constants(C_H, kappa_gamma, C_QC)
    _, C_A, kap_a, nu_a = propagate_poincare_constants(C_1, lam, D_half)
    kappa = max(kap_g, kap_a)
    nu_min = max(nu_g, nu_a)
    if nu is None:
        # strict inequality nu > nu_min
        nu = nu_min * (Fraction(101, 100) if isinstance(nu_min, Fraction) else 1.01)
    return HardyHypotheses(p0=p0, p=p, C_gamma=C_gamma, C_A=C_A, nu=nu, kappa=kappa, D10k=D10k)


def sample_q(cert: ImprovementCertificate, fractions: Sequence[float]) -> list:
    """q = p - f * window for each f in (0, 1)."""
    return [cert.p - cert.window * mpf(f) for f in fractions]
