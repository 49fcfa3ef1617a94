"""Finite measures on [0,1]: atoms plus density pieces, with integration.

A measure is a list of point atoms and a list of density pieces.  Supported
density families: constant, beta(2-a, a) for a in (0,2), power x^p (1-x)^q,
and user-supplied polynomials.  Atoms on the boundary of an interval count as
inside (closed-interval convention), which makes mass([0,1]) exactly the
total mass.

Integration sums atoms exactly and runs adaptive quadrature on the density
pieces.  Densities with an integrable endpoint singularity x^e, e in (-1,0),
are tamed by the substitution u = x^(1+e) so the quadrature only ever sees a
bounded integrand.  The convention 0^0 = 1 is honored wherever integrands are
evaluated at atom locations 0 and 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as _sci_integrate
from scipy.special import gamma as _gamma_fn

from .errors import ToleranceNotMet

__all__ = [
    "QuadratureConfig",
    "DensityPiece",
    "LambdaMeasure",
    "integrate",
    "integrate_vector",
    "mass",
    "restrict",
]


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_subdivisions: int = 100_000
    rule: str = "gauss_kronrod"

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureConfig()

_SUPPORTED_TAGS = ("constant", "beta", "power", "polynomial")


@dataclass(frozen=True)
class DensityPiece:
    """A density on a subinterval [a,b] of [0,1]."""

    interval: tuple[float, float]
    tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        a, b = self.interval
        if not (0.0 <= a < b <= 1.0):
            raise ValueError(f"bad piece interval {self.interval}")
        if self.tag not in _SUPPORTED_TAGS:
            raise ValueError(f"unknown density tag {self.tag!r}")
        if self.tag == "beta":
            alpha = self.params["alpha"]
            if not (0.0 < alpha < 2.0):
                raise ValueError("beta family needs alpha in (0,2)")
        if self.tag == "power":
            if self.params["p"] <= -1.0 or self.params["q"] <= -1.0:
                raise ValueError("power exponents must exceed -1")

    # -- density evaluation (vectorized) --------------------------------

    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.tag == "constant":
            return np.full_like(x, float(self.params.get("level", 1.0)))
        if self.tag == "beta":
            alpha = self.params["alpha"]
            norm = _gamma_fn(2.0) / (_gamma_fn(2.0 - alpha) * _gamma_fn(alpha))
            with np.errstate(divide="ignore", over="ignore"):
                return norm * x ** (1.0 - alpha) * (1.0 - x) ** (alpha - 1.0)
        if self.tag == "power":
            p, q = self.params["p"], self.params["q"]
            coeff = float(self.params.get("coeff", 1.0))
            with np.errstate(divide="ignore", over="ignore"):
                return coeff * x**p * (1.0 - x) ** q
        # polynomial: coefficients c0 + c1 x + c2 x^2 + ...
        coeffs = self.params["coefficients"]
        return np.polynomial.polynomial.polyval(x, np.asarray(coeffs, dtype=float))

    # Exponent of the (x - 0) factor if this piece touches 0 with a
    # singular density there; 0.0 means regular.  Same for the right end.
    def singular_exponent_left(self) -> float:
        if self.interval[0] == 0.0:
            if self.tag == "beta" and self.params["alpha"] > 1.0:
                return 1.0 - self.params["alpha"]
            if self.tag == "power" and self.params["p"] < 0.0:
                return float(self.params["p"])
        return 0.0

    def singular_exponent_right(self) -> float:
        if self.interval[1] == 1.0:
            if self.tag == "beta" and self.params["alpha"] < 1.0:
                return self.params["alpha"] - 1.0
            if self.tag == "power" and self.params["q"] < 0.0:
                return float(self.params["q"])
        return 0.0

    def clipped(self, lo: float, hi: float) -> "DensityPiece | None":
        a, b = self.interval
        lo, hi = max(a, lo), min(b, hi)
        if lo >= hi:
            return None
        return DensityPiece((lo, hi), self.tag, dict(self.params))

    def to_dict(self) -> dict:
        return {
            "interval": [self.interval[0], self.interval[1]],
            "tag": self.tag,
            "params": dict(self.params),
        }

    @staticmethod
    def from_dict(d: dict) -> "DensityPiece":
        return DensityPiece(tuple(d["interval"]), d["tag"], dict(d.get("params", {})))


class LambdaMeasure:
    """Finite measure on [0,1]: atoms + density pieces.

    total_mass must be positive for measures built directly; restriction may
    produce the zero measure, which is kept but flagged so that downstream
    rate computations can reject it.
    """

    def __init__(self, atoms=(), pieces=(), _allow_zero=False,
                 quadrature: QuadratureConfig = DEFAULT_QUADRATURE):
        atoms = [(float(loc), float(m)) for loc, m in atoms]
        for loc, m in atoms:
            if not (0.0 <= loc <= 1.0):
                raise ValueError(f"atom location {loc} outside [0,1]")
            if m <= 0.0:
                raise ValueError("atom masses must be positive")
        locs = [loc for loc, _ in atoms]
        if len(set(locs)) != len(locs):
            raise ValueError("atom locations must be distinct")
        self.atoms = sorted(atoms)
        self.pieces = list(pieces)
        self.quadrature = quadrature
        piece_mass = 0.0
        for piece in self.pieces:
            val, _ = _integrate_pieces(lambda x: np.ones_like(x), [piece], quadrature)
            if val < 0:
                raise ValueError("density pieces must have nonnegative mass")
            piece_mass += val
        self.total_mass = sum(m for _, m in self.atoms) + piece_mass
        if self.total_mass <= 0.0 and not _allow_zero:
            raise ValueError("measure must have positive total mass")
        self.has_atom_at_zero = any(loc == 0.0 for loc, _ in self.atoms)
        self.has_atom_at_one = any(loc == 1.0 for loc, _ in self.atoms)

    # -- constructors ---------------------------------------------------

    @staticmethod
    def unit_atom(location: float, mass_: float = 1.0) -> "LambdaMeasure":
        return LambdaMeasure(atoms=[(location, mass_)])

    @staticmethod
    def lebesgue(level: float = 1.0) -> "LambdaMeasure":
        return LambdaMeasure(pieces=[DensityPiece((0.0, 1.0), "constant", {"level": level})])

    @staticmethod
    def beta(alpha: float) -> "LambdaMeasure":
        """Beta(2-alpha, alpha) probability measure, alpha in (0,2)."""
        if alpha == 1.0:
            return LambdaMeasure.lebesgue()
        return LambdaMeasure(pieces=[DensityPiece((0.0, 1.0), "beta", {"alpha": alpha})])

    # -- serialization (canonical form, exact round trip) ---------------

    def to_dict(self) -> dict:
        return {
            "atoms": [[loc, m] for loc, m in self.atoms],
            "pieces": [p.to_dict() for p in self.pieces],
        }

    @staticmethod
    def from_dict(d: dict) -> "LambdaMeasure":
        return LambdaMeasure(
            atoms=[tuple(a) for a in d.get("atoms", [])],
            pieces=[DensityPiece.from_dict(p) for p in d.get("pieces", [])],
            _allow_zero=True,
        )

    def atom_mass_at(self, location: float) -> float:
        for loc, m in self.atoms:
            if loc == location:
                return m
        return 0.0

    def __repr__(self):
        return f"LambdaMeasure(atoms={self.atoms!r}, pieces={len(self.pieces)} pieces, total_mass={self.total_mass})"


# ----------------------------------------------------------------------
# quadrature internals
# ----------------------------------------------------------------------

def _quad_scalar(g, lo, hi, cfg: QuadratureConfig):
    val, err = _sci_integrate.quad(
        g, lo, hi, epsabs=cfg.abs_tol, epsrel=cfg.rel_tol,
        limit=min(cfg.max_subdivisions, 10_000),
    )
    if err > max(cfg.abs_tol, cfg.rel_tol * abs(val)) * 50:
        raise ToleranceNotMet(
            f"quadrature error {err:.3e} on [{lo},{hi}] exceeds tolerance",
            value=val, error=err)
    return val, err


def _quad_vector(g, lo, hi, cfg: QuadratureConfig):
    val, err = _sci_integrate.quad_vec(
        g, lo, hi, epsabs=cfg.abs_tol, epsrel=cfg.rel_tol,
        limit=min(cfg.max_subdivisions, 10_000), norm="max",
    )
    if err > max(cfg.abs_tol, cfg.rel_tol * float(np.max(np.abs(val)))) * 50:
        raise ToleranceNotMet(
            f"vector quadrature error {err:.3e} on [{lo},{hi}] exceeds tolerance",
            error=err)
    return val, err


def _integrate_one_piece(f, piece: DensityPiece, cfg: QuadratureConfig, quad):
    """Integrate f(x) * piece.density(x) over the piece's interval.

    Splits at the midpoint when an endpoint is singular and substitutes
    u = (distance to endpoint)^(1+e) there, which cancels the singular
    factor exactly (the transformed integrand is bounded).
    """
    a, b = piece.interval
    e_left = piece.singular_exponent_left()
    e_right = piece.singular_exponent_right()
    mid = 0.5 * (a + b)

    segments = []
    if e_left < 0.0 and e_right < 0.0:
        segments = [(a, mid, e_left, "left"), (mid, b, e_right, "right")]
    elif e_left < 0.0:
        segments = [(a, b, e_left, "left")]
    elif e_right < 0.0:
        segments = [(a, b, e_right, "right")]
    else:
        segments = [(a, b, 0.0, "none")]

    total, total_err = None, 0.0
    for lo, hi, e, side in segments:
        if side == "none":
            val, err = quad(lambda x: f(x) * piece.density(x), lo, hi, cfg)
        elif side == "left":
            s = 1.0 + e          # in (0,1)
            u_hi = (hi - lo) ** s

            def g(u, lo=lo, s=s):
                x = lo + u ** (1.0 / s)
                jac = (1.0 / s) * u ** (1.0 / s - 1.0)
                return f(x) * piece.density(x) * jac

            val, err = quad(g, 0.0, u_hi, cfg)
        else:
            s = 1.0 + e
            u_hi = (hi - lo) ** s

            def g(u, hi=hi, s=s):
                x = hi - u ** (1.0 / s)
                jac = (1.0 / s) * u ** (1.0 / s - 1.0)
                return f(x) * piece.density(x) * jac

            val, err = quad(g, 0.0, u_hi, cfg)
        total = val if total is None else total + val
        total_err += err
    return total, total_err


def _integrate_pieces(f, pieces, cfg: QuadratureConfig, vector=False):
    quad = _quad_vector if vector else _quad_scalar
    total, total_err = (None, 0.0)
    for piece in pieces:
        val, err = _integrate_one_piece(f, piece, cfg, quad)
        total = val if total is None else total + val
        total_err += err
    if total is None:
        total = 0.0
    return total, total_err


# ----------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------

def integrate(integrand, measure_: LambdaMeasure,
              config: QuadratureConfig = DEFAULT_QUADRATURE):
    """Integral of a bounded integrand against the measure.

    Returns (value, error_bound).  Atoms are summed exactly; density pieces
    go through adaptive quadrature.  The integrand must be finite at every
    atom location (with 0^0 = 1 conventions applied by the caller's
    integrand where relevant).
    """
    atom_part = 0.0
    for loc, m in measure_.atoms:
        v = float(integrand(loc))
        if not math.isfinite(v):
            raise ValueError(f"integrand not finite at atom location {loc}")
        atom_part += m * v
    piece_part, err = _integrate_pieces(
        lambda x: np.asarray(integrand(x), dtype=float),
        measure_.pieces, config)
    return atom_part + float(piece_part), err


def integrate_vector(integrand, measure_: LambdaMeasure,
                     config: QuadratureConfig = DEFAULT_QUADRATURE):
    """Like integrate(), for integrands returning a 1-d array per point.

    The integrand receives a scalar x and must return a numpy array of a
    fixed shape.  Used to batch many rate integrals in one adaptive pass.
    """
    atom_part = None
    for loc, m in measure_.atoms:
        v = np.asarray(integrand(loc), dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"integrand not finite at atom location {loc}")
        atom_part = m * v if atom_part is None else atom_part + m * v
    piece_part, err = _integrate_pieces(integrand, measure_.pieces, config,
                                        vector=True)
    if atom_part is None and np.isscalar(piece_part):
        raise ValueError("vector integrand produced scalar output")
    total = piece_part if atom_part is None else atom_part + piece_part
    return np.asarray(total, dtype=float), err


def mass(measure_: LambdaMeasure, interval,
         config: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Measure of a closed subinterval of [0,1]; boundary atoms count."""
    lo, hi = float(interval[0]), float(interval[1])
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"bad interval {interval}")
    total = sum(m for loc, m in measure_.atoms if lo <= loc <= hi)
    if hi > lo:
        clipped = [p for p in (piece.clipped(lo, hi) for piece in measure_.pieces)
                   if p is not None]
        val, _ = _integrate_pieces(lambda x: np.ones_like(x), clipped, config)
        total += float(val)
    return total


def restrict(measure_: LambdaMeasure, a: float) -> LambdaMeasure:
    """Restriction to [0,a]: atoms beyond a dropped, pieces clipped at a."""
    if not (0.0 < a < 1.0):
        raise ValueError("restriction point must lie in (0,1)")
    atoms = [(loc, m) for loc, m in measure_.atoms if loc <= a]
    pieces = [p for p in (piece.clipped(0.0, a) for piece in measure_.pieces)
              if p is not None]
    return LambdaMeasure(atoms=atoms, pieces=pieces, _allow_zero=True,
                         quadrature=measure_.quadrature)
