"""Problem model and the determining-equation oracle.

An ``SdeProblem`` is dx = f(x,t) dt + S(t) x dw on x > 0 with S(t) not
identically zero.  A ``SymmetryCandidate`` (R, phi) represents the vector
field phi(x,t,w) d/dx + R w d/dw.  ``verify`` checks the two determining
equations

    phi_t + f phi_x - phi f_x + (1/2) Lap(phi) = 0
    phi_w + sigma phi_x - phi sigma_x = R sigma,     sigma = S(t) x

with Lap the Ito Laplacian Lap(psi) = psi_ww + 2 sigma psi_xw
+ sigma^2 psi_xx, symbolically where the canonical form settles it and
numerically on a sampled box otherwise.  This module is the source of
truth the classification table is validated against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expr import (
    Expr, Constant, X, HALF, MINUS_ONE, ZERO,
    DomainError, contains_var, differentiate, evaluate, format_expr,
    make_product, make_sum, simplify, symbolic_zero_state,
)

#: numeric sample box; stays clear of the x -> 0 log singularity while
#: spanning two decades (population-dynamics scale: x = O(1))
SAMPLE_BOX = {"x": (0.1, 10.0), "t": (0.0, 2.0), "w": (-2.0, 2.0)}
DEFAULT_TOL = 1e-9
DEFAULT_SAMPLES = 100
DEFAULT_SEED = 20260809


class SdeError(Exception):
    pass


class InvalidProblem(SdeError):
    pass


class InvalidCandidate(SdeError):
    pass


class ResidualDomainError(SdeError):
    """A residual could not be evaluated anywhere in the sample box."""


def _numeric_spot_nonzero(e: Expr, bindings, var="t", lo=0.0, hi=2.0) -> bool:
    ts = np.linspace(lo, hi, 17)
    for tv in ts:
        try:
            if abs(evaluate(e, x=1.0, t=tv, w=0.0, bindings=bindings)) > 1e-14:
                return True
        except Exception:
            continue
    return False


@dataclass(frozen=True)
class SdeProblem:
    """dx = f(x,t) dt + S(t) x dw with named parameter bindings; x > 0."""

    f: Expr
    S: Expr
    bindings: dict = field(default_factory=dict)

    def __post_init__(self):
        f = simplify(self.f)
        S = simplify(self.S)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "S", S)
        if contains_var(f, "w"):
            raise InvalidProblem("drift f must not depend on w")
        if contains_var(S, "x") or contains_var(S, "w"):
            raise InvalidProblem("noise factor S must depend on t only")
        if symbolic_zero_state(S) == "zero":
            raise InvalidProblem("S(t) must not vanish identically")
        if symbolic_zero_state(S) == "undecided" and self.bindings \
                and not _numeric_spot_nonzero(S, self.bindings):
            raise InvalidProblem("S(t) evaluates to zero across [0, 2]")

    @property
    def sigma(self) -> Expr:
        return simplify(make_product([self.S, X]))


@dataclass(frozen=True)
class SymmetryCandidate:
    """Vector field phi d/dx + R w d/dw; R = 0 is a standard (possibly
    random) symmetry, R != 0 a proper W-symmetry."""

    R: float
    phi: Expr

    def __post_init__(self):
        phi = simplify(self.phi)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "R", float(self.R))
        if phi == ZERO:
            raise InvalidCandidate("phi must not be identically zero")


@dataclass
class ResidualReport:
    res1: Expr
    res2: Expr
    symbolic_zero1: str
    symbolic_zero2: str
    numeric_max1: float
    numeric_max2: float
    seed: int
    samples: int
    tol: float
    passed: bool
    skipped_points: int = 0
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "res1": format_expr(self.res1),
            "res2": format_expr(self.res2),
            "symbolic_zero1": self.symbolic_zero1,
            "symbolic_zero2": self.symbolic_zero2,
            "numeric_max1": self.numeric_max1,
            "numeric_max2": self.numeric_max2,
            "seed": self.seed,
            "samples": self.samples,
            "tol": self.tol,
            "sample_box": {k: list(v) for k, v in SAMPLE_BOX.items()},
            "verdict": self.verdict,
            "skipped_points": self.skipped_points,
            "notes": list(self.notes),
        }


def ito_laplacian(psi: Expr, problem: SdeProblem) -> Expr:
    """Lap(psi) = psi_ww + 2 sigma psi_xw + sigma^2 psi_xx, sigma = S(t) x."""
    sigma = problem.sigma
    psi_x = differentiate(psi, "x")
    psi_w = differentiate(psi, "w")
    return simplify(make_sum([
        differentiate(psi_w, "w"),
        make_product([Constant(2), sigma, differentiate(psi_x, "w")]),
        make_product([sigma, sigma, differentiate(psi_x, "x")]),
    ]))


def residual_deq1(problem: SdeProblem, cand: SymmetryCandidate) -> Expr:
    """phi_t + f phi_x - phi f_x + (1/2) Lap(phi); zero iff the first
    determining equation holds."""
    phi, f = cand.phi, problem.f
    return simplify(make_sum([
        differentiate(phi, "t"),
        make_product([f, differentiate(phi, "x")]),
        make_product([MINUS_ONE, phi, differentiate(f, "x")]),
        make_product([HALF, ito_laplacian(phi, problem)]),
    ]))


def residual_deq2(problem: SdeProblem, cand: SymmetryCandidate) -> Expr:
    """phi_w + sigma phi_x - phi sigma_x - R sigma with sigma_x = S(t)."""
    phi = cand.phi
    sigma = problem.sigma
    return simplify(make_sum([
        differentiate(phi, "w"),
        make_product([sigma, differentiate(phi, "x")]),
        make_product([MINUS_ONE, phi, problem.S]),
        make_product([Constant(-cand.R), sigma]),
    ]))


def _numeric_max(res: Expr, bindings, rng, samples: int):
    """Max |res| over the sample box, skipping domain-invalid points.

    Raises ResidualDomainError when no valid point can be found."""
    if isinstance(res, Constant):
        return abs(float(res.value)), 0
    mx = 0.0
    valid = 0
    skipped = 0
    attempts = 0
    max_attempts = 60 * samples
    while valid < samples and attempts < max_attempts:
        attempts += 1
        xv = rng.uniform(*SAMPLE_BOX["x"])
        tv = rng.uniform(*SAMPLE_BOX["t"])
        wv = rng.uniform(*SAMPLE_BOX["w"])
        try:
            v = evaluate(res, x=xv, t=tv, w=wv, bindings=bindings)
        except DomainError:
            skipped += 1
            continue
        valid += 1
        av = abs(float(v))
        if av > mx:
            mx = av
    if valid == 0:
        raise ResidualDomainError(
            "residual could not be evaluated anywhere in the sample box "
            f"(x in {SAMPLE_BOX['x']}, t in {SAMPLE_BOX['t']}, w in {SAMPLE_BOX['w']})")
    return mx, skipped


def verify(problem: SdeProblem, cand: SymmetryCandidate,
           samples: int = DEFAULT_SAMPLES, tol: float = DEFAULT_TOL,
           seed: int = DEFAULT_SEED) -> ResidualReport:
    """Check both determining equations for (problem, cand).

    Each residual passes when its canonical form is literally zero or its
    absolute value stays below tol at every sampled point; the report
    carries the tri-state symbolic verdicts and the numeric maxima.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    r1 = residual_deq1(problem, cand)
    r2 = residual_deq2(problem, cand)
    sz1 = symbolic_zero_state(r1)
    sz2 = symbolic_zero_state(r2)
    rng = np.random.default_rng(seed)
    skipped = 0
    if sz1 == "zero":
        m1 = 0.0
    else:
        m1, sk = _numeric_max(r1, problem.bindings, rng, samples)
        skipped += sk
    if sz2 == "zero":
        m2 = 0.0
    else:
        m2, sk = _numeric_max(r2, problem.bindings, rng, samples)
        skipped += sk
    ok1 = sz1 == "zero" or (sz1 != "nonzero" and m1 <= tol)
    ok2 = sz2 == "zero" or (sz2 != "nonzero" and m2 <= tol)
    return ResidualReport(
        res1=r1, res2=r2, symbolic_zero1=sz1, symbolic_zero2=sz2,
        numeric_max1=m1, numeric_max2=m2, seed=seed, samples=samples,
        tol=tol, passed=bool(ok1 and ok2), skipped_points=skipped,
    )
