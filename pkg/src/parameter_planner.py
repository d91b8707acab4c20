"""
Parameter Planner: exponent feasibility and concrete step parameters

σ ≈ μ^α, κ = μ^β and λ ≈ μ^γ make every defect estimate a power of μ; the
step closes when the two leading powers decay,

    α + 1 + (d−1)/p′ − (d−1)/p̃ + β/s′ − β/s̃ < 0
   −α − 1 − (d−1)/p′ + γ + β/s < 0

and, for transport-diffusion, two more from ‖θ‖_{L^{s̄}C^{m̄}} and
‖R_diffusion‖_{L¹}. Each inequality is linear in α and β, so windows are
solved in exact rationals whenever the indices are rational.
"""

import logging
import math
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import brentq

from errors import AssumptionViolation, CapacityError, InfeasibleError
from spectral_core import Grid


logger = logging.getLogger(__name__)

Number = Union[Fraction, float]

MAX_DENOMINATOR = 10**6
COMPARISON_SLACK = 1e-12
ALPHA_CAP = 2.0
GAMMA_CAP = 0.05
N_HEADROOM = 2
STANDING_ASSUMPTION = "1 ≤ s̃ < s′"
INTEGRABILITY_CONDITION = "1/p + s̃′/(sp̃) > 1 + 1/(d−1)"


# ============================================================
# Exact exponent arithmetic
# ============================================================

def exact(x: Union[Number, int, str]) -> Number:
    """Snap a Lebesgue index to a nearby rational, keeping ∞ and irrational floats as floats."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, str)) and not isinstance(x, bool):
        return Fraction(x)
    value = float(x)
    if math.isinf(value):
        return value
    snapped = Fraction(value).limit_denominator(MAX_DENOMINATOR)
    return snapped if abs(float(snapped) - value) <= COMPARISON_SLACK else value


def inv(x: Number) -> Number:
    """1/x with 1/∞ = 0."""
    if isinstance(x, float) and math.isinf(x):
        return Fraction(0)
    return 1 / x


def conj(x: Number) -> Number:
    """Hölder conjugate with 1′ = ∞ and ∞′ = 1."""
    if isinstance(x, float) and math.isinf(x):
        return Fraction(1)
    if x == 1:
        return math.inf
    return x / (x - 1)


def negative_part(a: Number) -> Number:
    """a⁻ = max{0, −a}."""
    return max(Fraction(0) if isinstance(a, Fraction) else 0.0, -a)


def _positive(x: Number) -> bool:
    if isinstance(x, Fraction):
        return x > 0
    return x > COMPARISON_SLACK


# ============================================================
# Reports and parameter sets
# ============================================================

class AssumptionMargin(BaseModel):
    model_config = ConfigDict(frozen=True)

    holds: bool
    margin: float
    exact: bool


class FeasibilityReport(BaseModel):
    """Exponent windows for one index tuple; windows are None exactly when infeasible."""

    model_config = ConfigDict(frozen=True)

    d: int
    s: float
    p: float
    s_tilde: float
    p_tilde: float
    s_bar: Optional[float] = None
    m_bar: Optional[int] = None
    k: Optional[int] = None
    feasible: bool
    margin: float
    alpha_window: Optional[tuple[float, float]] = None
    alpha: Optional[float] = None
    alpha_capped: bool = False
    beta_window: Optional[tuple[float, float]] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None
    slacks: dict[str, float] = Field(default_factory=dict)
    binding_constraints: list[str] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)

    @property
    def diffusion(self) -> bool:
        return self.k is not None


class ParameterSet(BaseModel):
    """Indices, exponents and the concrete integers of one step."""

    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=2, le=3)
    s: float = Field(ge=1.0)
    p: float = Field(ge=1.0)
    s_tilde: float = Field(ge=1.0)
    p_tilde: float = Field(ge=1.0)
    s_bar: Optional[float] = None
    m_bar: Optional[int] = None
    k: Optional[int] = None
    alpha: float = Field(gt=0.0)
    beta: float = Field(gt=0.0)
    gamma: float = Field(gt=0.0)
    mu: float = Field(ge=1.0)
    sigma: int = Field(ge=1)
    lam: int = Field(ge=1)
    kappa: float = Field(ge=1.0)
    nu: float = Field(gt=0.0, le=1.0)
    N: int = Field(ge=0)
    M: float = Field(default=1.0, gt=0.0)
    eta: Optional[float] = None
    delta: Optional[float] = None
    eps: Optional[float] = None
    flow_budget_met: bool = True
    mu_requested: Optional[float] = None

    @model_validator(mode="after")
    def _standing_assumption(self) -> "ParameterSet":
        if not self.s_tilde < float(conj(exact(self.s))) - COMPARISON_SLACK:
            raise ValueError(f"standing assumption {STANDING_ASSUMPTION} violated (s̃={self.s_tilde}, s={self.s})")
        n_charts = round(1.0 / self.nu)
        if abs(n_charts * self.nu - 1.0) > 1e-9:
            raise ValueError(f"1/ν must be an integer (ν={self.nu})")
        return self

    @property
    def s_conj(self) -> float:
        return float(conj(exact(self.s)))

    @property
    def p_conj(self) -> float:
        return float(conj(exact(self.p)))

    @property
    def n_charts(self) -> int:
        return round(1.0 / self.nu)


# ============================================================
# Assumption and exponent windows
# ============================================================

def _indices(d: int, s: Number, p: Number, s_tilde: Number, p_tilde: Number) -> tuple[Number, ...]:
    if d < 2:
        raise AssumptionViolation("d ≥ 2", f"d={d}")
    values = tuple(exact(x) for x in (s, p, s_tilde, p_tilde))
    for name, value in zip(("s", "p", "s̃", "p̃"), values):
        if value < 1:
            raise AssumptionViolation(f"{name} ≥ 1", f"{name}={float(value):g}")
    for name, value in zip(("s", "p", "p̃"), (values[0], values[1], values[3])):
        if isinstance(value, float) and math.isinf(value):
            raise AssumptionViolation(f"{name} < ∞")
    s_, _, st, _ = values
    if not st < conj(s_):
        raise AssumptionViolation(STANDING_ASSUMPTION, f"s̃={float(st):g}, s′={float(conj(s_)):g}")
    return values


def check_assumption(d: int, s: Number, p: Number, s_tilde: Number, p_tilde: Number) -> AssumptionMargin:
    """Margin 1/p + s̃′/(sp̃) − 1 − 1/(d−1); s̃ = 1 gives s̃′ = ∞ and an infinite margin."""
    s_, p_, st, pt = _indices(d, s, p, s_tilde, p_tilde)
    st_conj = conj(st)
    if isinstance(st_conj, float) and math.isinf(st_conj):
        return AssumptionMargin(holds=True, margin=math.inf, exact=True)
    margin = inv(p_) + st_conj / (s_ * pt) - 1 - Fraction(1, d - 1)
    return AssumptionMargin(holds=_positive(margin), margin=float(margin), exact=isinstance(margin, Fraction))


def boundary_margin(d: int, p: Number, p_tilde: Number) -> Number:
    """The s̃ → s′ limit of the margin, 1/p + 1/p̃ − 1 − 1/(d−1)."""
    return inv(exact(p)) + inv(exact(p_tilde)) - 1 - Fraction(1, d - 1)


def _alpha_offset(d: int, p: Number) -> Number:
    return 1 + (d - 1) * inv(conj(p))


def _beta_low(alpha: Number, d: int, s: Number, p: Number, s_tilde: Number, p_tilde: Number) -> Number:
    return (alpha + _alpha_offset(d, p) - (d - 1) * inv(p_tilde)) / (inv(s_tilde) - inv(conj(s)))


def _pick_gamma(beta_top: Number, beta_floor: Number, s: Number) -> Number:
    """γ = min(GAMMA_CAP, half the β-window slack mapped back through β < (α + ... − γ)s)."""
    room = (beta_top - beta_floor) / s / 2
    cap = Fraction(GAMMA_CAP).limit_denominator(100)
    return min(cap, room)


def _base_slacks(d: int, s: Number, p: Number, s_tilde: Number, p_tilde: Number,
                 alpha: Number, beta: Number, gamma: Number) -> dict[str, float]:
    """Negated left sides of the two leading inequalities; positive means satisfied."""
    sobolev = alpha + _alpha_offset(d, p) - (d - 1) * inv(p_tilde) + beta * inv(conj(s)) - beta * inv(s_tilde)
    transport = -alpha - _alpha_offset(d, p) + gamma + beta * inv(s)
    return {"w_p Sobolev decay": float(-sobolev), "R_trans decay": float(-transport)}


def _binding(slacks: dict[str, float]) -> list[str]:
    ordered = sorted(slacks.items(), key=lambda kv: kv[1])
    return [name for name, _ in ordered]


def solve_exponents(d: int, s: Number, p: Number, s_tilde: Number, p_tilde: Number) -> FeasibilityReport:
    """α window (0, (d−1)s̃′/(sp̃) − 1 − (d−1)/p′), midpoint α, then γ and midpoint β."""
    s_, p_, st, pt = _indices(d, s, p, s_tilde, p_tilde)
    assumption = check_assumption(d, s_, p_, st, pt)
    base = dict(d=d, s=float(s_), p=float(p_), s_tilde=float(st), p_tilde=float(pt))
    if not assumption.holds:
        logger.info(f"[PLAN] infeasible: margin {assumption.margin:.4g} ≤ 0")
        return FeasibilityReport(
            **base, feasible=False, margin=assumption.margin,
            binding_constraints=[INTEGRABILITY_CONDITION],
        )

    st_conj = conj(st)
    notes = []
    if isinstance(st_conj, float) and math.isinf(st_conj):
        alpha_top: Number = math.inf
        alpha: Number = Fraction(ALPHA_CAP).limit_denominator()
        capped = True
        notes.append(f"α window unbounded (s̃ = 1); α capped at {ALPHA_CAP:g} by policy")
    else:
        alpha_top = (d - 1) * st_conj / (s_ * pt) - _alpha_offset(d, p_)
        assert _positive(alpha_top), "α window empty although the assumption holds"
        alpha = alpha_top / 2
        capped = False

    top0 = (alpha + _alpha_offset(d, p_)) * s_
    floor = max(_beta_low(alpha, d, s_, p_, st, pt), Fraction(0))
    gamma = _pick_gamma(top0, floor, s_)
    top = (alpha + _alpha_offset(d, p_) - gamma) * s_
    assert _positive(top - floor), "β window empty after choosing γ"
    beta = (floor + top) / 2

    slacks = _base_slacks(d, s_, p_, st, pt, alpha, beta, gamma)
    report = FeasibilityReport(
        **base,
        feasible=True,
        margin=assumption.margin,
        alpha_window=(0.0, float(alpha_top)),
        alpha=float(alpha),
        alpha_capped=capped,
        beta_window=(float(floor), float(top)),
        beta=float(beta),
        gamma=float(gamma),
        slacks=slacks,
        binding_constraints=_binding(slacks),
        notes=notes,
    )
    logger.info(f"[PLAN] ✓ Feasible: α={report.alpha:.4g}, β={report.beta:.4g}, γ={report.gamma:.4g}")
    return report


# ============================================================
# Transport-diffusion system
# ============================================================

def _diffusion_preconditions(d: int, s: Number, p: Number, st: Number, s_bar: Number, m_bar: int, k: int) -> None:
    if m_bar < 0 or k < 1:
        raise AssumptionViolation("m̄ ∈ ℕ, k ≥ 1", f"m̄={m_bar}, k={k}")
    if not 1 <= s_bar < s:
        raise AssumptionViolation("1 ≤ s̄ < s", f"s̄={float(s_bar):g}, s={float(s):g}")
    s_conj = conj(s)
    pc_inv = inv(conj(p))
    ratio_k = s / s_conj if not (isinstance(s_conj, float) and math.isinf(s_conj)) else Fraction(0)
    if st == 1:
        m_limit = s / s_bar - 1
        k_limit = ratio_k + 1
        tag = "s̃ = 1"
    else:
        m_limit = s / s_bar - 1 - (d - 1) * negative_part(s / s_bar * pc_inv - 1)
        k_limit = ratio_k + 1 - (d - 1) * pc_inv * negative_part(ratio_k - 1)
        tag = "s̃ > 1"
    if not m_bar < m_limit:
        raise AssumptionViolation(f"m̄ < {float(m_limit):.4g} ({tag})", f"m̄={m_bar}")
    if not k < k_limit:
        raise AssumptionViolation(f"k < {float(k_limit):.4g} ({tag})", f"k={k}")


def _diffusion_constraints(d: int, s: Number, p: Number, st: Number, pt: Number,
                           s_bar: Number, m_bar: int, k: int) -> dict[str, tuple[Number, Number]]:
    """β₄⁰ − β_i = c·α + e for i = 1, 2, 3; feasibility needs every one positive."""
    s_conj = conj(s)
    offset = _alpha_offset(d, p)
    top = (s, (1 + (d - 1) * inv(conj(p))) * s)  # β₄⁰ = (α + offset)s
    scale1 = 1 / (inv(s_bar) - inv(s))
    beta1 = (m_bar * scale1, (m_bar + (d - 1) * inv(p)) * scale1)
    scale2 = 1 / (inv(st) - inv(s_conj))
    beta2 = (scale2, (offset - (d - 1) * inv(pt)) * scale2)
    beta3 = ((k - 1) * s_conj, ((k - 1) - (d - 1) * inv(conj(p))) * s_conj)
    return {
        "θ in L^s̄C^m̄": (top[0] - beta1[0], top[1] - beta1[1]),
        "w_p Sobolev decay": (top[0] - beta2[0], top[1] - beta2[1]),
        "R_diffusion decay": (top[0] - beta3[0], top[1] - beta3[1]),
    }


def _diffusion_betas(alpha: Number, d: int, s: Number, p: Number, st: Number, pt: Number,
                     s_bar: Number, m_bar: int, k: int) -> tuple[Number, Number, Number, Number]:
    """(β₁, β₂, β₃, β₄⁰) at a given α."""
    s_conj = conj(s)
    a1 = alpha + 1
    beta1 = (a1 * m_bar + (d - 1) * inv(p)) / (inv(s_bar) - inv(s))
    beta2 = _beta_low(alpha, d, s, p, st, pt)
    beta3 = (a1 * (k - 1) - (d - 1) * inv(conj(p))) * s_conj
    beta4 = (alpha + _alpha_offset(d, p)) * s
    return beta1, beta2, beta3, beta4


def solve_exponents_diffusion(
    d: int, s: Number, p: Number, s_tilde: Number, p_tilde: Number, s_bar: Number, m_bar: int, k: int
) -> FeasibilityReport:
    """α window where β₄⁰ > max{β₁, β₂, β₃}; s̃ = 1 gives a half-line whose start is found by bisection."""
    s_, p_, st, pt = _indices(d, s, p, s_tilde, p_tilde)
    sb = exact(s_bar)
    _diffusion_preconditions(d, s_, p_, st, sb, m_bar, k)
    assumption = check_assumption(d, s_, p_, st, pt)
    base = dict(
        d=d, s=float(s_), p=float(p_), s_tilde=float(st), p_tilde=float(pt),
        s_bar=float(sb), m_bar=m_bar, k=k,
    )
    if not assumption.holds:
        return FeasibilityReport(
            **base, feasible=False, margin=assumption.margin, binding_constraints=[INTEGRABILITY_CONDITION]
        )

    lower: Number = Fraction(0)
    upper: Number = math.inf
    constraints = _diffusion_constraints(d, s_, p_, st, pt, sb, m_bar, k)
    for name, (c, e) in constraints.items():
        if c == 0 or (not isinstance(c, Fraction) and abs(c) <= COMPARISON_SLACK):
            if not _positive(e):
                return FeasibilityReport(**base, feasible=False, margin=assumption.margin, binding_constraints=[name])
        elif c > 0:
            lower = max(lower, -e / c)
        else:
            upper = min(upper, -e / c)

    notes = []
    capped = False
    if isinstance(upper, float) and math.isinf(upper):
        # piecewise-linear gap β₄⁰ − max β_i; its root is the smallest admissible α
        def gap(a: float) -> float:
            b1, b2, b3, b4 = _diffusion_betas(a, d, s_, p_, st, pt, sb, m_bar, k)
            return float(b4) - max(float(b1), float(b2), float(b3), 0.0)

        if gap(0.0) > 0:
            alpha_min = 0.0
        else:
            hi = 1.0
            while gap(hi) <= 0:
                hi *= 2.0
                if hi > 1e12:
                    return FeasibilityReport(**base, feasible=False, margin=assumption.margin,
                                             binding_constraints=list(constraints))
            alpha_min = float(brentq(gap, 0.0, hi, xtol=1e-14))
        alpha: Number = exact(max(ALPHA_CAP, alpha_min + 1.0))
        capped = True
        notes.append(f"α sufficiently large: minimal α = {alpha_min:.6g} by bisection; chose {float(alpha):g}")
        lower = Fraction(0) if alpha_min == 0.0 else exact(alpha_min)
    else:
        if not _positive(upper - lower):
            return FeasibilityReport(**base, feasible=False, margin=assumption.margin,
                                     binding_constraints=_binding({n: 0.0 for n in constraints}))
        alpha = (lower + upper) / 2

    b1, b2, b3, b4 = _diffusion_betas(alpha, d, s_, p_, st, pt, sb, m_bar, k)
    floor = max(b1, b2, b3, Fraction(0))
    gamma = _pick_gamma(b4, floor, s_)
    top = b4 - gamma * s_
    beta = (floor + top) / 2

    slacks = _diffusion_slacks(d, s_, p_, st, pt, sb, m_bar, k, alpha, beta, gamma)
    report = FeasibilityReport(
        **base,
        feasible=True,
        margin=assumption.margin,
        alpha_window=(float(lower), float(upper)),
        alpha=float(alpha),
        alpha_capped=capped,
        beta_window=(float(floor), float(top)),
        beta=float(beta),
        gamma=float(gamma),
        slacks=slacks,
        binding_constraints=_binding(slacks),
        notes=notes,
    )
    logger.info(f"[PLAN] ✓ Diffusion system feasible: α={report.alpha:.4g}, β={report.beta:.4g}, γ={report.gamma:.4g}")
    return report


def _diffusion_slacks(d: int, s: Number, p: Number, st: Number, pt: Number, s_bar: Number,
                      m_bar: int, k: int, alpha: Number, beta: Number, gamma: Number) -> dict[str, float]:
    """Negated left sides of the four diffusion inequalities."""
    slacks = _base_slacks(d, s, p, st, pt, alpha, beta, gamma)
    regularity = (alpha + 1) * m_bar + (d - 1) * inv(p) + beta * inv(s) - beta * inv(s_bar)
    diffusion = (alpha + 1) * (k - 1) - (d - 1) * inv(conj(p)) - beta * inv(conj(s))
    slacks["θ in L^s̄C^m̄"] = float(-regularity)
    slacks["R_diffusion decay"] = float(-diffusion)
    return slacks


# ============================================================
# Concrete parameters
# ============================================================

def flow_closeness_budget(grad_u_sup: float, defect_l1: float, delta: float) -> float:
    """Largest ν keeping ‖(∇Φ_i)⁻¹ − Id‖·‖R‖_{L¹} ≲ δ/4, from ‖(∇Φ_i)⁻¹ − Id‖ ≈ ν‖∇u‖_∞/2."""
    if grad_u_sup <= 0.0 or defect_l1 <= 0.0:
        return 1.0
    return min(1.0, delta / (2.0 * grad_u_sup * defect_l1))


def mean_test_order(report: FeasibilityReport) -> int:
    """Smallest N with κ^{1/s}σ^{−N}μ^{(d−1)/p−(d−1)/2} decaying in μ, plus headroom."""
    d = report.d
    exponent = report.beta / report.s + (d - 1) / report.p - (d - 1) / 2.0
    needed = max(0, math.ceil(exponent / report.alpha)) if report.alpha else 0
    return needed + N_HEADROOM


def _guards(mu: float, report: FeasibilityReport, grid: Grid) -> tuple[int, int, float, Optional[str]]:
    sigma = max(1, round(mu**report.alpha))
    lam = max(2, round(mu**report.gamma))
    kappa = mu**report.beta
    if sigma * mu > grid.n_x / 8 + 1e-12:
        return sigma, lam, kappa, f"spatial guard σμ ≤ n_x/8 ({sigma * mu:g} > {grid.n_x / 8:g})"
    kappa_eff = max(kappa, 2.0 * grid.d)
    if lam * kappa_eff > grid.n_t / 8 + 1e-12:
        return sigma, lam, kappa, f"temporal guard λκ ≤ n_t/8 ({lam * kappa_eff:g} > {grid.n_t / 8:g})"
    return sigma, lam, kappa, None


def concretize(
    report: FeasibilityReport, mu: float, grid: Grid, nu_max: Optional[float] = None
) -> ParameterSet:
    """Integers σ = round(μ^α), λ = max(2, round(μ^γ)) and κ = μ^β that fit the grid.

    μ steps down through the integers until both Nyquist guards hold.
    ν = 1/D with D the smallest integer meeting nu_max, capped by the number
    of charts whose overlaps the time grid resolves.
    """
    if not report.feasible:
        raise InfeasibleError(f"no exponent window for {report.binding_constraints}")
    if mu < 2:
        raise ValueError(f"μ must be >= 2 (got {mu})")
    if grid.d != report.d:
        raise ValueError(f"grid dimension {grid.d} differs from planned d={report.d}")

    candidates = [float(mu)] + [float(m) for m in range(math.ceil(mu) - 1, 1, -1) if m < mu]
    chosen = None
    binding = None
    for candidate in candidates:
        sigma, lam, kappa, binding = _guards(candidate, report, grid)
        if binding is None:
            chosen = (candidate, sigma, lam, kappa)
            break
    if chosen is None:
        raise CapacityError(binding or "grid", f"no μ in [2, {mu:g}] fits n_x={grid.n_x}, n_t={grid.n_t}")
    mu_used, sigma, lam, kappa = chosen
    if mu_used != mu:
        logger.warning(f"[PLAN] μ reduced from {mu:g} to {mu_used:g} to fit the grid")

    max_charts = math.floor(1.0 / (2.0 * grid.dt * math.sqrt(lam)))
    if max_charts < 1:
        raise CapacityError("chart overlap", f"λ={lam} leaves no resolvable overlap at n_t={grid.n_t}")
    wanted = 1 if nu_max is None else max(1, math.ceil(1.0 / nu_max - 1e-12))
    flow_budget_met = wanted <= max_charts
    if not flow_budget_met:
        logger.warning(f"[PLAN] flow budget wants {wanted} charts, time grid resolves {max_charts}")
    n_charts = min(wanted, max_charts)

    params = ParameterSet(
        d=report.d,
        s=report.s,
        p=report.p,
        s_tilde=report.s_tilde,
        p_tilde=report.p_tilde,
        s_bar=report.s_bar,
        m_bar=report.m_bar,
        k=report.k,
        alpha=report.alpha,
        beta=report.beta,
        gamma=report.gamma,
        mu=mu_used,
        sigma=sigma,
        lam=lam,
        kappa=kappa,
        nu=1.0 / n_charts,
        N=mean_test_order(report),
        flow_budget_met=flow_budget_met,
        mu_requested=float(mu),
    )
    logger.info(
        f"[PLAN] ✓ μ={mu_used:g} → σ={sigma}, κ={kappa:.4g}, λ={lam}, D={n_charts}, N={params.N}"
    )
    return params


# ============================================================
# Feasibility atlas
# ============================================================

def feasibility_atlas(
    d: int,
    s_values: Sequence[float],
    p_values: Sequence[float],
    s_tilde_values: Sequence[float],
    p_tilde_values: Sequence[float],
) -> pd.DataFrame:
    """Classify every index tuple of the grid; columns d, s, p, s_tilde, p_tilde, status, margin, alpha_upper."""
    rows = []
    for s in s_values:
        for p in p_values:
            for st in s_tilde_values:
                for pt in p_tilde_values:
                    row = {"d": d, "s": s, "p": p, "s_tilde": st, "p_tilde": pt}
                    try:
                        report = solve_exponents(d, s, p, st, pt)
                    except AssumptionViolation as e:
                        row.update(status="violation", margin=np.nan, alpha_upper=np.nan, detail=e.condition)
                    else:
                        row.update(
                            status="feasible" if report.feasible else "infeasible",
                            margin=report.margin,
                            alpha_upper=report.alpha_window[1] if report.alpha_window else np.nan,
                            detail="",
                        )
                    rows.append(row)
    table = pd.DataFrame(rows)
    logger.info(f"[PLAN] Atlas: {int((table['status'] == 'feasible').sum())}/{len(table)} feasible")
    return table
