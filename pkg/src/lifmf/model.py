"""Model parameters and the regime map of the (h, v_r, sigma0, J) space."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

from .errors import IntegerRatio, OutOfRange

INTEGER_RATIO_TOL = 1e-9

# (5 - 2*sqrt(6)) solves J/(1-J)^2 = 1/8
WEAK_COUPLING_FACTOR = 5.0 - 2.0 * math.sqrt(6.0)


@dataclass(frozen=True)
class ModelParams:
    """Jump size ``h``, reset ``v_r``, external rate ``sigma0`` and coupling ``J``.

    Construct through :func:`validate` unless you deliberately want an
    unchecked instance (e.g. ``sigma0 = 0`` for a pure-decay run).
    """

    h: float
    v_r: float
    sigma0: float
    J: float = 0.0
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def ratio(self) -> float:
        """(1 - v_r) / h, the number of jumps from reset to threshold."""
        return (1.0 - self.v_r) / self.h

    @property
    def n_reset_jumps(self) -> int:
        """floor((1 - v_r) / h)."""
        return math.floor(self.ratio + INTEGER_RATIO_TOL * max(1.0, self.ratio))

    def with_coupling(self, J: float) -> "ModelParams":
        return ModelParams(self.h, self.v_r, self.sigma0, J, self.warnings)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["warnings"] = list(self.warnings)
        return d


def is_integer_ratio(h: float, v_r: float, tol: float = INTEGER_RATIO_TOL) -> bool:
    ratio = (1.0 - v_r) / h
    return abs(ratio - round(ratio)) <= tol * max(1.0, abs(ratio))


def validate(h, v_r, sigma0, J=0.0, *, allow_integer_ratio: bool = False) -> ModelParams:
    """Check raw inputs and return a :class:`ModelParams`.

    Raises :class:`OutOfRange` for any violated bound and
    :class:`IntegerRatio` when (1 - v_r)/h is an integer (relative
    tolerance 1e-9). With ``allow_integer_ratio`` the latter is downgraded to
    an entry in ``warnings``; the solvers stay well defined in that case but
    the threshold can then be reached exactly from the reset by jumps alone.
    """
    try:
        h, v_r, sigma0, J = float(h), float(v_r), float(sigma0), float(J)
    except (TypeError, ValueError) as exc:
        raise OutOfRange(f"non-numeric parameter: {exc}") from None
    for name, value in (("h", h), ("v_r", v_r), ("sigma0", sigma0), ("J", J)):
        if not math.isfinite(value):
            raise OutOfRange(f"{name} must be finite, got {value}")
    if not 0.0 < h < 1.0:
        raise OutOfRange(f"h must lie in (0, 1), got {h}")
    if not 0.0 < v_r < 1.0:
        raise OutOfRange(f"v_r must lie in (0, 1), got {v_r}")
    if not sigma0 > 0.0:
        raise OutOfRange(f"sigma0 must be positive, got {sigma0}")
    if not J >= 0.0:
        raise OutOfRange(f"J must be nonnegative, got {J}")

    warnings = []
    if is_integer_ratio(h, v_r):
        msg = f"(1 - v_r)/h = {(1.0 - v_r) / h:.12g} is an integer"
        if not allow_integer_ratio:
            raise IntegerRatio(msg)
        warnings.append("integer_ratio: " + msg)
    if h >= 0.5:
        warnings.append("large_jump: h >= 1/2, constants with 1/(1-2h) factors are void")
    return ModelParams(h, v_r, sigma0, J, tuple(warnings))


@dataclass(frozen=True)
class RegimeReport:
    global_wellposed: bool
    blowup_all_data: bool
    exists_one_ss: bool
    exists_two_ss: bool
    unique_stable_ss: bool
    thresholds: dict

    def to_dict(self) -> dict:
        return asdict(self)


def uniqueness_bound(h: float, sigma0: float) -> float:
    return WEAK_COUPLING_FACTOR * (h / 4.0) ** (sigma0 + 1.0)


def uniqueness_threshold(params: ModelParams) -> float:
    """Coupling below which the steady state is unique and globally stable."""
    return uniqueness_bound(params.h, params.sigma0)


def classify(params: ModelParams) -> RegimeReport:
    """Evaluate every regime inequality; strict inequalities fail on equality."""
    h, v_r, s0, J = params.h, params.v_r, params.sigma0, params.J
    blowup_J = 1.0 + (1.0 - v_r) / h
    ss_J = 1.0 + params.n_reset_jumps
    two_ss_sigma0 = (1.0 - h) / (4.0 * J) if J > 0 else math.inf
    unique_J = uniqueness_bound(h, s0)
    thresholds = {
        "wellposed_J_max": 1.0,
        "blowup_J_min": blowup_J,
        "blowup_sigma0_min": 1.0 / h,
        "one_ss_J_max": ss_J,
        "two_ss_J_min": ss_J,
        "two_ss_sigma0_max": two_ss_sigma0,
        "unique_stable_J_max": unique_J,
    }
    return RegimeReport(
        global_wellposed=J < 1.0,
        blowup_all_data=J >= blowup_J and h * s0 > 1.0,
        exists_one_ss=J < ss_J,
        exists_two_ss=J > ss_J and s0 < two_ss_sigma0,
        unique_stable_ss=J < unique_J,
        thresholds=thresholds,
    )
