"""
Additive Butcher tableau pairs for ark_toolkit.

An IMEX pair couples an explicit tableau (strictly lower triangular) with a
diagonally implicit one sharing the same weights. ``verify_tableau_order``
evaluates the additive order conditions, including the coupling terms that
mix the two tableaus.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .errors import InvalidTableau

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ButcherPair:
    """Explicit/implicit tableau pair with embedded weights."""
    name: str
    explicit: np.ndarray
    implicit: np.ndarray
    b: np.ndarray
    bhat: np.ndarray
    c_explicit: np.ndarray
    c_implicit: np.ndarray
    order: int
    embedded_order: int

    @property
    def stages(self) -> int:
        return self.b.shape[0]

    @property
    def gamma(self) -> float:
        """Implicit diagonal coefficient of the last stage."""
        return float(self.implicit[-1, -1])

    def validate(self) -> None:
        """
        Check structure and row sums.

        Raises:
            InvalidTableau: If the pair is malformed
        """
        s = self.stages
        for label, array, shape in (
            ("explicit", self.explicit, (s, s)),
            ("implicit", self.implicit, (s, s)),
            ("bhat", self.bhat, (s,)),
            ("c_explicit", self.c_explicit, (s,)),
            ("c_implicit", self.c_implicit, (s,)),
        ):
            if array.shape != shape:
                raise InvalidTableau(f"{self.name}: {label} has shape {array.shape}, expected {shape}")
            if not np.all(np.isfinite(array)):
                raise InvalidTableau(f"{self.name}: {label} has non-finite entries")
        if np.any(np.triu(self.explicit) != 0.0):
            raise InvalidTableau(f"{self.name}: explicit tableau is not strictly lower triangular")
        if np.any(np.triu(self.implicit, k=1) != 0.0):
            raise InvalidTableau(f"{self.name}: implicit tableau has entries above the diagonal")
        diagonal = np.diag(self.implicit)
        nonzero = diagonal[diagonal != 0.0]
        if nonzero.size and np.any(nonzero != nonzero[0]):
            raise InvalidTableau(f"{self.name}: implicit diagonal is not constant")
        for label, tableau, c in (("explicit", self.explicit, self.c_explicit),
                                  ("implicit", self.implicit, self.c_implicit)):
            if np.max(np.abs(tableau.sum(axis=1) - c)) > ROW_SUM_TOLERANCE:
                raise InvalidTableau(f"{self.name}: {label} row sums differ from c")

    def with_weights(self, b) -> "ButcherPair":
        """Copy of the pair with different solution weights (for experiments)."""
        return ButcherPair(
            name=f"{self.name}-modified", explicit=self.explicit, implicit=self.implicit,
            b=np.asarray(b, dtype=np.float64), bhat=self.bhat, c_explicit=self.c_explicit,
            c_implicit=self.c_implicit, order=self.order, embedded_order=self.embedded_order,
        )


def ark324() -> ButcherPair:
    """Four-stage third-order ARK3(2)4L[2]SA pair with second-order embedding."""
    gamma = 1767732205903.0 / 4055673282236.0
    c = np.array([0.0, 1767732205903.0 / 2027836641118.0, 3.0 / 5.0, 1.0])
    b = np.array([
        1471266399579.0 / 7840856788654.0,
        -4482444167858.0 / 7529755066697.0,
        11266239266428.0 / 11593286722821.0,
        gamma,
    ])
    bhat = np.array([
        2756255671327.0 / 12835298489170.0,
        -10771552573575.0 / 22201958757719.0,
        9247589265047.0 / 10645013368117.0,
        2193209047091.0 / 5459859503100.0,
    ])
    explicit = np.zeros((4, 4))
    explicit[1, 0] = c[1]
    explicit[2, 0] = 5535828885825.0 / 10492691773637.0
    explicit[2, 1] = 788022342437.0 / 10882634858940.0
    explicit[3, 0] = 6485989280629.0 / 16251701735622.0
    explicit[3, 1] = -4246266847089.0 / 9704473918619.0
    explicit[3, 2] = 10755448449292.0 / 10357097424841.0

    implicit = np.zeros((4, 4))
    implicit[1, 0] = gamma
    implicit[1, 1] = gamma
    implicit[2, 0] = 2746238789719.0 / 10658868560708.0
    implicit[2, 1] = -640167445237.0 / 6845629431997.0
    implicit[2, 2] = gamma
    implicit[3, :3] = b[:3]
    implicit[3, 3] = gamma
    return ButcherPair(
        name="ARK3(2)4L[2]SA", explicit=explicit, implicit=implicit, b=b, bhat=bhat,
        c_explicit=c, c_implicit=c.copy(), order=3, embedded_order=2,
    )


def euler_pair() -> ButcherPair:
    """Forward Euler paired with backward Euler; the embedding equals the method."""
    return ButcherPair(
        name="Euler", explicit=np.zeros((1, 1)), implicit=np.ones((1, 1)),
        b=np.ones(1), bhat=np.ones(1), c_explicit=np.zeros(1), c_implicit=np.ones(1),
        order=1, embedded_order=1,
    )


_TABLEAUS = {
    "ark324": ark324,
    "euler": euler_pair,
}


def get_tableau(name: str) -> ButcherPair:
    """
    Look up a tableau pair by name.

    Raises:
        ValueError: If name is unknown
    """
    if name not in _TABLEAUS:
        raise ValueError(f"Unknown tableau: {name}. Available: {', '.join(_TABLEAUS)}")
    return _TABLEAUS[name]()


@dataclass
class OrderReport:
    """Residuals of the additive order conditions."""
    name: str
    claimed_order: int
    achieved_order: int = 0
    residuals: Dict[str, float] = field(default_factory=dict)
    embedded_residuals: Dict[str, float] = field(default_factory=dict)
    violations: List[str] = field(default_factory=list)
    tolerance: float = 1e-12

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_rows(self) -> List[Dict[str, object]]:
        rows = [{"condition": k, "residual": v, "weights": "b"} for k, v in self.residuals.items()]
        rows.extend({"condition": k, "residual": v, "weights": "bhat"} for k, v in self.embedded_residuals.items())
        return rows


def _conditions(weights: np.ndarray, pair: ButcherPair, max_order: int) -> Dict[int, Dict[str, float]]:
    tableaus = {"E": (pair.explicit, pair.c_explicit), "I": (pair.implicit, pair.c_implicit)}
    by_order: Dict[int, Dict[str, float]] = {1: {"sum(b)": weights.sum() - 1.0}}
    if max_order >= 2:
        by_order[2] = {
            f"b.c{x}": weights @ tableaus[x][1] - 0.5 for x in tableaus
        }
    if max_order >= 3:
        third: Dict[str, float] = {}
        for x, y in itertools.product(tableaus, repeat=2):
            if x <= y:
                third[f"b.(c{x}*c{y})"] = weights @ (tableaus[x][1] * tableaus[y][1]) - 1.0 / 3.0
            third[f"b.A{x}.c{y}"] = weights @ tableaus[x][0] @ tableaus[y][1] - 1.0 / 6.0
        by_order[3] = third
    return by_order


def verify_tableau_order(pair: ButcherPair, tolerance: float = 1e-12) -> OrderReport:
    """
    Evaluate the additive order conditions through order min(claimed, 3).

    The achieved order is the highest order whose conditions, and those of
    every lower order, hold within ``tolerance``. Violations list conditions
    up to the claimed order that fail.

    Args:
        pair: Tableau pair
        tolerance: Absolute residual tolerance

    Returns:
        OrderReport
    """
    max_order = min(pair.order, 3)
    report = OrderReport(name=pair.name, claimed_order=pair.order, tolerance=tolerance)
    by_order = _conditions(pair.b, pair, 3)
    for order in sorted(by_order):
        conditions = by_order[order]
        report.residuals.update(conditions)
        satisfied = all(abs(r) <= tolerance for r in conditions.values())
        if satisfied and report.achieved_order == order - 1:
            report.achieved_order = order
        if order <= max_order:
            report.violations.extend(name for name, r in conditions.items() if abs(r) > tolerance)

    embedded_order = min(pair.embedded_order, 3)
    for order, conditions in _conditions(pair.bhat, pair, embedded_order).items():
        report.embedded_residuals.update(conditions)
        report.violations.extend(f"embedded {name}" for name, r in conditions.items() if abs(r) > tolerance)

    logger.debug(f"Tableau {pair.name}: achieved order {report.achieved_order}, {len(report.violations)} violations")
    return report
