import dataclasses

import numpy as np
import pytest

from ark_toolkit.butcher import ark324, euler_pair, get_tableau, verify_tableau_order
from ark_toolkit.errors import InvalidTableau


class TestButcherPair:
    """Test suite for tableau structure checks."""

    def test_ark324_is_well_formed(self):
        """The shipped pair passes validation."""
        pair = ark324()
        pair.validate()
        assert pair.stages == 4
        assert pair.gamma == pytest.approx(0.4358665215084, rel=1e-12)
        np.testing.assert_allclose(pair.implicit[-1], pair.b, rtol=0, atol=0)

    def test_lookup(self):
        """Pairs are looked up by name; unknown names are rejected."""
        assert get_tableau("euler").order == 1
        with pytest.raises(ValueError, match="Unknown tableau"):
            get_tableau("rk4")

    def test_explicit_must_be_strictly_lower(self):
        """A diagonal entry in the explicit tableau is rejected."""
        pair = ark324()
        explicit = pair.explicit.copy()
        explicit[2, 2] = 0.1
        with pytest.raises(InvalidTableau, match="strictly lower"):
            dataclasses.replace(pair, explicit=explicit).validate()

    def test_implicit_diagonal_constant(self):
        """Non-constant implicit diagonals are rejected."""
        pair = ark324()
        implicit = pair.implicit.copy()
        implicit[2, 2] *= 2.0
        with pytest.raises(InvalidTableau):
            dataclasses.replace(pair, implicit=implicit).validate()

    def test_row_sums(self):
        """Row sums must reproduce the abscissae."""
        pair = ark324()
        with pytest.raises(InvalidTableau, match="row sums"):
            dataclasses.replace(pair, c_explicit=pair.c_explicit + 0.01).validate()

    def test_shape_mismatch(self):
        """Weights of the wrong length are rejected."""
        pair = ark324()
        with pytest.raises(InvalidTableau, match="shape"):
            dataclasses.replace(pair, bhat=np.ones(3)).validate()


class TestOrderConditions:
    """Test suite for the additive order-condition check."""

    @pytest.mark.parametrize("factory,order", [
        (ark324, 3),
        (euler_pair, 1),
    ])
    def test_claimed_order_holds(self, factory, order):
        """Every shipped pair reaches its claimed order."""
        report = verify_tableau_order(factory())
        assert report.ok, report.violations
        assert report.achieved_order >= order

    def test_ark324_coupling_conditions(self):
        """Third-order coupling conditions between the tableaus vanish."""
        report = verify_tableau_order(ark324())
        assert report.achieved_order == 3
        assert abs(report.residuals["b.AE.cI"]) < 1e-12
        assert abs(report.residuals["b.AI.cE"]) < 1e-12

    def test_perturbed_weights_detected(self):
        """Breaking the weights shows up as violations and a lower order."""
        pair = ark324()
        broken = pair.with_weights(pair.b + np.array([1e-3, -1e-3, 0.0, 0.0]))
        report = verify_tableau_order(broken)
        assert not report.ok
        assert report.achieved_order < 3
        assert any(name.startswith("b.") for name in report.violations)

    def test_rows(self):
        """Rows list both weight vectors."""
        rows = verify_tableau_order(ark324()).to_rows()
        assert {row["weights"] for row in rows} == {"b", "bhat"}
        assert all(set(row) == {"condition", "residual", "weights"} for row in rows)
