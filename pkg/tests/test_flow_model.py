import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncdmm.errors import PhysicsError
from ncdmm.flow_model import (
    FluidProps,
    RelPermTable,
    RockProps,
    WellSpec,
    default_relperm,
    equivalent_radius,
    fvf,
    harmonic_perm,
    iface_arithmetic,
    porosity,
    relperm,
    upwind_relperm,
    well_index,
    well_source,
)
from ncdmm.units import DARCY


@pytest.fixture(scope="module")
def table():
    return default_relperm()


class TestRelPerm:
    @pytest.mark.parametrize("sw,expected", [(0.5, (0.25, 0.25)), (0.2, (0.0, 1.0)), (0.275, (0.01735, 0.76735))])
    def test_examples(self, table, sw, expected):
        assert relperm(table, sw) == pytest.approx(expected, abs=1e-12)

    def test_clamped(self, table):
        assert relperm(table, 0.0) == (0.0, 1.0)
        assert relperm(table, 1.0) == (1.0, 0.0)

    def test_monotone_sweep(self, table):
        krw, kro = relperm(table, np.linspace(0.0, 1.0, 2001))
        assert np.all(np.diff(krw) >= 0)
        assert np.all(np.diff(kro) <= 0)

    def test_slopes_match_difference_quotient(self, table):
        sw = np.array([0.21, 0.33, 0.47, 0.79])
        _, _, dkrw, dkro = table.evaluate(sw)
        h = 1e-7
        krw_p, kro_p = relperm(table, sw + h)
        krw_m, kro_m = relperm(table, sw - h)
        np.testing.assert_allclose(dkrw, (krw_p - krw_m) / (2 * h), rtol=1e-6)
        np.testing.assert_allclose(dkro, (kro_p - kro_m) / (2 * h), rtol=1e-6)

    @pytest.mark.parametrize(
        "rows",
        [
            [(0.2, 0.0, 1.0)],
            [(0.2, 0.0, 1.0), (0.2, 1.0, 0.0)],
            [(0.2, 0.1, 1.0), (0.8, 1.0, 0.0)],
            [(0.2, 0.0, 1.0), (0.5, 0.5, 1.2), (0.8, 1.0, 0.0)],
        ],
    )
    def test_invalid_tables(self, rows):
        with pytest.raises(PhysicsError):
            RelPermTable.from_rows(rows)


class TestPressureFunctions:
    def test_fvf_examples(self):
        assert fvf(1.3, 0.0, 40.0, 15.0) == 1.3
        assert fvf(1.0, 3e-3, 15.0, 15.0) == 1.0
        assert fvf(1.0, 3e-3, 25.0, 15.0) == pytest.approx(0.970874, abs=1e-6)

    def test_fvf_unphysical(self):
        with pytest.raises(PhysicsError):
            fvf(1.0, 0.1, 0.0, 15.0)

    def test_porosity_examples(self):
        assert porosity(0.2, 0.0, 30.0, 15.0) == 0.2
        assert porosity(0.2, 1e-4, 20.0, 15.0) == pytest.approx(0.2001)
        assert porosity(0.25, 1e-4, 15.0, 15.0) == 0.25

    def test_porosity_out_of_range(self):
        with pytest.raises(PhysicsError):
            porosity(0.9, 0.1, 20.0, 15.0)

    def test_fluid_derivatives(self):
        fl = FluidProps()
        p = np.array([10.0, 15.0, 22.0])
        B, dB = fl.b_oil(p)
        h = 1e-6
        np.testing.assert_allclose(dB, (fl.b_oil(p + h)[0] - fl.b_oil(p - h)[0]) / (2 * h), rtol=1e-7)

    @pytest.mark.parametrize("kw", [{"mu_o": 0.0}, {"c_w": -1e-4}, {"B_o_ref": 0.0}])
    def test_fluid_validation(self, kw):
        with pytest.raises(PhysicsError):
            FluidProps(**kw)

    @pytest.mark.parametrize("kw", [{"phi_ref": 1.0}, {"c_r": -1.0}, {"k": -5.0}, {"thickness": 0.0}])
    def test_rock_validation(self, kw):
        with pytest.raises(PhysicsError):
            RockProps(**kw)


class TestAveraging:
    @pytest.mark.parametrize("a,b,expected", [(100, 100, 100), (100, 0, 0), (0, 0, 0), (100, 300, 150)])
    def test_harmonic(self, a, b, expected):
        assert harmonic_perm(a, b) == pytest.approx(expected)

    @given(a=st.floats(1e-3, 1e4), b=st.floats(1e-3, 1e4))
    def test_harmonic_below_arithmetic(self, a, b):
        assert harmonic_perm(a, b) <= iface_arithmetic(a, b) * (1 + 1e-12)

    @pytest.mark.parametrize("a,b,expected", [(1, 1, 1), (0.6, 0.6, 0.6), (2, 4, 3)])
    def test_arithmetic(self, a, b, expected):
        assert iface_arithmetic(a, b) == pytest.approx(expected)

    def test_upwind_examples(self):
        i, j = (0.1, 0.9), (0.3, 0.6)
        assert upwind_relperm(10, 12, i, j) is j
        assert upwind_relperm(12, 10, i, j) is i
        assert upwind_relperm(11, 11, i, j) is j

    @given(pi=st.floats(0, 50), pj=st.floats(0, 50))
    def test_upwind_picks_one_input(self, pi, pj):
        i, j = (0.1, 0.9), (0.3, 0.6)
        assert upwind_relperm(pi, pj, i, j) in (i, j)


class TestWellIndex:
    def test_equivalent_radius(self):
        assert equivalent_radius(100.0 * 3.0, 3.0) == pytest.approx(1.9799, abs=1e-4)
        assert equivalent_radius(600.0, 3.0) / equivalent_radius(300.0, 3.0) == pytest.approx(math.sqrt(2))

    def test_log_term_one(self):
        h = 3.0
        r_w = 0.1
        # pick V_bar so that r_e = e * r_w
        V_bar = (math.e * r_w / 0.14) ** 2 * h / 2
        assert well_index(100.0, h, V_bar, r_w) == pytest.approx(DARCY * 2 * math.pi * 100.0 * h, rel=1e-12)

    def test_skin_lowers_index(self):
        assert well_index(100, 3, 300, 0.1, skin=2.0) < well_index(100, 3, 300, 0.1)

    def test_small_volume_rejected(self):
        with pytest.raises(PhysicsError):
            well_index(100.0, 3.0, 0.5, 0.1)


def _eval(spec, p, p_wf, sw, table):
    krw, kro, dkrw, dkro = (float(v) for v in table.evaluate(sw))
    fl = FluidProps()
    Bo, dBo = fl.b_oil(p)
    Bw, dBw = fl.b_water(p)
    return well_source(spec, p, p_wf, 50.0, krw, kro, dkrw, dkro, Bo, Bw, dBo, dBw, fl)


class TestWellSource:
    def test_zero_drawdown(self, table):
        for kind in ("producer", "injector"):
            ev = _eval(WellSpec(0, kind, "bhp", 10.0), 15.0, 15.0, 0.4, table)
            assert ev.q_o == 0.0 and ev.q_w == 0.0

    def test_producer_without_oil_mobility(self, table):
        ev = _eval(WellSpec(0, "producer", "bhp", 5.0), 15.0, 5.0, 0.8, table)
        assert ev.q_o == 0.0
        assert ev.q_w < 0.0

    def test_injector_uses_total_mobility(self, table):
        ev = _eval(WellSpec(0, "injector", "bhp", 25.0), 15.0, 25.0, 0.2, table)
        assert ev.q_o == 0.0
        assert ev.q_w > 0.0

    @given(p=st.floats(5, 30), dd=st.floats(0, 10), sw=st.floats(0.2, 0.8))
    def test_sign_convention(self, p, dd, sw):
        table = default_relperm()
        prod = _eval(WellSpec(0, "producer", "bhp", 1.0), p, p - dd, sw, table)
        inj = _eval(WellSpec(0, "injector", "bhp", 1.0), p, p + dd, sw, table)
        assert prod.q_o <= 0.0 and prod.q_w <= 0.0
        assert inj.q_w >= 0.0

    @pytest.mark.parametrize("kind", ["producer", "injector"])
    def test_derivatives(self, table, kind):
        spec = WellSpec(0, kind, "bhp", 1.0)
        p, pwf, sw, h = 15.0, 12.0 if kind == "producer" else 18.0, 0.43, 1e-6
        ev = _eval(spec, p, pwf, sw, table)
        fd_p = (_eval(spec, p + h, pwf, sw, table).q_w - _eval(spec, p - h, pwf, sw, table).q_w) / (2 * h)
        fd_s = (_eval(spec, p, pwf, sw + h, table).q_w - _eval(spec, p, pwf, sw - h, table).q_w) / (2 * h)
        fd_w = (_eval(spec, p, pwf + h, sw, table).q_w - _eval(spec, p, pwf - h, sw, table).q_w) / (2 * h)
        assert ev.dqw_dp == pytest.approx(fd_p, rel=1e-6)
        assert ev.dqw_ds == pytest.approx(fd_s, rel=1e-6)
        assert ev.dqw_dpwf == pytest.approx(fd_w, rel=1e-6)

    @pytest.mark.parametrize(
        "kw", [{"kind": "observer"}, {"control": "pressure"}, {"r_w": 0.0}, {"control": "rate", "value": 0.0}]
    )
    def test_spec_validation(self, kw):
        base = {"node": 0, "kind": "producer", "control": "rate", "value": 10.0}
        base.update(kw)
        with pytest.raises(PhysicsError):
            WellSpec(**base)

    def test_default_name(self):
        assert WellSpec(12, "injector", "rate", 5.0).name == "I12"
