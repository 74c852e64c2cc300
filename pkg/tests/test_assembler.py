import io

import numpy as np
import pytest

from ncdmm.assembler import (
    BoundaryCondition,
    BoundaryConditionSet,
    FlowSystem,
    TransmissibilitySet,
    dump_transmissibilities,
)
from ncdmm.errors import PhysicsError
from ncdmm.flow_model import FluidProps, RelPermTable, RockProps, WellSpec, default_relperm
from ncdmm.pipeline import cartesian_cloud, discretize, flow_system, nearest_node
from ncdmm.pointcloud import NodeKind
from ncdmm.solver import NewtonConfig, newton_solve


def _on(axis, value):
    return lambda x, y: abs((x, y)[axis] - value) < 1e-9


@pytest.fixture(scope="module")
def rock():
    return RockProps(k=np.random.default_rng(1).uniform(50, 150, 25), thickness=3.0)


@pytest.fixture(scope="module")
def disc(rock):
    return discretize(cartesian_cloud(40, 40, 10, 3.0), rock, "w2", radius=15)


def mixed_system(disc, rock):
    cloud = disc.cloud
    bcs = BoundaryConditionSet.from_selector(
        cloud,
        [
            (_on(1, 0.0), BoundaryCondition("neumann", flux=0.01)),
            (_on(0, 40.0), BoundaryCondition("dirichlet", p=14.0, sw=0.5)),
            (_on(1, 40.0), BoundaryCondition("robin", alpha=0.1, beta=1.0, gamma=1.5)),
        ],
    )
    wells = [
        WellSpec(nearest_node(cloud, (10, 20)), "injector", "rate", 5.0),
        WellSpec(nearest_node(cloud, (30, 20)), "producer", "bhp", 13.0),
        WellSpec(nearest_node(cloud, (20, 30)), "producer", "rate", 3.0),
    ]
    return flow_system(disc, FluidProps(), rock, default_relperm(), wells, bcs)


def random_state(fs, seed):
    rng = np.random.default_rng(seed)
    x0 = fs.pack(fs.initial_state(15.0, 0.2))
    x = x0.copy()
    x[0 : 2 * fs.n : 2] += rng.uniform(-1, 1, fs.n)
    x[1 : 2 * fs.n : 2] = rng.uniform(0.21, 0.79, fs.n)
    x[fs.off_v :] += rng.uniform(-1, 1, fs.size - fs.off_v)
    return x, x0


class TestTransmissibilities:
    def test_positive_and_symmetric_interior(self, disc):
        tr = disc.trans
        assert np.all(tr.T_geo > 0)
        interior = disc.cloud.ids_of(NodeKind.INTERIOR)
        both = np.isin(tr.pairs, interior).all(axis=1)
        assert both.any()
        np.testing.assert_allclose(tr.asymmetry[both], 0.0, atol=1e-6)

    def test_zero_permeability_is_a_barrier(self, disc):
        k = np.full(disc.cloud.n_real, 100.0)
        k[12] = 0.0
        tr = disc.trans.with_permeability(k)
        touches = (tr.pairs == 12).any(axis=1)
        assert np.all(tr.T[touches] == 0.0)
        assert np.all(tr.T[~touches] > 0.0)

    def test_dump(self, disc):
        buf = io.StringIO()
        dump_transmissibilities(disc.trans, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# i j T asymmetry_ratio"
        assert len(lines) == len(disc.trans.pairs) + 1
        i, j, t, a = lines[1].split()
        assert (int(i), int(j)) == tuple(disc.trans.pairs[0])
        assert float(t) == disc.trans.T[0]


class TestResidual:
    def test_equilibrium_is_zero(self, disc, rock):
        fs = flow_system(disc, FluidProps(), rock, default_relperm())
        x = fs.pack(fs.initial_state(17.0, 0.35))
        for dt in (1e-3, 1.0, 50.0):
            np.testing.assert_array_equal(fs.residual(x, x, dt), 0.0)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_jacobian_matches_finite_differences(self, disc, rock, seed):
        fs = mixed_system(disc, rock)
        assert fs.n_virtual > 0
        x, x0 = random_state(fs, seed)
        _, J = fs.assemble(x, x0, 0.7)
        Jf = fs.fd_jacobian(x, x0, 0.7, 1e-6)
        err = np.abs(J.toarray() - Jf).max() / np.abs(Jf).max()
        assert err < 1e-5

    def test_dirichlet_rows(self, disc, rock):
        fs = mixed_system(disc, rock)
        x, x0 = random_state(fs, 2)
        right = [i for i in fs.dirichlet]
        assert right
        for i in right:
            x[2 * i], x[2 * i + 1] = 14.0, 0.5
        R = fs.residual(x, x0, 0.5)
        assert np.all(R[2 * np.array(right)] == 0.0)
        assert np.all(R[2 * np.array(right) + 1] == 0.0)
        x[2 * right[0]] += 0.25
        assert fs.residual(x, x0, 0.5)[2 * right[0]] == pytest.approx(0.25)

    def test_normal_derivative_of_linear_field(self, disc, rock):
        cloud = disc.cloud
        bcs = BoundaryConditionSet.from_selector(cloud, [(_on(0, 0.0), BoundaryCondition("neumann", flux=0.0))])
        fs = flow_system(disc, FluidProps(), rock, default_relperm(), (), bcs)
        d = fs.deriv
        p_all = np.concatenate([cloud.xy[: cloud.n_real, 0], cloud.xy[d.virtual_nodes, 0]])
        rows = d.rows @ p_all
        for k, v in enumerate(d.virtual_nodes):
            par = int(cloud.parents[v])
            y = cloud.xy[par, 1]
            if abs(cloud.xy[par, 0]) < 1e-9 and 0 < y < 40 and np.allclose(cloud.normals[v], (-1, 0)):
                assert rows[k] == pytest.approx(-1.0, abs=1e-10)
        g = d.grad @ p_all
        mid = [i for i in bcs.derivative_nodes if 0 < cloud.xy[i, 1] < 40]
        np.testing.assert_allclose(g[mid] / 10.0, -1.0, atol=1e-10)

    def test_zero_neumann_row_vanishes_on_reflected_field(self, disc, rock):
        cloud = disc.cloud
        bcs = BoundaryConditionSet.from_selector(cloud, [(_on(0, 0.0), BoundaryCondition("neumann", flux=0.0))])
        fs = flow_system(disc, FluidProps(), rock, default_relperm(), (), bcs)
        d = fs.deriv
        # a field even about x = 0 has zero normal derivative there
        f = lambda x: 12.0 + 0.01 * x**2
        p_all = np.concatenate([f(cloud.xy[: cloud.n_real, 0]), f(cloud.xy[d.virtual_nodes, 0])])
        mid = [i for i in bcs.derivative_nodes if 0 < cloud.xy[i, 1] < 40]
        np.testing.assert_allclose((d.grad @ p_all)[mid], 0.0, atol=1e-10)

    def test_zero_transmissibility_decouples(self, disc, rock):
        k = np.full(disc.cloud.n_real, 100.0)
        k[12] = 0.0
        r2 = RockProps(k=k, thickness=3.0)
        fs = FlowSystem(disc.cv.V_bar, disc.trans.with_permeability(k), FluidProps(), r2, default_relperm())
        x = fs.pack(fs.initial_state(15.0, 0.3))
        base = fs.residual(x, x, 1.0)
        x[2 * 12] += 3.0
        x[2 * 12 + 1] = 0.7
        moved = fs.residual(x, x.copy(), 1.0)
        others = np.setdiff1d(np.arange(2 * fs.n), [24, 25])
        np.testing.assert_array_equal(moved[others], base[others])

    def test_global_balance_equals_extraction(self, disc, rock):
        prod = WellSpec(nearest_node(disc.cloud, (20, 20)), "producer", "rate", 4.0)
        fs = flow_system(disc, FluidProps(), rock, default_relperm(), [prod])
        old = fs.initial_state(15.0, 0.3)
        res = newton_solve(fs, old, 1.0, NewtonConfig())
        x, x0 = fs.pack(res.state), fs.pack(old)
        R = fs.residual(x, x0, 1.0)
        change = (fs.masses(res.state) - fs.masses(old)).sum() / 1.0
        q = fs.well_rates(res.state).sum()
        # pair fluxes telescope: the node rows sum to wells minus storage change
        assert R[: 2 * fs.n].sum() == pytest.approx(q - change, abs=1e-9)
        assert q == pytest.approx(-4.0, rel=1e-8)
        assert change == pytest.approx(-4.0, rel=1e-6)

    def test_rate_producer_without_mobility(self, disc, rock):
        table = RelPermTable.from_rows([(0.2, 0.0, 1.0), (0.5, 0.0, 0.0), (0.8, 1.0, 0.0)])
        w = WellSpec(nearest_node(disc.cloud, (20, 20)), "producer", "rate", 4.0)
        fs = flow_system(disc, FluidProps(), rock, table, [w])
        x = fs.pack(fs.initial_state(15.0, 0.5))
        with pytest.raises(PhysicsError, match="zero total mobility"):
            fs.residual(x, x, 1.0)

    def test_non_finite_state(self, disc, rock):
        fs = flow_system(disc, FluidProps(), rock, default_relperm())
        x = fs.pack(fs.initial_state(15.0, 0.3))
        x[6] = np.nan
        with pytest.raises(PhysicsError, match="non-finite"):
            fs.residual(x, x.copy(), 1.0)

    def test_bad_dt(self, disc, rock):
        fs = flow_system(disc, FluidProps(), rock, default_relperm())
        x = fs.pack(fs.initial_state(15.0, 0.3))
        with pytest.raises(PhysicsError):
            fs.residual(x, x, 0.0)


class TestLayout:
    def test_pack_unpack_round_trip(self, disc, rock):
        fs = mixed_system(disc, rock)
        x, _ = random_state(fs, 3)
        assert np.array_equal(fs.pack(fs.unpack(x, 1.5)), x)
        assert fs.size == 2 * fs.n + fs.n_virtual + 3

    def test_describe_row(self, disc, rock):
        fs = mixed_system(disc, rock)
        assert fs.describe_row(7) == "node 3, water"
        assert fs.describe_row(fs.off_v).startswith("virtual node")
        assert fs.describe_row(fs.size - 1) == f"well {fs.wells[-1].name}"

    def test_unknown_condition(self):
        with pytest.raises(ValueError):
            BoundaryCondition("periodic")

    def test_single_tank_without_pairs(self):
        tr = TransmissibilitySet(np.zeros((0, 2), dtype=np.int64), np.zeros(0), np.zeros(0), 3.0, np.zeros(0))
        fs = FlowSystem([100.0], tr, FluidProps(), RockProps(), default_relperm(),
                        [WellSpec(0, "producer", "bhp", 10.0)])
        x = fs.pack(fs.initial_state(15.0, 0.2))
        R, J = fs.assemble(x, x, 1.0)
        assert R[0] < 0 and R[1] == 0.0
        assert J.shape == (3, 3)
