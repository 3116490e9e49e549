"""Tests for the zonal robust SCED: LP builders, duals, transfer limits, envelope gradients."""

import numpy as np
import pytest


class TestZonalSystem:
    def test_duplicate_zone_ids(self):
        """Zone ids must be unique."""
        from reservesets.errors import BadParams
        from reservesets.sced import Generator, ZonalSystem, Zone

        with pytest.raises(BadParams, match="Duplicate"):
            ZonalSystem((Zone(1, 10.0), Zone(1, 5.0)), (Generator(1, 0, 100, 1, 1),), np.eye(2))

    def test_unknown_generator_zone(self):
        """Generators must sit in a declared zone."""
        from reservesets.errors import BadParams
        from reservesets.sced import Generator, ZonalSystem, Zone

        with pytest.raises(BadParams, match="unknown zone"):
            ZonalSystem((Zone(1, 10.0),), (Generator(2, 0, 100, 1, 1),), np.eye(1))

    def test_capacity_below_load(self):
        """Total capacity must cover total load."""
        from reservesets.errors import BadParams
        from reservesets.sced import Generator, ZonalSystem, Zone

        with pytest.raises(BadParams, match="capacity"):
            ZonalSystem((Zone(1, 200.0),), (Generator(1, 0, 100, 1, 1),), np.eye(1))

    def test_allocation_rows_match_zones(self):
        """The allocation matrix has one row per zone."""
        from reservesets.errors import BadParams
        from reservesets.sced import Generator, ZonalSystem, Zone

        with pytest.raises(BadParams, match="Allocation"):
            ZonalSystem((Zone(1, 10.0),), (Generator(1, 0, 100, 1, 1),), np.eye(2))

    def test_zone_members(self, transfer_toy):
        """zone_members is the zone-by-generator incidence matrix."""
        system, _ = transfer_toy
        assert np.array_equal(system.zone_members(), np.eye(2))

    def test_json_round_trip(self, tmp_path, default_system):
        """save_system/load_system preserves every field."""
        from reservesets.sced import load_system, save_system

        path = tmp_path / "system.json"
        save_system(default_system, path)
        back = load_system(path)

        assert back.to_json() == default_system.to_json()


class TestRequirements:
    def test_identity_exposure(self, one_zone):
        """L = I, rho = 1, A_z = e1 gives R = 1."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import reserve_requirement

        system = one_zone(d=2)
        assert reserve_requirement(CholeskyShape(np.eye(2)), 1.0, system, 1) == pytest.approx(1.0)

    def test_vanishes_with_radius(self, one_zone):
        """The requirement is linear in rho and tends to zero."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import reserve_requirement

        system = one_zone(d=2)
        assert reserve_requirement(CholeskyShape(np.eye(2)), 1e-12, system, 1) == pytest.approx(0.0, abs=1e-11)

    def test_requirement_is_support(self, default_system):
        """R_z equals the support function in direction A_z."""
        from reservesets.geometry import support
        from reservesets.sced import requirements
        from reservesets.selftest import random_shape

        L = random_shape(np.random.default_rng(0), default_system.dim)
        req = requirements(L, 2.5, default_system)
        for k, row in enumerate(default_system.allocation):
            assert req[k] == pytest.approx(support(L, 2.5, row))

    def test_zero_exposure(self):
        """Exposures below the direction tolerance are exact zeros."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import Generator, ZonalSystem, Zone, exposure_norms

        system = ZonalSystem((Zone(1, 1.0),), (Generator(1, 0, 10, 1, 1),), np.zeros((1, 2)))
        assert exposure_norms(CholeskyShape(np.eye(2)), system).tolist() == [0.0]


class TestDecoupled:
    def test_hand_example(self, one_zone):
        """Load 50, R = 10 on one generator: g = 50, r = 10, cost 510, mu = 1."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import solve_sced

        sol = solve_sced(one_zone(), CholeskyShape(np.eye(1)), 10.0)

        assert sol.optimal
        assert sol.dispatch[0] == pytest.approx(50.0)
        assert sol.reserve[0] == pytest.approx(10.0)
        assert sol.objective == pytest.approx(510.0)
        assert sol.reserve_duals[0] == pytest.approx(1.0)
        assert sol.transfer_duals[0] == 0.0

    def test_no_requirement(self):
        """Zero exposure means no reserve is bought and mu = 0."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import Generator, ZonalSystem, Zone, solve_sced

        system = ZonalSystem((Zone(1, 50.0),), (Generator(1, 0, 100, 10, 1),), np.zeros((1, 1)))
        sol = solve_sced(system, CholeskyShape(np.eye(1)), 10.0)

        assert sol.reserve[0] == pytest.approx(0.0)
        assert sol.reserve_duals[0] == 0.0

    def test_infeasible(self, one_zone):
        """Load 50 plus 10 MW reserve cannot fit a 55 MW unit."""
        from reservesets.geometry import CholeskyShape
        from reservesets.lp import LpStatus
        from reservesets.sced import solve_sced

        sol = solve_sced(one_zone(g_max=55.0), CholeskyShape(np.eye(1)), 10.0)
        assert sol.status is LpStatus.INFEASIBLE

    def test_row_tags(self, default_system):
        """The decoupled LP tags one reserve row per zone and no transfer rows."""
        from reservesets.geometry import CholeskyShape
        from reservesets.lp import TagKind
        from reservesets.sced import build_decoupled

        p = build_decoupled(default_system, CholeskyShape(np.eye(15)), 2.0)

        assert sorted(p.rows_tagged(TagKind.RESERVE)) == list(range(1, 11))
        assert p.rows_tagged(TagKind.TRANSFER_UPPER) == {}

    def test_cost_decomposition(self, default_system):
        """Energy plus reserve cost equals the objective."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import cost_decomposition, solve_sced

        sol = solve_sced(default_system, CholeskyShape(np.eye(15)), 20.0)
        energy, reserve = cost_decomposition(default_system, sol)
        assert energy + reserve == pytest.approx(sol.objective, abs=1e-6)

    def test_cost_nondecreasing_in_radius(self, default_system):
        """Larger radii can only raise the dispatch cost."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import solve_sced

        L = CholeskyShape(np.eye(15))
        costs = [solve_sced(default_system, L, rho).objective for rho in (5.0, 10.0, 20.0, 40.0)]
        assert all(b >= a - 1e-9 for a, b in zip(costs, costs[1:], strict=False))


class TestCoupled:
    def test_transfer_rows_for_tight_zones_only(self, transfer_toy):
        """Each tight zone adds an upper and a lower transfer row after the reserve rows."""
        from reservesets.geometry import CholeskyShape
        from reservesets.lp import TagKind
        from reservesets.sced import build_coupled

        system, tl = transfer_toy
        p = build_coupled(system, CholeskyShape(np.eye(2)), 2.0, tl)

        assert p.rows_tagged(TagKind.TRANSFER_UPPER) == {1: 4}
        assert p.rows_tagged(TagKind.TRANSFER_LOWER) == {1: 5}
        # 100 + 50 - 2 and 100 - 50 - 2
        assert p.ub_rhs[4:].tolist() == [148.0, 48.0]

    def test_slack_limits_match_decoupled(self, default_system):
        """Very large transfer limits leave the solution unchanged."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import TransferLimits, solve_sced

        L = CholeskyShape(np.eye(15))
        tl = TransferLimits({z: 1e6 for z in default_system.zone_ids}, frozenset(default_system.zone_ids))
        dec = solve_sced(default_system, L, 10.0)
        cou = solve_sced(default_system, L, 10.0, tl)

        assert cou.objective == pytest.approx(dec.objective, abs=1e-8)
        assert np.all(cou.transfer_duals == 0.0)

    def test_limit_below_margin_infeasible(self, one_zone):
        """T < rho ||L^T A_z|| makes the two transfer rows contradictory."""
        from reservesets.geometry import CholeskyShape
        from reservesets.lp import LpStatus
        from reservesets.sced import TransferLimits, solve_sced

        tl = TransferLimits({1: 5.0}, frozenset({1}))
        sol = solve_sced(one_zone(), CholeskyShape(np.eye(1)), 10.0, tl)
        assert sol.status is LpStatus.INFEASIBLE

    def test_binding_transfer_raises_cost(self, transfer_toy):
        """Capping the cheap zone's export forces expensive local generation."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import solve_sced, zone_net_export

        system, tl = transfer_toy
        L = CholeskyShape(np.eye(2))
        dec = solve_sced(system, L, 2.0)
        cou = solve_sced(system, L, 2.0, tl)

        assert dec.objective == pytest.approx(2010.0)
        assert cou.objective > dec.objective
        assert zone_net_export(system, cou)[0] == pytest.approx(100.0 - 2.0)
        assert cou.transfer_duals[0] > 0.0
        assert cou.transfer_duals[1] == 0.0

    def test_coupled_never_cheaper(self, default_system):
        """Adding transfer rows can only raise the objective."""
        from reservesets.sced import compute_transfer_limits, solve_sced
        from reservesets.selftest import random_shape

        rng = np.random.default_rng(1)
        for _ in range(3):
            L = random_shape(rng, 15)
            tl = compute_transfer_limits(default_system, L, 10.0, {1, 2, 3}, 1.1, 1.5)
            coupled = solve_sced(default_system, L, 10.0, tl).objective
            assert coupled >= solve_sced(default_system, L, 10.0).objective - 1e-9

    def test_transfer_limits_json(self):
        """Transfer limits survive a JSON round trip with integer zone keys."""
        from reservesets.sced import TransferLimits

        tl = TransferLimits({1: 10.5, 4: 3.0}, frozenset({4}))
        assert TransferLimits.from_json(tl.to_json()) == tl

    def test_missing_tight_limit(self):
        """Every tight zone needs a limit."""
        from reservesets.errors import BadParams
        from reservesets.sced import TransferLimits

        with pytest.raises(BadParams, match="missing"):
            TransferLimits({1: 10.0}, frozenset({2}))


class TestTransferLimits:
    def test_unit_multiplier_keeps_base_feasible(self, default_system):
        """With alpha = 1 everywhere the base dispatch is feasible for the coupled problem."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import compute_transfer_limits, solve_sced

        L = CholeskyShape(np.eye(15))
        tl = compute_transfer_limits(default_system, L, 10.0, default_system.zone_ids, 1.0, 1.0)
        cou = solve_sced(default_system, L, 10.0, tl)

        assert cou.optimal
        assert cou.objective == pytest.approx(solve_sced(default_system, L, 10.0).objective, abs=1e-6)

    def test_multipliers(self, default_system):
        """Tight zones get alpha_tight times the base headroom, others alpha_loose."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import compute_transfer_limits

        L = CholeskyShape(np.eye(15))
        tight = compute_transfer_limits(default_system, L, 10.0, {1}, 0.9, 1.5)
        unit = compute_transfer_limits(default_system, L, 10.0, set(), 1.0, 1.0)

        assert tight.limits[1] == pytest.approx(0.9 * unit.limits[1])
        assert tight.limits[2] == pytest.approx(1.5 * unit.limits[2])
        assert tight.tight_zones == frozenset({1})

    def test_base_infeasible(self, one_zone):
        """An infeasible base solve cannot set limits."""
        from reservesets.errors import BaseInfeasible
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import compute_transfer_limits

        with pytest.raises(BaseInfeasible):
            compute_transfer_limits(one_zone(g_max=55.0), CholeskyShape(np.eye(1)), 10.0, {1})

    def test_select_tight_zones(self, default_system):
        """The k zones with the highest reserve prices are chosen."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import select_tight_zones, solve_sced

        sol = solve_sced(default_system, CholeskyShape(np.eye(15)), 10.0)
        tight = select_tight_zones(default_system, sol, 3)
        ranked = np.argsort(-sol.reserve_duals, kind="stable")[:3]

        assert len(tight) == 3
        assert min(sol.reserve_duals[default_system.zone_row(z)] for z in tight) >= sol.reserve_duals[ranked[-1]]

    def test_select_feasible_tight_zones_skips_balanced_zone(self):
        """A zone with zero base net export cannot be tightened and the next priced zone takes its place."""
        from reservesets.geometry import CholeskyShape
        from reservesets.lp import LpStatus
        from reservesets.sced import (
            Generator,
            ZonalSystem,
            Zone,
            compute_transfer_limits,
            select_feasible_tight_zones,
            select_tight_zones,
            solve_sced,
        )

        # zone 1 must run at its load, zone 2 exports 100, zone 3 imports 100
        system = ZonalSystem(
            (Zone(1, 100.0), Zone(2, 100.0), Zone(3, 100.0)),
            (
                Generator(1, 100.0, 200.0, 20.0, 8.0),
                Generator(2, 0.0, 300.0, 10.0, 5.0),
                Generator(3, 0.0, 300.0, 30.0, 2.0),
            ),
            np.eye(3),
        )
        L = CholeskyShape(np.eye(3))
        base = solve_sced(system, L, 10.0)

        assert base.reserve_duals.tolist() == pytest.approx([8.0, 5.0, 2.0])
        assert select_tight_zones(system, base, 2) == frozenset({1, 2})
        strict = compute_transfer_limits(system, L, 10.0, {1}, 0.9, 1.5)
        assert solve_sced(system, L, 10.0, strict).status is LpStatus.INFEASIBLE

        tight = select_feasible_tight_zones(system, L, 10.0, 2, 0.9, 1.5)
        assert tight == frozenset({2, 3})
        assert solve_sced(system, L, 10.0, compute_transfer_limits(system, L, 10.0, tight, 0.9, 1.5)).optimal
        assert select_feasible_tight_zones(system, L, 10.0, 3, 0.9, 1.5) == frozenset({2, 3})


class TestEnvelopeGradients:
    def test_hand_radius_gradient(self, one_zone):
        """mu = 1 and ||L^T A|| = 1 give dV/drho = 1."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import envelope_grad_rho, solve_sced

        system, L = one_zone(), CholeskyShape(np.eye(1))
        sol = solve_sced(system, L, 10.0)
        assert envelope_grad_rho(system, sol, L) == pytest.approx(1.0)

    def test_zero_duals(self):
        """Zero duals give zero gradients."""
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import Generator, ZonalSystem, Zone, envelope_grad_L, envelope_grad_rho, solve_sced

        system = ZonalSystem((Zone(1, 50.0),), (Generator(1, 0, 100, 10, 1),), np.zeros((1, 2)))
        L = CholeskyShape(np.eye(2))
        sol = solve_sced(system, L, 3.0)

        assert np.all(envelope_grad_L(system, sol, L, 3.0).entries == 0.0)
        assert envelope_grad_rho(system, sol, L) == 0.0

    def test_requires_optimal(self, one_zone):
        """Gradients of an infeasible solve are refused."""
        from reservesets.errors import NotOptimal
        from reservesets.geometry import CholeskyShape
        from reservesets.sced import envelope_grad_L, envelope_grad_rho, solve_sced

        system, L = one_zone(g_max=55.0), CholeskyShape(np.eye(1))
        sol = solve_sced(system, L, 10.0)
        with pytest.raises(NotOptimal):
            envelope_grad_L(system, sol, L, 10.0)
        with pytest.raises(NotOptimal):
            envelope_grad_rho(system, sol, L)

    def test_value_differences_decoupled(self):
        """Envelope gradients match value differences on clean random toys."""
        from reservesets.lp import dual_degeneracy
        from reservesets.sced import solve_sced
        from reservesets.selftest import random_shape, toy_system, value_fd_check

        rng = np.random.default_rng(17)
        checked = 0
        while checked < 4:
            system, L = toy_system(rng, 2, 1 + 2 * (checked % 2)), random_shape(rng, 2)
            sol = solve_sced(system, L, 2.0)
            if not sol.optimal or dual_degeneracy(sol.problem, sol.lp):
                continue
            err_L, err_rho = value_fd_check(system, L, 2.0)
            assert err_L <= 1e-4
            assert err_rho <= 1e-4
            checked += 1

    def test_value_differences_with_binding_transfer(self, transfer_toy):
        """The (mu + lambda) weighting matches value differences when a transfer row binds."""
        from reservesets.geometry import CholeskyShape
        from reservesets.selftest import value_fd_check

        system, tl = transfer_toy
        err_L, err_rho = value_fd_check(system, CholeskyShape(np.eye(2)), 2.0, tl)

        assert err_L <= 1e-4
        assert err_rho <= 1e-4
