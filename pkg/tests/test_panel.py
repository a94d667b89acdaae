import numpy as np
import pytest

from balancegrowth import (
    HorizonError,
    MalformedInputError,
    build_panel,
    filter_active,
    taxonomy,
)
from balancegrowth.panel import GROUP_ACTIVE, GROUP_INACTIVE

from conftest import D0, D28, panel_from_rows, snapshot


class TestBuildPanel:
    def test_sell_out_row_is_active_and_diagonal(self):
        snap0 = snapshot(D0, [("u1", 5)])
        snap1 = snapshot(D28, [("u2", 7)])
        panel = build_panel(snap0, snap1)
        i = int(np.flatnonzero(panel.user_ids == "u1")[0])
        assert (panel.s0[i], panel.s1[i], panel.ds[i]) == (5, 0, -5)
        assert panel.group[i] == GROUP_ACTIVE
        tax = taxonomy(panel)
        assert tax.diagonal == 1

    def test_identical_records_all_group_b(self):
        records = [("a", 10), ("b", 250), ("c", 1)]
        panel = build_panel(snapshot(D0, records), snapshot(D28, records))
        assert np.all(panel.ds == 0)
        assert np.all(panel.group == GROUP_INACTIVE)

    def test_28_day_horizon(self):
        panel = build_panel(snapshot(D0, [("a", 1)]), snapshot(D28, [("a", 1)]))
        assert panel.dt_days == 28

    def test_same_date_rejected(self):
        with pytest.raises(HorizonError):
            build_panel(snapshot(D0, [("a", 1)]), snapshot(D0, [("a", 2)]))

    def test_reversed_dates_rejected(self):
        with pytest.raises(HorizonError):
            build_panel(snapshot(D28, [("a", 1)]), snapshot(D0, [("a", 2)]))

    def test_duplicate_user_rejected(self):
        with pytest.raises(MalformedInputError):
            snapshot(D0, [("a", 1), ("a", 2)])

    def test_negative_balance_rejected(self):
        with pytest.raises(MalformedInputError):
            snapshot(D0, [("a", -1)])

    def test_join_reproduces_source_snapshots(self, rng):
        # users absent on one side must read 0 there, all others their balance
        users = [f"u{i}" for i in range(500)]
        pick0 = rng.random(500) < 0.7
        pick1 = rng.random(500) < 0.7
        bal0 = rng.integers(0, 10**9, size=500)
        bal1 = rng.integers(0, 10**9, size=500)
        snap0 = snapshot(D0, [(u, int(b)) for u, b, k in zip(users, bal0, pick0) if k])
        snap1 = snapshot(D28, [(u, int(b)) for u, b, k in zip(users, bal1, pick1) if k])
        panel = build_panel(snap0, snap1)
        assert set(panel.user_ids) == set(snap0.user_ids) | set(snap1.user_ids)
        lookup0 = dict(zip(snap0.user_ids.tolist(), snap0.balances.tolist()))
        lookup1 = dict(zip(snap1.user_ids.tolist(), snap1.balances.tolist()))
        for u, s0, s1, ds in zip(panel.user_ids, panel.s0, panel.s1, panel.ds):
            assert s0 == lookup0.get(u, 0)
            assert s1 == lookup1.get(u, 0)
            assert ds == s1 - s0


class TestFilterActive:
    def test_all_horizontal_gives_empty_panel(self):
        panel = panel_from_rows([("a", 5, 5), ("b", 9, 9)])
        active = filter_active(panel)
        assert active.n_rows == 0
        assert active.meta["removed_horizontal"] == 2

    def test_vertical_row_removed(self):
        panel = panel_from_rows([("a", 0, 10**9)])
        active = filter_active(panel)
        assert active.n_rows == 0
        assert active.meta["removed_zero_start"] == 1

    def test_mixed_panel_matches_brute_force(self, rng):
        rows = []
        for i in range(400):
            s0 = int(rng.integers(0, 50))
            s1 = int(rng.integers(0, 50))
            rows.append((f"u{i}", s0, s1))
        panel = panel_from_rows(rows)
        active = filter_active(panel)
        expected = {u for u, s0, s1 in rows if s0 > 0 and s1 != s0}
        assert set(active.user_ids) == expected
        # removed and retained partition the panel
        assert active.n_rows + active.meta["removed_total"] == panel.n_rows


class TestTaxonomy:
    def test_all_sellouts_are_diagonal(self):
        panel = panel_from_rows([(f"u{i}", 10 + i, 0) for i in range(5)])
        tax = taxonomy(panel)
        assert tax.diagonal == 5
        assert tax.vertical == tax.horizontal == tax.interior == 0

    def test_counts_partition_panel(self, rng):
        rows = [(f"u{i}", int(rng.integers(0, 20)), int(rng.integers(0, 20))) for i in range(300)]
        panel = panel_from_rows(rows)
        tax = taxonomy(panel)
        assert tax.total == panel.n_rows

    def test_constructed_mixture_recovered_exactly(self):
        rows = []
        k = 0
        for _ in range(30):  # vertical: enter from zero
            rows.append((f"v{k}", 0, 100 + k)); k += 1
        for _ in range(30):  # horizontal: no change
            rows.append((f"h{k}", 50 + k, 50 + k)); k += 1
        for _ in range(30):  # diagonal: full sell-out
            rows.append((f"d{k}", 70 + k, 0)); k += 1
        for _ in range(10):  # interior
            rows.append((f"i{k}", 10 + k, 20 + k)); k += 1
        tax = taxonomy(panel_from_rows(rows))
        assert (tax.vertical, tax.horizontal, tax.diagonal, tax.interior) == (30, 30, 30, 10)

    def test_epsilon_v_widens_vertical(self):
        panel = panel_from_rows([("a", 3, 100), ("b", 30, 100)])
        assert taxonomy(panel, epsilon_v=0).vertical == 0
        assert taxonomy(panel, epsilon_v=5).vertical == 1

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError):
            taxonomy(panel_from_rows([("a", 1, 2)]), epsilon_v=-1)
