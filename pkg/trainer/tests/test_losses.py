from __future__ import annotations

import math

import pytest

from conftest import SHARED_FIXTURE
from stic_trainer.losses import (
    FixtureError,
    compute_fixture_losses,
    load_records,
    parse_alpha,
    regularized_loss,
)

LN2 = math.log(2.0)


class TestRegularizedLoss:
    def test_zero_margin_alpha_zero_is_ln2(self):
        assert abs(regularized_loss(-1.0, -1.0, -1.0, -1.0, 0.1, 0.0) - LN2) <= 1e-15

    def test_zero_margin_with_regularizer(self):
        got = regularized_loss(-10.0, -3.0, -10.0, -3.0, 0.1, 1.0 / 1024.0)
        assert abs(got - (LN2 + 10.0 / 1024.0)) <= 1e-15

    def test_logistic_term_underflows_cleanly(self):
        got = regularized_loss(-5.0, -10005.0, -5.0, -5.0, 1.0, 0.01)
        assert abs(got - 0.05) <= 1e-12

    def test_monotone_in_margin(self):
        lo = regularized_loss(-2.0, -1.0, -1.5, -1.5, 1.0, 0.0)
        hi = regularized_loss(-1.0, -2.0, -1.5, -1.5, 1.0, 0.0)
        assert hi < lo


class TestParseAlpha:
    def test_fraction_string(self):
        assert parse_alpha("1/1024") == 1.0 / 1024.0

    def test_decimal_string_and_number(self):
        assert parse_alpha("0.25") == 0.25
        assert parse_alpha(0.0) == 0.0


class TestRecordLoading:
    def test_shared_fixture_loads(self):
        records = load_records(SHARED_FIXTURE)
        assert len(records) == 100

    def test_problems_name_lines(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"id": "a", "policy_w": -1.0, "policy_l": -1.0, "ref_w": -1.0, "ref_l": -1.0}\n'
            "oops\n"
            '{"id": "c", "policy_w": 1.0, "policy_l": -1.0, "ref_w": -1.0, "ref_l": -1.0}\n'
        )
        with pytest.raises(FixtureError) as err:
            load_records(path)
        message = str(err.value)
        assert "line 2" in message and "line 3" in message

    def test_compute_losses_over_fixture(self):
        losses = compute_fixture_losses(SHARED_FIXTURE, 0.1, "1/1024")
        assert len(losses) == 100
        assert all(math.isfinite(v) for _, v in losses)
