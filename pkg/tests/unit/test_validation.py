"""Unit tests for validation module."""

import pytest

from kvcomm.utils.validation import ValidationResult, validate_workload

VALID = {
    "agents": [{"id": "1", "template": "{user_question}"}],
    "requests": ["q"],
}


class TestValidationResult:
    """Tests for ValidationResult dataclass."""

    def test_valid_result_has_no_errors(self):
        result = ValidationResult(is_valid=True)
        assert result.is_valid is True
        assert result.error_type is None
        assert result.error_message is None

    def test_invalid_result_has_error_details(self):
        result = ValidationResult(
            is_valid=False,
            error_type="test_error",
            error_message="Test error message",
        )
        assert result.is_valid is False
        assert result.error_type == "test_error"
        assert result.error_message == "Test error message"

    def test_result_is_frozen(self):
        result = ValidationResult(is_valid=True)
        with pytest.raises(AttributeError):
            result.is_valid = False


class TestValidateWorkload:
    """Tests for validate_workload function."""

    def test_valid_config_passes(self):
        result = validate_workload(VALID)
        assert result.is_valid is True
        assert result.error_type is None

    def test_agent_count_passes(self):
        assert validate_workload({"agent_count": 4}).is_valid

    def test_root_must_be_object(self):
        result = validate_workload(["not", "an", "object"])
        assert result.error_type == "invalid_root"

    def test_unknown_keys_listed(self):
        result = validate_workload({**VALID, "zeta": 1, "alpha": 2})
        assert result.error_type == "unknown_keys"
        assert "alpha, zeta" in result.error_message

    @pytest.mark.parametrize(
        "data",
        [
            {"requests": []},
            {**VALID, "agent_count": 2},
            {"agents": []},
            {"agents": ["x"]},
            {"agents": [{"id": 1, "template": "x"}]},
            {"agents": [{"id": "1", "template": "x", "upstream": "2"}]},
            {"agent_count": 0},
            {"agent_count": True},
        ],
    )
    def test_invalid_agents(self, data):
        assert validate_workload(data).error_type == "invalid_agents"

    @pytest.mark.parametrize(
        "requests",
        [
            "q",
            [3],
            [{"text": "q"}],
            [{"question": "q", "tool_outputs": {"a": 1}}],
        ],
    )
    def test_invalid_requests(self, requests):
        result = validate_workload({**VALID, "requests": requests})
        assert result.error_type == "invalid_requests"

    @pytest.mark.parametrize(
        "generated",
        [
            {},
            {"count": -1},
            {"count": 2, "clusters": 0},
            {"count": 2, "clusters": 6},
            {"count": 2, "spread": 0},
        ],
    )
    def test_invalid_generated_requests(self, generated):
        result = validate_workload({"agent_count": 1, "generated_requests": generated})
        assert result.error_type == "invalid_requests"

    def test_both_request_sources_rejected(self):
        data = {**VALID, "generated_requests": {"count": 1}}
        assert validate_workload(data).error_type == "invalid_requests"

    @pytest.mark.parametrize(
        "key,value,error_type",
        [
            ("gamma", -0.1, "invalid_gamma"),
            ("gamma", 1.5, "invalid_gamma"),
            ("gamma", "0.3", "invalid_gamma"),
            ("capacity", -1, "invalid_capacity"),
            ("capacity", 2.5, "invalid_capacity"),
            ("max_new_tokens", -3, "invalid_max_new_tokens"),
            ("seed", -1, "invalid_seed"),
            ("approximation", "softmax", "invalid_approximation"),
            ("model", [], "invalid_model"),
            ("experiment", 3, "invalid_experiment"),
        ],
    )
    def test_invalid_scalars(self, key, value, error_type):
        result = validate_workload({**VALID, key: value})
        assert result.is_valid is False
        assert result.error_type == error_type

    @pytest.mark.parametrize("gamma", [0, 0.0, 1, 1.0])
    def test_gamma_endpoints_valid(self, gamma):
        assert validate_workload({**VALID, "gamma": gamma}).is_valid

    def test_capacity_zero_valid(self):
        assert validate_workload({**VALID, "capacity": 0}).is_valid
