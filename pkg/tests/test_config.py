import numpy as np
import pytest
from hypothesis import given, strategies as st

from netident.config import BUILTIN_CONFIGS, ConfigError, dump_config, load_config, loads_config
from conftest import random_network

MINIMAL = """
schema_version = 1
nodes = 2
excited = [1]

[[module]]
to = 2
from = 1
num = [0.5]
den = [1.0, -0.2]
delay = 1

[[noise]]
to = 2
from = 2
num = [1.0]
"""


def test_builtins_load():
    for name in BUILTIN_CONFIGS:
        cfg = load_config(name)
        assert cfg.model.L >= 3


def test_minimal_config():
    cfg = loads_config(MINIMAL)
    m = cfg.model
    assert m.L == 2 and m.r_present == (True, False)
    assert m.G(2, 1).dead_time == 1
    assert cfg.orders.nb == 1


def test_empty_file_reports_location():
    with pytest.raises(ConfigError) as exc:
        loads_config("   \n", source="empty.toml")
    assert exc.value.line == 1 and "empty.toml:1" in str(exc.value)


def test_parse_error_has_line():
    with pytest.raises(ConfigError) as exc:
        loads_config("nodes = 2\n[[module]\n")
    assert exc.value.line == 2


def test_field_errors_have_line():
    bad = MINIMAL.replace("num = [0.5]", "")
    with pytest.raises(ConfigError) as exc:
        loads_config(bad)
    assert "num" in str(exc.value) and exc.value.line is not None


def test_index_out_of_range():
    with pytest.raises(ConfigError, match="outside"):
        loads_config(MINIMAL.replace("from = 1", "from = 3"))


def test_orders_for_absent_module():
    text = MINIMAL + "\n[identification]\nnb = 2\n[[identification.module]]\nto = 1\nfrom = 2\nnb = 3\n"
    with pytest.raises(ConfigError, match="absent module"):
        loads_config(text)


def test_validation_failure_is_reported():
    text = MINIMAL.replace("num = [0.5]", "num = [1.5]").replace("den = [1.0, -0.2]", "den = [1.0, -1.2]")
    with pytest.raises(ConfigError, match="invalid network"):
        loads_config(text)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.toml")


@given(st.integers(0, 10_000))
def test_dump_load_round_trip(seed):
    m = random_network(seed)
    m2 = loads_config(dump_config(m)).model
    assert m2.L == m.L and m2.r_present == m.r_present
    assert set(m2.modules) == set(m.modules) and set(m2.noise) == set(m.noise)
    for k, tf in m.modules.items():
        assert m2.modules[k] == tf
    np.testing.assert_array_equal(m2.noise_covariance, m.noise_covariance)
