import numpy as np
import pytest

from aftite.design import INTERCEPT, ModelSpec, build_design, preset_spec
from aftite.errors import DataError, RankDeficientError
from aftite.ingest import COVARIATES, AnalysisDataset


def test_presets():
    assert preset_spec("model1").interactions == ()
    assert preset_spec("model2a").interactions == ("age", "logsz")
    assert preset_spec("model2b").interactions == COVARIATES
    with pytest.raises(DataError):
        preset_spec("model3")


def test_column_layout_order():
    names = [n for n, _, _ in preset_spec("model2a").column_layout()]
    assert names == [INTERCEPT, *COVARIATES, "rx", "rx:age", "rx:logsz"]


def test_design_values(prostate):
    spec = preset_spec("model2a")
    d = build_design(prostate, spec)
    assert d.p == 12
    j = d.names.index("rx:age")
    np.testing.assert_array_equal(d.values[:, j], prostate.z * prostate.column("age"))
    np.testing.assert_array_equal(d.values[:, 0], 1.0)


@pytest.mark.parametrize("kwargs,msg", [
    ({"main_effects": ("age", "age")}, "duplicate"),
    ({"main_effects": ("age",), "interactions": ("logsz",)}, "main effect"),
    ({"main_effects": ("rx",)}, "reserved"),
])
def test_bad_specs(kwargs, msg):
    with pytest.raises(DataError, match=msg):
        ModelSpec(**kwargs)


def test_unknown_covariate(prostate):
    with pytest.raises(DataError, match="unknown covariate"):
        build_design(prostate, ModelSpec(("psa",)))


def test_rank_deficiency(prostate):
    x = np.column_stack([prostate.x, prostate.column("hx")])
    data = AnalysisDataset(prostate.time, prostate.event, prostate.z, x, prostate.names + ("hx2",), ())
    with pytest.raises(RankDeficientError):
        build_design(data, ModelSpec(("hx", "hx2")))


def test_spec_json_and_digest():
    s = preset_spec("model2a")
    assert ModelSpec.from_json(s.to_json()) == s
    assert s.digest() == ModelSpec.from_json(s.to_json()).digest()
    assert s.digest() != preset_spec("model2b").digest()
