import json

import numpy as np
import pytest

from emarig import phantom
from emarig.config import (PIPELINE_SCHEMA, RIG_CONFIG_SCHEMA, dump_json, load_landmarks,
                           load_pipeline_config, load_rig_config, rig_config_from_dict,
                           rig_config_to_dict, rig_from_text, rig_to_text, synth_spec_from_dict,
                           synth_spec_to_dict)
from emarig.errors import ParseError
from emarig.rig import skin, solve_spline_ik
from emarig.trackio import synth_trajectories


def test_rig_config_round_trip():
    cfg = phantom.rig_config(depth=(1.0, 2.0, 3.0), smoothstep=True)
    text = dump_json(rig_config_to_dict(cfg))
    assert load_rig_config(text) == cfg
    assert dump_json(rig_config_to_dict(load_rig_config(text))) == text


@pytest.mark.parametrize("edit, pattern", [
    (lambda d: d.update(hooks_typo=1), "unknown key"),
    (lambda d: d.pop("tip_anchor"), "missing key"),
    (lambda d: d.update(schema="emarig.rig-config/2"), "expected schema"),
    (lambda d: d.update(root_anchor=[0, 1]), "root_anchor"),
    (lambda d: d.update(r_in=20.0), "r_in"),
    (lambda d: d["hinge"].update(axis=[1, 0, 0]), "hinge"),
])
def test_rig_config_rejects(edit, pattern):
    doc = rig_config_to_dict(phantom.rig_config())
    edit(doc)
    with pytest.raises(ParseError, match=pattern):
        load_rig_config(json.dumps(doc))


def test_bad_json_reports_line():
    with pytest.raises(ParseError) as err:
        load_rig_config('{\n "schema": \n}')
    assert err.value.line == 3


def test_rig_round_trip_rebuilds_identical_rig(phantom_rig, synth_traj):
    text = rig_to_text(phantom_rig)
    again = rig_from_text(text)
    assert rig_to_text(again) == text
    np.testing.assert_array_equal(again.weights, phantom_rig.weights)
    frame = synth_traj.frame(37)
    np.testing.assert_array_equal(skin(again, solve_spline_ik(again, frame)),
                                  skin(phantom_rig, solve_spline_ik(phantom_rig, frame)))


def test_synth_spec_round_trip():
    spec = phantom.synth_spec(frames=40)
    doc = json.loads(json.dumps(synth_spec_to_dict(spec)))
    back = synth_spec_from_dict(doc)
    a, b = synth_trajectories(spec), synth_trajectories(back)
    np.testing.assert_array_equal(a.positions, b.positions)
    doc["rate"] = -1
    with pytest.raises(ParseError, match="rate"):
        synth_spec_from_dict(doc)


def test_landmarks():
    doc = {"schema": "emarig.landmarks/1", "src": [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
           "dst": [[0, 0, 0], [1, 0, 0], [0, 1, 0]]}
    src, dst = load_landmarks(json.dumps(doc))
    assert src.shape == dst.shape == (3, 3)
    doc["dst"] = doc["dst"][:2]
    with pytest.raises(ParseError, match=">= 3"):
        load_landmarks(json.dumps(doc))


def pipeline_doc():
    rig = rig_config_to_dict(phantom.rig_config())
    del rig["schema"]
    return {
        "schema": PIPELINE_SCHEMA,
        "inputs": {"ema": "data/ema.csv", "tongue": "mesh/tongue.obj"},
        "rig": rig,
        "output": "../out",
        "export": {"format": "vertex-csv", "workers": 2, "frames": [10, 20]},
        "subsample": {"palate": 4},
        "midsagittal_plane": {"spec": "x=0", "palate_coils": ["T1", "T2"]},
    }


def test_pipeline_paths_and_defaults(tmp_path):
    pc = load_pipeline_config(json.dumps(pipeline_doc()), base_dir=str(tmp_path / "cfg"))
    assert pc.ema == str(tmp_path / "cfg" / "data" / "ema.csv")
    assert pc.out_dir == str(tmp_path / "out")
    assert pc.mandible is None and pc.bind_frame == 0
    assert pc.frame_window == (10, 20) and pc.workers == 2 and pc.palate_subsample == 4
    assert pc.rig == phantom.rig_config()
    assert pc.track_coils == ("T1", "T2", "T3")


@pytest.mark.parametrize("edit, pattern", [
    (lambda d: d.update(outputs="x"), "unknown key"),
    (lambda d: d["export"].update(fromat="obj-sequence"), "export"),
    (lambda d: d["inputs"].pop("tongue"), "inputs"),
    (lambda d: d.update(evaluate={"coils": ["T9"]}), "T9"),
    (lambda d: d.update(schema=RIG_CONFIG_SCHEMA), "expected schema"),
])
def test_pipeline_rejects(edit, pattern):
    doc = pipeline_doc()
    edit(doc)
    with pytest.raises(ParseError, match=pattern):
        load_pipeline_config(json.dumps(doc))


def test_rig_config_from_dict_ignores_schema_field():
    doc = rig_config_to_dict(phantom.rig_config())
    assert rig_config_from_dict(doc) == rig_config_from_dict({k: v for k, v in doc.items() if k != "schema"})
