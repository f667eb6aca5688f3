import json

import numpy as np
import pytest

from iomri.errors import CorruptFileError, FormatError, MissingFileError, MissingModelError, ModelShapeError, VersionError
from iomri.io import load_model, read_manifest, read_mask, read_volume, save_model, write_mask, write_volume
from iomri.sampling import poisson_disc_mask
from iomri.unrolled.model import CascadeModel
from iomri.volume import ComplexVolume


def test_complex_payload_layout(tmp_path):
    d = (np.arange(32) + 1j * -np.arange(32)).reshape(2, 1, 4, 4).astype(np.complex64)
    write_volume(ComplexVolume(d, (1, 1, 1), space="kspace"), tmp_path / "v")
    raw = (tmp_path / "v.raw").read_bytes()
    assert len(raw) == 256
    flat = np.frombuffer(raw, "<f4")
    assert flat[0] == 0 and flat[2] == 1 and flat[3] == -1
    h = json.loads((tmp_path / "v.json").read_text())
    assert h["element"] == "complex64" and h["version"] == 1 and h["shape"] == [2, 1, 4, 4]


def test_mask_round_trip(tmp_path):
    m = poisson_disc_mask((32, 40), 4.0, seed=2)
    write_mask(m, tmp_path / "m")
    back = read_mask(tmp_path / "m")
    assert np.array_equal(back.keep, m.keep)
    assert back.calib_yx == m.calib_yx and back.seed == 2
    assert json.loads((tmp_path / "m.json").read_text())["kind"] == "mask"


def test_version_and_format_errors(tmp_path):
    write_volume(ComplexVolume(np.ones((1, 1, 2, 2)), (1, 1, 1)), tmp_path / "v")
    h = json.loads((tmp_path / "v.json").read_text())
    h["version"] = 2
    (tmp_path / "v.json").write_text(json.dumps(h))
    with pytest.raises(VersionError):
        read_volume(tmp_path / "v")
    (tmp_path / "v.json").write_text("{not json")
    with pytest.raises(FormatError):
        read_volume(tmp_path / "v")
    with pytest.raises(MissingFileError):
        read_volume(tmp_path / "nothing")


def test_checkpoint_manifest(tmp_path):
    m = CascadeModel.init(3, 8, seed=1)
    save_model(m, None, tmp_path / "ck", best_epoch=7)
    man = read_manifest(tmp_path / "ck")
    assert man["best_epoch"] == 7
    assert man["payload_bytes"] == 8 * m.num_parameters == 8 * 3081
    offsets = [e["offset"] for e in man["parameters"]]
    assert offsets == sorted(offsets)


def test_checkpoint_shape_mismatch(tmp_path):
    save_model(CascadeModel.init(2, 4), None, tmp_path / "ck")
    man = json.loads((tmp_path / "ck.json").read_text())
    man["channels"] = 8
    (tmp_path / "ck.json").write_text(json.dumps(man))
    with pytest.raises(ModelShapeError):
        load_model(tmp_path / "ck")


def test_checkpoint_overlap_and_missing(tmp_path):
    save_model(CascadeModel.init(2, 4), None, tmp_path / "ck")
    man = json.loads((tmp_path / "ck.json").read_text())
    man["parameters"][1]["offset"] = 0
    (tmp_path / "ck.json").write_text(json.dumps(man))
    with pytest.raises(CorruptFileError):
        load_model(tmp_path / "ck")
    with pytest.raises(MissingModelError):
        load_model(tmp_path / "absent")
