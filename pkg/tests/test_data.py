import numpy as np
import pytest

import irisynth.data as d
import irisynth.quality as q
from irisynth.matcher import normalize


def test_toy_iris_deterministic():
    spec = d.ToyIrisSpec(identity_seed=5, blur_sigma=0.5, noise_amplitude=0.03)
    a, seg_a = d.toy_iris(spec, 64)
    b, seg_b = d.toy_iris(spec, 64)
    assert np.array_equal(a.pixels, b.pixels)
    assert seg_a == seg_b


def test_toy_iris_ground_truth_scores():
    img, seg = d.toy_iris(d.ToyIrisSpec(identity_seed=1), 64)
    rep = q.quality_report(img)
    assert rep.sharpness > 50
    assert rep.circularity > 0.95


def test_toy_iris_dilation_moves_pupil_only():
    base = d.ToyIrisSpec(identity_seed=2, pupil_radius_frac=0.15,
                         iris_radius_frac=0.40)
    dilated = d.ToyIrisSpec(identity_seed=2, pupil_radius_frac=0.15,
                            iris_radius_frac=0.40, dilation=1.2)
    _, s0 = d.toy_iris(base, 64)
    _, s1 = d.toy_iris(dilated, 64)
    assert abs(s1.pupil_radius - 1.2 * s0.pupil_radius) < 1e-9
    assert s1.iris_radius == s0.iris_radius


def test_toy_identities_decorrelated():
    specs = [d.ToyIrisSpec(identity_seed=s) for s in (100, 200, 300, 400)]
    polars = []
    for spec in specs:
        img, seg = d.toy_iris(spec, 64)
        p = normalize(img, seg)
        polars.append((p - p.mean()) / p.std())
    for i in range(len(polars)):
        for j in range(i + 1, len(polars)):
            corr = float(np.mean(polars[i] * polars[j]))
            assert abs(corr) < 0.3


def test_toy_iris_validates_spec():
    with pytest.raises(ValueError):
        d.toy_iris(d.ToyIrisSpec(identity_seed=1, pupil_radius_frac=0.5,
                                 iris_radius_frac=0.4), 64)
    with pytest.raises(ValueError):
        d.ToyIrisSpec(identity_seed=1, blur_sigma=-1.0)


def test_pgm_roundtrip(tmp_path):
    img, _ = d.toy_iris(d.ToyIrisSpec(identity_seed=3, noise_amplitude=0.05), 64)
    d.write_pgm(tmp_path / "a.pgm", img)
    back = d.read_pgm(tmp_path / "a.pgm")
    assert np.max(np.abs(back.pixels - img.pixels)) <= 1.0 / 510.0


def test_pgm_header_comments_and_whitespace(tmp_path):
    payload = bytes(range(256)) * 1  # 16x16
    raw = b"P5 # magic\n# a comment line\n  16\t16\n255\n" + payload
    (tmp_path / "c.pgm").write_bytes(raw)
    img = d.read_pgm(tmp_path / "c.pgm")
    assert img.pixels.shape == (16, 16)
    assert img.pixels[0, 0] == 0.0 and img.pixels[15, 15] == 1.0


def test_pgm_errors(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"P6\n16 16\n255\n" + bytes(256))
    with pytest.raises(d.PgmError, match="magic"):
        d.read_pgm(tmp_path / "bad.pgm")
    (tmp_path / "trunc.pgm").write_bytes(b"P5\n16 16\n255\n" + bytes(100))
    with pytest.raises(d.PgmError, match="expected 256 bytes, got 100"):
        d.read_pgm(tmp_path / "trunc.pgm")
    (tmp_path / "max.pgm").write_bytes(b"P5\n16 16\n65535\n" + bytes(512))
    with pytest.raises(d.PgmError, match="maxval"):
        d.read_pgm(tmp_path / "max.pgm")


def test_png_roundtrip(tmp_path):
    img, _ = d.toy_iris(d.ToyIrisSpec(identity_seed=4), 64)
    d.write_image(tmp_path / "a.png", img)
    back = d.read_image(tmp_path / "a.png")
    assert np.max(np.abs(back.pixels - img.pixels)) <= 1.0 / 510.0


def test_manifest_roundtrip(tmp_path):
    img, _ = d.toy_iris(d.ToyIrisSpec(identity_seed=1), 64)
    d.write_image(tmp_path / "x.pgm", img)
    entries = [d.ManifestEntry(tmp_path / "x.pgm", "id1", "real", "train")]
    d.save_manifest(tmp_path / "m.csv", entries)
    loaded = d.load_manifest(tmp_path / "m.csv")
    assert len(loaded) == 1
    assert loaded[0].identity == "id1" and loaded[0].cls == "real"
    assert loaded[0].path == tmp_path / "x.pgm"


def test_manifest_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("path,identity,class,split\nnope.pgm,a,fake,\n")
    with pytest.raises(ValueError, match="unknown class"):
        d.load_manifest(tmp_path / "bad.csv")
    (tmp_path / "miss.csv").write_text("path,identity,class,split\nnope.pgm,a,real,\n")
    with pytest.raises(FileNotFoundError, match="nope.pgm"):
        d.load_manifest(tmp_path / "miss.csv")
    (tmp_path / "hdr.csv").write_text("file,who\nx,y\n")
    with pytest.raises(ValueError, match="header"):
        d.load_manifest(tmp_path / "hdr.csv")


def test_checkpoint_roundtrip_and_order(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "conv.w": rng.normal(size=(2, 3, 5, 5)).astype(np.float32),
        "fc.b": rng.normal(size=7).astype(np.float32),
        "bn.running_mean": rng.normal(size=3).astype(np.float32),
    }
    d.save_checkpoint(tmp_path / "c.ckpt", tensors, {"steps": 10, "name": "x"})
    loaded, cfg = d.load_checkpoint(tmp_path / "c.ckpt")
    assert list(loaded) == list(tensors)
    assert all(np.array_equal(loaded[k], tensors[k]) for k in tensors)
    assert cfg == {"steps": 10, "name": "x"}


def test_checkpoint_errors(tmp_path):
    d.save_checkpoint(tmp_path / "c.ckpt", {"a": np.zeros(2, np.float32)}, {})
    raw = bytearray((tmp_path / "c.ckpt").read_bytes())
    bad = bytes(raw[:1] + b"X" + raw[2:])
    (tmp_path / "magic.ckpt").write_bytes(bad)
    with pytest.raises(d.CheckpointError, match="magic"):
        d.load_checkpoint(tmp_path / "magic.ckpt")
    ver = bytearray(raw)
    ver[4] = 99
    (tmp_path / "ver.ckpt").write_bytes(bytes(ver))
    with pytest.raises(d.CheckpointError, match="version"):
        d.load_checkpoint(tmp_path / "ver.ckpt")
    (tmp_path / "trunc.ckpt").write_bytes(bytes(raw[:-4]))
    with pytest.raises(d.CheckpointError, match="truncated"):
        d.load_checkpoint(tmp_path / "trunc.ckpt")
