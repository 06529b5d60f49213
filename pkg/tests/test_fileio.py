import numpy as np
import pytest

from motok import fileio


def test_vten_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    video = rng.random((4, 3, 8, 8)).astype(np.float32)
    path = tmp_path / "v.vten"
    fileio.write_vten(path, video)
    back = fileio.read_vten(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, video)


def test_vten_bad_magic(tmp_path):
    path = tmp_path / "bad.vten"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(fileio.VtenFormatError):
        fileio.read_vten(path)


def test_vten_truncated_payload(tmp_path):
    rng = np.random.default_rng(1)
    video = rng.random((4, 3, 8, 8)).astype(np.float32)
    path = tmp_path / "v.vten"
    fileio.write_vten(path, video)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 100])
    with pytest.raises(fileio.VtenTruncatedError):
        fileio.read_vten(path)


def test_vten_implausible_extents(tmp_path):
    import struct
    path = tmp_path / "big.vten"
    path.write_bytes(b"LMFT" + struct.pack("<5I", 1, 2**16, 2**16, 4, 4))
    with pytest.raises(fileio.VtenFormatError):
        fileio.read_vten(path)


def test_manifest_roundtrip_resolves_relative_paths(tmp_path):
    entries = [("videos/a.vten", 3, "source"), ("videos/b.vten", -1, "target")]
    path = tmp_path / "m.tsv"
    fileio.write_manifest(path, entries)
    back = fileio.read_manifest(path)
    assert back[0][0] == str(tmp_path / "videos/a.vten")
    assert back[0][1:] == (3, "source")
    assert back[1][1] == -1


def test_probs_roundtrip_and_validation(tmp_path):
    path = tmp_path / "p.jsonl"
    fileio.write_probs(path, [("vid0", [0.25, 0.75]), ("vid1", [1.0, 0.0])])
    rows = fileio.read_probs(path)
    assert rows[0][0] == "vid0"
    assert np.allclose(rows[0][1], [0.25, 0.75])

    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"video_id": "x", "probs": [0.5, 0.4]}\n')
    with pytest.raises(ValueError):
        fileio.read_probs(bad)
    bad.write_text('{"video_id": "x", "probs": [1.2, -0.2]}\n')
    with pytest.raises(ValueError):
        fileio.read_probs(bad)


def test_mask_dump_line():
    mask = np.zeros((2, 2, 2), dtype=bool)
    mask[0] = True
    line = fileio.mask_dump_line("vid7", mask)
    assert line == "vid7\t2 2 2\t11110000"


def test_config_parse_comments_and_errors():
    text = "# header\nalpha = 3   # trailing\n\nname=hello world\n"
    cfg = fileio.parse_config_text(text)
    assert cfg == {"alpha": "3", "name": "hello world"}
    with pytest.raises(ValueError):
        fileio.parse_config_text("not a pair\n")


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "c.cfg"
    fileio.write_config(path, {"a": "1", "b": "x"})
    assert fileio.read_config(path) == {"a": "1", "b": "x"}


def test_ppm_writer(tmp_path):
    img = np.zeros((2, 3, 3), dtype=np.float64)
    img[0, 0] = [1.0, 0.5, 0.0]
    path = tmp_path / "f.ppm"
    fileio.write_ppm(path, img)
    blob = path.read_bytes()
    assert blob.startswith(b"P6\n3 2\n255\n")
    pixels = blob.split(b"255\n", 1)[1]
    assert len(pixels) == 2 * 3 * 3
    assert pixels[0] == 255 and pixels[1] == 128 and pixels[2] == 0
    with pytest.raises(ValueError):
        fileio.write_ppm(tmp_path / "g.ppm", np.zeros((2, 2, 1)))
