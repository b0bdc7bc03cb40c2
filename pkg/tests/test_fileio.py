"""Disk formats: PNG images, PFM disparity maps, split files, JSON specs,
and whole dataset directories."""

import numpy as np
import pytest

from stereodepth.fileio import (
    load_dataset,
    read_bank_spec,
    read_pfm,
    read_png,
    read_scene_spec,
    read_split,
    save_dataset,
    scene_spec_from_dict,
    scene_spec_to_dict,
    write_bank_spec,
    write_pfm,
    write_png,
    write_scene_spec,
    write_split,
)
from stereodepth.levels import CameraModel
from stereodepth.scenes import BankSpec, Layer, SceneSpec, Texture, make_bank, render


def _spec():
    cam = CameraModel(baseline_times_focal=80.0, depth_cap=80.0)
    layers = (
        Layer(x0=-2, y0=0, x1=36, y1=10, disparity=2.0,
              texture=Texture(kind="gradient", rgb0=(0.1, 0.2, 0.3),
                              rgb1=(0.8, 0.7, 0.6), axis="y")),
        Layer(x0=8, y0=2, x1=20, y1=8, disparity=6.5,
              texture=Texture(kind="checker", cell=3)),
    )
    return SceneSpec(width=32, height=10, seed=5, camera=cam, layers=layers)


# PNG

def test_png_rgb_round_trip_within_one_level(tmp_path, rng):
    img = rng.random((3, 12, 17), dtype=np.float32)
    write_png(tmp_path / "a.png", img)
    back = read_png(tmp_path / "a.png")
    assert back.shape == (3, 12, 17)
    assert back.dtype == np.float32
    assert np.max(np.abs(back - img)) <= 1.0 / 255.0 + 1e-7


def test_png_binary_mask_round_trip_exact(tmp_path):
    mask = np.zeros((6, 9), np.uint8)
    mask[2:4, 3:7] = 1
    write_png(tmp_path / "m.png", mask)
    back = read_png(tmp_path / "m.png")
    assert back.shape == (6, 9)
    np.testing.assert_array_equal((back > 0.5).astype(np.uint8), mask)


def test_png_values_clip_to_unit_range(tmp_path):
    img = np.array([[[-0.5, 2.0]], [[0.0, 1.0]], [[0.25, 0.75]]], np.float32)
    write_png(tmp_path / "c.png", img)
    back = read_png(tmp_path / "c.png")
    assert back.min() >= 0.0 and back.max() <= 1.0
    assert back[0, 0, 0] == 0.0 and back[0, 0, 1] == 1.0


def test_png_rejects_bad_shapes(tmp_path):
    with pytest.raises(ValueError, match="3,H,W"):
        write_png(tmp_path / "x.png", np.zeros((4, 5, 6), np.float32))
    with pytest.raises(ValueError, match="shape"):
        write_png(tmp_path / "x.png", np.zeros((2, 3, 4, 5), np.float32))


# PFM

def test_pfm_round_trip_bitwise_2d(tmp_path, rng):
    disp = (rng.random((7, 11)) * 30.0).astype(np.float32)
    disp[0, 0] = 0.0
    disp[3, 4] = 1e-20
    write_pfm(tmp_path / "d.pfm", disp)
    back = read_pfm(tmp_path / "d.pfm")
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, disp)
    assert back.tobytes() == disp.tobytes()


def test_pfm_round_trip_bitwise_3d(tmp_path, rng):
    arr = rng.standard_normal((5, 6, 3)).astype(np.float32)
    write_pfm(tmp_path / "c.pfm", arr)
    np.testing.assert_array_equal(read_pfm(tmp_path / "c.pfm"), arr)


def test_pfm_big_endian_read(tmp_path):
    # positive scale marks big-endian payload
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    raw = b"Pf\n3 2\n1.0\n" + arr[::-1].astype(">f4").tobytes()
    (tmp_path / "be.pfm").write_bytes(raw)
    np.testing.assert_array_equal(read_pfm(tmp_path / "be.pfm"), arr)


def test_pfm_rejects_bad_write_shape(tmp_path):
    with pytest.raises(ValueError, match=r"\[H,W\] or \[H,W,3\]"):
        write_pfm(tmp_path / "x.pfm", np.zeros((4, 4, 2), np.float32))


def test_pfm_truncated_header_names_byte(tmp_path):
    (tmp_path / "t.pfm").write_bytes(b"Pf\n3 ")
    with pytest.raises(ValueError, match="truncated PFM header at byte"):
        read_pfm(tmp_path / "t.pfm")


def test_pfm_bad_magic(tmp_path):
    (tmp_path / "m.pfm").write_bytes(b"P5\n3 2\n-1.0\n" + b"\x00" * 24)
    with pytest.raises(ValueError, match="bad PFM magic"):
        read_pfm(tmp_path / "m.pfm")


def test_pfm_malformed_dims(tmp_path):
    (tmp_path / "d.pfm").write_bytes(b"Pf\nthree 2\n-1.0\n" + b"\x00" * 24)
    with pytest.raises(ValueError, match="malformed PFM dims/scale at byte"):
        read_pfm(tmp_path / "d.pfm")


def test_pfm_nonpositive_dims(tmp_path):
    (tmp_path / "z.pfm").write_bytes(b"Pf\n0 2\n-1.0\n")
    with pytest.raises(ValueError, match="invalid PFM dims 0x2"):
        read_pfm(tmp_path / "z.pfm")


def test_pfm_zero_scale(tmp_path):
    (tmp_path / "s.pfm").write_bytes(b"Pf\n3 2\n0.0\n" + b"\x00" * 24)
    with pytest.raises(ValueError, match="scale must be nonzero"):
        read_pfm(tmp_path / "s.pfm")


def test_pfm_truncated_payload_reports_byte_counts(tmp_path):
    (tmp_path / "p.pfm").write_bytes(b"Pf\n3 2\n-1.0\n" + b"\x00" * 20)
    with pytest.raises(ValueError, match="expected 24 bytes, got 20"):
        read_pfm(tmp_path / "p.pfm")


# split files

def test_split_round_trip(tmp_path):
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        for name in ("left.png", "right.png"):
            write_png(tmp_path / sub / name, np.zeros((3, 2, 2), np.float32))
    pairs = [("a/left.png", "a/right.png"), ("b/left.png", "b/right.png")]
    write_split(tmp_path / "split.txt", pairs)
    back = read_split(tmp_path, tmp_path / "split.txt")
    assert [(str(l.relative_to(tmp_path)), str(r.relative_to(tmp_path)))
            for l, r in back] == pairs


def test_split_skips_blank_and_comment_lines(tmp_path):
    write_png(tmp_path / "l.png", np.zeros((3, 2, 2), np.float32))
    write_png(tmp_path / "r.png", np.zeros((3, 2, 2), np.float32))
    (tmp_path / "s.txt").write_text("# header\n\nl.png r.png\n")
    assert len(read_split(tmp_path, tmp_path / "s.txt")) == 1


def test_split_malformed_line_names_line_number(tmp_path):
    write_png(tmp_path / "a.png", np.zeros((3, 2, 2), np.float32))
    write_png(tmp_path / "b.png", np.zeros((3, 2, 2), np.float32))
    (tmp_path / "s.txt").write_text("a.png b.png\nonly_one.png\n")
    with pytest.raises(ValueError, match=r"s\.txt:2: expected 'left right'"):
        read_split(tmp_path, tmp_path / "s.txt")


def test_split_missing_image_names_line_number(tmp_path):
    (tmp_path / "s.txt").write_text("ghost_l.png ghost_r.png\n")
    with pytest.raises(FileNotFoundError, match=r"s\.txt:1: missing image"):
        read_split(tmp_path, tmp_path / "s.txt")


# scene and bank specs

def test_scene_spec_json_round_trip(tmp_path):
    spec = _spec()
    write_scene_spec(tmp_path / "spec.json", spec)
    assert read_scene_spec(tmp_path / "spec.json") == spec


def test_scene_spec_dict_round_trip():
    spec = _spec()
    assert scene_spec_from_dict(scene_spec_to_dict(spec)) == spec


def test_scene_spec_rejects_unknown_field():
    d = scene_spec_to_dict(_spec())
    d["frobnicate"] = 1
    with pytest.raises(ValueError, match="scene spec: unknown field 'frobnicate'"):
        scene_spec_from_dict(d)


def test_scene_spec_rejects_unknown_nested_field():
    d = scene_spec_to_dict(_spec())
    d["layers"][1]["texture"]["speckle"] = True
    with pytest.raises(ValueError, match="layer 1 texture: unknown field 'speckle'"):
        scene_spec_from_dict(d)


def test_bank_spec_round_trip(tmp_path):
    bank = BankSpec(seed=3, count=4, width=48, height=32,
                    integer_disparities=True, texture_kinds=("noise",))
    write_bank_spec(tmp_path / "bank.json", bank)
    assert read_bank_spec(tmp_path / "bank.json") == bank


def test_bank_spec_rejects_unknown_field(tmp_path):
    (tmp_path / "bank.json").write_text('{"seed": 1, "count": 2, "sprocket": 9}')
    with pytest.raises(ValueError, match="bank spec: unknown field 'sprocket'"):
        read_bank_spec(tmp_path / "bank.json")


# dataset directories

def test_dataset_round_trip(tmp_path):
    specs = list(make_bank(BankSpec(seed=11, count=3, width=48, height=32)))
    root = save_dataset(tmp_path / "data", specs)
    samples = load_dataset(root)
    assert len(samples) == 3
    rendered = [render(s) for s in specs]
    for got, want in zip(samples, rendered):
        assert np.max(np.abs(got.left - want.left)) <= 1.0 / 255.0 + 1e-7
        assert np.max(np.abs(got.right - want.right)) <= 1.0 / 255.0 + 1e-7
        np.testing.assert_array_equal(got.gt_disparity_L, want.gt_disparity_L)
        np.testing.assert_array_equal(got.gt_disparity_R, want.gt_disparity_R)
        np.testing.assert_array_equal(got.gt_occlusion_L, want.gt_occlusion_L)
        np.testing.assert_array_equal(got.gt_occlusion_R, want.gt_occlusion_R)
        assert got.camera == want.camera


def test_load_dataset_without_split_file(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError, match="no split.txt under"):
        load_dataset(tmp_path / "empty")


def test_load_dataset_tolerates_missing_ground_truth(tmp_path):
    root = tmp_path / "bare"
    (root / "scene_0000").mkdir(parents=True)
    write_png(root / "scene_0000" / "left.png", np.zeros((3, 4, 4), np.float32))
    write_png(root / "scene_0000" / "right.png", np.zeros((3, 4, 4), np.float32))
    write_split(root / "split.txt", [("scene_0000/left.png", "scene_0000/right.png")])
    samples = load_dataset(root)
    assert len(samples) == 1
    assert samples[0].gt_disparity_L is None
    assert samples[0].camera is None
