import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pavescan.core import ColorImage, DepthImage, RGBDFrame, RigidTransform
from pavescan.dataio import (
    DatasetManifest,
    FrameEntry,
    GroundTruthDefect,
    PavementField,
    SynthSpec,
    generate_synthetic,
    preset,
    read_dataset,
    read_manifest,
    write_dataset,
)
from pavescan.dataio.netpbm import decode_pgm16, decode_ppm, encode_pgm16, encode_ppm
from pavescan.dataio.synthetic import pothole, rut
from pavescan.errors import (
    CorruptImage,
    DefectOutsideLane,
    InvariantError,
    MissingFile,
    MissingManifest,
    ValidationError,
)


class TestNetpbm:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint16, st.tuples(st.integers(1, 12), st.integers(1, 12))))
    def test_pgm_round_trip(self, a):
        np.testing.assert_array_equal(decode_pgm16(encode_pgm16(a)), a)

    def test_pgm_is_big_endian(self):
        blob = encode_pgm16(np.array([[0x0102]], dtype=np.uint16))
        assert blob.endswith(b"\x01\x02")
        assert blob.startswith(b"P5\n1 1\n65535\n")

    def test_ppm_round_trip(self):
        a = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
        np.testing.assert_array_equal(decode_ppm(encode_ppm(a)), a)

    def test_header_comments_are_skipped(self):
        blob = b"P5\n# made by hand\n2 1\n65535\n\x00\x05\x00\x06"
        np.testing.assert_array_equal(decode_pgm16(blob), [[5, 6]])

    def test_wrong_maxval(self):
        with pytest.raises(CorruptImage):
            decode_pgm16(b"P5\n1 1\n255\n\x05")

    def test_wrong_magic(self):
        with pytest.raises(CorruptImage):
            decode_ppm(b"P3\n1 1\n255\n1 2 3")

    def test_truncated(self):
        with pytest.raises(CorruptImage):
            decode_pgm16(b"P5\n2 2\n65535\n\x00\x01")


def tiny_dataset(n=2, extr=None):
    from pavescan.core import CameraIntrinsics

    intr = CameraIntrinsics(40.0, 40.0, 16.0, 12.0, 32, 24)
    rng = np.random.default_rng(4)
    frames = [RGBDFrame(i, ColorImage(rng.integers(0, 256, (24, 32, 3)).astype(np.uint8)),
                        DepthImage(rng.integers(0, 3000, (24, 32)).astype(np.uint16))) for i in range(n)]
    m = DatasetManifest([FrameEntry.standard(i) for i in range(n)], intr, intr, extr,
                        [pothole(1.0, 1.0)])
    return m, frames


class TestDataset:
    def test_round_trip_bit_exact(self, tmp_path):
        m, frames = tiny_dataset(extr=RigidTransform(np.eye(3), np.array([25.0, 0, 0])))
        write_dataset(m, frames, tmp_path)
        m2, f2 = read_dataset(tmp_path)
        assert m2.dumps() == m.dumps()
        for a, b in zip(frames, f2):
            assert a.depth == b.depth and a.color == b.color

    def test_two_writes_identical(self, tmp_path):
        m, frames = tiny_dataset()
        write_dataset(m, frames, tmp_path / "a")
        write_dataset(m, frames, tmp_path / "b")
        for name in ("manifest.json", "frames/depth_0001.pgm", "frames/color_0000.ppm"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_empty_frame_list(self, tmp_path):
        m, _ = tiny_dataset(0)
        write_dataset(m, [], tmp_path)
        assert (tmp_path / "manifest.json").is_file()
        assert not (tmp_path / "frames").exists()

    def test_manifest_keys(self, tmp_path):
        m, frames = tiny_dataset()
        write_dataset(m, frames, tmp_path)
        d = json.loads((tmp_path / "manifest.json").read_text())
        assert d["version"] == 1 and d["preregistered"] is True
        assert {"frames", "depth_intrinsics", "color_intrinsics", "travel_axis", "ground_truth"} <= set(d)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingManifest):
            read_manifest(tmp_path)

    def test_missing_file_names_path(self, tmp_path):
        m, frames = tiny_dataset()
        write_dataset(m, frames, tmp_path)
        (tmp_path / "frames/depth_0001.pgm").unlink()
        with pytest.raises(MissingFile) as ei:
            read_dataset(tmp_path)
        assert "depth_0001.pgm" in str(ei.value)

    def test_corrupt_depth(self, tmp_path):
        m, frames = tiny_dataset()
        write_dataset(m, frames, tmp_path)
        (tmp_path / "frames/depth_0000.pgm").write_bytes(b"P5\n32 24\n255\n" + bytes(32 * 24))
        with pytest.raises(CorruptImage):
            read_dataset(tmp_path)

    def test_mismatched_resolution_rejected_before_write(self, tmp_path):
        m, frames = tiny_dataset()
        frames[1] = RGBDFrame(1, frames[1].color, DepthImage(np.zeros((10, 10), np.uint16)))
        with pytest.raises(ValidationError):
            write_dataset(m, frames, tmp_path / "out")
        assert not (tmp_path / "out").exists()

    def test_indices_strictly_increasing(self):
        m, _ = tiny_dataset()
        with pytest.raises(ValidationError):
            DatasetManifest([FrameEntry.standard(1), FrameEntry.standard(1)], m.depth_intr, m.color_intr)

    def test_defect_dimensions_positive(self):
        with pytest.raises(InvariantError):
            GroundTruthDefect("pothole", 0.0, 300.0, 400.0, 1.0, 1.0)


SMALL = dict(width=160, height=120, gsd_mm=5.0, frame_count=3)


class TestSynthetic:
    def test_flat_noiseless_depth_is_camera_height(self):
        spec = SynthSpec(noise_sigma0=0.0, noise_k=0.0, **SMALL)
        _, frames = generate_synthetic(spec)
        for f in frames:
            assert np.all(f.depth.pixels == 800)

    def test_tilted_plane_within_quantization(self):
        spec = SynthSpec(noise_sigma0=0.0, noise_k=0.0, tilt=(0.02, -0.01), **SMALL)
        field = PavementField(spec)
        intr = spec.intrinsics()
        _, frames = generate_synthetic(spec)
        vv, uu = np.mgrid[0:spec.height, 0:spec.width]
        a = (uu - intr.cx) / intr.fx
        b = (vv - intr.cy) / intr.fy
        for f, pos in zip(frames, spec.camera_positions()):
            # the ray through (u, v) meets the tilted plane at this depth
            analytic = (spec.camera_height_mm - field.plane(*pos)) / (1 + 0.02 * a - 0.01 * b)
            assert np.abs(f.depth.pixels - analytic).max() <= 0.5 + 1e-9

    def test_rut_groove_centre_is_minus_depth(self):
        spec = preset("rut")
        field = PavementField(spec)
        g = spec.defects[0]
        h = field.height(g.offset_m * 1000, g.station_m * 1000) - field.plane(g.offset_m * 1000, g.station_m * 1000)
        assert h == pytest.approx(-10.0, abs=1e-12)

    def test_seeded_determinism(self, tmp_path):
        spec = SynthSpec(defects=[pothole(0.4, 1.8, width_mm=200, length_mm=200)], seed=9, **SMALL)
        for name in ("a", "b"):
            write_dataset(*generate_synthetic(spec), tmp_path / name)
        for p in (tmp_path / "a").rglob("*"):
            if p.is_file():
                assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()

    def test_different_seed_different_noise(self):
        a = generate_synthetic(SynthSpec(seed=1, **SMALL))[1][0].depth.pixels
        b = generate_synthetic(SynthSpec(seed=2, **SMALL))[1][0].depth.pixels
        assert not np.array_equal(a, b)

    def test_defect_outside_lane(self):
        with pytest.raises(DefectOutsideLane):
            generate_synthetic(SynthSpec(defects=[pothole(0.5, 0.1, width_mm=400)], **SMALL))

    def test_overlap_fraction_validated(self):
        with pytest.raises(InvariantError):
            SynthSpec(overlap_fraction=1.0)

    def test_camera_height_in_sensor_range(self):
        with pytest.raises(InvariantError):
            SynthSpec(camera_height_mm=100.0)

    @pytest.mark.parametrize("overlap", [0.3, 0.5, 0.6, 0.77])
    def test_consecutive_footprints_overlap(self, overlap):
        spec = SynthSpec(overlap_fraction=overlap, **SMALL)
        p = spec.camera_positions()
        extent = spec.along_px * spec.gsd_mm
        shared = (extent - (p[1][1] - p[0][1])) / extent
        assert shared >= overlap

    def test_manifest_carries_truth_and_positions(self):
        spec = SynthSpec(defects=[pothole(0.4, 1.8, width_mm=200, length_mm=200)], **SMALL)
        m, _ = generate_synthetic(spec)
        assert m.ground_truth == spec.defects
        assert m.frames[1].position_mm[1] - m.frames[0].position_mm[1] == spec.step_mm
        assert SynthSpec.from_dict({k: v for k, v in m.synthetic.items()
                                    if k in SynthSpec.__dataclass_fields__}) == spec

    def test_pothole_shape(self):
        spec = SynthSpec(defects=[pothole(1.0, 1.5, 40.0, 300.0, 400.0)], **SMALL)
        f = PavementField(spec)
        assert f.depression(1500.0, 1000.0) == pytest.approx(40.0)
        assert f.depression(1500.0 + 150.0, 1000.0) == pytest.approx(0.0)
        assert f.depression(1500.0, 1000.0 + 201.0) == 0.0

    def test_rut_gaussian_cross_section(self):
        spec = SynthSpec(defects=[rut(1.5, 10.0, 300.0, 1.0, 2000.0)], **SMALL)
        f = PavementField(spec)
        assert f.depression(1500.0 + 75.0, 1000.0) == pytest.approx(10.0 * np.exp(-0.5))

    def test_travel_axis_x(self):
        spec = SynthSpec(travel_axis="x", noise_sigma0=0.0, noise_k=0.0, **SMALL)
        m, frames = generate_synthetic(spec)
        assert m.travel_axis == "x" and np.all(frames[0].depth.pixels == 800)
