import numpy as np
import pytest
from PIL import Image

from zseval import media
from zseval.manifest import SampleRecord

from conftest import write_toy_images


def rotate_about_vertical(points, degrees):
    """Independent rotation matrix for the view-shift property."""
    t = np.radians(degrees)
    rot = np.array(
        [[np.cos(t), 0.0, np.sin(t)], [0.0, 1.0, 0.0], [-np.sin(t), 0.0, np.cos(t)]]
    )
    return points @ rot.T


def lit_pixels_match_within_1px(a, b, value_tol=8):
    """Every lit pixel of one image has a lit near-equal pixel within 1 px in the other."""
    for src, dst in ((a, b), (b, a)):
        rows, cols = np.nonzero(src)
        h, w = dst.shape
        for r, c in zip(rows, cols):
            window = dst[max(0, r - 1) : min(h, r + 2), max(0, c - 1) : min(w, c + 2)]
            value = int(src[r, c])
            hits = (window > 0) & (np.abs(window.astype(int) - value) <= value_tol)
            if not hits.any():
                return False
    return True


class TestFrameSampling:
    def test_identity_when_counts_match(self):
        assert media.sample_frame_indices(8, 8) == [0, 1, 2, 3, 4, 5, 6, 7]

    def test_even_spread(self):
        assert media.sample_frame_indices(16, 8) == [1, 3, 5, 7, 9, 11, 13, 15]

    def test_repeats_when_short(self):
        assert media.sample_frame_indices(3, 8) == [0, 0, 0, 1, 1, 2, 2, 2]

    def test_hundred_frames(self):
        assert media.sample_frame_indices(100, 8) == [6, 18, 31, 43, 56, 68, 81, 93]

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            media.sample_frame_indices(0, 8)
        with pytest.raises(ValueError):
            media.sample_frame_indices(8, 0)

    def test_random_property(self):
        rng = np.random.default_rng(11)
        for _ in range(10_000):
            n = int(rng.integers(1, 500))
            t = int(rng.integers(1, 64))
            indices = media.sample_frame_indices(n, t)
            assert len(indices) == t
            assert indices == sorted(indices)
            assert all(0 <= i < n for i in indices)

    def test_rescaling_preserves_segment_centers(self):
        # N -> cN, T -> cT keeps segment width N/T, so the first T centers coincide
        for n, t, c in [(16, 4, 2), (40, 5, 3), (96, 8, 4), (16, 8, 2)]:
            base = media.sample_frame_indices(n, t)
            scaled = media.sample_frame_indices(c * n, c * t)
            assert scaled[:t] == base


class TestRenderConfig:
    def test_defaults(self):
        cfg = media.RenderConfig()
        assert cfg.view_count == 6
        assert cfg.azimuth_step_deg == 30.0
        assert cfg.elevation_deg == 30.0
        assert cfg.image_size == 224

    def test_rejects_full_circle_overrun(self):
        with pytest.raises(ValueError):
            media.RenderConfig(view_count=13, azimuth_step_deg=30.0)

    def test_rejects_tiny_images(self):
        with pytest.raises(ValueError):
            media.RenderConfig(image_size=8)

    def test_rejects_perspective(self):
        with pytest.raises(ValueError):
            media.RenderConfig(projection="perspective")


class TestRenderDepthViews:
    def test_degenerate_cloud(self):
        cloud = media.PointCloud(np.zeros((1, 3)))
        with pytest.raises(media.DegenerateCloud):
            media.render_depth_views(cloud, media.RenderConfig())
        coincident = media.PointCloud(np.ones((5, 3)))
        with pytest.raises(media.DegenerateCloud):
            media.render_depth_views(coincident, media.RenderConfig())

    def test_two_points_mirrored_about_center_column(self):
        cloud = media.PointCloud(np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
        cfg = media.RenderConfig(view_count=1, elevation_deg=0.0, image_size=224)
        (view,) = media.render_depth_views(cloud, cfg)
        rows, cols = np.nonzero(view)
        assert len(rows) == 2
        assert set(rows) == {112}  # both on the horizontal midline row
        c1, c2 = sorted(cols)
        assert c1 + c2 == 223  # mirrored about the center column
        assert view[rows[0], cols[0]] == 255 and view[rows[1], cols[1]] == 255

    def test_view_count_and_azimuths(self):
        # a marker point straight ahead of view k should vanish from other views
        rng = np.random.default_rng(3)
        cloud = media.PointCloud(rng.normal(size=(50, 3)))
        cfg = media.RenderConfig(view_count=6, image_size=64)
        views = media.render_depth_views(cloud, cfg)
        assert len(views) == 6
        assert all(v.shape == (64, 64) for v in views)
        assert all(v.dtype == np.uint8 for v in views)

    def test_depth_range_and_empty_pixels(self):
        rng = np.random.default_rng(5)
        cloud = media.PointCloud(rng.normal(size=(300, 3)))
        cfg = media.RenderConfig(view_count=2, image_size=48)
        for view in media.render_depth_views(cloud, cfg):
            lit = view[view > 0]
            assert lit.max() == 255
            # empty pixels exactly 0 by construction; lit values within [0, 255]
            assert view.min() == 0

    def test_mirrored_cloud_gives_mirrored_view(self):
        rng = np.random.default_rng(9)
        points = rng.normal(size=(120, 3))
        cfg = media.RenderConfig(view_count=1, image_size=64)
        (original,) = media.render_depth_views(media.PointCloud(points), cfg)
        mirrored_points = points * np.array([-1.0, 1.0, 1.0])
        (mirrored,) = media.render_depth_views(media.PointCloud(mirrored_points), cfg)
        assert np.array_equal(np.fliplr(original), mirrored)

    def test_rotation_shifts_views_by_one_slot(self):
        rng = np.random.default_rng(21)
        points = rng.normal(size=(48, 3))
        cfg = media.RenderConfig(view_count=6, image_size=64)
        views = media.render_depth_views(media.PointCloud(points), cfg)
        rotated = media.render_depth_views(
            media.PointCloud(rotate_about_vertical(points, -cfg.azimuth_step_deg)), cfg
        )
        for k in range(cfg.view_count - 1):
            assert lit_pixels_match_within_1px(rotated[k], views[k + 1])


class TestOffLoading:
    def test_standard_header(self, tmp_path):
        path = tmp_path / "model.off"
        path.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        cloud = media.load_off(path)
        assert cloud.points.shape == (3, 3)

    def test_glued_header(self, tmp_path):
        path = tmp_path / "model.off"
        path.write_text("OFF3 0 0\n0 0 0\n1 0 0\n0 1 0\n")
        cloud = media.load_off(path)
        assert cloud.points.shape == (3, 3)

    def test_truncated_vertices(self, tmp_path):
        path = tmp_path / "model.off"
        path.write_text("OFF\n5 0 0\n0 0 0\n1 0 0\n")
        with pytest.raises(media.MediaError):
            media.load_off(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "model.off"
        path.write_text("3 0 0\n0 0 0\n1 0 0\n0 1 0\n")
        with pytest.raises(media.MediaError):
            media.load_off(path)


class TestLoadFrames:
    def sample_for(self, path):
        return SampleRecord("aa" * 8, str(path), 0, "video")

    def test_directory_identity(self, tmp_path):
        write_toy_images(tmp_path / "frames", count=8)
        frames = media.load_frames(
            self.sample_for(tmp_path / "frames"), media.FrameSamplerConfig(8)
        )
        assert len(frames) == 8

    def test_directory_of_100(self, tmp_path):
        paths = write_toy_images(tmp_path / "frames", count=100)
        frames = media.load_frames(
            self.sample_for(tmp_path / "frames"), media.FrameSamplerConfig(8)
        )
        expected = [6, 18, 31, 43, 56, 68, 81, 93]
        for frame, idx in zip(frames, expected):
            with Image.open(paths[idx]) as want:
                assert np.array_equal(np.asarray(frame), np.asarray(want.convert("RGB")))

    def test_empty_directory(self, tmp_path):
        (tmp_path / "frames").mkdir()
        with pytest.raises(media.MediaError):
            media.load_frames(self.sample_for(tmp_path / "frames"), media.FrameSamplerConfig(8))

    def test_missing_source(self, tmp_path):
        with pytest.raises(media.MediaError):
            media.load_frames(self.sample_for(tmp_path / "nope"), media.FrameSamplerConfig(8))

    def test_subprocess_decoder_path(self, tmp_path):
        # stand-in decoder writes 10 PNGs into the requested directory
        video = tmp_path / "clip.fake"
        video.write_bytes(b"not really a video")
        script = (
            "import sys; from PIL import Image; import numpy as np\n"
            "out = sys.argv[2]\n"
            "for i in range(10):\n"
            "    arr = np.full((8, 8, 3), i * 20, dtype=np.uint8)\n"
            "    Image.fromarray(arr, 'RGB').save(f'{out}/{i:04d}.png')\n"
        )
        decoder = ("python3", "-c", script, "{input}", "{outdir}")
        frames = media.load_frames(
            self.sample_for(video), media.FrameSamplerConfig(4), decoder_cmd=decoder
        )
        assert len(frames) == 4
        # segment centers of 10 frames: [1, 3, 6, 8] -> intensities 20,60,120,160
        assert [f.getpixel((0, 0))[0] for f in frames] == [20, 60, 120, 160]

    def test_failing_decoder(self, tmp_path):
        video = tmp_path / "clip.fake"
        video.write_bytes(b"x")
        decoder = ("python3", "-c", "import sys; sys.exit(3)", "{input}", "{outdir}")
        with pytest.raises(media.MediaError):
            media.load_frames(self.sample_for(video), media.FrameSamplerConfig(4), decoder_cmd=decoder)
