import numpy as np
import pytest

from flowcomplete import cloud_io


def random_cloud(rng, n):
    return rng.uniform(-10, 10, size=(n, 3))


class TestXyz:
    def test_literal_three_lines(self, tmp_path):
        path = tmp_path / "cloud.xyz"
        path.write_text("0 0 0\n1 2 3\n-1 0.5 2\n")
        cloud = cloud_io.read_cloud(path)
        assert cloud.tolist() == [[0, 0, 0], [1, 2, 3], [-1, 0.5, 2]]

    def test_round_trip_within_print_precision(self, tmp_path):
        rng = np.random.default_rng(0)
        cloud = random_cloud(rng, 50)
        path = tmp_path / "cloud.xyz"
        cloud_io.write_cloud(cloud, path)
        back = cloud_io.read_cloud(path)
        assert np.allclose(back, cloud, rtol=1e-8, atol=1e-12)

    def test_second_write_stable(self, tmp_path):
        # printing at 9 significant digits is idempotent after one trip
        rng = np.random.default_rng(1)
        a = tmp_path / "a.xyz"
        b = tmp_path / "b.xyz"
        cloud_io.write_cloud(random_cloud(rng, 20), a)
        cloud_io.write_cloud(cloud_io.read_cloud(a), b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_column_count(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0\n1 2\n")
        with pytest.raises(ValueError, match="line 2"):
            cloud_io.read_cloud(path)

    def test_bad_number(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 zero 0\n")
        with pytest.raises(ValueError, match="line 1"):
            cloud_io.read_cloud(path)

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "cloud.xyz"
        path.write_text("# header\n\n1 1 1\n")
        assert cloud_io.read_cloud(path).tolist() == [[1, 1, 1]]


class TestPlyBinary:
    def test_write_read_write_byte_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, 100)
        a = tmp_path / "a.ply"
        b = tmp_path / "b.ply"
        cloud_io.write_cloud(cloud, a, "ply-binary")
        back = cloud_io.read_cloud(a)
        cloud_io.write_cloud(back, b, "ply-binary")
        assert a.read_bytes() == b.read_bytes()

    def test_read_preserves_stored_precision(self, tmp_path):
        rng = np.random.default_rng(3)
        cloud = random_cloud(rng, 40)
        path = tmp_path / "cloud.ply"
        cloud_io.write_cloud(cloud, path, "ply-binary")
        back = cloud_io.read_cloud(path)
        # storage is float32; the read must match that rounding exactly
        assert np.array_equal(back, cloud.astype("<f4").astype(np.float64))

    def test_empty_cloud(self, tmp_path):
        path = tmp_path / "empty.ply"
        cloud_io.write_cloud(np.empty((0, 3)), path, "ply-binary")
        assert cloud_io.read_cloud(path).shape == (0, 3)

    def test_truncated_body(self, tmp_path):
        rng = np.random.default_rng(4)
        path = tmp_path / "cloud.ply"
        cloud_io.write_cloud(random_cloud(rng, 10), path, "ply-binary")
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            cloud_io.read_cloud(path)

    def test_missing_vertex_element(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("ply\nformat ascii 1.0\nend_header\n")
        with pytest.raises(ValueError, match="element vertex"):
            cloud_io.read_cloud(path)

    def test_missing_property(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nend_header\n0 0\n"
        )
        with pytest.raises(ValueError, match="property 'z'"):
            cloud_io.read_cloud(path)

    def test_not_a_ply(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_bytes(b"garbage")
        with pytest.raises(ValueError, match="missing header"):
            cloud_io.read_cloud(path)


class TestPlyAscii:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        cloud = random_cloud(rng, 30)
        path = tmp_path / "cloud.ply"
        cloud_io.write_cloud(cloud, path, "ply")
        back = cloud_io.read_cloud(path)
        assert np.allclose(back, cloud, rtol=1e-8, atol=1e-12)

    def test_binary_and_ascii_agree(self, tmp_path):
        rng = np.random.default_rng(6)
        cloud = random_cloud(rng, 25).astype("<f4").astype(np.float64)
        pa = tmp_path / "a.ply"
        pb = tmp_path / "b.ply"
        cloud_io.write_cloud(cloud, pa, "ply")
        cloud_io.write_cloud(cloud, pb, "ply-binary")
        ascii_back = cloud_io.read_cloud(pa)
        binary_back = cloud_io.read_cloud(pb)
        assert np.allclose(ascii_back, binary_back, rtol=1e-6, atol=1e-9)


class TestFormatGuessing:
    def test_unknown_extension(self, tmp_path):
        with pytest.raises(ValueError, match="guess"):
            cloud_io.read_cloud(tmp_path / "cloud.bin")

    def test_unknown_format_name(self, tmp_path):
        with pytest.raises(ValueError, match="unknown cloud format"):
            cloud_io.write_cloud(np.zeros((1, 3)), tmp_path / "c.xyz", "npz")


class TestManifest:
    def test_round_trip(self, tmp_path):
        entries = [
            cloud_io.ManifestEntry("case-000", "scenes/000.ply", "scans/000.ply", 12),
            cloud_io.ManifestEntry("case-001", "scenes/001.ply", "scans/001.ply", 13),
        ]
        path = tmp_path / "manifest.tsv"
        cloud_io.write_manifest(entries, path)
        assert cloud_io.read_manifest(path) == entries

    def test_bad_field_count(self, tmp_path):
        path = tmp_path / "manifest.tsv"
        path.write_text("case-0\tscene.ply\n")
        with pytest.raises(ValueError, match="line 1"):
            cloud_io.read_manifest(path)

    def test_bad_seed(self, tmp_path):
        path = tmp_path / "manifest.tsv"
        path.write_text("case-0\ta.ply\tb.ply\ttwelve\n")
        with pytest.raises(ValueError, match="bad seed"):
            cloud_io.read_manifest(path)
