import hashlib
import zipfile

import pytest

from safebocp import datasets as ds

PAYLOAD = b"1\t1\t4\t0\n2\t1\t3\t0\n"


@pytest.fixture
def mirror(tmp_path):
    """Local archive plus its published digest, served over file://."""
    src = tmp_path / "mirror"
    src.mkdir()
    archive = src / "ml-100k.zip"
    with zipfile.ZipFile(archive, "w") as zf:
        zf.writestr("ml-100k/u.data", PAYLOAD)
    digest = hashlib.md5(archive.read_bytes()).hexdigest()
    (src / "ml-100k.zip.md5").write_text(f"MD5 (ml-100k.zip) = {digest}\n")
    return archive.as_uri(), digest


class TestFetch:
    def test_download_verify_extract(self, tmp_path, mirror):
        url, digest = mirror
        res = ds.fetch(dest=tmp_path / "cache", url=url)
        assert res.downloaded
        assert res.path.read_bytes() == PAYLOAD
        assert (tmp_path / "cache" / "ml-100k.zip.md5").read_text().strip() == digest
        assert ds.ratings_path(tmp_path / "cache") == res.path

    def test_second_call_is_offline_noop(self, tmp_path, mirror):
        url, _ = mirror
        ds.fetch(dest=tmp_path / "cache", url=url)
        res = ds.fetch(dest=tmp_path / "cache", url="file:///nonexistent/ml-100k.zip")
        assert not res.downloaded
        assert res.path.read_bytes() == PAYLOAD

    def test_checksum_mismatch_quarantines(self, tmp_path, mirror):
        url, _ = mirror
        dest = tmp_path / "cache"
        with pytest.raises(ds.ChecksumError, match="expected md5"):
            ds.fetch(dest=dest, url=url, md5="0" * 32)
        assert (dest / "ml-100k.zip.quarantine").is_file()
        assert not (dest / "ml-100k.zip").exists()
        assert not (dest / "ml-100k" / "u.data").exists()

    def test_offline_names_target(self, tmp_path):
        dest = tmp_path / "cache"
        with pytest.raises(ds.FetchError) as info:
            ds.fetch(dest=dest, url="file:///nonexistent/ml-100k.zip", md5="0" * 32)
        assert str(dest / "ml-100k" / "u.data") in str(info.value)

    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(ValueError, match="unknown dataset"):
            ds.fetch("ml-1m", dest=tmp_path)


class TestLocation:
    def test_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ds.DATA_DIR_ENV, str(tmp_path))
        assert ds.data_dir() == tmp_path

    def test_missing_ratings_message(self, tmp_path):
        with pytest.raises(FileNotFoundError) as info:
            ds.ratings_path(tmp_path)
        msg = str(info.value)
        assert str(tmp_path / "ml-100k" / "u.data") in msg
        assert "fetch-data" in msg and ds.DATA_DIR_ENV in msg

    def test_md5sum(self, tmp_path):
        p = tmp_path / "x"
        p.write_bytes(b"abc")
        assert ds.md5sum(p) == "900150983cd24fb0d6963f7d28e17f72"
