import numpy as np
import pytest

from xmrag_extractor.encoders import EncoderError, HashedEncoder, resolve_encoder


@pytest.fixture
def image_file(tmp_path):
    path = tmp_path / "pic.bin"
    path.write_bytes(b"not really pixels, but stable bytes")
    return path


class TestHashedEncoder:
    def test_image_deterministic(self, image_file):
        enc = HashedEncoder(dim=32, tokens=8)
        a = enc.encode_image(image_file)
        b = enc.encode_image(image_file)
        assert a.shape == (8, 32)
        assert a.dtype == np.float32
        assert np.array_equal(a, b)

    def test_different_bytes_different_features(self, tmp_path, image_file):
        other = tmp_path / "other.bin"
        other.write_bytes(b"different payload")
        enc = HashedEncoder(dim=32, tokens=8)
        assert not np.array_equal(enc.encode_image(image_file), enc.encode_image(other))

    def test_unreadable_image(self, tmp_path):
        enc = HashedEncoder()
        with pytest.raises(EncoderError, match="unreadable"):
            enc.encode_image(tmp_path / "missing.png")

    def test_text_rows_unit_norm_and_deterministic(self):
        enc = HashedEncoder(dim=24)
        rows = enc.encode_texts(["red bird", "red bird", "blue sky"])
        assert rows.shape == (3, 24)
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        assert np.abs(norms - 1.0).max() < 1e-5
        cosine = float(rows[0] @ rows[1])
        assert abs(cosine - 1.0) < 1e-6  # identical text -> identical row
        assert not np.array_equal(rows[0], rows[2])

    def test_unicode_normalization_stable(self):
        enc = HashedEncoder(dim=16)
        composed = "café"
        decomposed = "café"
        rows = enc.encode_texts([composed, decomposed])
        assert np.array_equal(rows[0], rows[1])


class TestResolveEncoder:
    def test_hashed_ids(self):
        enc = resolve_encoder("hashed-48")
        assert enc.info.vision_dim == 48

    def test_bad_hashed_id(self):
        with pytest.raises(EncoderError):
            resolve_encoder("hashed-xl")

    def test_clip_alias_fails_cleanly_without_weights(self, monkeypatch):
        # no model hub in CI: the registry must resolve the documented
        # identifier and surface a clean load failure
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")
        monkeypatch.setenv("TRANSFORMERS_OFFLINE", "1")
        with pytest.raises(EncoderError, match="cannot load model|clip backend"):
            resolve_encoder("CLIP ViT-L/14")
