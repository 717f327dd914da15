import numpy as np
import pytest

from fevgan.archive import write_archive
from fevgan.identity import (
    VGG16_LAYOUT,
    BackendError,
    SurrogateBackend,
    VGGFaceBackend,
    build_backend,
    embed_face,
    embed_frames,
    extract_features,
    write_vgg_face_weights,
)
from fevgan.synthetic import make_synthetic_dataset


@pytest.fixture(scope="module")
def faces():
    records = make_synthetic_dataset(2, seed=0)
    return records[0].input_image, records[6].input_image


def test_features_deterministic_and_shaped(backend, faces):
    a = extract_features(backend, faces[0])
    b = extract_features(backend, faces[0])
    assert a.shape == (14, 14, 1024)
    assert np.array_equal(a, b)


def test_distinct_subjects_map_apart(backend, faces):
    d = np.linalg.norm(extract_features(backend, faces[0]) - extract_features(backend, faces[1]))
    assert d > 1e-3


def test_zero_image_finite(backend):
    f = extract_features(backend, np.zeros((64, 64, 3), np.float32))
    assert f.shape == (14, 14, 1024) and np.all(np.isfinite(f))


def test_embedding_unit_norm_and_deterministic(backend, faces):
    e = embed_face(backend, faces[0])
    assert e.shape == (256,)
    assert abs(np.linalg.norm(e) - 1) < 1e-5
    assert np.linalg.norm(e - embed_face(backend, faces[0])) == 0


def test_embedding_sensitive_to_one_pixel(backend, faces):
    img = faces[0].copy()
    img[32, 32, 0] = 1.0 if faces[0][32, 32, 0] < 0 else -1.0
    assert np.linalg.norm(embed_face(backend, img) - embed_face(backend, faces[0])) > 0


def test_batched_matches_single(backend):
    frames = np.random.default_rng(0).uniform(-1, 1, (7, 64, 64, 3)).astype(np.float32)
    batched = embed_frames(backend, frames, batch_size=7)
    single = np.stack([embed_face(backend, f) for f in frames])
    assert np.max(np.abs(batched - single)) < 1e-5
    assert np.max(np.abs(embed_frames(backend, frames, batch_size=3) - batched)) < 1e-5


def test_backend_is_frozen():
    b = SurrogateBackend(seed=3)
    assert list(b.parameters()) == []
    assert all(not t.requires_grad for t in b.buffers())
    b.train()
    assert not b.training


def test_surrogate_reproducible_from_reference():
    a = SurrogateBackend(seed=11)
    b = build_backend(a.reference())
    assert b.checksum() == a.checksum()
    ref = dict(a.reference(), checksum="0" * 64)
    with pytest.raises(BackendError):
        build_backend(ref)


def test_surrogate_seeds_differ():
    assert SurrogateBackend(seed=1).checksum() != SurrogateBackend(seed=2).checksum()


def _random_vgg_state(seed=0):
    rng = np.random.default_rng(seed)
    state = {}
    for item in VGG16_LAYOUT:
        if item == "pool":
            continue
        name, cin, cout = item
        state[f"{name}.weight"] = rng.normal(0, (2.0 / (9 * cin)) ** 0.5, (cout, cin, 3, 3)).astype(np.float32)
        state[f"{name}.bias"] = np.zeros(cout, np.float32)
    return state


def test_vgg_backend_shapes(tmp_path, faces):
    path = write_vgg_face_weights(tmp_path / "vgg.arch", _random_vgg_state())
    b = VGGFaceBackend(path)
    assert list(b.parameters()) == []
    f = extract_features(b, faces[0])
    assert f.shape == (14, 14, 1024) and np.all(np.isfinite(f))
    e = embed_face(b, faces[0])
    assert abs(np.linalg.norm(e) - 1) < 1e-5
    assert build_backend(b.reference()).checksum() == b.checksum()


def test_vgg_backend_errors(tmp_path):
    with pytest.raises(BackendError):
        VGGFaceBackend(tmp_path / "missing.arch")
    corrupt = tmp_path / "corrupt.arch"
    write_vgg_face_weights(corrupt, _random_vgg_state())
    data = bytearray(corrupt.read_bytes())
    data[-10] ^= 0xFF
    corrupt.write_bytes(bytes(data))
    with pytest.raises(BackendError, match="checksum"):
        VGGFaceBackend(corrupt)
    partial = _random_vgg_state()
    del partial["conv5_3.weight"]
    with pytest.raises(BackendError, match="conv5_3"):
        VGGFaceBackend(write_vgg_face_weights(tmp_path / "partial.arch", partial))
    wrong = write_archive(tmp_path / "wrong.arch", {"x": np.zeros(3)}, {"backend": "facenet"})
    with pytest.raises(BackendError):
        VGGFaceBackend(wrong)


def test_env_var_selects_weights(tmp_path, monkeypatch):
    path = write_vgg_face_weights(tmp_path / "vgg.arch", _random_vgg_state())
    monkeypatch.setenv("FEVGAN_BACKEND_WEIGHTS", str(path))
    assert build_backend().name == "vgg_face"
    monkeypatch.delenv("FEVGAN_BACKEND_WEIGHTS")
    assert build_backend().name == "surrogate"
