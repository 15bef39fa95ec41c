import numpy as np
import pytest
from PIL import Image

from mri_classify.data import (
    Augmentation,
    DatasetManifest,
    ManifestDataset,
    SampleRecord,
    apply_augmentation,
    augment,
    augment_manifest,
    decode_image,
    draw_augmentation,
    load_sample,
    normalize,
    read_manifest,
    resize_bilinear,
    rotate_image,
    scan_data_root,
    shift_image,
    stratified_group_split,
    write_manifest,
)
from mri_classify.errors import (
    CorruptImageError,
    DatasetLayoutError,
    ImageFormatError,
    ManifestError,
    ShapeError,
)


def write_png(path, array):
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)
    return path


def make_record(i, label="tumor", split="unassigned"):
    rid = f"{label}/img{i:04d}.png"
    return SampleRecord(id=rid, origin_id=rid, path=rid, label=label, split=split)


# -- decoding -----------------------------------------------------------


def test_decode_grayscale_replicates_channels(tmp_path):
    rng = np.random.default_rng(0)
    gray = rng.integers(0, 256, size=(512, 512), dtype=np.uint8)
    p = write_png(tmp_path / "g.png", gray)
    t = decode_image(p)
    assert t.shape == (512, 512, 3)
    assert np.array_equal(t.data[:, :, 0], t.data[:, :, 1])
    assert np.array_equal(t.data[:, :, 0], t.data[:, :, 2])
    assert np.array_equal(t.data[:, :, 0], gray.astype(np.float32))


def test_decode_solid_black(tmp_path):
    p = write_png(tmp_path / "b.png", np.zeros((16, 16, 3), dtype=np.uint8))
    assert not decode_image(p).data.any()


def test_decode_known_grid(tmp_path):
    grid = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3)
    p = write_png(tmp_path / "grid.png", grid)
    t = decode_image(p)
    assert np.array_equal(t.data, grid.astype(np.float32))


def test_decode_jpeg_accepted(tmp_path):
    arr = np.full((8, 8, 3), 128, dtype=np.uint8)
    p = tmp_path / "x.jpg"
    Image.fromarray(arr).save(p, quality=95)
    t = decode_image(p)
    assert t.shape == (8, 8, 3)


def test_decode_rejects_unknown_suffix(tmp_path):
    p = tmp_path / "x.gif"
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(p)
    with pytest.raises(ImageFormatError):
        decode_image(p)


def test_decode_rejects_corrupt_file(tmp_path):
    p = tmp_path / "x.png"
    p.write_bytes(b"this is not a png")
    with pytest.raises(CorruptImageError):
        decode_image(p)


# -- resizing -----------------------------------------------------------


def brute_bilinear(arr, th, tw):
    """Per-pixel half-pixel-center bilinear in float64."""
    h, w, c = arr.shape
    out = np.zeros((th, tw, c))
    for r in range(th):
        for col in range(tw):
            sr = min(max((r + 0.5) * h / th - 0.5, 0.0), h - 1.0)
            sc = min(max((col + 0.5) * w / tw - 0.5, 0.0), w - 1.0)
            r0, c0 = int(np.floor(sr)), int(np.floor(sc))
            r0, c0 = min(r0, h - 2), min(c0, w - 2)
            fr, fc = sr - r0, sc - c0
            out[r, col] = (
                arr[r0, c0] * (1 - fr) * (1 - fc)
                + arr[r0, c0 + 1] * (1 - fr) * fc
                + arr[r0 + 1, c0] * fr * (1 - fc)
                + arr[r0 + 1, c0 + 1] * fr * fc
            )
    return out


def test_resize_512_to_224():
    rng = np.random.default_rng(1)
    img = rng.random((512, 512, 3), dtype=np.float32) * 255
    assert resize_bilinear(img).shape == (224, 224, 3)


def test_resize_same_size_is_identity():
    rng = np.random.default_rng(2)
    img = rng.random((7, 5, 3), dtype=np.float32)
    out = resize_bilinear(img, target=(7, 5))
    assert np.array_equal(out.data, img)


def test_resize_2x2_to_1x1_is_corner_mean():
    img = np.zeros((2, 2, 3), dtype=np.float32)
    img[1, :, :] = 4.0
    out = resize_bilinear(img, target=(1, 1))
    assert np.allclose(out.data, 2.0)


@pytest.mark.parametrize("shape,target", [((5, 7), (3, 4)), ((4, 4), (9, 6)), ((6, 3), (2, 8))])
def test_resize_matches_enumeration(shape, target):
    rng = np.random.default_rng(3)
    img = rng.random((*shape, 3), dtype=np.float32)
    out = resize_bilinear(img, target=target)
    assert np.allclose(out.data, brute_bilinear(img.astype(np.float64), *target), atol=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_resize_never_leaves_input_range(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((11, 9, 3), dtype=np.float32) * 200
    out = resize_bilinear(img, target=(23, 17)).data
    assert out.min() >= img.min() - 1e-4
    assert out.max() <= img.max() + 1e-4


def test_resize_rejects_degenerate():
    with pytest.raises(ShapeError):
        resize_bilinear(np.zeros((1, 5, 3), dtype=np.float32))


# -- normalization -------------------------------------------------------


def test_normalize_endpoints():
    out = normalize(np.array([[[0, 128, 255]]], dtype=np.float32))
    assert out.data[0, 0, 0] == 0.0
    assert out.data[0, 0, 2] == 1.0
    assert abs(out.data[0, 0, 1] - 128 / 255) < 1e-7


def test_normalize_preserves_shape():
    assert normalize(np.zeros((6, 5, 3), dtype=np.float32)).shape == (6, 5, 3)


def test_normalize_rejects_out_of_range():
    with pytest.raises(ValueError):
        normalize(np.full((2, 2, 3), 256.0, dtype=np.float32))
    with pytest.raises(ValueError):
        normalize(np.full((2, 2, 3), -1.0, dtype=np.float32))


# -- augmentation --------------------------------------------------------


def brute_shift(arr, dx, dy):
    h, w, c = arr.shape
    out = np.zeros_like(arr)
    for r in range(h):
        for col in range(w):
            sr, sc = r - dy, col - dx
            if 0 <= sr < h and 0 <= sc < w:
                out[r, col] = arr[sr, sc]
    return out


def test_augment_k_zero():
    assert augment(np.zeros((8, 8, 3), dtype=np.float32), 0, seed=1) == []


@pytest.mark.parametrize("dx,dy", [(3, 0), (-2, 0), (0, 4), (0, -5), (2, -3)])
def test_shift_matches_enumeration(dx, dy):
    rng = np.random.default_rng(4)
    img = rng.random((9, 7, 3), dtype=np.float32)
    out = shift_image(img, dx, dy)
    assert np.array_equal(out.data, brute_shift(img, dx, dy))


def test_rotate_zero_angle_is_identity():
    rng = np.random.default_rng(5)
    img = rng.random((6, 6, 3), dtype=np.float32)
    assert np.allclose(rotate_image(img, 0.0).data, img, atol=1e-6)


def test_rotate_quarter_turn_permutes_pixels():
    # at 90 degrees the inverse map sends out[r, c] to in[c, n-1-r]
    rng = np.random.default_rng(6)
    img = rng.random((5, 5, 3), dtype=np.float32)
    out = rotate_image(img, 90.0).data
    expected = np.zeros_like(img)
    for r in range(5):
        for c in range(5):
            expected[r, c] = img[c, 4 - r]
    assert np.allclose(out, expected, atol=1e-5)


def test_rotate_stays_in_value_range():
    rng = np.random.default_rng(7)
    img = rng.random((16, 16, 3), dtype=np.float32)
    out = rotate_image(img, 13.0).data
    assert out.min() >= -1e-6
    assert out.max() <= img.max() + 1e-6


def test_draw_augmentation_bounds():
    kinds = set()
    for seed in range(200):
        a = draw_augmentation(seed)
        kinds.add(a.kind)
        assert -24 <= a.dx <= 24
        assert -24 <= a.dy <= 24
        assert -15.0 <= a.angle <= 15.0
        if a.kind == "hshift":
            assert a.dy == 0 and a.angle == 0.0
        elif a.kind == "vshift":
            assert a.dx == 0 and a.angle == 0.0
        else:
            assert a.dx == 0 and a.dy == 0
    assert kinds == {"hshift", "vshift", "rotate"}


def test_augment_is_deterministic():
    rng = np.random.default_rng(8)
    img = rng.random((10, 10, 3), dtype=np.float32)
    a = augment(img, 5, seed=123)
    b = augment(img, 5, seed=123)
    assert [p for _, p in a] == [p for _, p in b]
    for (ta, _), (tb, _) in zip(a, b):
        assert np.array_equal(ta.data, tb.data)


def test_augment_records_match_pixels():
    rng = np.random.default_rng(9)
    img = rng.random((12, 12, 3), dtype=np.float32)
    for tensor, params in augment(img, 9, seed=77):
        replayed = apply_augmentation(img, params)
        assert np.array_equal(tensor.data, replayed.data)


# -- manifest ------------------------------------------------------------


def test_manifest_round_trip(tmp_path):
    records = [make_record(i, label) for i in range(3) for label in ("tumor", "healthy")]
    m = DatasetManifest(records)
    m2 = augment_manifest(m, k=2, seed=5)
    path = tmp_path / "manifest.jsonl"
    write_manifest(m2, path)
    loaded = read_manifest(path)
    assert [r.as_dict() for r in loaded.records] == [r.as_dict() for r in m2.records]


def test_manifest_rejects_duplicate_ids():
    r = make_record(1)
    with pytest.raises(ManifestError):
        DatasetManifest([r, make_record(1)]).validate()


def test_manifest_rejects_split_leak():
    origin = make_record(1, split="train")
    stray = SampleRecord(
        id=f"{origin.id}#a0",
        origin_id=origin.id,
        path=origin.path,
        label=origin.label,
        split="test",
        augmentation=Augmentation("hshift", dx=1, seed=1),
    )
    with pytest.raises(ManifestError):
        DatasetManifest([origin, stray]).validate()


def test_record_origin_id_consistency():
    with pytest.raises(ManifestError):
        SampleRecord(id="a", origin_id="b", path="a", label="tumor")


def test_scan_data_root(tmp_path):
    (tmp_path / "tumor").mkdir()
    (tmp_path / "healthy").mkdir()
    for i in range(3):
        write_png(tmp_path / "tumor" / f"t{i}.png", np.zeros((4, 4), dtype=np.uint8))
    for i in range(2):
        write_png(tmp_path / "healthy" / f"h{i}.png", np.zeros((4, 4), dtype=np.uint8))
    m = scan_data_root(tmp_path)
    assert len(m.records) == 5
    assert m.class_counts == {"tumor": 3, "healthy": 2}
    assert all(r.split == "unassigned" for r in m.records)


def test_scan_missing_class_dir(tmp_path):
    (tmp_path / "tumor").mkdir()
    write_png(tmp_path / "tumor" / "t.png", np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(DatasetLayoutError, match="healthy"):
        scan_data_root(tmp_path)


def test_scan_empty_class_dir(tmp_path):
    (tmp_path / "tumor").mkdir()
    (tmp_path / "healthy").mkdir()
    write_png(tmp_path / "tumor" / "t.png", np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(DatasetLayoutError, match="healthy"):
        scan_data_root(tmp_path)


def test_augment_manifest_counts_and_idempotency(tmp_path):
    records = [make_record(i) for i in range(5)]
    m = DatasetManifest(records)
    m9 = augment_manifest(m, k=9, seed=3)
    assert len(m9.augmented()) == 45
    assert len(m9.records) == 50
    # rerunning on its own output regenerates the same bytes
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_manifest(m9, p1)
    write_manifest(augment_manifest(m9, k=9, seed=3), p2)
    assert p1.read_bytes() == p2.read_bytes()


# -- splitting -----------------------------------------------------------


def balanced_manifest(groups_per_class, augments=0, seed=0):
    records = []
    for label in ("tumor", "healthy"):
        for i in range(groups_per_class):
            records.append(make_record(i, label))
    m = DatasetManifest(records)
    return augment_manifest(m, k=augments, seed=seed) if augments else m


def test_split_ten_groups_gives_8_1_1():
    m = stratified_group_split(balanced_manifest(5), seed=0)
    groups = {}
    for r in m.records:
        groups[r.origin_id] = r.split
    counts = {"train": 0, "val": 0, "test": 0}
    for split in groups.values():
        counts[split] += 1
    assert counts == {"train": 8, "val": 1, "test": 1}


def test_split_no_group_straddles():
    m = stratified_group_split(balanced_manifest(20, augments=3), seed=4)
    split_of_origin = {r.id: r.split for r in m.origins()}
    for r in m.augmented():
        assert r.split == split_of_origin[r.origin_id]
    m.validate()


def test_split_deterministic():
    a = stratified_group_split(balanced_manifest(30, augments=2), seed=9)
    b = stratified_group_split(balanced_manifest(30, augments=2), seed=9)
    assert [r.as_dict() for r in a.records] == [r.as_dict() for r in b.records]


def test_split_changes_with_seed():
    a = stratified_group_split(balanced_manifest(30), seed=1)
    b = stratified_group_split(balanced_manifest(30), seed=2)
    assert [r.split for r in a.records] != [r.split for r in b.records]


def test_split_rejects_bad_ratios():
    with pytest.raises(ValueError):
        stratified_group_split(balanced_manifest(5), ratios=(0.5, 0.2, 0.2), seed=0)


def test_split_rejects_empty_manifest():
    with pytest.raises(ManifestError):
        stratified_group_split(DatasetManifest([]), seed=0)


@pytest.mark.parametrize("seed", [0, 7, 1234])
def test_split_thousand_balanced_groups(seed):
    m = stratified_group_split(balanced_manifest(500), seed=seed)
    for label in ("tumor", "healthy"):
        recs = [r for r in m.records if r.label == label]
        train = sum(1 for r in recs if r.split == "train")
        frac = train / len(recs)
        assert 0.799 <= frac <= 0.801
        assert sum(1 for r in recs if r.split == "val") == 50
        assert sum(1 for r in recs if r.split == "test") == 50


# -- sample loading ------------------------------------------------------


def test_load_sample_applies_recorded_shift(tmp_path):
    rng = np.random.default_rng(11)
    img = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    (tmp_path / "tumor").mkdir()
    write_png(tmp_path / "tumor" / "t0.png", img)
    origin = SampleRecord(id="tumor/t0.png", origin_id="tumor/t0.png",
                          path="tumor/t0.png", label="tumor")
    aug = SampleRecord(
        id="tumor/t0.png#a0", origin_id="tumor/t0.png", path="tumor/t0.png",
        label="tumor", augmentation=Augmentation("hshift", dx=5, seed=0),
    )
    base = load_sample(origin, tmp_path)
    shifted = load_sample(aug, tmp_path)
    assert np.array_equal(shifted, brute_shift(base, 5, 0))
    assert base.min() >= 0.0 and base.max() <= 1.0


def test_manifest_dataset_labels(tmp_path):
    for label in ("tumor", "healthy"):
        (tmp_path / label).mkdir()
        write_png(tmp_path / label / "x.png",
                  np.full((8, 8), 100, dtype=np.uint8))
    m = scan_data_root(tmp_path)
    ds = ManifestDataset(m.records, tmp_path)
    assert len(ds) == 2
    images_labels = [ds[i] for i in range(2)]
    labels = sorted(y for _, y in images_labels)
    assert labels == [0, 1]
    for img, _ in images_labels:
        assert img.shape == (224, 224, 3)
        assert img.dtype == np.float32
