from collections import Counter
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesioncoseg.dataset import (
    CSV_FIELDS, DatasetConfig, LesionRecord, PreprocessConfig, RecistAnnotation, build_pairs,
    cluster_descriptors, fallback_cluster, load_records, make_transform, preprocess, read_image,
    read_lseg, read_mask, save_records, stratified_split, write_lseg, write_mask, write_png16,
)
from lesioncoseg.exceptions import ConfigError, DataError

HEADER = ",".join(CSV_FIELDS)


def _recist(cx=20.0, cy=20.0, a=10.0, b=5.0):
    return RecistAnnotation(((cx - a, cy), (cx + a, cy)), ((cx, cy - b), (cx, cy + b)))


def _records(cluster_sizes, lesions_per_patient=1):
    recs = []
    i = 0
    for cid, n in enumerate(cluster_sizes):
        for k in range(n):
            recs.append(LesionRecord(
                lesion_id=f"L{i:05d}", patient_id=f"P{cid}_{k // lesions_per_patient}",
                image_path=f"img{i}.png", recist=_recist(), cluster_id=cid,
            ))
            i += 1
    return recs


def test_load_records_round_trip(tmp_path):
    rows = [
        "a,p1,img/a.png,0,1.5,2.0,11.5,2.0,6.5,0.0,6.5,4.0",
        "b,p1,img/b.png,3,0,0,10,10,2,8,8,2",
        "c,p2,img/c.png,1,5,5,25,5,15,0,15,10",
    ]
    path = tmp_path / "d.csv"
    path.write_text("\n".join([HEADER, *rows]) + "\n")
    recs = load_records(path)
    assert [r.lesion_id for r in recs] == ["a", "b", "c"]
    assert recs[0].recist.long_axis == ((1.5, 2.0), (11.5, 2.0))
    assert recs[1].cluster_id == 3
    out = tmp_path / "e.csv"
    save_records(recs, out)
    assert load_records(out) == recs


def test_load_records_missing_coordinate(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(HEADER + "\n" + "a,p1,img/a.png,0,1,2,3,4,5,6,7\n")
    with pytest.raises(DataError, match=r"row 2.*'sy2'"):
        load_records(path)


def test_load_records_bad_number(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(HEADER + "\n" + "a,p1,x.png,0,1,2,11,2,zz,0,6,4\n")
    with pytest.raises(DataError, match=r"row 2.*'sx1'"):
        load_records(path)


def test_load_records_header_only(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(HEADER + "\n")
    assert load_records(path) == []


def test_load_records_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_records(tmp_path / "nope.csv")


def test_recist_rejects_swapped_axes():
    with pytest.raises(DataError):
        RecistAnnotation(((0, 0), (2, 0)), ((0, 0), (0, 5)))


def test_image_containers(tmp_path):
    hu = np.array([[-1000.0, 0.0], [40.0, 3000.0]])
    write_png16(tmp_path / "a.png", hu)
    np.testing.assert_array_equal(read_image(tmp_path / "a.png"), hu)
    arr = np.random.default_rng(0).normal(size=(3, 5)).astype(np.float32)
    write_lseg(tmp_path / "a.lseg", arr)
    raw = (tmp_path / "a.lseg").read_bytes()
    assert raw[:5] == b"LSEG1" and len(raw) == 5 + 8 + 4 * 15
    np.testing.assert_array_equal(read_lseg(tmp_path / "a.lseg"), arr)
    np.testing.assert_array_equal(read_image(tmp_path / "a.lseg"), arr)
    mask = np.zeros((4, 4), bool)
    mask[1:3, 2] = True
    write_mask(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), mask)


def test_preprocess_constant_midpoint():
    out, tf = preprocess(np.full((64, 64), 50.0), PreprocessConfig(hu_window=(-175, 275)))
    assert out.shape == (128, 128)
    np.testing.assert_allclose(out, 0.5, atol=1e-12)


def test_preprocess_clips_below_window():
    img = np.full((32, 32), -2000.0)
    img[0, 0] = 275.0
    out, _ = preprocess(img, PreprocessConfig(target_size=32))
    assert out[5, 5] == 0.0 and out[0, 0] == 1.0


def test_preprocess_degenerate_window():
    with pytest.raises(ConfigError):
        PreprocessConfig(hu_window=(100, 100))


def test_non_square_transform_round_trip():
    _, tf = preprocess(np.zeros((100, 60)), PreprocessConfig())
    assert (tf.side, tf.pad_top, tf.pad_left) == (100, 0, 20)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 59, 10), rng.uniform(0, 99, 10)])
    back = tf.inverse(tf.forward(pts))
    assert np.abs(back - pts).max() < 0.51
    # column 0 lands 20 padded columns in, scaled by 128/100
    np.testing.assert_allclose(tf.forward([[0.0, 0.0]]), [[20.5 * 1.28 - 0.5, 0.5 * 1.28 - 0.5]])


def test_transform_identity_at_target_size():
    img = np.random.default_rng(1).uniform(-175, 275, (128, 128))
    out, tf = preprocess(img)
    np.testing.assert_allclose(out, (img + 175) / 450)
    np.testing.assert_allclose(tf.forward([[3.0, 7.0]]), [[3.0, 7.0]])


@settings(max_examples=50, deadline=None)
@given(h=st.integers(1, 300), w=st.integers(1, 300),
       x=st.floats(0, 1), y=st.floats(0, 1), target=st.integers(8, 256))
def test_transform_round_trip_property(h, w, x, y, target):
    tf = make_transform((h, w), target)
    p = np.array([[x * (w - 1), y * (h - 1)]])
    assert np.abs(tf.inverse(tf.forward(p)) - p).max() < 0.51


def test_split_exact_fractions():
    recs = stratified_split(_records([10]), DatasetConfig(num_clusters=1))
    assert Counter(r.split for r in recs) == {"train": 8, "val": 1, "test": 1}


def test_split_200_clusters():
    recs = stratified_split(_records([50] * 200), DatasetConfig(num_clusters=200, rng_seed=3))
    per = Counter((r.cluster_id, r.split) for r in recs)
    assert all(per[(c, "train")] in (39, 40, 41) for c in range(200))
    assert all(per[(c, "val")] in (4, 5, 6) and per[(c, "test")] in (4, 5, 6) for c in range(200))


def test_split_deterministic_and_partition():
    base = _records([7, 12, 30], lesions_per_patient=2)
    a = stratified_split(base, DatasetConfig(rng_seed=5))
    b = stratified_split(base, DatasetConfig(rng_seed=5))
    assert a == b
    assert len(a) == len(base) and all(r.split in ("train", "val", "test") for r in a)
    splits_per_patient = {}
    for r in a:
        splits_per_patient.setdefault(r.patient_id, set()).add(r.split)
    assert all(len(s) == 1 for s in splits_per_patient.values())


def test_split_patient_spanning_clusters_no_leak():
    recs = _records([6, 6])
    # patient shared across both clusters
    recs = [r if r.cluster_id == 0 or r.patient_id != "P1_0" else
            LesionRecord(r.lesion_id, "P0_0", r.image_path, r.recist, r.cluster_id) for r in recs]
    out = stratified_split(recs, DatasetConfig(rng_seed=1))
    assert len({r.split for r in out if r.patient_id == "P0_0"}) == 1


def test_split_small_cluster_goes_to_train():
    recs = _records([4], lesions_per_patient=2)
    with pytest.warns(UserWarning, match="2 patient"):
        out = stratified_split(recs)
    assert {r.split for r in out} == {"train"}


def _assigned(sizes, split="train"):
    return [LesionRecord(r.lesion_id, r.patient_id, r.image_path, r.recist, r.cluster_id, split)
            for r in _records(sizes)]


def test_pairs_counts():
    assert len(build_pairs(_assigned([3]), "train")) == 3
    assert build_pairs(_assigned([1]), "train") == []
    assert len(build_pairs(_assigned([5, 5, 5, 5]), "train")) == sum(comb(5, 2) for _ in range(4))
    assert build_pairs(_assigned([5]), "val") == []


def test_pairs_properties_with_cap():
    recs = _assigned([9, 4, 12])
    cluster = {r.lesion_id: r.cluster_id for r in recs}
    pairs = build_pairs(recs, "train", DatasetConfig(pairing_cap=3, rng_seed=2))
    assert len(set(pairs)) == len(pairs)
    assert all(a < b for a, b in pairs)
    assert all(cluster[a] == cluster[b] for a, b in pairs)
    use = Counter(x for p in pairs for x in p)
    assert max(use.values()) <= 3
    # cluster of 4 is small enough to stay exhaustive
    small = [p for p in pairs if cluster[p[0]] == 1]
    assert len(small) == 6
    assert pairs == build_pairs(recs, "train", DatasetConfig(pairing_cap=3, rng_seed=2))


def test_cluster_descriptors_two_blobs():
    rng = np.random.default_rng(0)
    blob_a = rng.normal(0, 0.1, (10, 4))
    blob_b = rng.normal(5, 0.1, (10, 4))
    labels = cluster_descriptors(np.vstack([blob_a, blob_b]), 2, rng_seed=0)
    assert len(set(labels[:10])) == 1 and len(set(labels[10:])) == 1
    assert labels[0] != labels[10]


def test_cluster_descriptors_degenerate():
    x = np.ones((6, 4))
    assert set(cluster_descriptors(x, 1)) == {0}
    labels = cluster_descriptors(x, 2)
    assert len(set(labels)) == 1
    with pytest.warns(UserWarning, match="reducing k"):
        labels = cluster_descriptors(np.arange(8.0).reshape(2, 4), 5)
    assert set(labels) <= {0, 1}


def test_fallback_cluster_from_images(tmp_path):
    recs = []
    for i in range(8):
        level = 100.0 if i < 4 else -100.0
        write_png16(tmp_path / f"{i}.png", np.full((40, 40), level))
        recs.append(LesionRecord(f"L{i}", f"P{i}", f"{i}.png", _recist(), 0))
    labels = fallback_cluster(recs, 2, rng_seed=0, base_dir=tmp_path)
    assert len(set(labels[:4])) == 1 and len(set(labels[4:])) == 1 and labels[0] != labels[4]
    assert fallback_cluster(recs, 2, rng_seed=0, base_dir=tmp_path).tolist() == labels.tolist()


def test_dataset_config_validation():
    with pytest.raises(ConfigError):
        DatasetConfig(split_fractions=(0.8, 0.1, 0.2))
    with pytest.raises(ConfigError):
        DatasetConfig(num_clusters=0)
