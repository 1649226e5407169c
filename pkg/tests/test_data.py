import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from travelgan.data import (BACKGROUNDS, BatchSchedule, BoardGeometry, DataError, DatasetSpec, FactorRecord,
                            batch_sampler, bilinear_resize, center_crop, empty_record, export_domain,
                            full_board_path, gen_beads_domain, gen_domain, gen_grid_domain, load_factors,
                            load_image_folder, manipulation_sequence, render_factors, sample_factors,
                            to_tensor, to_uint8, to_unit)
from oracles import bilinear_direct


def write_png(path, arr, mode=None):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode=mode).save(path)


# --- folder ingestion ------------------------------------------------------------


def test_folder_three_pngs_sorted(tmp_path):
    rng = np.random.default_rng(0)
    for name in ("b.png", "a.png", "c.png"):
        write_png(tmp_path / name, rng.integers(0, 256, (16, 16, 3)))
    (tmp_path / "notes.txt").write_text("ignored")
    tensors, manifest = load_image_folder(tmp_path, 16)
    assert manifest["files"] == ["a.png", "b.png", "c.png"]
    assert len(tensors) == 3 and all(t.shape == (3, 16, 16) for t in tensors)
    assert all(t.min() >= -1 and t.max() <= 1 for t in tensors)


def test_folder_round_trip_quantization(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (16, 16, 3)).astype(np.uint8)
    write_png(tmp_path / "x.png", img)
    (t,), _ = load_image_folder(tmp_path, 16)
    back = (t.astype(np.float64) + 1) / 2
    assert np.max(np.abs(back - img.transpose(2, 0, 1) / 255.0)) <= 1 / 255
    np.testing.assert_array_equal(to_uint8(t), img)


def test_folder_rgba_alpha_dropped(tmp_path):
    rgba = np.random.default_rng(2).integers(0, 256, (8, 8, 4)).astype(np.uint8)
    write_png(tmp_path / "x.png", rgba, mode="RGBA")
    (t,), _ = load_image_folder(tmp_path, 8)
    np.testing.assert_array_equal(to_uint8(t), rgba[..., :3])


def test_folder_crop_and_resize_vs_oracle(tmp_path):
    img = np.random.default_rng(3).integers(0, 256, (100, 200, 3)).astype(np.uint8)  # 200 wide, 100 tall
    write_png(tmp_path / "wide.png", img)
    (t,), _ = load_image_folder(tmp_path, 32)
    crop = img[:, 50:150].astype(np.float64)
    expected = bilinear_direct(crop, 32) / 127.5 - 1.0
    assert np.max(np.abs(t.astype(np.float64) - expected.transpose(2, 0, 1))) < 1e-6


def test_center_crop_shapes():
    assert center_crop(np.zeros((100, 200, 3))).shape == (100, 100, 3)
    tall = np.arange(7 * 3).reshape(7, 3)
    np.testing.assert_array_equal(center_crop(tall), tall[2:5])


@given(seed=st.integers(0, 2 ** 31), h=st.integers(1, 12), w=st.integers(1, 12), size=st.integers(1, 10))
def test_bilinear_matches_oracle_bitwise(seed, h, w, size):
    img = np.random.default_rng(seed).uniform(0, 255, (h, w, 3))
    np.testing.assert_allclose(bilinear_resize(img, size), bilinear_direct(img, size), rtol=0, atol=1e-9)


def test_bilinear_identity_and_constant():
    img = np.random.default_rng(4).uniform(size=(9, 9, 3))
    np.testing.assert_allclose(bilinear_resize(img, 9), img, atol=1e-12)
    np.testing.assert_allclose(bilinear_resize(np.full((5, 7, 3), 3.0), 4), 3.0)


def test_folder_errors(tmp_path):
    with pytest.raises(DataError, match="does not exist"):
        load_image_folder(tmp_path / "missing", 8)
    with pytest.raises(DataError, match="no PNG"):
        load_image_folder(tmp_path, 8)
    (tmp_path / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="broken.png"):
        load_image_folder(tmp_path, 8)


# --- synthetic domains ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["beads", "grid"])
def test_synthetic_deterministic(kind):
    a, ra = gen_domain(DatasetSpec(kind=kind, count=20, seed=5))
    b, rb = gen_domain(DatasetSpec(kind=kind, count=20, seed=5))
    assert a.tobytes() == b.tobytes()
    assert [r.to_dict() for r in ra] == [r.to_dict() for r in rb]
    c, _ = gen_domain(DatasetSpec(kind=kind, count=20, seed=6))
    assert a.tobytes() != c.tobytes()


def test_named_generators():
    a, _ = gen_beads_domain(DatasetSpec(kind="grid", count=3, seed=1))
    b, _ = gen_domain(DatasetSpec(kind="beads", count=3, seed=1))
    np.testing.assert_array_equal(a, b)
    c, _ = gen_grid_domain(DatasetSpec(count=3, seed=1))
    np.testing.assert_array_equal(c, gen_domain(DatasetSpec(kind="grid", count=3, seed=1))[0])


@pytest.mark.parametrize("kind", ["beads", "grid"])
def test_factor_records_consistent(kind):
    images, records = gen_domain(DatasetSpec(kind=kind, count=40, seed=7))
    assert images.shape == (40, 32, 32, 3) and images.dtype == np.uint8
    for img, rec in zip(images, records):
        assert rec.count == len(rec.cells) == len(rec.centroids)
        assert 3 <= rec.count <= 6
        assert len(set(rec.cells)) == rec.count
        bg = np.asarray(BACKGROUNDS[kind][rec.background], dtype=np.float64)
        for cy, cx in rec.centroids:
            assert 0 <= cy < 32 and 0 <= cx < 32
            px = img[int(cy), int(cx)].astype(np.float64)
            assert np.abs(px - bg).max() > 40  # object pixel, not background


def _connected(cells):
    cells = set(cells)
    seen, todo = set(), [next(iter(cells))]
    while todo:
        r, c = todo.pop()
        if (r, c) in seen:
            continue
        seen.add((r, c))
        todo += [n for n in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)) if n in cells]
    return seen == cells


def test_grid_patterns_connected_beads_unconstrained():
    _, grid = gen_domain(DatasetSpec(kind="grid", count=200, seed=8))
    assert all(_connected(r.cells) for r in grid)
    _, beads = gen_domain(DatasetSpec(kind="beads", count=200, seed=8))
    assert not all(_connected(r.cells) for r in beads)


def test_zero_objects_pure_background():
    for kind in ("beads", "grid"):
        imgs, recs = gen_domain(DatasetSpec(kind=kind, count=2, seed=0, min_objects=0, max_objects=0))
        assert all(r.count == 0 for r in recs)
        empty = render_factors(empty_record(0, recs[0].background), kind)
        np.testing.assert_array_equal(imgs[0], empty)


def test_domains_factor_aligned():
    _, recs = gen_domain(DatasetSpec(kind="beads", count=10, seed=9))
    for r in recs:
        a, b = render_factors(r, "beads"), render_factors(r, "grid")
        assert a.shape == b.shape == (32, 32, 3) and not np.array_equal(a, b)


@pytest.mark.parametrize("kw", [{"max_objects": 10}, {"kind": "plaid"}, {"count": -1},
                                {"min_objects": 4, "max_objects": 3}])
def test_dataset_spec_errors(kw):
    with pytest.raises(DataError):
        DatasetSpec(**kw)


def test_export_and_reload(tmp_path):
    imgs, recs = gen_domain(DatasetSpec(kind="grid", count=4, seed=10))
    names = export_domain(imgs, recs, tmp_path)
    assert names == ["00000.png", "00001.png", "00002.png", "00003.png"]
    tensors, _ = load_image_folder(tmp_path, 32)
    np.testing.assert_array_equal(to_uint8(np.stack(tensors)), imgs)
    assert [r.to_dict() for r in load_factors(tmp_path)] == [r.to_dict() for r in recs]
    assert load_factors(tmp_path / "nope") is None


def test_tensor_conversions():
    imgs, _ = gen_domain(DatasetSpec(count=3, seed=11))
    t = to_tensor(imgs)
    assert t.shape == (3, 3, 32, 32) and t.dtype == np.float32
    assert t.min() >= -1 and t.max() <= 1
    np.testing.assert_array_equal(to_uint8(t), imgs)
    np.testing.assert_allclose(to_unit(t), imgs.transpose(0, 3, 1, 2) / 255.0, atol=1e-6)


# --- manipulation sequences -------------------------------------------------------------


def _changed_cells(a, b, geo):
    diff = np.any(a != b, axis=-1)
    cells = set()
    for r in range(geo.grid):
        for c in range(geo.grid):
            y0, y1, x0, x1 = geo.cell_box(r, c)
            if diff[y0:y1, x0:x1].any():
                cells.add((r, c))
                diff[y0:y1, x0:x1] = False
    return cells, diff.any()


@pytest.mark.parametrize("domain", ["beads", "grid"])
def test_manipulation_nine_frames_two_cell_diffs(domain):
    geo = BoardGeometry(32)
    path = full_board_path()
    frames = manipulation_sequence(empty_record(), path, domain)
    assert len(frames) == 9
    for i in range(9):
        for j in range(i + 1, 9):
            cells, outside = _changed_cells(frames[i], frames[j], geo)
            assert cells == {path[i], path[j]} and not outside


def test_manipulation_over_base_objects():
    geo = BoardGeometry(32)
    base = FactorRecord([(0, 0)], [geo.centroid(0, 0)], 1, 1, 0)
    path = [(1, 1), (1, 2), (2, 2)]
    frames = manipulation_sequence(base, path, "grid")
    for a, b, p, q in zip(frames, frames[1:], path, path[1:]):
        cells, outside = _changed_cells(a, b, geo)
        assert cells == {p, q} and not outside


def test_manipulation_edge_cases():
    assert manipulation_sequence(empty_record(), []) == []
    with pytest.raises(DataError, match="outside"):
        manipulation_sequence(empty_record(), [(3, 0)])
    geo = BoardGeometry(32)
    with pytest.raises(DataError, match="occupied"):
        manipulation_sequence(FactorRecord([(0, 0)], [geo.centroid(0, 0)], 1, 0, 0), [(0, 0)])


# --- batching ---------------------------------------------------------------------------


def test_sampler_epochs_drop_remainder():
    s = BatchSchedule(10, 4, seed=0)
    assert s.batches_per_epoch == 2
    for epoch in range(3):
        idx = np.concatenate([s.indices_at(2 * epoch), s.indices_at(2 * epoch + 1)])
        assert len(set(idx.tolist())) == 8


def test_sampler_same_seed_same_stream():
    data = np.arange(10)
    a, b = batch_sampler(data, 4, 3), batch_sampler(data, 4, 3)
    for _ in range(7):
        np.testing.assert_array_equal(next(a), next(b))


def test_sampler_resume_matches():
    data = np.arange(13)
    full = batch_sampler(data, 3, 4)
    seq = [next(full) for _ in range(10)]
    resumed = batch_sampler(data, 3, 4, start_step=6)
    for k in range(6, 10):
        np.testing.assert_array_equal(next(resumed), seq[k])


def test_sampler_seeds_differ():
    firsts = {tuple(BatchSchedule(10, 4, seed=s).permutation(0)) for s in range(32)}
    assert len(firsts) == 32


def test_sampler_streams_differ():
    assert not np.array_equal(BatchSchedule(50, 4, 0, 0).permutation(0), BatchSchedule(50, 4, 0, 1).permutation(0))


def test_sampler_too_small():
    with pytest.raises(DataError):
        BatchSchedule(3, 4, 0)


def test_sample_factors_within_capacity():
    rng = np.random.default_rng(0)
    spec = DatasetSpec(kind="grid", min_objects=9, max_objects=9)
    rec = sample_factors(spec, rng)
    assert sorted(rec.cells) == full_board_path()
