"""Manifest and stratified-split protocol checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from hemoclass.data_model import (
    DatasetManifest,
    SplitSpec,
    _test_allocation,
    ingest_directory,
    make_split,
    read_manifest_csv,
    read_split_plan,
    verify_split,
    write_manifest_csv,
    write_split_plan,
)
from hemoclass.errors import ConfigError, DataError

# class sizes of the blood-cell corpus the pipeline targets (total 17,092)
PBC_SIZES = {
    "basophil": 1218,
    "eosinophil": 3117,
    "erythroblast": 1551,
    "ig": 2895,
    "lymphocyte": 1214,
    "monocyte": 1420,
    "neutrophil": 3329,
    "platelet": 2348,
}

# train totals produced by the per-class floor rule on those sizes
# (frozen with an independent integer-arithmetic check in the assertions)
FLOOR_TOTALS = {0.01: 168, 0.025: 423, 0.05: 850, 0.075: 1279,
                0.10: 1705, 0.20: 3415, 0.30: 5125}


def synthetic_manifest(sizes: dict) -> DatasetManifest:
    names = tuple(sorted(sizes))
    entries = []
    for label, name in enumerate(names):
        entries.extend((f"{name}/img_{i:05d}.jpg", label)
                       for i in range(sizes[name]))
    return DatasetManifest(class_names=names, entries=tuple(entries))


@pytest.fixture(scope="module")
def pbc_manifest():
    return synthetic_manifest(PBC_SIZES)


def test_manifest_validation():
    with pytest.raises(DataError):
        DatasetManifest(("only",), (("a.jpg", 0),))
    with pytest.raises(DataError):
        DatasetManifest(("a", "b"), (("x.jpg", 5),))
    with pytest.raises(DataError):
        DatasetManifest(("a", "b"), (("x.jpg", 0), ("x.jpg", 1)))


def test_manifest_csv_round_trip(tmp_path, pbc_manifest):
    path = tmp_path / "manifest.csv"
    write_manifest_csv(pbc_manifest, path)
    back = read_manifest_csv(path)
    assert back == pbc_manifest
    assert back.sha256() == pbc_manifest.sha256()


def test_ingest_directory_is_deterministic(tmp_path):
    rng = np.random.default_rng(31)
    for name in ("tulip", "rose"):
        d = tmp_path / name
        d.mkdir()
        for i in range(3):
            arr = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
            Image.fromarray(arr).save(d / f"{i}.png")
    (tmp_path / "rose" / "broken.png").write_bytes(b"nope")
    first = ingest_directory(tmp_path)
    second = ingest_directory(tmp_path)
    assert first.manifest == second.manifest
    assert first.skipped == ["rose/broken.png"]
    assert first.manifest.class_names == ("rose", "tulip")
    assert len(first.manifest.entries) == 6


# ---------------------------------------------------------------- splits

def test_per_class_train_counts_follow_floor_rule(pbc_manifest):
    sizes = pbc_manifest.class_sizes()
    for fraction, total in FLOOR_TOTALS.items():
        plan = make_split(pbc_manifest,
                          SplitSpec(fraction, test_count=4000, seed=42))
        # integer-arithmetic reference: floor(size * num / den) done exactly
        num, den = {0.01: (1, 100), 0.025: (25, 1000), 0.05: (5, 100),
                    0.075: (75, 1000), 0.10: (10, 100), 0.20: (20, 100),
                    0.30: (30, 100)}[fraction]
        expected = [size * num // den for size in sizes]
        assert list(plan.per_class_train_counts) == expected
        assert len(plan.train_indices) == total == sum(expected)
        assert len(plan.test_indices) == 4000


def test_partitions_disjoint_and_complete(pbc_manifest):
    plan = make_split(pbc_manifest, SplitSpec(0.10, 4000, seed=7))
    every = (set(plan.train_indices) | set(plan.val_indices)
             | set(plan.test_indices))
    assert len(plan.train_indices) + len(plan.val_indices) \
        + len(plan.test_indices) == len(pbc_manifest.entries)
    assert every == set(range(len(pbc_manifest.entries)))


def test_test_set_identical_across_fractions(pbc_manifest):
    plans = [make_split(pbc_manifest, SplitSpec(f, 4000, seed=42))
             for f in (0.01, 0.075, 0.30)]
    assert plans[0].test_indices == plans[1].test_indices \
        == plans[2].test_indices


def test_split_seed_changes_partition(pbc_manifest):
    a = make_split(pbc_manifest, SplitSpec(0.05, 4000, seed=1))
    b = make_split(pbc_manifest, SplitSpec(0.05, 4000, seed=2))
    assert a.test_indices != b.test_indices
    assert a.per_class_train_counts == b.per_class_train_counts


def test_split_is_stratified_proportionally(pbc_manifest):
    plan = make_split(pbc_manifest, SplitSpec(0.05, 4000, seed=42))
    labels = pbc_manifest.labels()
    sizes = pbc_manifest.class_sizes()
    total = sizes.sum()
    test_by_class = np.bincount(labels[list(plan.test_indices)],
                                minlength=8)
    # round-half-up is within 0.5 of the exact quota; the +-1 rebalancing
    # pass can move an allocation at most one further step
    for c in range(8):
        assert abs(test_by_class[c] - 4000 * sizes[c] / total) <= 1.5


def test_test_allocation_sums_exactly():
    sizes = np.array(sorted(PBC_SIZES.values()))
    counts = _test_allocation(sizes, 4000)
    assert counts.sum() == 4000
    assert np.all(counts >= 0)
    assert np.all(counts <= sizes)


def test_full_fraction_leaves_empty_validation():
    manifest = synthetic_manifest({"a": 10, "b": 10})
    plan = make_split(manifest, SplitSpec(1.0, 0, seed=0))
    assert len(plan.train_indices) == 20
    assert plan.val_indices == ()
    assert plan.test_indices == ()


def test_infeasible_spec_raises():
    manifest = synthetic_manifest({"a": 10, "b": 10})
    with pytest.raises(ConfigError):
        make_split(manifest, SplitSpec(0.9, 10, seed=0))
    with pytest.raises(ConfigError, match="test_count"):
        make_split(manifest, SplitSpec(0.1, 100, seed=0))


def test_spec_validation():
    with pytest.raises(ConfigError):
        SplitSpec(0.0, 100, 0)
    with pytest.raises(ConfigError):
        SplitSpec(1.5, 100, 0)
    with pytest.raises(ConfigError):
        SplitSpec(0.5, -1, 0)


def test_plan_json_round_trip(tmp_path, pbc_manifest):
    plan = make_split(pbc_manifest, SplitSpec(0.01, 4000, seed=42))
    path = tmp_path / "plan.json"
    write_split_plan(plan, path)
    back = read_split_plan(path)
    assert back.to_json_bytes() == plan.to_json_bytes()
    assert back.sha256() == plan.sha256()
    # rewriting is byte-identical
    write_split_plan(back, tmp_path / "plan2.json")
    assert (tmp_path / "plan2.json").read_bytes() == path.read_bytes()


def test_verify_split_passes_and_detects_tampering(pbc_manifest):
    plan = make_split(pbc_manifest, SplitSpec(0.01, 4000, seed=42))
    check = verify_split(plan, pbc_manifest)
    assert check.passed, check.issues
    assert sum(check.counts["train"]) == 168

    bad = make_split(pbc_manifest, SplitSpec(0.01, 4000, seed=42))
    bad.train_indices = bad.train_indices[:-1] + (bad.test_indices[0],)
    report = verify_split(bad, pbc_manifest)
    assert not report.passed
    assert any("both" in issue for issue in report.issues)


def test_verify_split_flags_wrong_test_count(pbc_manifest):
    plan = make_split(pbc_manifest, SplitSpec(0.01, 4000, seed=42))
    plan.test_indices = plan.test_indices[:-1]
    report = verify_split(plan, pbc_manifest)
    assert not report.passed


@settings(max_examples=30, deadline=None)
@given(
    sizes=st.lists(st.integers(5, 60), min_size=2, max_size=6),
    fraction=st.floats(0.05, 0.6),
    seed=st.integers(0, 2 ** 31),
)
def test_split_properties_hold_for_random_datasets(sizes, fraction, seed):
    manifest = synthetic_manifest(
        {f"class{i:02d}": n for i, n in enumerate(sizes)})
    total = sum(sizes)
    test_count = max(0, int(0.2 * total))
    try:
        plan = make_split(manifest,
                          SplitSpec(fraction, test_count, seed=seed))
    except ConfigError:
        # some (fraction, test_count) draws are legitimately infeasible
        return
    check = verify_split(plan, manifest)
    assert check.passed, check.issues
    labels = manifest.labels()
    for c, n_train in enumerate(plan.per_class_train_counts):
        assert n_train == int(fraction * sizes[c] + 1e-9)
        assert (labels[list(plan.train_indices)] == c).sum() == n_train
