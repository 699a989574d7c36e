import os

import numpy as np
import pytest

from nwflow.errors import (
    DataError,
    EmptyTable,
    FormatError,
    SingularCovariance,
)
from nwflow.tasks import (
    External,
    FeatureTable,
    FourierDensity,
    Gmm,
    Moons,
    Rings,
    Shell,
    Spirals,
    WhitenConfig,
    anisotropic_gaussian_features,
    fourier_acceptance_stats,
    load_feature_table,
    make_support_and_eval,
    sample_task,
    save_feature_table,
    whiten,
)


def test_gmm_single_component_moments():
    spec = Gmm(d=3, k_components=1, separation_scale=0.0, std_lo=0.3, std_hi=0.3)
    rows = sample_task(spec, 10_000, 0)
    cov = np.cov(rows, rowvar=False)
    assert np.allclose(np.diag(cov), 0.09, rtol=0.10)
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) < 0.01


def test_gmm_determinism_and_task_seed():
    spec = Gmm(d=2, seed=4)
    a = sample_task(spec, 100, 7)
    b = sample_task(spec, 100, 7)
    assert np.array_equal(a, b)
    c = sample_task(spec, 100, 8)
    assert not np.array_equal(a, c)
    other_task = sample_task(Gmm(d=2, seed=5), 100, 7)
    assert not np.array_equal(a, other_task)


def test_shell_degenerate_is_unit_sphere():
    rows = sample_task(Shell(d=5, radius_mean=1.0, radius_std=0.0), 300, 1)
    assert np.allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-9)


def test_shell_truncation_guarantee():
    spec = Shell(d=3, radius_mean=1.0, radius_std=0.4)
    rows = sample_task(spec, 5000, 2)
    norms = np.linalg.norm(rows, axis=1)
    assert np.all(norms > 0)
    assert np.all(norms >= 1.0 - 6 * 0.4 - 1e-12)
    assert np.all(norms <= 1.0 + 6 * 0.4 + 1e-12)


def test_2d_families_shapes_and_noise():
    for spec in (Moons(), Rings(), Spirals()):
        rows = sample_task(spec, 500, 3)
        assert rows.shape == (500, 2)
    quiet = sample_task(Rings(noise=0.0), 2000, 4)
    radii = np.linalg.norm(quiet, axis=1)
    ring_radii = 2.0 * (np.arange(3) + 1) / 3
    dist_to_ring = np.min(np.abs(radii[:, None] - ring_radii[None, :]), axis=1)
    assert np.max(dist_to_ring) < 1e-9


def test_fourier_within_box_and_deterministic():
    spec = FourierDensity(d=8, seed=0)
    rows = sample_task(spec, 400, 5)
    assert rows.shape == (400, 8)
    assert np.all(np.abs(rows) <= 3.0)
    assert np.array_equal(rows, sample_task(spec, 400, 5))


def test_fourier_acceptance_matches_prediction():
    for d, seed in ((1, 0), (2, 1), (8, 2)):
        stats = fourier_acceptance_stats(FourierDensity(d=d, seed=seed), 4000, 9)
        ratio = stats["empirical"] / stats["predicted"]
        assert 0.5 <= ratio <= 2.0, stats


def test_fourier_nonuniform():
    # the sampled density should deviate measurably from uniform on the box
    spec = FourierDensity(d=1, seed=3)
    rows = sample_task(spec, 20_000, 0)[:, 0]
    hist, _ = np.histogram(rows, bins=20, range=(-3, 3))
    assert hist.max() > 1.5 * hist.min()


def test_make_support_and_eval_streams():
    spec = Gmm(d=2, seed=0)
    sup, ev = make_support_and_eval(spec, 50, 100, 1)
    assert sup.m == 50 and ev.shape == (100, 2)
    sup2, _ = make_support_and_eval(spec, 50, 100, 2)
    assert not np.array_equal(sup.points, sup2.points)
    # support and eval draws must differ (disjoint substreams)
    assert not np.array_equal(sup.points[:50], ev[:50])
    sup1row, _ = make_support_and_eval(spec, 1, 0, 3)
    assert sup1row.m == 1


def test_external_split_is_disjoint():
    rows = np.arange(40, dtype=float).reshape(20, 2)
    table = FeatureTable(rows=rows)
    sup, ev = make_support_and_eval(External(table), 8, 12, 0)
    pool = np.vstack([sup.points, ev])
    assert pool.shape == (20, 2)
    assert len({tuple(r) for r in pool}) == 20  # no row reused
    with pytest.raises(ValueError):
        make_support_and_eval(External(table), 15, 10, 0)


def test_whiten_identity_at_zero():
    table = anisotropic_gaussian_features(200, 4, seed=1)
    out, record = whiten(table, WhitenConfig(strength=0.0))
    assert out.rows is table.rows
    assert np.array_equal(record.matrix, np.eye(4))


def test_whiten_full_makes_identity_covariance():
    table = anisotropic_gaussian_features(3000, 6, seed=2)
    out, _ = whiten(table, WhitenConfig(strength=1.0))
    cov = np.cov(out.rows, rowvar=False, ddof=1)
    assert np.max(np.abs(cov - np.eye(6))) <= 1e-8


def test_whiten_transform_composition():
    # applying the half-strength transform twice equals full whitening
    table = anisotropic_gaussian_features(2000, 5, seed=3)
    _, half = whiten(table, WhitenConfig(strength=0.5))
    full_rows, _ = whiten(table, WhitenConfig(strength=1.0))
    twice = half.apply(half.apply(table.rows))
    assert np.max(np.abs(twice - full_rows.rows)) <= 1e-8


def test_whiten_spectrum_interpolation():
    table = anisotropic_gaussian_features(5000, 4, seed=4)
    cov = np.cov(table.rows, rowvar=False, ddof=1)
    eig = np.sort(np.linalg.eigvalsh(cov))
    lam = 0.4
    out, _ = whiten(table, WhitenConfig(strength=lam))
    got = np.sort(np.linalg.eigvalsh(np.cov(out.rows, rowvar=False, ddof=1)))
    assert np.allclose(got, eig ** (1 - lam), rtol=1e-6)


def test_whiten_singular_covariance():
    rows = np.ones((3, 5))
    rows[1, 0] = 2.0
    table = FeatureTable(rows=rows)
    with pytest.raises(SingularCovariance):
        whiten(table, WhitenConfig(strength=1.0, regularization=0.0))
    out, _ = whiten(table, WhitenConfig(strength=1.0, regularization=1e-6))
    assert np.all(np.isfinite(out.rows))


def test_whiten_config_validation():
    with pytest.raises(ValueError):
        WhitenConfig(strength=1.5)
    with pytest.raises(ValueError):
        WhitenConfig(strength=0.5, regularization=-1.0)


def test_csv_roundtrip(tmp_path):
    path = os.path.join(tmp_path, "t.csv")
    with open(path, "w") as fh:
        fh.write("1,2\n3,4\n5,6\n")
    table = load_feature_table(path, "csv")
    assert table.rows.shape == (3, 2)
    assert table.names is None

    path2 = os.path.join(tmp_path, "named.csv")
    with open(path2, "w") as fh:
        fh.write("a,b\n1.5,2.5\n")
    named = load_feature_table(path2, "csv")
    assert named.names == ("a", "b")
    assert named.rows.shape == (1, 2)


def test_csv_errors(tmp_path):
    header_only = os.path.join(tmp_path, "h.csv")
    with open(header_only, "w") as fh:
        fh.write("a,b\n")
    with pytest.raises(EmptyTable):
        load_feature_table(header_only, "csv")

    ragged = os.path.join(tmp_path, "r.csv")
    with open(ragged, "w") as fh:
        fh.write("1,2\n3\n")
    with pytest.raises(FormatError):
        load_feature_table(ragged, "csv")

    nan_file = os.path.join(tmp_path, "n.csv")
    with open(nan_file, "w") as fh:
        fh.write("1,2\nnan,4\n")
    with pytest.raises(DataError):
        load_feature_table(nan_file, "csv")


def test_binary_roundtrip(tmp_path):
    rows = np.random.default_rng(0).normal(size=(17, 3))
    path = os.path.join(tmp_path, "t.bin")
    save_feature_table(rows, path, fmt="bin")
    table = load_feature_table(path, "bin")
    assert np.array_equal(table.rows, rows)
    with open(path, "rb") as fh:
        assert fh.read(4) == b"NWF1"


def test_binary_errors(tmp_path):
    bad_magic = os.path.join(tmp_path, "bad.bin")
    with open(bad_magic, "wb") as fh:
        fh.write(b"XXXX" + b"\x00" * 8)
    with pytest.raises(FormatError):
        load_feature_table(bad_magic, "bin")

    truncated = os.path.join(tmp_path, "short.bin")
    with open(truncated, "wb") as fh:
        fh.write(b"NWF1" + (2).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"\x00" * 8)
    with pytest.raises(FormatError):
        load_feature_table(truncated, "bin")


def test_feature_table_validation():
    with pytest.raises(DataError):
        FeatureTable(rows=np.array([[1.0, np.inf]]))


def test_anisotropic_features_spectrum():
    table = anisotropic_gaussian_features(4000, 8, seed=0, top_std=1.0, decay=0.5)
    eig = np.sort(np.linalg.eigvalsh(np.cov(table.rows, rowvar=False)))[::-1]
    assert eig[0] > 50 * eig[4]  # strongly anisotropic
