import math

import numpy as np
import pytest

from normgp.errors import (
    CohortParseError,
    ModelFormatError,
    ModelIntegrityError,
    SchemaError,
)
from normgp.gpr import FitConfig, fit, predict, restore
from normgp.kernels import SUM, KernelParams
from normgp.preprocess import fit_pca, fit_standardizer
from normgp.tabular_io import (
    Cohort,
    CohortSchema,
    ModelArtifact,
    ScoresTable,
    artifact_from_fit,
    load_cohort,
    load_model,
    load_scores,
    save_cohort,
    save_model,
    save_scores,
    sex_to_indicator,
    to_trained_model,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_cohort_with_all_roles(tmp_path):
    path = write(
        tmp_path / "c.csv",
        "id,age,dx,v1,v2\na,61,HC,0.5,1.5\nb,72.5,AD,-0.25,2\nc,59,HC,0.125,3\n",
    )
    cohort = load_cohort(path)
    assert cohort.n_subjects == 3
    assert cohort.feature_names == ("v1", "v2")
    assert cohort.subject_ids == ("a", "b", "c")
    assert cohort.diagnosis == ("HC", "AD", "HC")
    assert np.array_equal(cohort.age, [61.0, 72.5, 59.0])
    assert np.array_equal(cohort.features[:, 0], [0.5, -0.25, 0.125])


def test_non_numeric_age_names_row_and_column(tmp_path):
    path = write(tmp_path / "c.csv", "id,age,v1\na,abc,1\n")
    with pytest.raises(CohortParseError, match=r"row 2.*'age'"):
        load_cohort(path)


def test_empty_feature_cell_is_an_error(tmp_path):
    path = write(tmp_path / "c.csv", "age,v1,v2\n50,1.0,2.0\n60,,2.5\n")
    with pytest.raises(CohortParseError, match=r"row 3.*'v1'"):
        load_cohort(path)


def test_structural_errors(tmp_path):
    with pytest.raises(SchemaError, match="empty"):
        load_cohort(write(tmp_path / "empty.csv", ""))
    with pytest.raises(SchemaError, match="age"):
        load_cohort(write(tmp_path / "noage.csv", "id,v1\na,1\n"))
    with pytest.raises(SchemaError, match="duplicate"):
        load_cohort(write(tmp_path / "dup.csv", "age,v1,v1\n50,1,2\n"))
    with pytest.raises(SchemaError, match="no feature columns"):
        load_cohort(write(tmp_path / "nofeat.csv", "id,age\na,50\n"))


def test_value_errors_cite_position(tmp_path):
    with pytest.raises(CohortParseError, match="row 2"):
        load_cohort(write(tmp_path / "neg.csv", "age,v1\n-5,1\n"))
    with pytest.raises(CohortParseError, match="row 3"):
        load_cohort(write(tmp_path / "inf.csv", "age,v1\n50,1\n60,inf\n"))
    with pytest.raises(CohortParseError, match="sex"):
        load_cohort(write(tmp_path / "sex.csv", "age,sex,v1\n50,X,1\n"))
    with pytest.raises(CohortParseError, match="row 2"):
        load_cohort(write(tmp_path / "short.csv", "age,v1,v2\n50,1\n"))


def test_ids_synthesized_when_missing(tmp_path):
    cohort = load_cohort(write(tmp_path / "c.csv", "age,v1\n50,1\n60,2\n"))
    assert cohort.subject_ids == ("0", "1")
    assert cohort.sex is None and cohort.diagnosis is None


def test_explicit_feature_subset(tmp_path):
    path = write(tmp_path / "c.csv", "age,v1,v2,extra\n50,1,2,9\n60,3,4,8\n")
    cohort = load_cohort(path, CohortSchema(feature_columns=("v2",)))
    assert cohort.feature_names == ("v2",)
    assert np.array_equal(cohort.features[:, 0], [2.0, 4.0])
    with pytest.raises(SchemaError, match="missing"):
        load_cohort(path, CohortSchema(feature_columns=("nope",)))


def test_sex_parsing_and_indicator(tmp_path):
    cohort = load_cohort(
        write(tmp_path / "c.csv", "age,sex,v1\n50,F,1\n60,M,2\n")
    )
    assert cohort.sex == ("F", "M")
    assert np.array_equal(sex_to_indicator(cohort.sex), [0.0, 1.0])
    with pytest.raises(ValueError):
        sex_to_indicator(("F", "Q"))


def test_cohort_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    cohort = Cohort(
        subject_ids=("s1", "s2", "s3"),
        features=rng.normal(size=(3, 4)),
        feature_names=("a", "b", "c", "d"),
        age=rng.uniform(20, 80, 3),
        sex=("F", "M", "F"),
        diagnosis=("HC", "DX", "HC"),
    )
    path = tmp_path / "c.csv"
    save_cohort(cohort, path)
    loaded = load_cohort(str(path))
    assert np.array_equal(loaded.features, cohort.features)
    assert np.array_equal(loaded.age, cohort.age)
    assert loaded.subject_ids == cohort.subject_ids
    assert loaded.sex == cohort.sex
    assert loaded.diagnosis == cohort.diagnosis


def test_cohort_invariants():
    with pytest.raises(ValueError):
        Cohort(("a",), np.ones((2, 1)), ("v",), np.array([50.0, 60.0]))
    with pytest.raises(ValueError):
        Cohort(("a", "b"), np.ones((2, 2)), ("v", "v"), np.array([50.0, 60.0]))
    with pytest.raises(ValueError):
        Cohort(("a",), np.array([[np.nan]]), ("v",), np.array([50.0]))
    with pytest.raises(ValueError):
        Cohort(("a",), np.ones((1, 1)), ("v",), np.array([0.0]))


def test_scores_epsilon_definition_written(tmp_path):
    table = ScoresTable(
        subject_ids=("s1",),
        age=np.array([65.0]),
        diagnosis=("HC",),
        y_hat=np.array([70.0]),
        epsilon=np.array([5.0]),
        cov=np.array([1.25]),
        cov_w=np.array([1.25]),
    )
    path = tmp_path / "s.csv"
    save_scores(table, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,age,diagnosis,y_hat,epsilon,cov,cov_w"
    assert lines[1].split(",")[4] == "5"


def test_scores_empty_table_and_round_trip(tmp_path):
    empty = ScoresTable((), np.array([]), (), np.array([]), np.array([]), np.array([]), np.array([]))
    path = tmp_path / "empty.csv"
    save_scores(empty, path)
    assert path.read_text().splitlines() == ["id,age,diagnosis,y_hat,epsilon,cov,cov_w"]
    assert load_scores(path).n_subjects == 0

    rng = np.random.default_rng(1)
    table = ScoresTable(
        subject_ids=("a", "b"),
        age=rng.uniform(20, 80, 2),
        diagnosis=("HC", "DX"),
        y_hat=rng.uniform(20, 80, 2),
        epsilon=rng.normal(size=2),
        cov=rng.uniform(0, 3, 2),
        cov_w=rng.uniform(0, 3, 2),
    )
    full = tmp_path / "s.csv"
    save_scores(table, full)
    loaded = load_scores(full)
    for field in ("age", "y_hat", "epsilon", "cov", "cov_w"):
        assert np.array_equal(getattr(loaded, field), getattr(table, field))


def test_scores_length_mismatch_is_contract_error():
    with pytest.raises(ValueError):
        ScoresTable(
            subject_ids=("a",),
            age=np.array([50.0]),
            diagnosis=("HC",),
            y_hat=np.array([50.0, 51.0]),
            epsilon=np.array([0.0]),
            cov=np.array([1.0]),
            cov_w=np.array([1.0]),
        )


def test_scores_header_enforced_on_load(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,age,dx,y_hat,epsilon,cov,cov_w\n")
    with pytest.raises(SchemaError):
        load_scores(path)


def _small_artifact(with_chain=False, length_scales=(1.5, 0.5)):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 2))
    y = rng.uniform(30, 70, 6)
    params = KernelParams(length_scales=np.asarray(length_scales), noise_variance=0.2)
    standardizer = pca = None
    feature_names = ("f1", "f2")
    if with_chain:
        raw = rng.normal(size=(6, 3))
        feature_names = ("f1", "f2", "f3")
        standardizer = fit_standardizer(raw)
        pca = fit_pca(standardizer.apply(raw), 2)
        x = pca.project(standardizer.apply(raw))
    model = restore(x, y, params, SUM, y_offset=float(y.mean()))
    return artifact_from_fit(
        model, feature_names, standardizer=standardizer, pca=pca, seed=5
    )


def test_model_round_trip_field_for_field(tmp_path):
    artifact = _small_artifact(with_chain=True)
    path = tmp_path / "model.gp"
    save_model(artifact, path)
    loaded = load_model(path)
    assert loaded.kernel_form == artifact.kernel_form
    assert loaded.feature_names == artifact.feature_names
    assert loaded.y_offset == artifact.y_offset
    assert np.array_equal(loaded.training_features, artifact.training_features)
    assert np.array_equal(loaded.training_ages, artifact.training_ages)
    assert np.array_equal(
        loaded.kernel_params.length_scales, artifact.kernel_params.length_scales
    )
    assert loaded.kernel_params.noise_variance == artifact.kernel_params.noise_variance
    assert np.array_equal(loaded.standardizer.means, artifact.standardizer.means)
    assert np.array_equal(loaded.standardizer.std_devs, artifact.standardizer.std_devs)
    assert np.array_equal(loaded.pca.components, artifact.pca.components)
    assert np.array_equal(loaded.pca.mean, artifact.pca.mean)
    assert np.array_equal(loaded.pca.explained_variance, artifact.pca.explained_variance)
    assert loaded.fit_metadata == artifact.fit_metadata


def test_model_round_trip_preserves_tiny_length_scale(tmp_path):
    artifact = _small_artifact(length_scales=(1e-12, 2.0))
    path = tmp_path / "model.gp"
    save_model(artifact, path)
    loaded = load_model(path)
    assert loaded.kernel_params.length_scales[0] == 1e-12


def test_model_unsupported_version(tmp_path):
    artifact = _small_artifact()
    path = tmp_path / "model.gp"
    save_model(artifact, path)
    text = path.read_text()
    bad = tmp_path / "v999.gp"
    bad.write_text(text.replace("normative-gp-model v1", "normative-gp-model v999", 1))
    with pytest.raises(ModelFormatError, match="999"):
        load_model(bad)
    garbage = tmp_path / "garbage.gp"
    garbage.write_text("something else entirely\n")
    with pytest.raises(ModelFormatError):
        load_model(garbage)


def test_model_truncation_is_integrity_error(tmp_path):
    artifact = _small_artifact(with_chain=True)
    path = tmp_path / "model.gp"
    save_model(artifact, path)
    lines = path.read_text().splitlines()
    for cut in (len(lines) // 3, len(lines) - 1):
        clipped = tmp_path / f"cut{cut}.gp"
        clipped.write_text("\n".join(lines[:cut]) + "\n")
        with pytest.raises(ModelIntegrityError, match="truncated"):
            load_model(clipped)


def test_model_trailing_content_rejected(tmp_path):
    artifact = _small_artifact()
    path = tmp_path / "model.gp"
    save_model(artifact, path)
    extended = tmp_path / "extra.gp"
    extended.write_text(path.read_text() + "surplus line\n")
    with pytest.raises(ModelFormatError):
        load_model(extended)


def test_scores_from_reloaded_model_match(tmp_path):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(15, 3))
    y = rng.uniform(20, 80, 15)
    model = fit(x, y, FitConfig(restarts=1, seed=0))
    artifact = artifact_from_fit(model, ("a", "b", "c"))
    path = tmp_path / "model.gp"
    save_model(artifact, path)
    revived = to_trained_model(load_model(path))
    x_test = rng.normal(size=(4, 3))
    original = predict(model, x_test)
    reloaded = predict(revived, x_test)
    assert np.allclose(reloaded.y_hat, original.y_hat, rtol=1e-12, atol=1e-12)
    assert np.allclose(reloaded.variance, original.variance, rtol=1e-12, atol=1e-14)


def test_artifact_dimension_validation():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 2))
    y = rng.uniform(20, 80, 5)
    model = restore(x, y, KernelParams(length_scales=np.ones(2)), SUM)
    with pytest.raises(ValueError):
        artifact_from_fit(model, ("only_one",))
    artifact = artifact_from_fit(model, ("a", "b"))
    future = ModelArtifact(
        kernel_form=artifact.kernel_form,
        feature_names=artifact.feature_names,
        training_features=artifact.training_features,
        training_ages=artifact.training_ages,
        kernel_params=artifact.kernel_params,
        fit_metadata=artifact.fit_metadata,
        format_version=999,
    )
    with pytest.raises(ValueError):
        save_model(future, "/tmp/never-written.gp")
