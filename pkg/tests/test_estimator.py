"""Sklearn-facade estimator: params, fit inputs, predict/score."""
import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from parkloc.errors import InvalidInputError
from parkloc.estimator import ParkingLotLocalizer
from parkloc.gallery import load_index
from parkloc.synth import SceneSpec, generate


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    spec = SceneSpec(seed=7, n_sections=3, vehicles_per_section=(1, 2))
    return generate(spec, tmp_path_factory.mktemp("est-corpus"))


@pytest.fixture(scope="module")
def fitted(corpus):
    est = ParkingLotLocalizer(target_long_side=320)
    est.fit(corpus.gallery_manifest, detections=corpus.gallery_detections)
    return est


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        est = ParkingLotLocalizer(temperature=0.07, window=7)
        params = est.get_params()
        assert params["temperature"] == 0.07
        assert params["window"] == 7
        assert params["backend"] == "hog"
        est.set_params(threshold=0.3)
        assert est.get_params()["threshold"] == 0.3

    def test_clone_preserves_params_not_fit_state(self, fitted):
        twin = clone(fitted)
        assert twin.get_params() == fitted.get_params()
        assert not hasattr(twin, "index_")

    def test_unfitted_predict_raises(self, corpus):
        est = ParkingLotLocalizer(target_long_side=320)
        with pytest.raises(NotFittedError):
            est.predict(corpus.query_manifest)

    def test_bad_param_rejected_at_fit(self, corpus):
        est = ParkingLotLocalizer(temperature=-2.0, target_long_side=320)
        with pytest.raises(InvalidInputError):
            est.fit(corpus.gallery_manifest)


class TestFitInputs:
    def test_fit_from_manifest(self, fitted):
        assert len(fitted.index_.entries) == 3
        assert fitted.index_.sections == {"s000", "s001", "s002"}

    def test_fit_from_index_directory(self, corpus, fitted, tmp_path):
        from parkloc.gallery import build_index
        out = tmp_path / "idx"
        build_index(
            corpus.gallery_manifest,
            backend=fitted._config().feature_backend(),
            detections_path=corpus.gallery_detections,
            out_dir=out,
            target_long_side=320,
        )
        est = ParkingLotLocalizer(target_long_side=320).fit(out)
        assert [e.source_id for e in est.index_.entries] == ["g000", "g001", "g002"]

    def test_fit_from_index_object(self, fitted):
        est = ParkingLotLocalizer(target_long_side=320).fit(fitted.index_)
        assert est.index_ is fitted.index_

    def test_fit_from_image_list_with_labels(self, corpus):
        paths = sorted((corpus.root / "gallery").glob("*.png"))
        est = ParkingLotLocalizer(target_long_side=320)
        est.fit(paths, y=["s000", "s001", "s002"])
        assert est.index_.sections == {"s000", "s001", "s002"}

    def test_fit_from_image_list_needs_matching_y(self, corpus):
        paths = sorted((corpus.root / "gallery").glob("*.png"))
        est = ParkingLotLocalizer(target_long_side=320)
        with pytest.raises(InvalidInputError):
            est.fit(paths)
        with pytest.raises(InvalidInputError):
            est.fit(paths, y=["s000"])
        with pytest.raises(InvalidInputError):
            est.fit([], y=[])

    def test_fit_from_unsupported_type(self):
        with pytest.raises(InvalidInputError):
            ParkingLotLocalizer().fit(42)


class TestPredictScore:
    def test_predict_identity_corpus(self, corpus, fitted):
        preds = fitted.predict(corpus.query_manifest,
                               detections=corpus.query_detections)
        assert isinstance(preds, np.ndarray) and preds.dtype == object
        assert preds.tolist() == ["s000", "s001", "s002"]

    def test_predict_from_path_list(self, corpus, fitted):
        paths = sorted((corpus.root / "queries").glob("*.png"))
        preds = fitted.predict(paths)
        assert preds.tolist() == ["s000", "s001", "s002"]

    def test_localize_exposes_counts(self, corpus, fitted):
        results = fitted.localize(corpus.query_manifest,
                                  detections=corpus.query_detections)
        assert len(results) == 3
        for k, r in enumerate(results):
            assert r.query_id == f"q{k:03d}"
            assert r.best_count == max(r.counts)
            assert not r.low_confidence

    def test_score_from_manifest_labels(self, corpus, fitted):
        s = fitted.score(corpus.query_manifest, detections=corpus.query_detections)
        assert s == 1.0

    def test_score_with_explicit_y(self, corpus, fitted):
        paths = sorted((corpus.root / "queries").glob("*.png"))
        assert fitted.score(paths, y=["s000", "s001", "s002"]) == 1.0
        assert fitted.score(paths, y=["s000", "s001", "s000"]) == pytest.approx(2 / 3)

    def test_score_accepts_label_collections(self, corpus, fitted):
        paths = sorted((corpus.root / "queries").glob("*.png"))
        y = [("s000", "s001"), {"s001"}, ["s000", "s002"]]
        assert fitted.score(paths, y=y) == 1.0

    def test_score_without_y_needs_manifest(self, corpus, fitted):
        paths = sorted((corpus.root / "queries").glob("*.png"))
        with pytest.raises(InvalidInputError):
            fitted.score(paths)

    def test_score_length_mismatch(self, corpus, fitted):
        paths = sorted((corpus.root / "queries").glob("*.png"))
        with pytest.raises(InvalidInputError):
            fitted.score(paths, y=["s000"])

    def test_predict_from_unsupported_type(self, fitted):
        with pytest.raises(InvalidInputError):
            fitted.predict(3.14)
