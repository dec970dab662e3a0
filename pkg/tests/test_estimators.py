"""Scikit-learn API conformance across the package's estimators."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline as SkPipeline

from liplab.maskgen import TemplateMaskMaker
from liplab.segnet import MaskAutoencoder, SequentialLipSegmenter
from liplab.texture import TextureInputBuilder

ESTIMATORS = [
    TextureInputBuilder(),
    TemplateMaskMaker(),
    SequentialLipSegmenter(),
    MaskAutoencoder(),
]


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_get_set_params_round_trip(est):
    params = est.get_params()
    assert params
    rebuilt = type(est)(**params)
    assert rebuilt.get_params() == params
    est2 = clone(est)
    assert est2.get_params() == params
    # set_params returns self and changes take effect
    key = sorted(params)[0]
    assert est2.set_params(**{key: params[key]}) is est2


def test_clone_drops_fitted_state():
    rng = np.random.default_rng(0)
    masks = (rng.uniform(size=(2, 8, 8)) > 0.5).astype(np.float32)
    ae = MaskAutoencoder(widths=(4, 8), input_size=(8, 8), epochs=2, batch_size=2)
    ae.fit(masks)
    assert hasattr(ae, "params_")
    fresh = clone(ae)
    assert not hasattr(fresh, "params_")
    with pytest.raises(NotFittedError):
        fresh.transform(masks)


def test_unfitted_segmenter_raises():
    est = SequentialLipSegmenter()
    X = np.zeros((1, 64, 64, 3), dtype=np.uint8)
    with pytest.raises(NotFittedError):
        est.predict(X)
    with pytest.raises(NotFittedError):
        est.predict_proba(X)


def test_texture_builder_batch_layouts():
    rng = np.random.default_rng(1)
    imgs = rng.integers(0, 256, size=(2, 16, 16, 3), dtype=np.uint8)
    tb = TextureInputBuilder()
    batch = tb.fit(imgs).transform(imgs)
    assert batch.shape == (2, 16, 16, 5)
    single = tb.transform(imgs[0])
    assert single.shape == (16, 16, 5)
    assert np.array_equal(single, batch[0])
    as_list = tb.transform([imgs[0], imgs[1]])
    assert isinstance(as_list, list) and len(as_list) == 2
    with pytest.raises(ValueError, match="expected"):
        tb.transform(np.zeros((16, 16)))


def test_texture_builder_validates_on_fit():
    tb = TextureInputBuilder(neighbors=0)
    with pytest.raises(ValueError):
        tb.fit(np.zeros((8, 8, 3), dtype=np.uint8))


def test_estimators_compose_in_sklearn_pipeline():
    rng = np.random.default_rng(2)
    imgs = rng.integers(0, 256, size=(2, 16, 16, 3), dtype=np.uint8)
    pipe = SkPipeline([("texture", TextureInputBuilder())])
    out = pipe.fit_transform(imgs)
    assert out.shape == (2, 16, 16, 5)
