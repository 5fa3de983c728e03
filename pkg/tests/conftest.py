from pathlib import Path

import numpy as np
import pytest

from realism.atn import ActivationBundle, ActivationTensor, write_bundle
from realism.pools import ReferencePool

SYNTH_LAYERS = (("convA", 2, 2, 8), ("fcB", 1, 1, 16))


def random_tensor(rng, layer="layer0", w=2, h=2, c=4):
    data = rng.normal(size=(w, h, c)).astype(np.float32)
    return ActivationTensor(layer, data)


def random_bundle(rng, image_id="img0", layers=(("layer0", 2, 2, 4),)):
    tensors = [random_tensor(rng, name, w, h, c) for name, w, h, c in layers]
    return ActivationBundle(image_id, tuple(tensors))


def random_pool(rng, layer="layer0", k=16, c=4, seed=0):
    vecs = rng.normal(size=(k, c)).astype(np.float32)
    return ReferencePool(layer_name=layer, vectors=vecs, source_count=k, seed=seed)


def make_synthetic_world(root, n_ref, n_images, seed, layers=SYNTH_LAYERS):
    """Write reference bundles plus scored bundles of graded realism.

    Each scored image copies a random reference image's activations and
    perturbs them with noise scaled by a per-image realism knob
    ``t in [0, 1)``: near zero the image sits on the reference manifold
    (small NN distances), near one it drifts far. Returns
    (ref_dir, image_dir, {image_id: t}).
    """
    root = Path(root)
    gen = np.random.default_rng(seed)
    ref_dir = root / "ref-bundles"
    img_dir = root / "bundles"
    ref_data = {
        name: gen.normal(size=(n_ref, w, h, c)).astype(np.float32)
        for name, w, h, c in layers
    }
    for j in range(n_ref):
        tensors = tuple(
            ActivationTensor(name, ref_data[name][j]) for name, _, _, _ in layers
        )
        write_bundle(ref_dir, ActivationBundle(f"ref{j:04d}", tensors))
    knobs = {}
    for i in range(n_images):
        t = float(gen.uniform(0.0, 1.0))
        image_id = f"img{i:05d}"
        knobs[image_id] = t
        tensors = []
        for name, w, h, c in layers:
            base = ref_data[name][int(gen.integers(n_ref))]
            noise = gen.normal(size=(w, h, c)) * (0.05 + 2.0 * t)
            tensors.append(
                ActivationTensor(name, (base + noise).astype(np.float32))
            )
        write_bundle(img_dir, ActivationBundle(image_id, tuple(tensors)))
    return ref_dir, img_dir, knobs


def labels_from_features(features_path, seed, weights=(-2.0, -1.5), intercept=0.0):
    """Draw binary labels and 5-rater votes from a known linear model.

    Standardizes the featurized distances, applies the fixed weights,
    and samples Bernoulli labels / Binomial(5) votes at the implied
    probabilities. Returns (ids, probabilities, labels, votes).
    """
    from realism.features import read_features_csv
    from realism.regression import sigmoid, standardize

    gen = np.random.default_rng(seed)
    _, vectors = read_features_csv(features_path)
    ids = [fv.image_id for fv in vectors]
    x = np.vstack([fv.values for fv in vectors])
    z, *_ = standardize(x)
    p = sigmoid(z @ np.asarray(weights) + intercept)
    labels = (gen.uniform(size=len(ids)) < p).astype(int)
    votes = gen.binomial(5, p)
    return ids, p, labels, votes


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)
