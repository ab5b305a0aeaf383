"""Shared fixtures: small datasets and trained models, built once per session.

The model zoo mirrors how the attribution question is usually posed:
a target decoder, a second architecture on the same data, the same
architecture on different data, and an independent reference trained on
a heterogeneous mixture.
"""

import numpy as np
import pytest

from imgorigin import DatasetSpec, synth_dataset, train_decoder
from imgorigin.models import GridModel
from imgorigin.tensorio import Rng

EPOCHS = 200


@pytest.fixture(scope="session")
def ds_blobs():
    return synth_dataset(DatasetSpec("gaussian-blobs", count=256, seed=1))


@pytest.fixture(scope="session")
def ds_stripes():
    return synth_dataset(DatasetSpec("striped-patterns", count=256, seed=2))


@pytest.fixture(scope="session")
def ds_blobs_unseen():
    return synth_dataset(DatasetSpec("gaussian-blobs", count=256, seed=3))


@pytest.fixture(scope="session")
def ds_mixed_probe():
    return synth_dataset(DatasetSpec("mixed", count=256, seed=4))


@pytest.fixture(scope="session")
def ds_mixed_ref():
    return synth_dataset(DatasetSpec("mixed", count=256, seed=9))


@pytest.fixture(scope="session")
def target_mlp(ds_blobs):
    return train_decoder(
        "mlp", ds_blobs.images, rng=Rng(11), epochs=EPOCHS,
        dataset_id=ds_blobs.dataset_id,
    )


@pytest.fixture(scope="session")
def other_arch_linear(ds_blobs):
    return train_decoder(
        "linear", ds_blobs.images, rng=Rng(12), epochs=EPOCHS,
        dataset_id=ds_blobs.dataset_id,
    )


@pytest.fixture(scope="session")
def other_data_mlp(ds_stripes):
    return train_decoder(
        "mlp", ds_stripes.images, rng=Rng(13), epochs=EPOCHS,
        dataset_id=ds_stripes.dataset_id,
    )


@pytest.fixture(scope="session")
def reference_mlp(ds_mixed_ref):
    return train_decoder(
        "mlp", ds_mixed_ref.images, rng=Rng(14), epochs=EPOCHS,
        dataset_id=ds_mixed_ref.dataset_id,
    )


@pytest.fixture(scope="session")
def grid64(ds_blobs):
    return GridModel(ds_blobs.images[:64], model_id="grid64")


@pytest.fixture(scope="session")
def shared_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("dist-cache")


@pytest.fixture()
def rng():
    return Rng(1234)


@pytest.fixture(scope="session")
def random_image_pairs(ds_blobs, ds_mixed_probe):
    """Image pairs with clearly separated pixel values, for gradient checks."""
    pairs = []
    for i in range(20):
        a = ds_blobs.images[i].astype(np.float64)
        b = ds_mixed_probe.images[i].astype(np.float64)
        pairs.append((a, b))
    return pairs
