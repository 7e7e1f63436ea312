"""Shared fixtures: synthetic datasets and small fitted models.

Everything expensive is session-scoped; the model forward pass is
deterministic, so sharing instances across tests cannot leak state.
"""

import dataclasses

import numpy as np
import pytest

from attncert import datagen, model


def _sharpen(params, scale=6.0):
    """Scale the query/key maps, lowering the softmax temperature.

    The stock 1/sqrt(q) initialization yields near-uniform attention rows;
    attacks then have nothing to grab onto and region-verification tests
    turn vacuous.  Sharpened attention concentrates mass on a few tokens,
    giving both certificates and attacks real margins to work with.
    """
    return dataclasses.replace(
        params,
        w_q=(params.w_q * scale).astype(np.float32),
        w_k=(params.w_k * scale).astype(np.float32),
    )


@pytest.fixture(scope="session")
def tiny_ds():
    """20 labelled 8x8 images with blob masks; the fast test corpus."""
    return datagen.synthesize(20, 8, seed=42)


@pytest.fixture(scope="session")
def tiny_params():
    """Unfitted 8x8 model as initialized (patch 4, q=8, two layers)."""
    return model.init_params(8, 4, 8, 2, 2, seed=7)


@pytest.fixture(scope="session")
def sharp_tiny_model(tiny_params, tiny_ds):
    """8x8 model with sharpened attention and a least-squares head."""
    return model.fit_head(_sharpen(tiny_params), tiny_ds.images, tiny_ds.labels)


@pytest.fixture(scope="session")
def desk_ds():
    """20 labelled 16x16 images; the desk-scale certification corpus."""
    return datagen.synthesize(20, 16, seed=11)


@pytest.fixture(scope="session")
def sharp_desk_model(desk_ds):
    """16x16 model, sharpened and fitted, for the soundness sweep."""
    base = model.init_params(16, 4, 8, 2, 2, seed=7)
    return model.fit_head(_sharpen(base), desk_ds.images, desk_ds.labels)
