from __future__ import annotations

import math
import random

import pytest

from roomsmith import (
    BackendConfig,
    Inventory,
    MeshAsset,
    MockBackend,
    ModelGateway,
    RetryPolicy,
)


def make_inventory(specs: list[tuple[str, str]],
                   embeddings: dict[str, list[float]] | None = None,
                   embedding_dim: int | None = None) -> Inventory:
    """Inventory from (id, category) pairs; image ref is '<id>.png'."""
    assets = []
    for asset_id, category in specs:
        embedding = None
        if embeddings and asset_id in embeddings:
            embedding = tuple(embeddings[asset_id])
        assets.append(MeshAsset(id=asset_id, category=category,
                                image=f"{asset_id}.png", embedding=embedding))
    return Inventory(assets=assets, embedding_dim=embedding_dim)


def quick_gateway(backend: MockBackend) -> ModelGateway:
    """Gateway with no retry delay, for unit tests."""
    config = BackendConfig(retry=RetryPolicy(count=0, backoff_s=0.0))
    return ModelGateway(backend, chat_config=config)


def random_unit_vector(rng: random.Random, dim: int) -> list[float]:
    while True:
        vector = [rng.gauss(0.0, 1.0) for _ in range(dim)]
        norm = math.sqrt(sum(v * v for v in vector))
        if norm > 1e-6:
            return [v / norm for v in vector]


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240817)
