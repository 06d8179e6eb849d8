import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    from sparselane import ModelConfig

    return ModelConfig(
        img_height=64,
        img_width=160,
        n_points=16,
        num_anchors=6,
        channels=16,
        heads=4,
        num_sample_points=5,
        backbone_widths=(8, 16, 16, 16),
    )
