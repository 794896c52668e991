import os

os.environ.setdefault("ODAPT_THREADS", str(min(4, os.cpu_count() or 1)))

import numpy as np
import pytest

from odapt.utils import configure_threads

configure_threads()

from odapt.detector import TrainConfig, train_detector
from odapt.recognizer import train_source
from odapt.bundle import ModelBundle
from odapt.synth import DomainSpec, build_dataset


def tiny_domain(domain_id="tinyA", **overrides) -> DomainSpec:
    base = dict(
        domain_id=domain_id,
        background_style="flat",
        background_seed=5,
        object_shape_family="mixed",
        palette_seed=11,
        illumination_gain=1.0,
        sensor_noise_sigma=0.01,
        hand_sprite_style="rounded",
        rng_seed=1,
    )
    base.update(overrides)
    return DomainSpec(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    """5 clips per action (3/1/1 split): quick mechanics-level fixture."""
    return build_dataset(tiny_domain(), 5)


@pytest.fixture(scope="session")
def tiny_target_dataset():
    spec = tiny_domain(
        domain_id="tinyB",
        background_style="tiled",
        background_seed=17,
        palette_seed=29,
        illumination_gain=1.25,
        sensor_noise_sigma=0.03,
        hand_sprite_style="angular",
        rng_seed=2,
    )
    return build_dataset(spec, 5)


def frames_and_boxes(clips):
    frames = np.concatenate([c.frames for c in clips])
    boxes = [c.boxes(t) for c in clips for t in range(c.t_frames)]
    return frames, boxes


@pytest.fixture(scope="session")
def tiny_bundle(tiny_dataset):
    """A lightly trained bundle: enough structure for protocol tests."""
    train = tiny_dataset.clips("train")
    frames, boxes = frames_and_boxes(train)
    det, _ = train_detector(
        frames, boxes, TrainConfig(learning_rate=1e-3, epochs=6, batch_size=32, iou_threshold=0.03, optimizer="adam")
    )
    rec, enc, _ = train_source(
        train, TrainConfig(learning_rate=1e-3, epochs=2, batch_size=8, optimizer="adam")
    )
    return ModelBundle(detector=det, recognizer=rec, encoder=enc)
