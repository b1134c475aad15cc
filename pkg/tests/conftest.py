import os
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from styledistill.diffusion.schedule import NoiseSchedule  # noqa: E402
from styledistill.diffusion.unet import Architecture, Denoiser  # noqa: E402
from styledistill.diffusion.vocab import Vocabulary  # noqa: E402

# Benchmark denoiser: trained once, cached between pytest sessions.
BENCH_TRAIN_STEPS = 1500
BENCH_DATASET_SIZE = 4000


def make_tiny_denoiser(seed: int = 0, cam_dim: int = 0) -> Denoiser:
    """Small randomly initialized denoiser with a non-zero output layer."""
    torch.manual_seed(seed)
    arch = Architecture(channels=(8, 16, 16), embed_dim=16, heads=2, groups=4, cam_dim=cam_dim)
    d = Denoiser(arch, Vocabulary(), schedule=NoiseSchedule())
    torch.nn.init.normal_(d.conv_out.weight, std=0.05)
    d = d.to(memory_format=torch.channels_last).eval()
    for p in d.parameters():
        p.requires_grad_(False)
    return d


@pytest.fixture
def tiny_denoiser():
    return make_tiny_denoiser()


@pytest.fixture(scope="session")
def trained_denoiser_path(request):
    """Path to the benchmark denoiser; trained on first use (about 15 min on one CPU)."""
    env = os.environ.get("STYLEDISTILL_DENOISER")
    if env:
        return Path(env)
    cache_dir = Path(request.config.cache.mkdir("styledistill"))
    path = cache_dir / f"denoiser_{BENCH_TRAIN_STEPS}.pt"
    if not path.exists():
        from styledistill.diffusion.dataset import make_dataset
        from styledistill.diffusion.train import TrainConfig, save_denoiser, train_toy_denoiser

        ds = make_dataset(BENCH_DATASET_SIZE, seed=0)
        d = train_toy_denoiser(ds, TrainConfig(steps=BENCH_TRAIN_STEPS, seed=0))
        save_denoiser(d, path)
    return path


@pytest.fixture(scope="session")
def trained_denoiser(trained_denoiser_path):
    from styledistill.diffusion.train import load_denoiser

    return load_denoiser(trained_denoiser_path)
