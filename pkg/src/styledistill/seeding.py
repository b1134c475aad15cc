"""Named random substreams derived from one root seed."""

import hashlib
import zlib

import numpy as np
import torch


def substream_seed(seed: int, name: str) -> int:
    """Stable 63-bit seed for the substream ``name`` of root ``seed``."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def torch_generator(seed: int, name: str | None = None) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(substream_seed(seed, name) if name else int(seed))
    return g


def numpy_rng(seed: int, name: str | None = None) -> np.random.Generator:
    return np.random.default_rng(substream_seed(seed, name) if name else int(seed))


def param_checksum(module: torch.nn.Module) -> str:
    """Hex digest over every parameter and buffer, in registration order."""
    h = hashlib.sha256()
    for name, t in list(module.named_parameters()) + list(module.named_buffers()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
