import numpy as np
import pytest

from ddnet.image_io import save_image


def structured_image(height, width, seed=0):
    """A clear test image with edges, gradients, and a little texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    img = np.zeros((height, width, 3), dtype=np.float32)
    img[:, :, 0] = 0.35 + 0.3 * np.sin(xx / 7.0)
    img[:, :, 1] = 0.5 + 0.4 * (yy / max(height - 1, 1)) - 0.2
    img[:, :, 2] = 0.45 + 0.25 * np.cos((xx + yy) / 9.0)
    img[height // 4 : height // 2, width // 4 : width // 2] += 0.25
    img += 0.02 * rng.standard_normal(img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@pytest.fixture
def lol_tree(tmp_path):
    """Factory for a LOL-layout dataset of structured synthetic pairs."""

    def build(n_pairs=2, height=32, width=32, unmatched_low=0, unmatched_high=0):
        root = tmp_path / "dataset"
        (root / "low").mkdir(parents=True, exist_ok=True)
        (root / "high").mkdir(parents=True, exist_ok=True)
        for i in range(n_pairs):
            clear = structured_image(height, width, seed=100 + i)
            save_image(clear, root / "high" / f"{i:03d}.png")
            save_image(clear * np.float32(0.2 + 0.05 * i), root / "low" / f"{i:03d}.png")
        for i in range(unmatched_low):
            save_image(
                structured_image(height, width, seed=200 + i) * np.float32(0.3),
                root / "low" / f"lonely_low_{i}.png",
            )
        for i in range(unmatched_high):
            save_image(
                structured_image(height, width, seed=300 + i),
                root / "high" / f"lonely_high_{i}.png",
            )
        return root

    return build
