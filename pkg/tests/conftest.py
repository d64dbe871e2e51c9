import numpy as np
import pytest
from PIL import Image

# photographs bundled with scikit-image (all load offline); "motorcycle_left"
# and "motorcycle_right" are the two views of the stereo pair
NATURAL = (
    "astronaut", "camera", "coffee", "chelsea", "hubble_deep_field", "immunohistochemistry",
    "moon", "rocket", "coins", "clock", "brick", "grass", "gravel", "cell", "retina",
    "page", "text", "microaneurysms", "motorcycle_left", "motorcycle_right",
)


def _load(name):
    import skimage.data as data

    if name.startswith("motorcycle_"):
        a = data.stereo_motorcycle()[0 if name.endswith("left") else 1]
    else:
        a = getattr(data, name)()
    a = np.asarray(a)
    if a.ndim == 3:
        a = a[..., 1]  # green channel, as the ingest path does
    if a.dtype != np.uint8:
        a = np.clip(a, 0, 255).astype(np.uint8)
    h, w = a.shape
    return np.ascontiguousarray(a[: h - h % 8, : w - w % 8])


@pytest.fixture(scope="session")
def natural_images():
    pytest.importorskip("skimage")
    out = {}
    for name in NATURAL:
        try:
            out[name] = _load(name)
        except Exception:  # an optional download-only image
            continue
    assert len(out) >= 20, f"only {len(out)} sample images available"
    return out


@pytest.fixture(scope="session")
def source_dir(tmp_path_factory, natural_images):
    """A directory of lossless PNG sources for dataset generation."""
    d = tmp_path_factory.mktemp("sources")
    for name, a in natural_images.items():
        Image.fromarray(a).save(d / f"{name}.png")
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
