import numpy as np
import pytest

from irisynth.data import ToyIrisSpec, toy_iris


def make_corpus(n_identities, per_identity, seed, size=64, degrade=False):
    """Toy corpus with per-image ground truth.

    Parameter ranges are chosen inside the segmentation search band
    (pupil/iris ratio and iris radius fraction both comfortably interior).
    Returns (images, segmentations, identities, specs).
    """
    rng = np.random.default_rng(seed)
    images, segs, idents, specs = [], [], [], []
    for ident in range(n_identities):
        id_seed = int(rng.integers(0, 2**31))
        for _ in range(per_identity):
            irf = float(rng.uniform(0.36, 0.44))
            ratio = float(rng.uniform(0.32, 0.55))
            dil = float(rng.uniform(0.92, 1.08))
            spec = ToyIrisSpec(
                identity_seed=id_seed,
                pupil_radius_frac=ratio * irf / dil,
                iris_radius_frac=irf,
                center_offset=(
                    float(rng.uniform(-1.5, 1.5)),
                    float(rng.uniform(-1.5, 1.5)),
                ),
                dilation=dil,
                blur_sigma=float(rng.uniform(1.5, 2.5))
                if degrade
                else float(rng.uniform(0.0, 0.8)),
                noise_amplitude=float(rng.uniform(0.04, 0.08))
                if degrade
                else float(rng.uniform(0.0, 0.02)),
                occlusion_fraction=float(rng.uniform(0.0, 0.12)),
            )
            img, seg = toy_iris(spec, size)
            images.append(img)
            segs.append(seg)
            idents.append(f"id{ident:03d}")
            specs.append(spec)
    return images, segs, idents, specs


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(8, 3, seed=11)
