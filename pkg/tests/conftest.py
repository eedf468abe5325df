import numpy as np
import pytest


@pytest.fixture(scope="session")
def camera_image():
    """512x512 natural greyscale test image in [0, 1]."""
    import skimage.data

    return skimage.data.camera().astype(np.float64) / 255.0


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the parallel kernels once so timed tests measure compute only."""
    from patchbeam import bpfa
    from patchbeam.patches import PatchSpec, extract_patches
    from patchbeam.sampling import SamplerSpec, make_mask

    rng = np.random.default_rng(0)
    img = rng.random((12, 12))
    mask = make_mask(SamplerSpec(ratio=0.5, seed=0), img.shape)
    pm = extract_patches(img, mask, PatchSpec((4, 4)), mean_subtract=True)
    bpfa.infer(pm, bpfa.Hyperparams(num_atoms=2), epochs=1, seed=0)


def random_state(pm, hp, seed):
    """A randomized-but-valid sampler state for oracle comparisons."""
    from patchbeam import bpfa

    state = bpfa.init_state(pm, hp, seed=seed, init_mode="prior")
    rng = np.random.default_rng(seed + 1)
    n, k = state.usage.shape
    state.usage[:] = rng.random((n, k)) < 0.5
    state.weights[:] = rng.standard_normal((n, k))
    state.dictionary.atoms[:] = rng.standard_normal(state.dictionary.atoms.shape)
    state.dictionary.pi = rng.uniform(0.05, 0.95, size=k)
    state.weight_precision = float(rng.uniform(0.5, 4.0))
    state.noise_precision = float(rng.uniform(0.5, 50.0))
    return state
