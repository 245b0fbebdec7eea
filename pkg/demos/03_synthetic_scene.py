"""Generate a synthetic hyperspectral scene and look at its geometry.

Each class is a smooth endmember spectrum; each pixel is that spectrum
scaled by a random per-pixel gain (emulating illumination variation),
optionally plus Gaussian noise at a chosen SNR. Class layout comes from a
Voronoi tessellation, so the scene has spatially coherent regions.

The punchline: nearest-endmember-by-cosine classifies the clean scene
perfectly, while nearest-by-Euclidean does not. Direction carries the
material identity; magnitude does not.
"""

import numpy as np

from angleattn.data import SynthSpec, export_map, inject_noise, synth_scene

spec = SynthSpec(height=64, width=64, bands=32, classes=8, sites=24,
                 gain_lo=0.5, gain_hi=1.5, seed=0)
cube, labels = synth_scene(spec)
print(f"scene: {cube.values.shape}, labels 1..{labels.num_classes}")

flat = cube.values.reshape(-1, spec.bands).astype(np.float64)
truth = labels.ids.reshape(-1).astype(int)
endmembers = np.stack([flat[truth == c].mean(axis=0)
                       for c in range(1, spec.classes + 1)])

unit = lambda m: m / np.linalg.norm(m, axis=-1, keepdims=True)
by_cosine = (unit(flat) @ unit(endmembers).T).argmax(axis=1) + 1
d2 = ((flat[:, None, :] - endmembers[None]) ** 2).sum(axis=2)
by_euclid = d2.argmin(axis=1) + 1

print(f"nearest-endmember accuracy by cosine:    {(by_cosine == truth).mean():.4f}")
print(f"nearest-endmember accuracy by distance:  {(by_euclid == truth).mean():.4f}")

# add 20 dB of spectral noise and render the label map as a PPM image
noisy = inject_noise(cube, 20.0, seed=1)
snr = 10 * np.log10(np.mean(cube.values.astype(np.float64) ** 2)
                    / np.mean((noisy.values - cube.values).astype(np.float64) ** 2))
print(f"empirical SNR after injection: {snr:.2f} dB")

export_map(labels.ids, "scene_labels.ppm", num_classes=spec.classes)
print("wrote scene_labels.ppm")
