"""Frequency-aware 3D Gaussian splatting.

Gaussians carry an integer frequency level tied to Laplacian-pyramid
subbands of the training images; any level prefix renders a valid
lower-detail reconstruction. Subpackages: imgproc (frequency machinery),
model (scene + file format), render (differentiable rasterizer), train
(progressive schedule and losses), synth (synthetic benchmarks), apps
(LOD/foveation/focus/filter transforms), cli.
"""

__version__ = "0.1.0"

from .model import Camera, GaussianScene, load_model, save_model  # noqa: F401
from .render import RenderOptions, render_all_levels, render_level  # noqa: F401
