"""Level-tagged Gaussian scene: parameter storage, covariance and color
evaluation, level bookkeeping, and the binary model file format (.fags)."""

import struct
from dataclasses import dataclass, field

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

MAGIC = b"FAGS"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model file fails magic/version/size validation."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def inverse_sigmoid(y):
    return np.log(y / (1.0 - y))


@dataclass
class GaussianScene:
    """Arrays of per-Gaussian parameters plus a non-learnable frequency level.

    sh_coeffs has shape (N, 3, B) with B = (degree+1)^2 in {1, 4}; levels are
    integers in [1, num_levels].
    """

    positions: np.ndarray          # (N, 3) float
    quaternions: np.ndarray        # (N, 4) float, (w, x, y, z)
    log_scales: np.ndarray         # (N, 3) float
    opacity_logits: np.ndarray     # (N,) float
    sh_coeffs: np.ndarray          # (N, 3, B) float
    levels: np.ndarray             # (N,) int
    num_levels: int = 1
    background: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.quaternions = np.asarray(self.quaternions, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh_coeffs, dtype=np.float64)
        if n == 0:
            sh = sh.reshape(0, 3, sh.shape[2] if sh.ndim == 3 else 1)
        else:
            sh = sh.reshape(n, 3, -1)
        self.sh_coeffs = sh
        self.levels = np.asarray(self.levels, dtype=np.int64).reshape(n)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if self.sh_coeffs.shape[2] not in (1, 4):
            raise ValueError("SH basis size must be 1 or 4 (degree 0 or 1)")
        if n and (self.levels.min() < 1 or self.levels.max() > self.num_levels):
            raise ValueError("levels out of range for configured num_levels")

    @property
    def count(self):
        return self.positions.shape[0]

    @property
    def sh_basis(self):
        return self.sh_coeffs.shape[2]

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    def copy(self):
        return GaussianScene(
            self.positions.copy(), self.quaternions.copy(), self.log_scales.copy(),
            self.opacity_logits.copy(), self.sh_coeffs.copy(), self.levels.copy(),
            num_levels=self.num_levels, background=self.background.copy())

    def take(self, indices):
        """Scene restricted to the given Gaussian indices (order preserved)."""
        idx = np.asarray(indices, dtype=np.int64)
        return GaussianScene(
            self.positions[idx], self.quaternions[idx], self.log_scales[idx],
            self.opacity_logits[idx], self.sh_coeffs[idx], self.levels[idx],
            num_levels=self.num_levels, background=self.background.copy())

    def renormalize_quaternions(self):
        norms = np.linalg.norm(self.quaternions, axis=1, keepdims=True)
        self.quaternions = self.quaternions / np.maximum(norms, 1e-12)

    def extent(self):
        """Radius of the position cloud around its centroid."""
        if self.count == 0:
            return 1.0
        c = self.positions.mean(axis=0)
        return float(np.max(np.linalg.norm(self.positions - c, axis=1)) or 1.0)


@dataclass
class Camera:
    """Pinhole camera with world-to-camera pose: x_cam = R @ x_world + t."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray       # (3, 3) orthonormal
    translation: np.ndarray    # (3,)
    near: float = 0.1

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3)))
        if err > 1e-6:
            raise ValueError(f"camera rotation not orthonormal (err {err:.2e})")
        if self.fx <= 0 or self.fy <= 0 or self.near <= 0:
            raise ValueError("fx, fy, near must be positive")

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def scaled(self, factor):
        """Camera for the same view at a resolution scaled by ``factor``.

        Continuous pixel coordinates map as u' = factor*u + 0.5*(1-factor),
        the half-pixel-center resampling convention.
        """
        shift = 0.5 * (1.0 - factor)
        return Camera(
            int(round(self.width * factor)), int(round(self.height * factor)),
            self.fx * factor, self.fy * factor,
            self.cx * factor + shift, self.cy * factor + shift,
            self.rotation.copy(), self.translation.copy(), self.near)


def quaternion_to_rotation(q):
    """Rotation matrices for (..., 4) quaternions (w, x, y, z), renormalized."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3))
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def build_covariance(log_scale, quaternion):
    """Sigma = R S S^T R^T with S = diag(exp(log_scale)); accepts batches."""
    rot = quaternion_to_rotation(quaternion)
    s2 = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    return np.einsum("...ij,...j,...kj->...ik", rot, s2, rot)


def eval_color(sh_coeffs, direction, level):
    """View-dependent color from SH coefficients (degree <= 1), unclamped.

    Level 1 returns the raw value (nominally [0, 1]); levels >= 2 map it
    affinely to the signed residual range [-1, 1].
    """
    sh = np.asarray(sh_coeffs, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    raw = 0.5 + SH_C0 * sh[..., 0]
    if sh.shape[-1] == 4:
        raw = (raw - SH_C1 * d[..., None, 1] * sh[..., 1]
               + SH_C1 * d[..., None, 2] * sh[..., 2]
               - SH_C1 * d[..., None, 0] * sh[..., 3])
    if np.ndim(level) == 0:
        return raw if level < 2 else raw * 2.0 - 1.0
    residual = np.asarray(level) >= 2
    return np.where(residual[..., None] if raw.ndim > 1 else residual,
                    raw * 2.0 - 1.0, raw)


def introduce_level(scene, new_level):
    """Duplicate all Gaussians into the next frequency level.

    Clones start as near-no-ops: residual color 0 (raw 0.5) and opacity 0.1,
    so the accumulated render is continuous across the introduction.
    """
    if new_level != scene.num_levels + 1:
        raise ValueError(
            f"levels must be introduced in sequence: expected {scene.num_levels + 1}, got {new_level}")
    if scene.count == 0:
        out = scene.copy()
        out.num_levels = new_level
        return out
    clone_sh = np.zeros_like(scene.sh_coeffs)
    clone_logits = np.full(scene.count, inverse_sigmoid(0.1))
    return GaussianScene(
        np.concatenate([scene.positions, scene.positions]),
        np.concatenate([scene.quaternions, scene.quaternions]),
        np.concatenate([scene.log_scales, scene.log_scales]),
        np.concatenate([scene.opacity_logits, clone_logits]),
        np.concatenate([scene.sh_coeffs, clone_sh]),
        np.concatenate([scene.levels, np.full(scene.count, new_level, dtype=np.int64)]),
        num_levels=new_level, background=scene.background.copy())


def level_subset(scene, k):
    """Gaussians with level <= k, order preserved."""
    if not (1 <= k <= scene.num_levels):
        raise ValueError(f"level {k} outside [1, {scene.num_levels}]")
    out = scene.take(np.nonzero(scene.levels <= k)[0])
    return out


def level_counts(scene):
    """Gaussian count per level, as a list of length num_levels."""
    return [int(np.sum(scene.levels == l)) for l in range(1, scene.num_levels + 1)]


# ---------------------------------------------------------------------------
# .fags binary format
# ---------------------------------------------------------------------------

def save_model(scene, path):
    n = scene.count
    basis = scene.sh_basis
    degree = 0 if basis == 1 else 1
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQII", FORMAT_VERSION, n, scene.num_levels, degree))
        fh.write(scene.background.astype("<f4").tobytes())
        fh.write(scene.positions.astype("<f4").tobytes())
        fh.write(scene.quaternions.astype("<f4").tobytes())
        fh.write(scene.log_scales.astype("<f4").tobytes())
        fh.write(scene.opacity_logits.astype("<f4").tobytes())
        fh.write(scene.sh_coeffs.astype("<f4").tobytes())
        fh.write(scene.levels.astype("u1").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise ModelFormatError("bad magic; not a .fags model file")
    if len(data) < 32:
        raise ModelFormatError("truncated header")
    version, n, num_levels, degree = struct.unpack_from("<IQII", data, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    if degree not in (0, 1):
        raise ModelFormatError(f"unsupported SH degree {degree}")
    basis = (degree + 1) ** 2
    off = 24
    background = np.frombuffer(data, "<f4", 3, off).astype(np.float64)
    off += 12
    sizes = [n * 3, n * 4, n * 3, n, n * 3 * basis]
    expected = off + 4 * sum(sizes) + n
    if len(data) != expected:
        raise ModelFormatError(f"file size {len(data)} != expected {expected}")
    arrays = []
    for count in sizes:
        arrays.append(np.frombuffer(data, "<f4", count, off).astype(np.float64))
        off += 4 * count
    levels = np.frombuffer(data, "u1", n, off).astype(np.int64)
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ModelFormatError("non-finite values in model arrays")
    return GaussianScene(
        arrays[0].reshape(n, 3), arrays[1].reshape(n, 4), arrays[2].reshape(n, 3),
        arrays[3], arrays[4].reshape(n, 3, basis), levels,
        num_levels=num_levels, background=background)
