"""Depth-sorted alpha-compositing rasterizer with per-Gaussian visibility.

Projection follows the EWA splatting linearization: a world-space Gaussian
(mean, covariance) maps to a 2D Gaussian with covariance
``J W Sigma W^T J^T + blur I`` where J is the perspective Jacobian at the
mean and W the world-to-camera rotation. Splats are composited back to
front per pixel using a global per-splat depth order (ties broken by
ascending Gaussian index), alpha clamped to 0.999 and cut off outside the
3-sigma ellipse.

The production path flattens every (splat, pixel) contribution into one
pair list and composites with segmented cumulative sums of log(1 - alpha);
transmittances are exact up to exp/log rounding, there is no early exit
and no tiling. The same pass accumulates per-Gaussian visibility
(sum over pixels of T * alpha), so the conservation identity
"sum of visibility + residual transmittance = 1 per pixel" holds by
construction.

``render_arrays(..., with_state=True)`` additionally keeps the pair list
so :func:`backward` can push a pixel-space loss gradient onto colors,
opacities, and world-space means analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraPose
from .errors import ArgumentError, NonFiniteError
from .gaussians import GaussianCloud, quat_to_matrix

BLUR_FLOOR = 0.3  # px^2, anti-alias floor added to every 2D covariance
NEAR_PLANE = 0.01  # m
CUTOFF_D2 = 9.0  # squared Mahalanobis radius of the 3-sigma footprint
ALPHA_MAX = 0.999

WHITE = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class Splat2D:
    """A projected Gaussian: 2D mean (px), 2x2 SPD covariance, camera depth."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


@dataclass(frozen=True)
class Fragment:
    """One splat's contribution to one pixel, before compositing."""

    gaussian_index: int
    depth: float
    alpha: float
    color: np.ndarray


@dataclass
class RenderedImage:
    """RGB render plus per-pixel accumulated alpha, both in [0, 1]."""

    pixels: np.ndarray  # (H, W, 3)
    accumulated_alpha: np.ndarray  # (H, W)


@dataclass
class RenderState:
    """Pair-level intermediates kept by the forward pass for backward()."""

    cam: CameraPose
    background: np.ndarray
    n_total: int
    # survivor-level (after culling, depth order)
    orig_index: np.ndarray  # (M,) index into the input cloud
    mean2d: np.ndarray  # (M, 2)
    cov2d_inv: np.ndarray  # (M, 2, 2)
    jacobian: np.ndarray  # (M, 2, 3) perspective Jacobian at the mean
    opacities: np.ndarray  # (M,)
    colors: np.ndarray  # (M, 3)
    # pair-level (pixel-major, front-to-back within pixel)
    pair_splat: np.ndarray  # (P,) survivor rank
    pixel_id: np.ndarray  # (P,)
    alpha: np.ndarray  # (P,)
    clamped: np.ndarray  # (P,) bool, alpha hit the 0.999 clamp
    transmittance: np.ndarray  # (P,)
    delta: np.ndarray  # (P, 2) pixel center minus mean2d
    seg_id: np.ndarray  # (P,)
    residual_t: np.ndarray  # (H*W,)
    contrib: np.ndarray  # (P,) transmittance * alpha


def perspective_jacobian(cam_points: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Jacobian of (x,y,z) -> (fx x/z + cx, fy y/z + cy), shape (..., 2, 3)."""
    pts = np.asarray(cam_points, dtype=np.float64)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    j = np.zeros(pts.shape[:-1] + (2, 3), dtype=np.float64)
    j[..., 0, 0] = fx / z
    j[..., 0, 2] = -fx * x / (z * z)
    j[..., 1, 1] = fy / z
    j[..., 1, 2] = -fy * y / (z * z)
    return j


def _project_batch(means_w: np.ndarray, covs_w: np.ndarray, cam: CameraPose):
    """Project all Gaussians, cull, and return survivor arrays.

    Returns a dict with survivor indices (ascending input order), 2D means,
    inverse 2D covariances, depths, perspective Jacobians, and integer
    pixel bounding boxes of the 3-sigma footprint.
    """
    means_w = np.asarray(means_w, dtype=np.float64).reshape(-1, 3)
    covs_w = np.asarray(covs_w, dtype=np.float64).reshape(-1, 3, 3)
    n = len(means_w)
    if not np.all(np.isfinite(means_w)):
        bad = int(np.argwhere(~np.isfinite(means_w).all(axis=1))[0, 0])
        raise NonFiniteError(f"Gaussian {bad}: non-finite mean")
    if not np.all(np.isfinite(covs_w)):
        bad = int(np.argwhere(~np.isfinite(covs_w).all(axis=(1, 2)))[0, 0])
        raise NonFiniteError(f"Gaussian {bad}: non-finite covariance")

    cam_pts = means_w @ cam.rotation.T + cam.translation
    in_front = cam_pts[:, 2] > NEAR_PLANE
    idx = np.flatnonzero(in_front)
    if len(idx) == 0:
        return None
    cam_pts = cam_pts[idx]

    j = perspective_jacobian(cam_pts, cam.fx, cam.fy)
    jw = j @ cam.rotation  # (m, 2, 3)
    cov2d = jw @ covs_w[idx] @ jw.transpose(0, 2, 1)
    cov2d[:, 0, 0] += BLUR_FLOOR
    cov2d[:, 1, 1] += BLUR_FLOOR

    mean2d = cam.project(cam_pts)

    # tight 3-sigma bbox: the ellipse's axis-aligned half-extent is
    # 3 * sqrt of the marginal variance, so no in-ellipse pixel is lost
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    rx = 3.0 * np.sqrt(np.maximum(a, 0.0))
    ry = 3.0 * np.sqrt(np.maximum(c, 0.0))

    # pixel centers are at integer + 0.5
    x0 = np.ceil(mean2d[:, 0] - rx - 0.5).astype(np.int64)
    x1 = np.floor(mean2d[:, 0] + rx - 0.5).astype(np.int64)
    y0 = np.ceil(mean2d[:, 1] - ry - 0.5).astype(np.int64)
    y1 = np.floor(mean2d[:, 1] + ry - 0.5).astype(np.int64)
    x0 = np.maximum(x0, 0)
    y0 = np.maximum(y0, 0)
    x1 = np.minimum(x1, cam.width - 1)
    y1 = np.minimum(y1, cam.height - 1)
    visible = (x0 <= x1) & (y0 <= y1)
    if not np.any(visible):
        return None

    keep = np.flatnonzero(visible)
    det = a * c - b * b
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = c / det
    inv[:, 1, 1] = a / det
    inv[:, 0, 1] = inv[:, 1, 0] = -b / det

    return {
        "index": idx[keep],
        "mean2d": mean2d[keep],
        "cov2d": cov2d[keep],
        "cov2d_inv": inv[keep],
        "depth": cam_pts[keep, 2],
        "jacobian": j[keep],
        "bbox": (x0[keep], x1[keep], y0[keep], y1[keep]),
    }


def project_gaussian(
    mean_world: np.ndarray,
    cov_world: np.ndarray,
    cam: CameraPose,
    index: int | None = None,
) -> Splat2D | None:
    """Project one world-space Gaussian; None when culled.

    Culling: camera depth <= 0.01 m, or the 3-sigma footprint misses the
    viewport entirely.
    """
    try:
        proj = _project_batch(
            np.asarray(mean_world)[None], np.asarray(cov_world)[None], cam
        )
    except NonFiniteError as e:
        label = "Gaussian" if index is None else f"Gaussian {index}"
        raise NonFiniteError(f"{label}: non-finite projection input") from e
    if proj is None:
        return None
    return Splat2D(
        mean2d=proj["mean2d"][0], cov2d=proj["cov2d"][0], depth=float(proj["depth"][0])
    )


def composite_pixel(
    fragments: list[Fragment], background: np.ndarray | tuple = WHITE
) -> tuple[np.ndarray, float]:
    """Blend depth-sorted fragments over a background color.

    Returns (color, accumulated_alpha) with
    color = sum_i T_i alpha_i c_i + prod_i(1 - alpha_i) * background and
    accumulated_alpha = 1 - prod_i(1 - alpha_i), T_i = prod_{j<i}(1 - alpha_j).
    """
    bg = np.asarray(background, dtype=np.float64)
    color = np.zeros(3, dtype=np.float64)
    t = 1.0
    for frag in fragments:
        a = min(float(frag.alpha), ALPHA_MAX)
        color += t * a * np.asarray(frag.color, dtype=np.float64)
        t *= 1.0 - a
    return color + t * bg, 1.0 - t


def render_arrays(
    means_world: np.ndarray,
    covs_world: np.ndarray,
    opacities: np.ndarray,
    colors: np.ndarray,
    cam: CameraPose,
    background: np.ndarray | tuple = WHITE,
    with_state: bool = False,
    with_image: bool = True,
):
    """Rasterize world-space Gaussians given as plain arrays.

    Returns (RenderedImage, visibility, state) where visibility[i] is the
    summed compositing contribution T*alpha of Gaussian i over all pixels
    and state is a RenderState when with_state else None. with_image=False
    skips assembling the image (returned as None) for callers that only
    need visibility.
    """
    if cam.width < 1 or cam.height < 1:
        raise ArgumentError("zero-size viewport")
    h, w = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    n = len(np.asarray(means_world).reshape(-1, 3))
    opacities = np.asarray(opacities, dtype=np.float64).reshape(-1)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)

    def empty_result():
        image = None
        if with_image:
            image = RenderedImage(
                pixels=np.broadcast_to(bg, (h, w, 3)).copy(),
                accumulated_alpha=np.zeros((h, w), dtype=np.float64),
            )
        state = None
        if with_state:
            empty = np.empty(0, dtype=np.float64)
            state = RenderState(
                cam=cam,
                background=bg,
                n_total=n,
                orig_index=np.empty(0, dtype=np.int64),
                mean2d=empty.reshape(0, 2),
                cov2d_inv=empty.reshape(0, 2, 2),
                jacobian=empty.reshape(0, 2, 3),
                opacities=empty,
                colors=empty.reshape(0, 3),
                pair_splat=np.empty(0, dtype=np.int64),
                pixel_id=np.empty(0, dtype=np.int64),
                alpha=empty,
                clamped=np.empty(0, dtype=bool),
                transmittance=empty,
                delta=empty.reshape(0, 2),
                seg_id=np.empty(0, dtype=np.int64),
                residual_t=np.ones(h * w, dtype=np.float64),
                contrib=empty,
            )
        return image, np.zeros(n, dtype=np.float64), state

    proj = _project_batch(means_world, covs_world, cam) if n else None
    if proj is None:
        return empty_result()

    # global front-to-back order: ascending depth, ties by ascending index
    order = np.argsort(proj["depth"], kind="stable")
    orig_index = proj["index"][order]
    mean2d = proj["mean2d"][order]
    inv = proj["cov2d_inv"][order]
    jac = proj["jacobian"][order]
    x0, x1, y0, y1 = (arr[order] for arr in proj["bbox"])
    sur_opa = opacities[orig_index]
    sur_col = colors[orig_index]

    widths = x1 - x0 + 1
    heights = y1 - y0 + 1
    sizes = widths * heights
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    total = int(sizes.sum())

    pair_splat = np.repeat(np.arange(len(sizes)), sizes)
    row, col = np.divmod(
        np.arange(total, dtype=np.int64) - starts[pair_splat], widths[pair_splat]
    )
    px = x0[pair_splat] + col
    py = y0[pair_splat] + row

    mx, my = (np.ascontiguousarray(mean2d[:, k]) for k in (0, 1))
    i00, i01, i11 = (
        np.ascontiguousarray(inv[:, j, k]) for j, k in ((0, 0), (0, 1), (1, 1))
    )
    dx = px + 0.5 - mx[pair_splat]
    dy = py + 0.5 - my[pair_splat]
    m00 = i00[pair_splat]
    m01 = i01[pair_splat]
    m11 = i11[pair_splat]
    d2 = m00 * dx * dx + 2.0 * m01 * dx * dy + m11 * dy * dy

    inside = d2 <= CUTOFF_D2
    pair_splat = pair_splat[inside]
    if len(pair_splat) == 0:
        return empty_result()
    pixel_id = py[inside] * w + px[inside]
    raw_alpha = sur_opa[pair_splat] * np.exp(-0.5 * d2[inside])
    clamped = raw_alpha > ALPHA_MAX
    alpha = np.minimum(raw_alpha, ALPHA_MAX)
    delta = np.stack([dx[inside], dy[inside]], axis=1)

    # pixel-major, front-to-back within each pixel: pairs are built in depth
    # order (pair_splat is the depth rank and a splat hits a pixel at most
    # once), so one stable sort on pixel alone realizes the two-key order;
    # probe-size frames fit uint16 ids, where stable argsort is a radix sort
    key = pixel_id.astype(np.uint16) if h * w <= 65536 else pixel_id
    reorder = np.argsort(key, kind="stable")
    pair_splat = pair_splat[reorder]
    pixel_id = pixel_id[reorder]
    alpha = alpha[reorder]
    clamped = clamped[reorder]
    delta = delta[reorder]

    log_t = np.log1p(-alpha)
    cums = np.cumsum(log_t)
    new_seg = np.empty(len(pixel_id), dtype=bool)
    if len(pixel_id):
        new_seg[0] = True
        new_seg[1:] = pixel_id[1:] != pixel_id[:-1]
    seg_id = np.cumsum(new_seg) - 1
    first_pos = np.flatnonzero(new_seg)
    base = np.where(first_pos > 0, cums[first_pos - 1], 0.0)
    excl = np.concatenate(([0.0], cums[:-1])) - base[seg_id]
    transmittance = np.exp(excl)
    contrib = transmittance * alpha

    visibility = np.bincount(
        orig_index[pair_splat], weights=contrib, minlength=n
    ).astype(np.float64)

    image = None
    if with_image or with_state:
        log_res = np.bincount(pixel_id, weights=log_t, minlength=h * w)
        residual_t = np.exp(log_res)
    if with_image:
        flat = np.zeros((h * w, 3), dtype=np.float64)
        for ch in range(3):
            flat[:, ch] = np.bincount(
                pixel_id, weights=contrib * sur_col[pair_splat, ch], minlength=h * w
            )
        flat += residual_t[:, None] * bg
        image = RenderedImage(
            pixels=np.clip(flat.reshape(h, w, 3), 0.0, 1.0),
            accumulated_alpha=np.clip(1.0 - residual_t.reshape(h, w), 0.0, 1.0),
        )
    state = None
    if with_state:
        state = RenderState(
            cam=cam,
            background=bg,
            n_total=n,
            orig_index=orig_index,
            mean2d=mean2d,
            cov2d_inv=inv,
            jacobian=jac,
            opacities=sur_opa,
            colors=sur_col,
            pair_splat=pair_splat,
            pixel_id=pixel_id,
            alpha=alpha,
            clamped=clamped,
            transmittance=transmittance,
            delta=delta,
            seg_id=seg_id,
            residual_t=residual_t,
            contrib=contrib,
        )
    return image, visibility, state


def backward(state: RenderState, grad_pixels: np.ndarray) -> dict[str, np.ndarray]:
    """Push dLoss/dpixels back to Gaussian parameters.

    Returns gradients w.r.t. activated opacity eta, color, and world-space
    mean (holding each splat's 2D covariance fixed; scales and rotations
    carry no gradient). Pairs whose alpha hit the 0.999 clamp contribute
    no opacity or mean gradient.
    """
    n = state.n_total
    grads = {
        "means_world": np.zeros((n, 3), dtype=np.float64),
        "colors": np.zeros((n, 3), dtype=np.float64),
        "opacities": np.zeros(n, dtype=np.float64),
    }
    if len(state.pair_splat) == 0:
        return grads

    g_flat = np.asarray(grad_pixels, dtype=np.float64).reshape(-1, 3)
    g_pix = g_flat[state.pixel_id]  # (P, 3)
    sur_col = state.colors
    t, alpha, contrib = state.transmittance, state.alpha, state.contrib
    pair_splat, seg_id = state.pair_splat, state.seg_id

    m = len(state.orig_index)
    grad_color_sur = np.zeros((m, 3), dtype=np.float64)
    one_minus = 1.0 - alpha  # >= 1 - ALPHA_MAX, safe divisor

    seg_count = seg_id[-1] + 1
    first_pos = np.flatnonzero(np.concatenate(([True], seg_id[1:] != seg_id[:-1])))
    res_pix = state.residual_t[state.pixel_id]
    grad_alpha = np.zeros(len(alpha), dtype=np.float64)
    for ch in range(3):
        w_ch = contrib * sur_col[pair_splat, ch]
        # suffix sum of w over the pixel's later fragments + background term
        cum = np.cumsum(w_ch)
        base = np.where(first_pos > 0, cum[first_pos - 1], 0.0)
        seg_tot = np.bincount(seg_id, weights=w_ch, minlength=seg_count)
        behind = seg_tot[seg_id] - (cum - base[seg_id])
        s_ch = behind + res_pix * state.background[ch]
        grad_alpha += g_pix[:, ch] * (t * sur_col[pair_splat, ch] - s_ch / one_minus)
        grad_color_sur[:, ch] = np.bincount(
            pair_splat, weights=g_pix[:, ch] * contrib, minlength=m
        )

    grad_alpha[state.clamped] = 0.0

    # alpha = eta * exp(-d2/2): d/d-eta and d/d-mean2d (cov2d held fixed)
    grad_eta_sur = np.bincount(
        pair_splat, weights=grad_alpha * alpha / state.opacities[pair_splat], minlength=m
    )
    i00, i01, i11 = (
        np.ascontiguousarray(state.cov2d_inv[:, j, k])
        for j, k in ((0, 0), (0, 1), (1, 1))
    )
    m00, m01, m11 = i00[pair_splat], i01[pair_splat], i11[pair_splat]
    dxp, dyp = state.delta[:, 0], state.delta[:, 1]
    ga = grad_alpha * alpha
    grad_mean2d = np.stack(
        [
            np.bincount(pair_splat, weights=ga * (m00 * dxp + m01 * dyp), minlength=m),
            np.bincount(pair_splat, weights=ga * (m01 * dxp + m11 * dyp), minlength=m),
        ],
        axis=1,
    )

    # mean2d -> camera point via the perspective Jacobian, then to world
    grad_cam = np.einsum("sji,sj->si", state.jacobian, grad_mean2d)  # J^T g
    grad_world = grad_cam @ state.cam.rotation

    for ch in range(3):
        grads["colors"][:, ch] = np.bincount(
            state.orig_index, weights=grad_color_sur[:, ch], minlength=n
        )
        grads["means_world"][:, ch] = np.bincount(
            state.orig_index, weights=grad_world[:, ch], minlength=n
        )
    grads["opacities"] = np.bincount(
        state.orig_index, weights=grad_eta_sur, minlength=n
    )
    return grads


def _world_arrays(
    cloud: GaussianCloud, skeleton=None, body_pose=None
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Cloud -> world-space (means, covariances, blend matrices or None)."""
    from . import rig

    if body_pose is not None:
        if skeleton is None:
            raise ArgumentError("a body pose requires a skeleton")
        means, rots, blends = rig.deform_arrays(cloud, skeleton, body_pose)
    else:
        means = cloud.means.astype(np.float64)
        rots = quat_to_matrix(cloud.rotations.astype(np.float64))
        blends = None
    s2 = np.exp(2.0 * cloud.log_scales.astype(np.float64))
    covs = np.einsum("nij,nj,nkj->nik", rots, s2, rots)
    return means, covs, blends


def rasterize(
    cloud: GaussianCloud,
    cam: CameraPose,
    skeleton=None,
    body_pose=None,
    background: np.ndarray | tuple = WHITE,
) -> RenderedImage:
    """Render the cloud, deforming by body_pose first when given."""
    means, covs, _ = _world_arrays(cloud, skeleton, body_pose)
    image, _, _ = render_arrays(
        means, covs, cloud.opacities(), cloud.colors.astype(np.float64), cam, background
    )
    return image


def world_gaussians(
    cloud: GaussianCloud, skeleton=None, body_pose=None
) -> tuple[np.ndarray, np.ndarray]:
    """World-space (means, covariances), skinned when a body pose is given.

    Split out so pose-search loops can skin once and render the same
    geometry through many cameras."""
    means, covs, _ = _world_arrays(cloud, skeleton, body_pose)
    return means, covs


def visibility_map(
    cloud: GaussianCloud, cam: CameraPose, skeleton=None, body_pose=None
) -> np.ndarray:
    """Per-Gaussian visibility: sum over pixels of T * alpha, length N."""
    means, covs, _ = _world_arrays(cloud, skeleton, body_pose)
    _, vis, _ = render_arrays(
        means,
        covs,
        cloud.opacities(),
        cloud.colors.astype(np.float64),
        cam,
        with_image=False,
    )
    return vis


def render_cloud(
    cloud: GaussianCloud,
    cam: CameraPose,
    skeleton=None,
    body_pose=None,
    background: np.ndarray | tuple = WHITE,
) -> tuple[RenderedImage, np.ndarray]:
    """One-pass render + visibility (identical arithmetic to either alone)."""
    means, covs, _ = _world_arrays(cloud, skeleton, body_pose)
    image, vis, _ = render_arrays(
        means, covs, cloud.opacities(), cloud.colors.astype(np.float64), cam, background
    )
    return image, vis
