"""6DoF + scale registration of object meshes against observed image data.

Coarse stage: DLT PnP over 2D-3D correspondences followed by damped
Gauss-Newton reprojection refinement, then a closed-form scale fit that
moves points along their viewing rays (projection-preserving). Fine stage:
derivative-free joint minimization of mask dice + masked depth MSE over a
7-vector (axis-angle, translation, log-scale) using Nelder-Mead on the
plain z-buffer rasterizer.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import RegistrationError
from .geometry import rodrigues
from .raster import rasterize_mask_depth
from .scene import PoseEstimate

_COPLANAR_RTOL = 1e-9


@dataclass
class CorrespondenceSet:
    pixels: np.ndarray                       # (N,2) observed pixels (u,v)
    object_points: np.ndarray                # (N,3) object-space points
    scene_points: Optional[np.ndarray] = None   # (N,3) camera-space, optional

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        self.object_points = np.asarray(self.object_points, dtype=np.float64).reshape(-1, 3)
        if self.scene_points is not None:
            self.scene_points = np.asarray(self.scene_points, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.pixels)


def load_correspondences(path):
    """Read 'u v X Y Z' lines; '#' starts a comment."""
    pixels, points = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 5:
                raise RegistrationError(
                    f"{path}:{lineno}: expected 'u v X Y Z', got {line.strip()!r}"
                )
            vals = [float(p) for p in parts]
            pixels.append(vals[:2])
            points.append(vals[2:])
    if not pixels:
        raise RegistrationError(f"{path}: no correspondences")
    return CorrespondenceSet(np.array(pixels), np.array(points))


def save_correspondences(path, corr):
    with open(path, "w", encoding="utf-8") as fh:
        for (u, v), (x, y, z) in zip(corr.pixels.tolist(), corr.object_points.tolist()):
            fh.write(f"{u!r} {v!r} {x!r} {y!r} {z!r}\n")


# ---------------------------------------------------------------------------
# coarse stage


def solve_pnp(corr, cam, refine_iters=50):
    """Estimate rotation + translation (scale fixed at 1) from correspondences.

    Raises RegistrationError on < 6 pairs, coplanar points, or pixels
    outside the image. Noise-free input reprojects to well below 1e-6 px.
    """
    n = len(corr)
    if n < 6:
        raise RegistrationError(f"insufficient correspondences: {n} < 6")
    px = corr.pixels
    if (
        px[:, 0].min() < 0
        or px[:, 1].min() < 0
        or px[:, 0].max() >= cam.width
        or px[:, 1].max() >= cam.height
    ):
        raise RegistrationError("correspondence pixels outside image bounds")
    X = corr.object_points
    centered = X - X.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] < _COPLANAR_RTOL * max(sv[0], 1e-30):
        raise RegistrationError("degenerate configuration: correspondences are coplanar")

    # calibrated DLT on normalized coordinates
    xn = (px[:, 0] - cam.cx) / cam.fx
    yn = (px[:, 1] - cam.cy) / cam.fy
    centroid = X.mean(axis=0)
    spread = np.mean(np.linalg.norm(centered, axis=1))
    s = np.sqrt(3.0) / max(spread, 1e-30)
    Xn = centered * s
    Xh = np.concatenate([Xn, np.ones((n, 1))], axis=1)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, None] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -yn[:, None] * Xh
    _, _, Vt = np.linalg.svd(A)
    P = Vt[-1].reshape(3, 4)
    # undo the 3D normalization: X' = s*(X - c)
    T = np.eye(4)
    T[:3, :3] *= s
    T[:3, 3] = -s * centroid
    P = P @ T
    if np.median(P[2, :3] @ X.T + P[2, 3]) < 0:
        P = -P
    M = P[:, :3]
    U, sigma, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    alpha = sigma.mean()
    t = P[:, 3] / alpha

    R, t = _refine_reprojection(R, t, X, px, cam, refine_iters)
    pose = PoseEstimate(R, t, 1.0)
    pose.validate("pnp pose")
    return pose


def reprojection_rms(pose, corr, cam):
    pts = pose.apply(corr.object_points)
    if np.any(pts[:, 2] <= 0):
        return np.inf
    proj = cam.project(pts)
    return float(np.sqrt(np.mean(np.sum((proj - corr.pixels) ** 2, axis=1))))


def _refine_reprojection(R, t, X, px, cam, iters):
    """Levenberg-style damped Gauss-Newton on pixel reprojection error."""

    def residuals(R, t):
        p = X @ R.T + t
        z = p[:, 2]
        if np.any(z <= 1e-9):
            return None
        u = cam.fx * p[:, 0] / z + cam.cx
        v = cam.fy * p[:, 1] / z + cam.cy
        return np.concatenate([u - px[:, 0], v - px[:, 1]])

    def cost(R, t):
        r = residuals(R, t)
        return np.inf if r is None else float(r @ r)

    lam = 1e-6
    c = cost(R, t)
    for _ in range(iters):
        r = residuals(R, t)
        if r is None:
            break
        # numeric Jacobian over (axis-angle increment, translation increment)
        J = np.zeros((len(r), 6))
        h = 1e-7
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = h
            Rp = rodrigues(delta[:3]) @ R
            rp = residuals(Rp, t + delta[3:])
            delta[k] = -h
            Rm = rodrigues(delta[:3]) @ R
            rm = residuals(Rm, t + delta[3:])
            if rp is None or rm is None:
                return R, t
            J[:, k] = (rp - rm) / (2 * h)
        g = J.T @ r
        H = J.T @ J
        step = None
        for _ in range(10):
            try:
                step = np.linalg.solve(H + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            Rn = rodrigues(step[:3]) @ R
            tn = t + step[3:]
            cn = cost(Rn, tn)
            if cn < c:
                R, t, c = Rn, tn, cn
                lam = max(lam * 0.3, 1e-12)
                break
            lam *= 10
        else:
            break
        if np.linalg.norm(step) < 1e-14 or c < 1e-24:
            break
    return R, t


def fit_scale_about_camera(scene_points, object_points_cam):
    """Closed-form s* = sum<P, P'> / sum|P'|^2 minimizing sum|P - s P'|^2.

    Scaling about the camera origin moves points along their viewing rays,
    so the pixel projection of every point is unchanged.
    """
    P = np.asarray(scene_points, dtype=np.float64).reshape(-1, 3)
    Q = np.asarray(object_points_cam, dtype=np.float64).reshape(-1, 3)
    if len(P) != len(Q) or len(P) == 0:
        raise RegistrationError("scale fit needs equal-length non-empty point lists")
    denom = float(np.sum(Q * Q))
    if denom <= 0:
        raise RegistrationError("scale fit: object points are all zero")
    s = float(np.sum(P * Q)) / denom
    if s <= 0:
        raise RegistrationError(f"scale fit produced non-positive scale {s:g}")
    return s


# ---------------------------------------------------------------------------
# losses


def dice_loss(mask_a, mask_b):
    """1 - 2|A n B| / (|A| + |B|); symmetric, in [0,1]."""
    a, b = mask_a.values, mask_b.values
    if a.shape != b.shape:
        raise RegistrationError("dice_loss: mask dimensions differ")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        raise RegistrationError("dice_loss undefined: both masks empty")
    inter = int(np.logical_and(a, b).sum())
    return 1.0 - 2.0 * inter / total


def masked_depth_loss(mask_b, depth_a, depth_b):
    """Mean squared depth difference over the (valid) masked pixels."""
    m = mask_b.values
    if depth_a.values.shape != m.shape or depth_b.values.shape != m.shape:
        raise RegistrationError("masked_depth_loss: dimensions differ")
    use = m & depth_a.valid & depth_b.valid
    count = int(use.sum())
    if count == 0:
        raise RegistrationError("masked_depth_loss undefined: empty effective mask")
    diff = depth_a.values[use] - depth_b.values[use]
    return float(np.sum(diff * diff) / count)


# ---------------------------------------------------------------------------
# fine stage


def _pose_from_vector(x, R_init):
    return PoseEstimate(
        rotation=rodrigues(x[:3]) @ R_init,
        translation=x[3:6],
        scale=float(np.exp(x[6])),
    )


_ROT_BLOCK = np.array([0, 1, 2])
_TS_BLOCK = np.array([3, 4, 5, 6])
_FULL_BLOCK = np.arange(7)


def refine_pose(
    mesh,
    cam,
    mask_obs,
    depth_obs,
    init,
    max_iters=2500,
    depth_weight=1.0,
    rel_tol=1e-6,
    trace=None,
):
    """Derivative-free descent on L = dice + depth_weight * depth.

    The parameter vector is (axis-angle around init, translation,
    log-scale). Because the dice term is piecewise constant at pixel
    granularity, a single Nelder-Mead run stalls on its plateaus; we run
    block-coordinate rounds (rotation block, translation+scale block, full
    7-vector) with simplex steps sized to roughly two pixels of silhouette
    motion, shrinking the steps each round, and finish with a
    depth-emphasized full-vector polish (the depth term is the only smooth
    signal below one pixel). The best evaluated candidate is tracked
    throughout, so the returned loss never exceeds the loss at init and
    the accepted-iterate sequence is non-increasing (appended to ``trace``
    when given). Terminates early when a round improves the best loss by
    less than rel_tol relative, or when the loss hits zero.
    """
    if mask_obs.count() == 0:
        raise RegistrationError("refine_pose: observed mask is empty")
    init.validate("refine init pose")

    def evaluate(pose, weight):
        mask_r, depth_r = rasterize_mask_depth(mesh, pose, cam)
        if mask_r.count() == 0:
            return None
        d = dice_loss(mask_r, mask_obs)
        zl = 0.0   # no depth / no overlap: dice alone drives the objective
        if depth_obs is not None:
            use = mask_obs.values & depth_r.valid & depth_obs.valid
            if use.any():
                diff = depth_r.values[use] - depth_obs.values[use]
                zl = float(np.sum(diff * diff) / use.sum())
        return d, zl, d + weight * zl

    init_eval = evaluate(init, depth_weight)
    if init_eval is None:
        raise RegistrationError("initialization out of view")

    R_init = init.rotation
    x0 = np.concatenate([np.zeros(3), init.translation, [np.log(init.scale)]])
    best = {"x": x0.copy(), "loss": init_eval[2]}
    if trace is not None:
        trace.append(best["loss"])

    # step sizes worth ~two pixels of silhouette motion per coordinate
    obs_px = mask_obs.values
    r_px = max(np.sqrt(mask_obs.count() / np.pi), 2.0)
    if depth_obs is not None:
        zvals = depth_obs.values[obs_px & depth_obs.valid]
    else:
        zvals = np.zeros(0)
    z_bar = float(np.mean(zvals)) if zvals.size else max(init.translation[2], 1e-3)
    px_goal = 2.0
    base_steps = np.array(
        [px_goal / r_px] * 3
        + [px_goal * z_bar / cam.fx] * 2
        + [px_goal * z_bar / min(cam.fx, cam.fy)]
        + [px_goal / r_px]
    )
    z_var = float(np.var(zvals)) if zvals.size > 1 else 0.0
    polish_weight = max(depth_weight, 0.1 / max(z_var, 1e-12))

    budget = {"left": int(max_iters)}

    def run_block(idx, step_scale, iters, weight):
        if budget["left"] <= 0 or best["loss"] <= 1e-14:
            return
        iters = min(iters, budget["left"])
        budget["left"] -= iters
        frozen = best["x"].copy()
        x0b = frozen[idx].copy()

        def objective(xb):
            xf = frozen.copy()
            xf[idx] = xb
            ev = evaluate(_pose_from_vector(xf, R_init), weight)
            if ev is None:
                return np.inf
            ref = ev[0] + depth_weight * ev[1]
            if ref < best["loss"]:
                best["loss"] = ref
                best["x"] = xf.copy()
                if trace is not None:
                    trace.append(ref)
            return ev[2]

        steps = base_steps[idx] * step_scale
        eye = np.eye(len(idx))
        simplex = np.vstack([x0b] + [x0b + steps[i] * eye[i] for i in range(len(idx))])
        minimize(
            objective,
            x0b,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "maxiter": iters,
                "fatol": 1e-14,
                "xatol": 1e-12,
                "disp": False,
            },
        )

    unit = max_iters / 2500.0
    for step_scale in (1.0, 0.5, 0.25):
        loss_before = best["loss"]
        run_block(_ROT_BLOCK, step_scale, int(200 * unit), depth_weight)
        run_block(_TS_BLOCK, step_scale, int(200 * unit), depth_weight)
        run_block(_FULL_BLOCK, step_scale, int(300 * unit), depth_weight)
        if loss_before - best["loss"] < rel_tol * max(loss_before, 1e-30):
            break
    run_block(_FULL_BLOCK, 0.25, int(400 * unit), polish_weight)

    pose = _pose_from_vector(best["x"], R_init)
    final = evaluate(pose, depth_weight)
    losses = {"dice": final[0], "depth": final[1], "total": final[2]}
    return pose, losses


def register_object(mesh, cam, corr, depth_obs, mask_obs, depth_weight=1.0,
                    max_iters=2500):
    """Full coarse-to-fine pipeline: PnP -> ray-preserving scale fit -> refine.

    Returns (pose, report); report carries the per-stage losses so callers
    can reject registrations that converged to a bad optimum. Without an
    observed mask the fine stage is skipped (coarse result returned).
    """
    pose = solve_pnp(corr, cam)
    report = {"pnp_rms_px": reprojection_rms(pose, corr, cam), "scale_fit": 1.0}

    obj_cam = pose.apply(corr.object_points)
    scene = corr.scene_points
    if scene is None and depth_obs is not None:
        scene, ok = _unproject_at_pixels(corr.pixels, depth_obs, cam)
        obj_cam = obj_cam[ok]
        scene = scene[ok]
    if scene is not None and len(scene) > 0:
        s = fit_scale_about_camera(scene, obj_cam)
        pose = pose.with_scale_folded(s)
        report["scale_fit"] = s

    if mask_obs is not None:
        pose, losses = refine_pose(
            mesh, cam, mask_obs, depth_obs, pose,
            max_iters=max_iters, depth_weight=depth_weight,
        )
        report.update(losses)
    return pose, report


def _unproject_at_pixels(pixels, depth, cam):
    """Depth lookup at rounded pixel coords; returns (points, valid_rows)."""
    px = np.rint(np.asarray(pixels)).astype(int)
    inb = (
        (px[:, 0] >= 0)
        & (px[:, 0] < depth.width)
        & (px[:, 1] >= 0)
        & (px[:, 1] < depth.height)
    )
    z = np.full(len(px), np.nan)
    z[inb] = depth.values[px[inb, 1], px[inb, 0]]
    ok = np.isfinite(z) & (z > 0)
    pts = np.zeros((len(px), 3))
    pts[ok] = cam.unproject(pixels[ok], z[ok])
    return pts, ok
