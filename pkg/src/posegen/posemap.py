"""18-keypoint skeletons and their deterministic rendering as colored-limb pose maps.

Keypoints follow the COCO-18 ordering (0 nose, 1 neck, 2/5 shoulders, 3/6
elbows, 4/7 wrists, 8/11 hips, 9/12 knees, 10/13 ankles, 14/15 eyes,
16/17 ears).  A pose map is a 3-channel float image in [0, 1]: black
background, each limb drawn as a straight segment in its fixed palette
color, no anti-aliasing.  Later limbs overwrite earlier ones.

Rendering is bit-reproducible and exactly mirror-symmetric: joint
coordinates are quantized to 1/256 pixel, projected with the
center-aligned map (x + 0.5) * out / frame - 0.5, and snapped to the
half-pixel grid in exact integer arithmetic with rounding ties broken
toward the image center.  A pixel at (row, col) is painted iff the
Euclidean distance from (col, row) to the snapped segment is at most
line_width / 2, again tested in exact integer arithmetic.  Because the
snapped endpoints of a horizontally flipped skeleton are the exact mirror
of the original endpoints and the distance test is reflection-invariant,
rasterizing flipped keypoints equals mirroring the raster (for endpoints
within a few image widths of the frame; see rasterize_pose).
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass, field

import numpy as np

NUM_KEYPOINTS = 18

KEYPOINT_NAMES = (
    "nose", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "right_eye", "left_eye", "right_ear", "left_ear",
)

# joint index pairs whose labels swap under a horizontal flip
LEFT_RIGHT_PAIRS = ((2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17))

# torso, arms, legs, then head chains through eyes and ears (17 limbs)
LIMB_JOINTS = (
    (1, 2), (1, 5),
    (2, 3), (3, 4),
    (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10),
    (1, 11), (11, 12), (12, 13),
    (1, 0),
    (0, 14), (14, 16),
    (0, 15), (15, 17),
)

DEFAULT_LINE_WIDTH = 4      # at 256-pixel output height
DEFAULT_VIS_THRESHOLD = 0.1


class KeypointSchemaError(ValueError):
    """A keypoint file or keypoint set violates the schema."""


@dataclass(frozen=True)
class KeypointSet:
    """Exactly 18 (x, y, confidence) joints plus the pixel frame they live in.

    Coordinates are float pixels and may fall outside the frame (they are
    clipped at raster time); confidence is in [0, 1] and gates visibility.
    """

    points: np.ndarray          # (18, 3) float64, columns x, y, confidence
    frame_size: tuple[int, int]  # (height, width)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (NUM_KEYPOINTS, 3):
            raise KeypointSchemaError(
                f"keypoints: expected shape ({NUM_KEYPOINTS}, 3), got {pts.shape}"
            )
        if not np.all(np.isfinite(pts[:, :2])):
            raise KeypointSchemaError("keypoints: coordinates must be finite")
        if np.any(pts[:, 2] < 0.0) or np.any(pts[:, 2] > 1.0) or not np.all(np.isfinite(pts[:, 2])):
            raise KeypointSchemaError("keypoints: confidence must lie in [0, 1]")
        h, w = self.frame_size
        if int(h) <= 0 or int(w) <= 0:
            raise KeypointSchemaError(f"frame_size: must be positive, got {self.frame_size}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "frame_size", (int(h), int(w)))

    def visible(self, threshold: float) -> np.ndarray:
        return self.points[:, 2] >= threshold


@dataclass(frozen=True)
class PoseMap:
    """Rendered skeleton: (3, H, W) float32 in [0, 1], black background."""

    pixels: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[0] != 3:
            raise ValueError(f"pose map pixels must be (3, H, W), got {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[2]


@dataclass(frozen=True)
class LimbTable:
    """Ordered limb connectivity with one fixed RGB color per limb."""

    limbs: tuple[tuple[int, int, tuple[float, float, float]], ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen = set()
        colors = set()
        for a, b, color in self.limbs:
            if not (0 <= a < NUM_KEYPOINTS and 0 <= b < NUM_KEYPOINTS):
                raise ValueError(f"limb joint index out of range: ({a}, {b})")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValueError(f"duplicate limb pair: ({a}, {b})")
            seen.add(key)
            if color in colors:
                raise ValueError(f"duplicate limb color: {color}")
            colors.add(color)


def limb_table() -> LimbTable:
    """The fixed 17-limb table: limb i gets hue i/17 at full saturation/value.

    Colors are HSV-to-RGB converted, rounded to 8-bit and rescaled to [0, 1]
    so that rendered maps round-trip exactly through 8-bit PNG.
    """
    limbs = []
    n = len(LIMB_JOINTS)
    for i, (a, b) in enumerate(LIMB_JOINTS):
        r, g, bl = colorsys.hsv_to_rgb(i / n, 1.0, 1.0)
        color = tuple(round(255.0 * c) / 255.0 for c in (r, g, bl))
        limbs.append((a, b, color))
    return LimbTable(limbs=tuple(limbs))


def load_keypoints(path) -> KeypointSet:
    """Load and validate a keypoint JSON file.

    Schema: {"version": 1, "frame_size": [H, W], "keypoints": [[x, y, c] x18]}.
    Raises KeypointSchemaError naming the offending field.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise KeypointSchemaError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise KeypointSchemaError("document: expected a JSON object")
    if doc.get("version") != 1:
        raise KeypointSchemaError(f"version: expected 1, got {doc.get('version')!r}")
    fs = doc.get("frame_size")
    if (not isinstance(fs, list) or len(fs) != 2
            or not all(isinstance(v, int) and v > 0 for v in fs)):
        raise KeypointSchemaError(f"frame_size: expected [H, W] positive ints, got {fs!r}")
    kps = doc.get("keypoints")
    if not isinstance(kps, list) or len(kps) != NUM_KEYPOINTS:
        n = len(kps) if isinstance(kps, list) else kps
        raise KeypointSchemaError(f"keypoints: expected {NUM_KEYPOINTS} entries, got {n!r}")
    pts = np.empty((NUM_KEYPOINTS, 3), dtype=np.float64)
    for i, entry in enumerate(kps):
        if not isinstance(entry, list) or len(entry) != 3:
            raise KeypointSchemaError(f"keypoints[{i}]: expected [x, y, c]")
        for j, v in enumerate(entry):
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise KeypointSchemaError(f"keypoints[{i}][{j}]: expected a finite number, got {v!r}")
            pts[i, j] = float(v)
        if not 0.0 <= pts[i, 2] <= 1.0:
            raise KeypointSchemaError(f"keypoints[{i}][2]: confidence {pts[i, 2]} outside [0, 1]")
    return KeypointSet(points=pts, frame_size=(fs[0], fs[1]))


def save_keypoints(kps: KeypointSet, path) -> None:
    """Write a KeypointSet in the keypoint JSON schema."""
    doc = {
        "version": 1,
        "frame_size": [kps.frame_size[0], kps.frame_size[1]],
        "keypoints": [[float(x), float(y), float(c)] for x, y, c in kps.points],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def project_keypoints(kps: KeypointSet, out_size: tuple[int, int]) -> np.ndarray:
    """Scale joint coordinates from the keypoint frame to an output raster.

    Center-aligned mapping (x + 0.5) * out_w / frame_w - 0.5: pixel edges
    of the frame land on pixel edges of the raster, so the frame center
    maps to the raster center and horizontal flips commute with projection.
    This matches the grid convention of standard image resizing.
    """
    out_h, out_w = out_size
    fh, fw = kps.frame_size
    xy = kps.points[:, :2].copy()
    xy[:, 0] = (xy[:, 0] + 0.5) * (out_w / fw) - 0.5
    xy[:, 1] = (xy[:, 1] + 0.5) * (out_h / fh) - 0.5
    return xy


def default_line_width(out_height: int) -> int:
    """Line width scaled from 4-at-256 rows, never below 1."""
    return max(1, round(DEFAULT_LINE_WIDTH * out_height / 256))


# input coordinates are quantized to this many subpixel steps per pixel
_QUANT = 256

# beyond this raw-coordinate magnitude segments take the float clipping path
_COORD_LIMIT = 8000.0


def _clip_far_segment(a, b, h, w, pad):
    """Parametrically clip a segment with far-away endpoints to the image vicinity."""
    lo = np.array([-pad, -pad])
    hi = np.array([w - 1 + pad, h - 1 + pad])
    d = b - a
    t0, t1 = 0.0, 1.0
    for axis in range(2):
        if d[axis] == 0.0:
            if a[axis] < lo[axis] or a[axis] > hi[axis]:
                return None
        else:
            ta = (lo[axis] - a[axis]) / d[axis]
            tb = (hi[axis] - a[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 > t1:
                return None
    return a + t0 * d, a + t1 * d


def _snap_axis(q: int, frame: int, out: int, bound: int) -> int | None:
    """Snap one 1/256-quantized frame coordinate to the output half-pixel grid.

    Computes round(2 * ((q/256 + 0.5) * out/frame - 0.5)) exactly in integer
    arithmetic.  The value is first centered on the raster midpoint (out - 1
    in half-pixel units) and rounding ties break toward zero there, so the
    snap of a mirrored coordinate is exactly the mirrored snap.  Returns
    None when the centered magnitude exceeds bound (caller falls back to
    float clipping).
    """
    den = (_QUANT // 2) * frame
    z = out * (q + (_QUANT // 2) * (1 - frame))
    if abs(z) > bound * den:
        return None
    if z >= 0:
        rel = -((den - 2 * z) // (2 * den))
    else:
        rel = (den + 2 * z) // (2 * den)
    return rel + (out - 1)


def _snap_bound(out_h: int, out_w: int, line_width: int) -> int:
    """Centered half-grid magnitude within which endpoints snap exactly."""
    return 4 * max(out_h, out_w) + 2 * line_width + 16


def _paint_segment(rgb: np.ndarray, a: tuple[int, int], b: tuple[int, int],
                   color: tuple[float, float, float], line_width: int) -> None:
    """Overwrite pixels within line_width/2 of the half-grid segment a-b.

    a and b are integer (x, y) pairs in half-pixel units, so pixel (r, c)
    sits at (2c, 2r) and the radius is line_width half-pixels.  The
    inclusion test runs in exact integer arithmetic: int64 when the worst
    intermediate product fits, arbitrary-precision Python integers
    otherwise.  Exactness makes painting mirror-symmetric.
    """
    h, w = rgb.shape[1], rgb.shape[2]
    ax, ay = a
    bx, by = b
    lw = int(line_width)
    lo_c, hi_c = max(0, (min(ax, bx) - lw) // 2 - 1), min(w - 1, (max(ax, bx) + lw) // 2 + 1)
    lo_r, hi_r = max(0, (min(ay, by) - lw) // 2 - 1), min(h - 1, (max(ay, by) + lw) // 2 + 1)
    if lo_c > hi_c or lo_r > hi_r:
        return
    vx, vy = bx - ax, by - ay
    vv = vx * vx + vy * vy
    apx_max = max(abs(2 * lo_c - ax), abs(2 * hi_c - ax),
                  abs(2 * lo_c - bx), abs(2 * hi_c - bx))
    apy_max = max(abs(2 * lo_r - ay), abs(2 * hi_r - ay),
                  abs(2 * lo_r - by), abs(2 * hi_r - by))
    m2 = apx_max * apx_max + apy_max * apy_max
    exact_in_int64 = max(m2, lw * lw) * max(vv, 1) < 2 ** 62
    px2 = np.arange(lo_c, hi_c + 1, dtype=np.int64) * 2
    py2 = np.arange(lo_r, hi_r + 1, dtype=np.int64) * 2
    if not exact_in_int64:
        px2, py2 = px2.astype(object), py2.astype(object)
    px, py = np.meshgrid(px2, py2)
    apx, apy = px - ax, py - ay
    lw2 = lw * lw
    if vv == 0:
        mask = apx * apx + apy * apy <= lw2
    else:
        s = apx * vx + apy * vy
        bpx, bpy = px - bx, py - by
        d2vv = (apx * apx + apy * apy) * vv - s * s
        d2vv = np.where(s <= 0, (apx * apx + apy * apy) * vv, d2vv)
        d2vv = np.where(s >= vv, (bpx * bpx + bpy * bpy) * vv, d2vv)
        mask = d2vv <= lw2 * vv
    mask = np.asarray(mask, dtype=bool)
    for ch in range(3):
        region = rgb[ch, lo_r:hi_r + 1, lo_c:hi_c + 1]
        region[mask] = np.float32(color[ch])


def rasterize_pose(kps: KeypointSet, out_size: tuple[int, int],
                   line_width: int | None = None,
                   vis_threshold: float = DEFAULT_VIS_THRESHOLD) -> PoseMap:
    """Render the skeleton into a (3, H, W) pose map.

    A limb is drawn only when both endpoints have confidence >= vis_threshold.
    All-invisible input yields an all-black map.  Endpoints are snapped on
    the half-pixel grid in exact integer arithmetic, so flipped keypoints
    rasterize to the exactly mirrored image; segments reaching beyond a few
    image sizes from the raster are pre-clipped in float arithmetic first
    and only those lose that exactness.
    """
    out_h, out_w = int(out_size[0]), int(out_size[1])
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"out_size must be positive, got {out_size}")
    if line_width is None:
        line_width = default_line_width(out_h)
    if line_width < 1:
        raise ValueError(f"line_width must be >= 1, got {line_width}")
    lw = int(line_width)

    rgb = np.zeros((3, out_h, out_w), dtype=np.float32)
    fh, fw = kps.frame_size
    bound = _snap_bound(out_h, out_w, lw)
    endpoints: list[tuple[int, int] | None] = []
    for x, y, _conf in kps.points:
        if max(abs(x), abs(y)) > _COORD_LIMIT:
            endpoints.append(None)
            continue
        ex = _snap_axis(int(np.rint(x * _QUANT)), fw, out_w, bound)
        ey = _snap_axis(int(np.rint(y * _QUANT)), fh, out_h, bound)
        endpoints.append((ex, ey) if ex is not None and ey is not None else None)

    xy = project_keypoints(kps, (out_h, out_w))
    vis = kps.visible(vis_threshold)
    for a_idx, b_idx, color in limb_table().limbs:
        if not (vis[a_idx] and vis[b_idx]):
            continue
        ea, eb = endpoints[a_idx], endpoints[b_idx]
        if ea is None or eb is None:
            clipped = _clip_far_segment(xy[a_idx], xy[b_idx], out_h, out_w,
                                        pad=lw + 2.0)
            if clipped is None:
                continue
            (cax, cay), (cbx, cby) = clipped
            ea = (int(np.rint(2.0 * cax)), int(np.rint(2.0 * cay)))
            eb = (int(np.rint(2.0 * cbx)), int(np.rint(2.0 * cby)))
        _paint_segment(rgb, ea, eb, color, lw)
    return PoseMap(pixels=rgb)


@dataclass(frozen=True)
class HFlip:
    """Horizontal mirror; left/right joint labels swap."""


@dataclass(frozen=True)
class Rotate:
    """Rotation by degrees about the frame center ((w-1)/2, (h-1)/2)."""

    degrees: float


@dataclass(frozen=True)
class Crop:
    """Axis-aligned crop box (top, left, height, width) in pixels."""

    top: int
    left: int
    height: int
    width: int


Transform = HFlip | Rotate | Crop


def rotation_matrix(degrees: float, center: tuple[float, float]) -> np.ndarray:
    """2x3 affine for a rotation about center, image coordinates (x right, y down)."""
    rad = math.radians(degrees)
    alpha, beta = math.cos(rad), math.sin(rad)
    cx, cy = center
    return np.array([
        [alpha, beta, (1.0 - alpha) * cx - beta * cy],
        [-beta, alpha, beta * cx + (1.0 - alpha) * cy],
    ], dtype=np.float64)


def transform_keypoints(kps: KeypointSet, transform: Transform) -> KeypointSet:
    """Apply a geometric transform to the joints, consistently with its image op.

    hflip maps x to (width - 1 - x) and swaps left/right labels; rotate maps
    coordinates by the affine about the frame center; crop shifts the origin,
    shrinks the frame, and zeroes confidence for joints outside the box.
    """
    pts = kps.points.copy()
    h, w = kps.frame_size

    if isinstance(transform, HFlip):
        pts[:, 0] = (w - 1) - pts[:, 0]
        for a, b in LEFT_RIGHT_PAIRS:
            pts[[a, b]] = pts[[b, a]]
        return KeypointSet(points=pts, frame_size=(h, w))

    if isinstance(transform, Rotate):
        m = rotation_matrix(transform.degrees, ((w - 1) / 2.0, (h - 1) / 2.0))
        xy1 = np.column_stack([pts[:, 0], pts[:, 1], np.ones(NUM_KEYPOINTS)])
        pts[:, :2] = xy1 @ m.T
        return KeypointSet(points=pts, frame_size=(h, w))

    if isinstance(transform, Crop):
        if transform.height < 1 or transform.width < 1:
            raise ValueError(f"degenerate crop box: {transform}")
        x = pts[:, 0] - transform.left
        y = pts[:, 1] - transform.top
        outside = (x < 0) | (x > transform.width - 1) | (y < 0) | (y > transform.height - 1)
        pts[:, 0], pts[:, 1] = x, y
        pts[outside, 2] = 0.0
        return KeypointSet(points=pts, frame_size=(transform.height, transform.width))

    raise TypeError(f"unknown transform: {transform!r}")


def pose_map_to_uint8(pm: PoseMap) -> np.ndarray:
    """(3, H, W) [0,1] floats -> (H, W, 3) uint8 via round(255 * v)."""
    return np.rint(255.0 * np.clip(pm.pixels, 0.0, 1.0)).astype(np.uint8).transpose(1, 2, 0)


def write_pose_png(pm: PoseMap, path) -> None:
    from PIL import Image

    Image.fromarray(pose_map_to_uint8(pm), mode="RGB").save(path, format="PNG")
