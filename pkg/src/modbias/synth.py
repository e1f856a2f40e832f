"""Procedural stroke-digit synthesizer.

Generates 28x28 grayscale digit images from hand-laid skeleton control
points: Catmull-Rom smoothing, per-sample affine + elastic perturbations,
round-capped stroke rasterization, and optional clutter arcs whose
intensity range overlaps the digit strokes. The clutter keeps pixel
statistics from trivially separating digit from background, which is what
lets a color shortcut stay tempting for longer than the shape signal.

Everything is driven by a caller-supplied Generator, so equal seeds give
byte-identical images.
"""

import numpy as np

# Each template: list of strokes; stroke = ((P,2) control points in [0,1]^2
# with x right / y down, closed flag). Smoothed then rasterized with
# round-capped segments.


def _pts(*xy):
    return np.array(xy, dtype=np.float64)


TEMPLATES = {
    0: [
        [(_pts((0.50, 0.12), (0.26, 0.30), (0.26, 0.68), (0.50, 0.86), (0.72, 0.68), (0.72, 0.30)), True)],
        [(_pts((0.50, 0.14), (0.31, 0.32), (0.31, 0.66), (0.50, 0.84), (0.68, 0.66), (0.68, 0.32)), True)],
    ],
    1: [
        [(_pts((0.52, 0.12), (0.52, 0.50), (0.52, 0.88)), False)],
        [(_pts((0.38, 0.26), (0.52, 0.12), (0.52, 0.50), (0.52, 0.88)), False)],
        [(_pts((0.38, 0.26), (0.52, 0.12), (0.52, 0.88)), False),
         (_pts((0.38, 0.88), (0.66, 0.88)), False)],
    ],
    2: [
        [(_pts((0.27, 0.32), (0.34, 0.16), (0.52, 0.12), (0.68, 0.18), (0.72, 0.34), (0.60, 0.52), (0.42, 0.66), (0.28, 0.82), (0.74, 0.82)), False)],
        [(_pts((0.30, 0.28), (0.42, 0.13), (0.60, 0.13), (0.70, 0.26), (0.66, 0.44), (0.48, 0.60), (0.30, 0.78), (0.30, 0.84), (0.72, 0.84)), False)],
    ],
    3: [
        [(_pts((0.30, 0.20), (0.44, 0.12), (0.62, 0.16), (0.68, 0.30), (0.56, 0.44), (0.48, 0.46)), False),
         (_pts((0.48, 0.46), (0.64, 0.52), (0.70, 0.68), (0.58, 0.84), (0.38, 0.86), (0.28, 0.76)), False)],
        [(_pts((0.28, 0.16), (0.66, 0.14), (0.50, 0.42), (0.66, 0.52), (0.70, 0.70), (0.54, 0.86), (0.30, 0.80)), False)],
    ],
    4: [
        [(_pts((0.56, 0.12), (0.40, 0.38), (0.26, 0.62), (0.78, 0.62)), False),
         (_pts((0.62, 0.12), (0.62, 0.50), (0.62, 0.88)), False)],
        [(_pts((0.32, 0.14), (0.30, 0.56), (0.76, 0.56)), False),
         (_pts((0.60, 0.12), (0.60, 0.50), (0.60, 0.88)), False)],
    ],
    5: [
        [(_pts((0.70, 0.13), (0.34, 0.13), (0.31, 0.44)), False),
         (_pts((0.31, 0.44), (0.52, 0.38), (0.68, 0.48), (0.70, 0.66), (0.56, 0.84), (0.32, 0.80)), False)],
        [(_pts((0.68, 0.14), (0.36, 0.14), (0.34, 0.40), (0.56, 0.38), (0.70, 0.52), (0.68, 0.72), (0.50, 0.86), (0.30, 0.78)), False)],
    ],
    6: [
        [(_pts((0.62, 0.12), (0.46, 0.26), (0.34, 0.46), (0.30, 0.64)), False),
         (_pts((0.30, 0.64), (0.38, 0.50), (0.56, 0.46), (0.68, 0.58), (0.66, 0.76), (0.48, 0.86), (0.32, 0.78), (0.30, 0.64)), True)],
        [(_pts((0.66, 0.14), (0.44, 0.30), (0.32, 0.52), (0.32, 0.70), (0.44, 0.84), (0.60, 0.82), (0.68, 0.68), (0.60, 0.54), (0.44, 0.52), (0.33, 0.60)), False)],
    ],
    7: [
        [(_pts((0.26, 0.15), (0.50, 0.14), (0.73, 0.14), (0.56, 0.48), (0.42, 0.88)), False)],
        [(_pts((0.26, 0.15), (0.73, 0.14), (0.56, 0.48), (0.42, 0.88)), False),
         (_pts((0.36, 0.50), (0.64, 0.50)), False)],
    ],
    8: [
        [(_pts((0.50, 0.12), (0.33, 0.22), (0.35, 0.38), (0.50, 0.46), (0.67, 0.38), (0.66, 0.22)), True),
         (_pts((0.50, 0.46), (0.29, 0.58), (0.30, 0.76), (0.50, 0.87), (0.70, 0.76), (0.70, 0.58)), True)],
    ],
    9: [
        [(_pts((0.66, 0.34), (0.58, 0.16), (0.40, 0.13), (0.30, 0.28), (0.34, 0.44), (0.52, 0.50), (0.66, 0.40), (0.66, 0.34)), True),
         (_pts((0.66, 0.34), (0.64, 0.60), (0.54, 0.88)), False)],
        [(_pts((0.64, 0.30), (0.52, 0.14), (0.36, 0.18), (0.32, 0.34), (0.42, 0.46), (0.58, 0.44), (0.64, 0.32)), False),
         (_pts((0.65, 0.28), (0.66, 0.56), (0.50, 0.86)), False)],
    ],
}

# style knobs used for every generated split
DEFAULT_STYLE = dict(jitter=0.05, warp=1.0)
DEFAULT_CLUTTER = dict(lam=1.7, peak=(0.55, 1.0), width=(1.0, 2.2))


def catmull_rom_matrix(n_ctrl, closed, density=6):
    """Linear map from n_ctrl control points to dense polyline points."""
    # one matrix serves both coordinates
    segs = n_ctrl if closed else n_ctrl - 1
    rows = []
    for i in range(segs):
        i0 = (i - 1) % n_ctrl if closed else max(i - 1, 0)
        i1 = i
        i2 = (i + 1) % n_ctrl
        i3 = (i + 2) % n_ctrl if closed else min(i + 2, n_ctrl - 1)
        for k in range(density):
            t = k / density
            t2, t3 = t * t, t * t * t
            w0 = -0.5 * t + t2 - 0.5 * t3
            w1 = 1.0 - 2.5 * t2 + 1.5 * t3
            w2 = 0.5 * t + 2.0 * t2 - 1.5 * t3
            w3 = -0.5 * t2 + 0.5 * t3
            row = np.zeros(n_ctrl)
            row[i0] += w0
            row[i1] += w1
            row[i2] += w2
            row[i3] += w3
            rows.append(row)
    row = np.zeros(n_ctrl)
    row[0 if closed else n_ctrl - 1] = 1.0
    rows.append(row)
    return np.array(rows)


class CompiledTemplate:
    """Control points with precomputed smoothing matrices for one style."""

    def __init__(self, strokes):
        self.ctrl = []
        self.mats = []
        for pts, closed in strokes:
            self.ctrl.append(pts)
            self.mats.append(catmull_rom_matrix(len(pts), closed))


COMPILED = {c: [CompiledTemplate(s) for s in v] for c, v in TEMPLATES.items()}


def render_group(tmpl, n, rng, out=28, jitter=0.035, rot=0.20, shear=0.18,
                 scale_lo=0.85, scale_hi=1.12, trans=1.6, width_lo=1.3,
                 width_hi=2.6, warp=0.0, warp_grid=3):
    """Render n samples of one (class, style) template.

    Returns float64 (n, out, out) with intensities in [0, 1].
    """
    theta = rng.uniform(-rot, rot, n)
    sc = rng.uniform(scale_lo, scale_hi, n)
    sh = rng.uniform(-shear, shear, n)
    tx = rng.uniform(-trans, trans, n) / out
    ty = rng.uniform(-trans, trans, n) / out
    width = rng.uniform(width_lo, width_hi, n)
    cos, sin = np.cos(theta), np.sin(theta)
    dense_all = []
    for ctrl, M in zip(tmpl.ctrl, tmpl.mats):
        pts = ctrl[None] + rng.normal(0, jitter, (n, len(ctrl), 2))
        dense_all.append(np.einsum('dp,npz->ndz', M, pts))
    dense = np.concatenate(dense_all, axis=1)
    # segment breaks between strokes must not be rasterized
    lens = [d.shape[1] for d in dense_all]
    valid_seg = np.ones(dense.shape[1] - 1, bool)
    pos = 0
    for L in lens[:-1]:
        pos += L
        valid_seg[pos - 1] = False
    cx = dense[..., 0] - 0.5
    cy = dense[..., 1] - 0.5
    X = sc[:, None] * (cos[:, None] * cx - sin[:, None] * cy) + sh[:, None] * cy + 0.5 + tx[:, None]
    Y = sc[:, None] * (sin[:, None] * cx + cos[:, None] * cy) + 0.5 + ty[:, None]
    if warp > 0:
        G = warp_grid
        coarse = rng.normal(0, warp / out, (n, 2, G, G))
        # bilinear-sample the coarse displacement field at each point
        u = np.clip(X, 0, 1) * (G - 1)
        v = np.clip(Y, 0, 1) * (G - 1)
        u0 = np.clip(np.floor(u).astype(int), 0, G - 2)
        v0 = np.clip(np.floor(v).astype(int), 0, G - 2)
        fu = u - u0
        fv = v - v0
        ni = np.arange(n)[:, None]
        for z in (0, 1):
            c00 = coarse[ni, z, v0, u0]
            c01 = coarse[ni, z, v0, u0 + 1]
            c10 = coarse[ni, z, v0 + 1, u0]
            c11 = coarse[ni, z, v0 + 1, u0 + 1]
            dd = (c00 * (1 - fu) * (1 - fv) + c01 * fu * (1 - fv)
                  + c10 * (1 - fu) * fv + c11 * fu * fv)
            if z == 0:
                X = X + dd
            else:
                Y = Y + dd
    Xp = X * out - 0.5
    Yp = Y * out - 0.5
    px = np.arange(out)
    PX, PY = np.meshgrid(px, px)
    PXf = PX.ravel()[None]
    PYf = PY.ravel()[None]
    mind2 = np.full((n, out * out), 1e9)
    for si in np.where(valid_seg)[0]:
        ax, ay = Xp[:, si], Yp[:, si]
        bx, by = Xp[:, si + 1], Yp[:, si + 1]
        abx = (bx - ax)[:, None]
        aby = (by - ay)[:, None]
        apx = PXf - ax[:, None]
        apy = PYf - ay[:, None]
        ab2 = abx * abx + aby * aby + 1e-12
        t = np.clip((apx * abx + apy * aby) / ab2, 0.0, 1.0)
        dx = apx - t * abx
        dy = apy - t * aby
        np.minimum(mind2, dx * dx + dy * dy, out=mind2)
    d = np.sqrt(mind2)
    aa = 0.7
    img = np.clip((width[:, None] / 2 + aa - d) / aa, 0.0, 1.0)
    peak = rng.uniform(0.75, 1.0, n)[:, None]
    return (img * peak).reshape(n, out, out)


def render_digits(labels, styles, rng, **kw):
    """Render one image per (label, style) entry."""
    n = len(labels)
    out = np.empty((n, 28, 28))
    for c in range(10):
        for s in range(len(COMPILED[c])):
            m = (labels == c) & (styles == s)
            if m.any():
                out[m] = render_group(COMPILED[c][s], int(m.sum()), rng, **kw)
    return out


def sample_digits(n, rng, **kw):
    """Draw n digits with uniform class labels and random styles."""
    labels = rng.integers(0, 10, n)
    styles = np.empty(n, np.int64)
    for c in range(10):
        m = labels == c
        styles[m] = rng.integers(0, len(COMPILED[c]), int(m.sum()))
    return render_digits(labels, styles, rng, **kw), labels


def add_clutter(img, rng, lam=1.6, seg_len=(0.15, 0.40), width=(1.0, 2.2),
                peak=(0.45, 0.95), out=28):
    """Stamp Poisson-many random arcs into grayscale images (in place)."""
    n = len(img)
    counts = rng.poisson(lam, n)
    px = np.arange(out)
    PX, PY = np.meshgrid(px, px)
    PXf = PX.ravel()
    PYf = PY.ravel()
    flat = img.reshape(n, -1)
    for i in range(n):
        for _ in range(counts[i]):
            # quadratic arc: endpoints on a random chord, midpoint perturbed
            L = rng.uniform(*seg_len)
            ang = rng.uniform(0, 2 * np.pi)
            c = rng.uniform(0.1, 0.9, 2)
            a = c - 0.5 * L * np.array([np.cos(ang), np.sin(ang)])
            b = c + 0.5 * L * np.array([np.cos(ang), np.sin(ang)])
            m = c + rng.normal(0, 0.08, 2)
            ctrl = np.stack([a, m, b])
            ts = np.linspace(0, 1, 10)[:, None]
            dense = ((1 - ts) ** 2 * ctrl[0] + 2 * (1 - ts) * ts * ctrl[1]
                     + ts ** 2 * ctrl[2]) * out - 0.5
            w = rng.uniform(*width)
            pk = rng.uniform(*peak)
            mind2 = np.full(out * out, 1e9)
            for s in range(len(dense) - 1):
                ax, ay = dense[s]
                bx, by = dense[s + 1]
                abx, aby = bx - ax, by - ay
                ab2 = abx * abx + aby * aby + 1e-12
                t = np.clip(((PXf - ax) * abx + (PYf - ay) * aby) / ab2, 0, 1)
                dx = PXf - ax - t * abx
                dy = PYf - ay - t * aby
                np.minimum(mind2, dx * dx + dy * dy, out=mind2)
            d = np.sqrt(mind2)
            stroke = np.clip((w / 2 + 0.7 - d) / 0.7, 0, 1) * pk
            np.maximum(flat[i], stroke, out=flat[i])
    return img


def synthesize_gray(n, rng, clutter=True):
    """Produce n grayscale digits with the standard style and clutter knobs.

    Returns (images float64 (n, 28, 28) in [0, 1], labels uint8 (n,)).
    Consumes the passed Generator; call order defines the dataset.
    """
    images, labels = sample_digits(n, rng, **DEFAULT_STYLE)
    if clutter:
        add_clutter(images, rng, **DEFAULT_CLUTTER)
    return images, labels.astype(np.uint8)
