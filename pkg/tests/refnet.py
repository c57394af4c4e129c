"""Independent long-double re-implementation of the network forward pass.

Written from the layer definitions with explicit shifted sums, no shared code
with the package beyond reading parameter arrays. Extended precision pushes
the central-difference round-off floor ~1000x below float64, so finite
differences stay meaningful for gradient entries down to ~1e-8.
"""

from __future__ import annotations

import numpy as np

LD = np.longdouble


def conv_same(x, w, b):
    """x [B,C,H,W], w [B,O,C,k,k] or [O,C,k,k], b [B,O] or [O]; zero padding."""
    bsz, c, h, wd = x.shape
    k = w.shape[-1]
    p = k // 2
    xp = np.zeros((bsz, c, h + 2 * p, wd + 2 * p), dtype=LD)
    xp[:, :, p:p + h, p:p + wd] = x
    per_sample = w.ndim == 5
    out = np.zeros((bsz, w.shape[-4], h, wd), dtype=LD)
    for di in range(k):
        for dj in range(k):
            patch = xp[:, :, di:di + h, dj:dj + wd]
            if per_sample:
                out += np.einsum("boc,bchw->bohw", w[:, :, :, di, dj], patch)
            else:
                out += np.einsum("oc,bchw->bohw", w[:, :, di, dj], patch)
    return out + (b[:, :, None, None] if b.ndim == 2 else b[None, :, None, None])


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def logit(x, eps=1e-3):
    x = np.clip(x, LD(eps), 1 - LD(eps))
    return np.log(x) - np.log1p(-x)


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layer_forward(kind, arrs, x, literal):
    if kind == "static":
        return conv_same(x, arrs["weight"], arrs["bias"])
    n = arrs["weights"].shape[0]
    pooled = x.mean(axis=(2, 3))
    hidden = sigmoid(pooled @ arrs["att_w1"] + arrs["att_b1"])
    pi = softmax(hidden @ arrs["att_w2"] + arrs["att_b2"])
    w = np.einsum("bn,n...->b...", pi, arrs["weights"])
    b = pi @ arrs["biases"]
    if literal and n != 1:
        w, b = w / n, b / n
    return conv_same(x, w, b)


def extract(params):
    """Parameter arrays as long double, grouped per layer: {group: [(kind, {name: array})]}."""
    groups = {}
    kinds = dict(params.layer_kinds())
    for full, p in params.named_parameters():
        group, idx, name = full.split(".")
        layers = groups.setdefault(group, [])
        while len(layers) <= int(idx):
            layers.append((kinds[f"{group}.{len(layers)}"], {}))
        layers[int(idx)][1][name] = p.values.astype(LD)
    return groups


def planes(projector, kernel, bsz, h, w):
    c = projector.basis @ (np.asarray(kernel, dtype=np.float64).reshape(-1) - projector.mean)
    return np.broadcast_to(c.astype(LD)[None, :, None, None], (bsz, c.size, h, w))


def forward(groups, cfg, projector, x_v, x_i, k_v, k_i):
    """(restored_v, restored_i, fused) as long-double ``[B, H, W]`` arrays."""
    x_v = np.asarray(x_v, dtype=LD)[:, None]
    x_i = np.asarray(x_i, dtype=LD)[:, None]
    bsz, _, h, w = x_v.shape
    pv, pi_ = planes(projector, k_v, bsz, h, w), planes(projector, k_i, bsz, h, w)
    lit = cfg.eq6_literal

    def branch(layers, x):
        for kind, arrs in layers:
            x = np.maximum(layer_forward(kind, arrs, x, lit), 0)
        return x

    f_v = branch(groups["branch_v"], np.concatenate([x_v, pv], axis=1) if cfg.condition_branches else x_v)
    f_i = branch(groups["branch_i"], np.concatenate([x_i, pi_], axis=1) if cfg.condition_branches else x_i)
    hv = layer_forward(*groups["head_v"][0], f_v, lit)
    hi = layer_forward(*groups["head_i"][0], f_i, lit)
    if cfg.residual:
        hv, hi = hv + logit(x_v), hi + logit(x_i)
    rv, ri = sigmoid(hv), sigmoid(hi)
    z = np.concatenate([f_v, f_i, pv, pi_] if cfg.condition_fusion else [f_v, f_i], axis=1)
    fusion = groups["fusion"]
    for li, (kind, arrs) in enumerate(fusion):
        z = layer_forward(kind, arrs, z, lit)
        if li < len(fusion) - 1:
            z = np.maximum(z, 0)
    return rv[:, 0], ri[:, 0], sigmoid(z)[:, 0]


def fd_gradient(groups, cfg, projector, inputs, probes, group, index, name, entries, h=1e-6):
    """Central differences of sum(probe * output) in long double at the given flat entries."""
    arr = groups[group][index][1][name]
    flat = arr.reshape(-1)
    out = []

    def loss():
        outs = forward(groups, cfg, projector, *inputs)
        return sum(np.sum(r * o) for r, o in zip(probes, outs))

    for e in entries:
        orig = flat[e]
        flat[e] = orig + LD(h)
        up = loss()
        flat[e] = orig - LD(h)
        down = loss()
        flat[e] = orig
        out.append(float((up - down) / (2 * LD(h))))
    return np.array(out)


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size, dtype=LD) - LD(size - 1) / 2
    g = np.exp(-(r * r) / (2 * LD(sigma) ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _valid_filter(x, win):
    k = win.shape[0]
    h, w = x.shape[-2] - k + 1, x.shape[-1] - k + 1
    out = np.zeros(x.shape[:-2] + (h, w), dtype=LD)
    for di in range(k):
        for dj in range(k):
            out += win[di, dj] * x[..., di:di + h, dj:dj + w]
    return out


def ssim(a, b, c1=1e-4, c2=9e-4):
    """Mean SSIM over the valid region and the batch, in long double."""
    a, b = np.asarray(a, dtype=LD), np.asarray(b, dtype=LD)
    win = gaussian_window()
    ma, mb = _valid_filter(a, win), _valid_filter(b, win)
    va = _valid_filter(a * a, win) - ma * ma
    vb = _valid_filter(b * b, win) - mb * mb
    cab = _valid_filter(a * b, win) - ma * mb
    s = (2 * ma * mb + LD(c1)) * (2 * cab + LD(c2)) / ((ma * ma + mb * mb + LD(c1)) * (va + vb + LD(c2)))
    return s.mean()


def fd(loss, arr, h=1e-6):
    """Central differences of a long-double scalar function of ``arr`` (modified in place)."""
    flat = arr.reshape(-1)
    out = np.empty(flat.size)
    for e in range(flat.size):
        orig = flat[e]
        flat[e] = orig + LD(h)
        up = loss()
        flat[e] = orig - LD(h)
        down = loss()
        flat[e] = orig
        out[e] = float((up - down) / (2 * LD(h)))
    return out.reshape(arr.shape)
