"""Straight-line reference implementations used as test oracles.

Everything here is plain numpy with explicit loops and no calls into the
package's own numerics, so agreement with the vectorized code is evidence
rather than tautology.
"""

import math

import numpy as np
import torch


def arr(t):
    return t.detach().cpu().numpy().astype(np.float64)


def conv2d(x, weight, bias=None, padding=0, stride=1, groups=1):
    cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    xp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
    xp[:, padding : padding + h, padding : padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    per_group_out = cout // groups
    for o in range(cout):
        g = o // per_group_out
        for i in range(ho):
            for j in range(wo):
                acc = 0.0 if bias is None else bias[o]
                for c in range(cin_g):
                    ci = g * cin_g + c
                    for a in range(kh):
                        for b in range(kw):
                            acc += weight[o, c, a, b] * xp[ci, i * stride + a, j * stride + b]
                out[o, i, j] = acc
    return out


def conv_module(x, conv):
    bias = None if conv.bias is None else arr(conv.bias)
    return conv2d(x, arr(conv.weight), bias, conv.padding[0], conv.stride[0], conv.groups)


def bilinear(x, ho, wo):
    """Half-pixel-centre bilinear resize (edge-clamped)."""
    c, h, w = x.shape
    out = np.zeros((c, ho, wo))

    def src(dst, n_in, n_out):
        s = (dst + 0.5) * n_in / n_out - 0.5
        s = max(s, 0.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, n_in - 1)
        return i0, i1, s - i0

    for i in range(ho):
        y0, y1, ly = src(i, h, ho)
        for j in range(wo):
            x0, x1, lx = src(j, w, wo)
            out[:, i, j] = (
                (1 - ly) * (1 - lx) * x[:, y0, x0]
                + (1 - ly) * lx * x[:, y0, x1]
                + ly * (1 - lx) * x[:, y1, x0]
                + ly * lx * x[:, y1, x1]
            )
    return out


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def linear(v, lin):
    w, b = arr(lin.weight), arr(lin.bias)
    out = np.zeros(w.shape[0])
    for o in range(w.shape[0]):
        out[o] = b[o] + sum(w[o, i] * v[i] for i in range(w.shape[1]))
    return out


def multiscale(x, module):
    branches = [conv_module(x, conv) for conv in module.branches]
    return conv_module(np.concatenate(branches, axis=0), module.fuse)


def api(x, module):
    """Prompt generation for one (C, H, W) input."""
    xa = multiscale(x, module.extract)
    c, h, w = xa.shape
    avg = np.zeros((1, h, w))
    mx = np.zeros((1, h, w))
    for i in range(h):
        for j in range(w):
            avg[0, i, j] = sum(xa[k, i, j] for k in range(c)) / c
            mx[0, i, j] = max(xa[k, i, j] for k in range(c))
    gate = sigmoid(conv_module(np.concatenate([avg, mx]), module.gate_conv))
    pooled = np.array([gate[n].sum() / (h * w) for n in range(gate.shape[0])])
    weights = linear(pooled, module.gate_fcn)
    comps = arr(module.components)
    prompt = np.zeros(comps.shape[1:])
    for n in range(comps.shape[0]):
        prompt += weights[n] * comps[n]
    return conv_module(bilinear(prompt, h, w), module.out_conv)


def scan_positions(h, w, direction):
    """(row, col) visiting order written out from the traversal rules."""
    name = getattr(direction, "name", direction)
    if name in ("TL_BR", "BR_TL"):
        pos = [(i, j) for i in range(h) for j in range(w)]
    else:
        pos = [(i, j) for j in reversed(range(w)) for i in range(h)]
    if name in ("BR_TL", "BL_TR"):
        pos = pos[::-1]
    return pos


def flatten(x, direction):
    return np.array([x[:, i, j] for i, j in scan_positions(x.shape[1], x.shape[2], direction)])


def unflatten(seq, direction, h, w):
    out = np.zeros((seq.shape[1], h, w))
    for k, (i, j) in enumerate(scan_positions(h, w, direction)):
        out[:, i, j] = seq[k]
    return out


def recurrence(u, a, b, c):
    """y_k = c_k h_k, h_k = a_k h_{k-1} + b_k u_k; all (L, C)."""
    h = np.zeros(u.shape[1])
    ys = []
    for k in range(u.shape[0]):
        h = a[k] * h + b[k] * u[k]
        ys.append(c[k] * h)
    return np.array(ys)


def selective_scan(u, scan):
    a = np.array([sigmoid(linear(uk, scan.gate_a)) for uk in u])
    b = np.array([linear(uk, scan.gate_b) for uk in u])
    c = np.array([linear(uk, scan.gate_c) for uk in u])
    return recurrence(u, a, b, c)


def gps(x, prompt, module):
    xp = np.concatenate([x, prompt], axis=0)
    _, h, w = xp.shape
    total = np.zeros_like(xp)
    for direction, scan in zip(["TL_BR", "BR_TL", "TR_BL", "BL_TR"], module.scans):
        total += unflatten(selective_scan(flatten(xp, direction), scan), direction, h, w)
    return conv_module(total, module.proj) + conv_module(conv_module(x, module.skip_in), module.skip_out)


def ssim(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Window-by-window SSIM over valid positions, averaged over channels."""
    r = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(r**2) / (2 * sigma**2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    vals = []
    for ch in range(a.shape[0]):
        for i in range(a.shape[1] - size + 1):
            for j in range(a.shape[2] - size + 1):
                pa = a[ch, i : i + size, j : j + size]
                pb = b[ch, i : i + size, j : j + size]
                ma, mb = (g * pa).sum(), (g * pb).sum()
                va = (g * (pa - ma) ** 2).sum()
                vb = (g * (pb - mb) ** 2).sum()
                cov = (g * (pa - ma) * (pb - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def davies_bouldin(points, labels):
    clusters = {}
    for p, l in zip(points, labels):
        clusters.setdefault(l, []).append(np.asarray(p, dtype=np.float64))
    names = list(clusters)
    cents = {k: sum(v) / len(v) for k, v in clusters.items()}
    scat = {k: sum(math.dist(p, cents[k]) for p in v) / len(v) for k, v in clusters.items()}
    total = 0.0
    for i in names:
        worst = -1.0
        for j in names:
            if i == j:
                continue
            worst = max(worst, (scat[i] + scat[j]) / math.dist(cents[i], cents[j]))
        total += worst
    return total / len(names)


def central_difference(fn, tensor, index, h=1e-5):
    """d fn() / d tensor[index] by central differences, restoring the entry."""
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + h
        up = float(fn())
        tensor[index] = orig - h
        down = float(fn())
        tensor[index] = orig
    return (up - down) / (2 * h)


def gradient_rel_error(loss_fn, tensor, n_probe=None, h=1e-5, seed=0):
    """Relative L2 error between autograd and finite-difference gradients.

    Probes all entries, or ``n_probe`` of them chosen with a fixed seed.
    """
    if tensor.grad is not None:
        tensor.grad = None
    loss = loss_fn()
    (analytic,) = torch.autograd.grad(loss, tensor)
    flat_idx = np.arange(tensor.numel())
    if n_probe is not None and n_probe < tensor.numel():
        flat_idx = np.random.default_rng(seed).choice(tensor.numel(), n_probe, replace=False)
    an, fd = [], []
    for fi in flat_idx:
        index = np.unravel_index(int(fi), tuple(tensor.shape))
        an.append(analytic[index].item())
        fd.append(central_difference(loss_fn, tensor, index, h))
    an, fd = np.array(an), np.array(fd)
    denom = max(np.linalg.norm(fd), 1e-12)
    return float(np.linalg.norm(an - fd) / denom)
