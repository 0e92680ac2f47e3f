"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for the toy separator: elementwise ops, 1-D
convolutions over time or frequency (plus transposed variants), channel
concat/select, and a complex-mask-apply followed by a fixed inverse-STFT
linear map. Everything is float64; shape errors surface at graph
construction, not inside backward. Contractions go through tensordot so
the heavy lifting lands in BLAS, and gradients are allocated lazily.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from duetlab.audio import StftConfig


class Tensor:
    """Graph node: value, gradient accumulator, parents, backward rule."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self._parents)

    @property
    def shape(self):
        return self.value.shape

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64) if np.isscalar(g) else g
        else:
            self.grad = self.grad + g


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def constant(value) -> Tensor:
    return Tensor(value)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into .grad over the whole graph."""
    if root.value.ndim != 0:
        raise ValueError("backward expects a scalar root")
    topo: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    for node in topo:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()

    for node in topo:
        if node.grad is None:
            node.grad = np.zeros_like(node.value)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.value + b.value, (a, b))

    def _back():
        if a.requires_grad:
            a._accum(out.grad)
        if b.requires_grad:
            b._accum(out.grad)

    out._backward = _back
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.value - b.value, (a, b))

    def _back():
        if a.requires_grad:
            a._accum(out.grad)
        if b.requires_grad:
            b._accum(-out.grad)

    out._backward = _back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.value * b.value, (a, b))

    def _back():
        if a.requires_grad:
            a._accum(out.grad * b.value)
        if b.requires_grad:
            b._accum(out.grad * a.value)

    out._backward = _back
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.value * factor, (a,))

    def _back():
        if a.requires_grad:
            a._accum(out.grad * factor)

    out._backward = _back
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.value, 0.0), (a,))

    def _back():
        if a.requires_grad:
            a._accum(out.grad * (a.value > 0))

    out._backward = _back
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-np.clip(a.value, -500.0, 500.0)))
    out = Tensor(s, (a,))

    def _back():
        if a.requires_grad:
            a._accum(out.grad * s * (1.0 - s))

    out._backward = _back
    return out


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat needs at least one tensor")
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts))
    sizes = [p.value.shape[axis] for p in parts]

    def _back():
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * out.value.ndim
                index[axis] = slice(offset, offset + size)
                p._accum(out.grad[tuple(index)])
            offset += size

    out._backward = _back
    return out


def select(a: Tensor, index: int) -> Tensor:
    """a[index] along the leading axis (one slab of a stack)."""
    out = Tensor(a.value[index], (a,))

    def _back():
        if a.requires_grad:
            g = np.zeros_like(a.value)
            g[index] = out.grad
            a._accum(g)

    out._backward = _back
    return out


def mean_abs(a: Tensor) -> Tensor:
    out = Tensor(np.mean(np.abs(a.value)), (a,))

    def _back():
        if a.requires_grad:
            a._accum(out.grad * np.sign(a.value) / a.value.size)

    out._backward = _back
    return out


def total(a: Tensor) -> Tensor:
    """Sum of all elements (scalar)."""
    out = Tensor(np.sum(a.value), (a,))

    def _back():
        if a.requires_grad:
            a._accum(np.broadcast_to(out.grad, a.value.shape))

    out._backward = _back
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(In,) * (Out, In) + (Out,) -> (Out,)."""
    if x.value.ndim != 1 or w.value.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ValueError(f"linear: incompatible shapes x={x.shape}, w={w.shape}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
    out = Tensor(w.value @ x.value + b.value, (x, w, b))

    def _back():
        g = out.grad
        if x.requires_grad:
            x._accum(w.value.T @ g)
        if w.requires_grad:
            w._accum(np.outer(g, x.value))
        if b.requires_grad:
            b._accum(g)

    out._backward = _back
    return out


def _conv_geometry(length: int, kernel: int, stride: int, padding: int) -> int:
    out = (length + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(f"conv output collapsed: length={length}, kernel={kernel}, "
                         f"stride={stride}, padding={padding}")
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """(Cin, T) * (Cout, Cin, K) -> (Cout, T')."""
    cin, t = x.shape
    cout, win, kernel = w.shape
    if win != cin:
        raise ValueError(f"conv1d: weight expects {win} input channels, got {cin}")
    if b.shape != (cout,):
        raise ValueError(f"conv1d: bias shape {b.shape} != ({cout},)")
    t_out = _conv_geometry(t, kernel, stride, padding)
    xp = np.pad(x.value, ((0, 0), (padding, padding)))
    windows = sliding_window_view(xp, kernel, axis=1)[:, ::stride][:, :t_out]  # (Cin,T',K)
    out_val = np.tensordot(w.value, windows, axes=[(1, 2), (0, 2)]) + b.value[:, None]
    out = Tensor(out_val, (x, w, b))

    def _back():
        g = out.grad
        if w.requires_grad:
            w._accum(np.tensordot(g, windows, axes=[(1,), (1,)]))
        if b.requires_grad:
            b._accum(g.sum(axis=1))
        if x.requires_grad:
            tmp = np.tensordot(w.value, g, axes=[(0,), (0,)])  # (Cin, K, T')
            dxp = np.zeros_like(xp)
            for k in range(kernel):
                dxp[:, k:k + stride * t_out:stride] += tmp[:, k, :]
            x._accum(dxp[:, padding:padding + t])

    out._backward = _back
    return out


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """(Cin, T) * (Cin, Cout, K) -> (Cout, (T-1)*stride + K - 2*padding)."""
    cin, t = x.shape
    win, cout, kernel = w.shape
    if win != cin:
        raise ValueError(f"conv_transpose1d: weight expects {win} input channels, got {cin}")
    if b.shape != (cout,):
        raise ValueError(f"conv_transpose1d: bias shape {b.shape} != ({cout},)")
    full_len = (t - 1) * stride + kernel
    out_len = full_len - 2 * padding
    if out_len < 1:
        raise ValueError("conv_transpose1d output collapsed")

    tmp = np.tensordot(w.value, x.value, axes=[(0,), (0,)])  # (Cout, K, T)
    full = np.zeros((cout, full_len))
    for k in range(kernel):
        full[:, k:k + stride * t:stride] += tmp[:, k, :]
    out = Tensor(full[:, padding:padding + out_len] + b.value[:, None], (x, w, b))

    def _back():
        g = out.grad
        gfull = np.zeros((cout, full_len))
        gfull[:, padding:padding + out_len] = g
        gwin = sliding_window_view(gfull, kernel, axis=1)[:, ::stride][:, :t]  # (Cout,T,K)
        if x.requires_grad:
            x._accum(np.tensordot(gwin, w.value, axes=[(0, 2), (1, 2)]).T)
        if w.requires_grad:
            w._accum(np.tensordot(x.value, gwin, axes=[(1,), (1,)]))
        if b.requires_grad:
            b._accum(g.sum(axis=1))

    out._backward = _back
    return out


def freq_conv(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """(Cin, F, T) * (Cout, Cin, K) -> (Cout, F', T): convolution over frequency."""
    cin, f, t = x.shape
    cout, win, kernel = w.shape
    if win != cin:
        raise ValueError(f"freq_conv: weight expects {win} input channels, got {cin}")
    if b.shape != (cout,):
        raise ValueError(f"freq_conv: bias shape {b.shape} != ({cout},)")
    f_out = _conv_geometry(f, kernel, stride, padding)
    xp = np.pad(x.value, ((0, 0), (padding, padding), (0, 0)))
    # windows: (Cin, F', T, K) -- the window axis is appended last
    windows = sliding_window_view(xp, kernel, axis=1)[:, ::stride][:, :f_out]
    out_val = np.tensordot(w.value, windows, axes=[(1, 2), (0, 3)]) + b.value[:, None, None]
    out = Tensor(out_val, (x, w, b))

    def _back():
        g = out.grad
        if w.requires_grad:
            w._accum(np.tensordot(g, windows, axes=[(1, 2), (1, 2)]))
        if b.requires_grad:
            b._accum(g.sum(axis=(1, 2)))
        if x.requires_grad:
            tmp = np.tensordot(w.value, g, axes=[(0,), (0,)])  # (Cin, K, F', T)
            dxp = np.zeros_like(xp)
            for k in range(kernel):
                dxp[:, k:k + stride * f_out:stride, :] += tmp[:, k, :, :]
            x._accum(dxp[:, padding:padding + f, :])

    out._backward = _back
    return out


def freq_conv_transpose(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
                        padding: int = 0) -> Tensor:
    """(Cin, F, T) * (Cin, Cout, K) -> (Cout, (F-1)*stride + K - 2*padding, T)."""
    cin, f, t = x.shape
    win, cout, kernel = w.shape
    if win != cin:
        raise ValueError(f"freq_conv_transpose: weight expects {win} input channels, got {cin}")
    if b.shape != (cout,):
        raise ValueError(f"freq_conv_transpose: bias shape {b.shape} != ({cout},)")
    full_f = (f - 1) * stride + kernel
    out_f = full_f - 2 * padding
    if out_f < 1:
        raise ValueError("freq_conv_transpose output collapsed")

    tmp = np.tensordot(w.value, x.value, axes=[(0,), (0,)])  # (Cout, K, F, T)
    full = np.zeros((cout, full_f, t))
    for k in range(kernel):
        full[:, k:k + stride * f:stride, :] += tmp[:, k, :, :]
    out = Tensor(full[:, padding:padding + out_f, :] + b.value[:, None, None], (x, w, b))

    def _back():
        g = out.grad
        gfull = np.zeros((cout, full_f, t))
        gfull[:, padding:padding + out_f, :] = g
        # gwin: (Cout, F, T, K)
        gwin = sliding_window_view(gfull, kernel, axis=1)[:, ::stride][:, :f]
        if x.requires_grad:
            x._accum(np.tensordot(gwin, w.value, axes=[(0, 3), (1, 2)]).transpose(2, 0, 1))
        if w.requires_grad:
            w._accum(np.tensordot(x.value, gwin, axes=[(1, 2), (1, 2)]))
        if b.requires_grad:
            b._accum(g.sum(axis=(1, 2)))

    out._backward = _back
    return out


class _IstftPlan:
    """Cached window/envelope geometry for a fixed grid size."""

    def __init__(self, config: StftConfig, frames: int, n_samples: int):
        self.config = config
        self.frames = frames
        self.n_samples = n_samples
        self.window = config.window_array()
        total = (frames - 1) * config.hop + config.window_size
        envelope = np.zeros(total)
        w2 = self.window * self.window
        for m in range(frames):
            envelope[m * config.hop:m * config.hop + config.window_size] += w2
        floor = 1e-12 * max(envelope.max(), 1.0)
        self.total = total
        self.envelope = np.where(envelope > floor, envelope, 1.0)


_PLAN_CACHE: dict[tuple, _IstftPlan] = {}


def _istft_plan(config: StftConfig, frames: int, n_samples: int) -> _IstftPlan:
    key = (config.window_size, config.hop, config.window, frames, n_samples)
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        plan = _PLAN_CACHE[key] = _IstftPlan(config, frames, n_samples)
    return plan


def masked_istft(mask: Tensor, grid: np.ndarray, config: StftConfig,
                 n_samples: int) -> Tensor:
    """Waveform of (mask * grid) through the inverse STFT.

    The complex grid is a constant: gradients flow only through the real
    mask. The mask may cover fewer bin rows than the full grid (missing
    rows, e.g. Nyquist, are treated as zeroed).
    """
    rows, frames = mask.shape
    if grid.shape != (rows, frames):
        raise ValueError(f"masked_istft: mask {mask.shape} vs grid {grid.shape}")
    if rows > config.bins:
        raise ValueError(f"masked_istft: {rows} rows exceeds {config.bins} bins")
    plan = _istft_plan(config, frames, n_samples)
    size = config.window_size
    hop = config.hop

    full = np.zeros((config.bins, frames), dtype=np.complex128)
    full[:rows] = mask.value * grid
    pieces = np.fft.irfft(full.T, n=size, axis=1) * plan.window
    acc = np.zeros(plan.total)
    for m in range(frames):
        acc[m * hop:m * hop + size] += pieces[m]
    out = Tensor((acc / plan.envelope)[:n_samples], (mask,))

    def _back():
        if not mask.requires_grad:
            return
        u = np.zeros(plan.total)
        u[:n_samples] = out.grad
        u /= plan.envelope
        frame_u = np.empty((frames, size))
        for m in range(frames):
            frame_u[m] = u[m * hop:m * hop + size]
        frame_u *= plan.window
        spectrum = np.fft.rfft(frame_u, axis=1) * (2.0 / size)
        spectrum[:, 0] *= 0.5
        if size % 2 == 0:
            spectrum[:, -1] *= 0.5
        gbar = spectrum.T[:rows]
        mask._accum(np.real(np.conj(grid) * gbar))

    out._backward = _back
    return out
