"""Reference implementations the vectorized code is checked against."""
import math

import numpy as np


def naive_conv2d(x, weights, bias, pad):
    """Six nested loops over the zero-padded input."""
    n, cin, h, w = x.shape
    cout, _, k, _ = weights.shape
    xp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    out = np.zeros((n, cout, h, w), dtype=np.float64)
    for b in range(n):
        for co in range(cout):
            for m in range(h):
                for j in range(w):
                    total = float(bias[co])
                    for ci in range(cin):
                        for r in range(k):
                            for t in range(k):
                                total += float(weights[co, ci, r, t]) * float(xp[b, ci, m + r, j + t])
                    out[b, co, m, j] = total
    return out


def generative_pixel(x, weights, bias, co, m, j, pad):
    """One output pixel of a generative layer as the triple sum over taps and powers."""
    _, cin, h, w = x.shape
    q_order, _, _, k, _ = weights.shape
    total = float(bias[co])
    for ci in range(cin):
        for r in range(k):
            for t in range(k):
                row, col = m + r - pad, j + t - pad
                if not (0 <= row < h and 0 <= col < w):
                    continue
                for q in range(1, q_order + 1):
                    total += float(weights[q - 1, co, ci, r, t]) * float(x[0, ci, row, col]) ** q
    return total


def numerical_gradient(f, array, index, h=1e-4):
    """Central difference of the scalar function f with respect to array[index], restoring the entry after."""
    original = array[index]
    array[index] = original + h
    plus = f()
    array[index] = original - h
    minus = f()
    array[index] = original
    return (plus - minus) / (2 * h)


def relative_error(analytic, numeric, floor=1e-3):
    """|a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients from dividing by round-off."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def scalar_adam(theta, grad_fn, steps, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar Adam trajectory written out longhand."""
    m = v = 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        trajectory.append(theta)
    return trajectory
