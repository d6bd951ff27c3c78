"""Independent float64 reference implementations used as gradient oracles.

Everything here is plain numpy in float64, written without the package's
Tensor/tape machinery, so finite differences on these functions give an
oracle that shares no code with the gradients under test.
"""

import numpy as np


def fd_gradient(f, x, h=1e-3):
    """Central-difference gradient of scalar f at float64 array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(g, g_ref):
    """max |g - g_ref| scaled by the oracle gradient's magnitude."""
    g = np.asarray(g, dtype=np.float64)
    g_ref = np.asarray(g_ref, dtype=np.float64)
    denom = max(float(np.abs(g_ref).max(initial=0.0)), 1e-6)
    return float(np.abs(g - g_ref).max(initial=0.0)) / denom


def mlp_forward(weights, biases, x):
    """tanh MLP with a linear head; weights/biases are float64 arrays."""
    h = np.asarray(x, dtype=np.float64)
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ np.asarray(w, np.float64) + np.asarray(b, np.float64)
        if i != last:
            h = np.tanh(h)
    return h


def denoiser_forward(weights, biases, x, temb, c):
    """Noise prediction: MLP over [x, time embedding, condition]."""
    x = np.atleast_2d(np.asarray(x, np.float64))
    temb = np.atleast_2d(np.asarray(temb, np.float64))
    c = np.atleast_2d(np.asarray(c, np.float64))
    if c.shape[0] == 1 and x.shape[0] > 1:
        c = np.repeat(c, x.shape[0], axis=0)
    inp = np.concatenate([x, temb, c], axis=1)
    return mlp_forward(weights, biases, inp)


def diffusion_loss(weights, biases, x0, c, t, eps, alpha_bar, temb):
    """Mean over items of ||eps - eps_hat(x_t, t, c)||^2."""
    x0 = np.atleast_2d(np.asarray(x0, np.float64))
    eps = np.atleast_2d(np.asarray(eps, np.float64))
    a = np.asarray(alpha_bar, np.float64).reshape(-1, 1)
    x_t = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
    pred = denoiser_forward(weights, biases, x_t, temb, c)
    per_item = ((eps - pred) ** 2).sum(axis=1)
    return float(per_item.mean())


def encoder_forward(weights, biases, x):
    return mlp_forward(weights, biases, np.atleast_2d(np.asarray(x, np.float64)))


def embedding_objective(weights, biases, x_ref, x):
    """||E(x_ref) - E(x)||_2 summed over the batch."""
    za = encoder_forward(weights, biases, x_ref)
    zb = encoder_forward(weights, biases, x)
    return float(np.sqrt(((za - zb) ** 2).sum(axis=1)).sum())


def tv_objective(y, x, lam, eps_s=1e-3):
    """||y - x||^2 + lam * anisotropic TV with Charbonnier-smoothed abs."""
    y = np.asarray(y, np.float64)
    x = np.asarray(x, np.float64)
    data = ((y - x) ** 2).sum()
    dh = y[:, 1:] - y[:, :-1]
    dv = y[1:, :] - y[:-1, :]
    tv = np.sqrt(dh * dh + eps_s * eps_s).sum() + np.sqrt(dv * dv + eps_s * eps_s).sum()
    return float(data + lam * tv)


def cross_entropy(weights, biases, x, labels):
    """Mean cross-entropy of MLP logits against integer labels."""
    logits = mlp_forward(weights, biases, np.atleast_2d(np.asarray(x, np.float64)))
    logits = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    picked = logits[np.arange(logits.shape[0]), np.asarray(labels)]
    return float((logz - picked).mean())


def frechet_1d(mu_a, var_a, mu_b, var_b):
    """Closed-form Frechet distance between two 1-D Gaussians."""
    return (mu_a - mu_b) ** 2 + var_a + var_b - 2.0 * np.sqrt(var_a * var_b)
