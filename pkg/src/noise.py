"""
Ruído de gradiente (Perlin) vetorizado
"""

import numpy as np


def _fade(t):
    """Função de suavização de Perlin: 6t^5 - 15t^4 + 10t^3"""
    return t * t * t * (t * (t * 6 - 15) + 10)


def perlin_2d(height: int, width: int, frequency: int, rng: np.random.Generator) -> np.ndarray:
    """Ruído de Perlin clássico com `frequency` células por dimensão

    Retorna valores brutos (aprox. em [-0.7, 0.7]); o remapeamento fica com o chamador.
    """
    # Random unit gradients on the (frequency+1)^2 lattice
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(frequency + 1, frequency + 1))
    gradients = np.stack([np.cos(angles), np.sin(angles)], axis=-1)

    ys = np.arange(height, dtype=np.float64) * frequency / height
    xs = np.arange(width, dtype=np.float64) * frequency / width
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    yi, xi = np.floor(yy).astype(int), np.floor(xx).astype(int)
    yf, xf = yy - yi, xx - xi

    def corner(dy: int, dx: int) -> np.ndarray:
        g = gradients[yi + dy, xi + dx]
        return g[..., 0] * (xf - dx) + g[..., 1] * (yf - dy)

    u, v = _fade(xf), _fade(yf)
    top = corner(0, 0) + u * (corner(0, 1) - corner(0, 0))
    bottom = corner(1, 0) + u * (corner(1, 1) - corner(1, 0))
    return top + v * (bottom - top)


def remap_unit(field: np.ndarray) -> np.ndarray:
    """Remapeamento afim para ocupar exatamente [0,1]"""
    lo, hi = float(field.min()), float(field.max())
    if hi - lo <= 0.0:
        return np.zeros_like(field)
    out = (field - lo) / (hi - lo)
    # Exact endpoints after floating point division
    out[field == lo] = 0.0
    out[field == hi] = 1.0
    return out


def periodic_noise_1d(n_samples: int, frequency: int, rng: np.random.Generator) -> np.ndarray:
    """Ruído de gradiente 1-D periódico amostrado em [0, 2π)"""
    gradients = rng.uniform(-1.0, 1.0, size=frequency)
    t = np.arange(n_samples, dtype=np.float64) * frequency / n_samples
    i0 = np.floor(t).astype(int)
    f = t - i0
    g0 = gradients[i0 % frequency]
    g1 = gradients[(i0 + 1) % frequency]
    return g0 * f + _fade(f) * (g1 * (f - 1.0) - g0 * f)
