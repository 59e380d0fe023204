"""Training objectives with analytic gradients.

Each loss returns ``(value, gradient)``; gradients are taken only w.r.t. the
learnable side (the editable SDF or the editable texture parameters).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .texture import TextureField

log = logging.getLogger(__name__)

LAMBDA_GF = 1000.0
LAMBDA_CA = 100.0
LAMBDA_SC = 10.0
LAMBDA_B = 100.0

T0 = 0.02
T_FINAL_GEOMETRY = 0.35
T_FINAL_APPEARANCE = 0.98

GEOMETRY_COMPONENTS = ("standin", "gf", "ca")
APPEARANCE_COMPONENTS = ("standin", "sc_g", "sc_b")


@dataclass(frozen=True)
class FocalLossParams:
    sigma1: float = 0.05
    sigma2: float = 0.01
    xi: float = 0.005

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0 and self.xi > 0):
            raise ValueError("sigma1, sigma2 and xi must be positive")


@dataclass
class LossReport:
    """Weighted total and its named components for one step."""

    stage: str
    components: dict
    weights: dict
    grads: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        c, w = self.components, self.weights
        if self.stage == "geometry":
            return c["standin"] + w["gf"] * c["gf"] + w["ca"] * c["ca"]
        return c["standin"] + w["sc"] * (c["sc_g"] + w["b"] * c["sc_b"])

    def row(self, step: int) -> dict:
        out = {"step": step}
        for name in ("standin", "gf", "ca", "sc_g", "sc_b"):
            out[name] = self.components.get(name, 0.0)
        out["total"] = self.total
        return out


def geometric_focal_loss(psi_e, dists, params: FocalLossParams = FocalLossParams()):
    """Mean of (1 - exp(-d^2 / sigma1)) * tanh(max(psi + xi, 0) / sigma2)
    over samples outside the focal regions."""
    psi = np.asarray(psi_e, dtype=np.float64)
    d = np.asarray(dists, dtype=np.float64)
    if psi.shape != d.shape:
        raise ValueError("psi_e samples and distances must have the same shape")
    if psi.size == 0:
        return 0.0, np.zeros_like(psi)
    weight = 1.0 - np.exp(-d * d / params.sigma1)
    hinge = np.maximum(psi + params.xi, 0.0)
    th = np.tanh(hinge / params.sigma2)
    value = float(np.mean(weight * th))
    active = (psi + params.xi) > 0
    grad = np.where(active, weight * (1.0 - th * th) / params.sigma2, 0.0) / psi.size
    return value, grad


def collision_loss(psi_b, psi_e):
    """Mean of max(psi_b, 0) * max(psi_e, 0); psi_b is frozen."""
    b = np.asarray(psi_b, dtype=np.float64)
    e = np.asarray(psi_e, dtype=np.float64)
    if b.shape != e.shape:
        raise ValueError(f"collision samples differ in shape: {b.shape} vs {e.shape}")
    if e.size == 0:
        return 0.0, np.zeros_like(e)
    bp = np.maximum(b, 0.0)
    value = float(np.mean(bp * np.maximum(e, 0.0)))
    grad = np.where(e > 0, bp, 0.0) / e.size
    return value, grad


def style_consistency_terms(tex_e: TextureField, tex_b: TextureField, interior_pts, boundary_pts,
                            delta_scale: float = 0.01, rng=None, deltas=None):
    """The two regularizers separately: ``(L_g, grad_g, L_b, grad_b)``.

    L_g compares the editable texture with itself under a small random shift;
    L_b pins it to the frozen base texture on the junction.  ``deltas`` may be
    passed explicitly to make the shift reproducible.
    """
    interior = np.asarray(interior_pts, dtype=np.float64).reshape(-1, 3)
    boundary = np.asarray(boundary_pts, dtype=np.float64).reshape(-1, 3)

    grad_g = np.zeros_like(tex_e.params)
    l_g = 0.0
    if len(interior):
        if deltas is None:
            rng = np.random.default_rng() if rng is None else rng
            deltas = rng.uniform(-delta_scale, delta_scale, size=interior.shape)
        shifted = interior + np.asarray(deltas, dtype=np.float64).reshape(interior.shape)
        diff = tex_e.eval_packed(interior) - tex_e.eval_packed(shifted)
        l_g = float(np.mean(np.sum(diff * diff, axis=1)))
        up = 2.0 * diff / len(interior)
        grad_g = tex_e.backward(interior, up) + tex_e.backward(shifted, -up)

    grad_b = np.zeros_like(tex_e.params)
    l_b = 0.0
    if len(boundary):
        diff = tex_e.eval_packed(boundary) - tex_b.eval_packed(boundary)
        l_b = float(np.mean(np.sum(diff * diff, axis=1)))
        grad_b = tex_e.backward(boundary, 2.0 * diff / len(boundary))
    return l_g, grad_g, l_b, grad_b


def style_consistency(tex_e: TextureField, tex_b: TextureField, interior_pts, boundary_pts,
                      delta_scale: float = 0.01, lambda_b: float = LAMBDA_B, rng=None, deltas=None):
    """L_g + lambda_b * L_b and its gradient w.r.t. the editable texture."""
    if len(np.asarray(boundary_pts).reshape(-1, 3)) == 0 and lambda_b > 0:
        log.warning("style consistency: empty junction sample set, boundary term is 0")
    l_g, g_g, l_b, g_b = style_consistency_terms(
        tex_e, tex_b, interior_pts, boundary_pts, delta_scale, rng, deltas
    )
    return l_g + lambda_b * l_b, g_g + lambda_b * g_b


def standin_sample_mask(psi_e, inside_region, k: float = 0.15) -> np.ndarray:
    """Vertices the stand-in geometry objective looks at: inside a region or
    where the editable field is within ``k`` of positive."""
    return np.asarray(inside_region, dtype=bool) | (np.asarray(psi_e) > -k)


def standin_geometry_objective(psi_e, target, target_grad=None):
    """Mean squared difference between editable SDF samples and target values.

    ``target_grad`` (per-sample spatial gradient of the target field) is only
    used to return the gradient w.r.t. sample positions, i.e. vertex offsets.
    Returns ``(value, grad_psi)`` or ``(value, grad_psi, grad_positions)``.
    """
    psi = np.asarray(psi_e, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if psi.shape != t.shape:
        raise ValueError("stand-in samples and target must have the same shape")
    if psi.size == 0:
        zero = np.zeros_like(psi)
        return (0.0, zero) if target_grad is None else (0.0, zero, np.zeros(psi.shape + (3,)))
    resid = psi - t
    value = float(np.mean(resid * resid))
    grad = 2.0 * resid / psi.size
    if target_grad is None:
        return value, grad
    return value, grad, -grad[:, None] * np.asarray(target_grad, dtype=np.float64)


def standin_appearance_objective(rendered, target, mask):
    """Masked mean squared pixel error, summed over channels."""
    img = np.asarray(rendered, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if img.shape != tgt.shape or img.shape[:2] != m.shape:
        raise ValueError(f"image shapes differ: {img.shape}, {tgt.shape}, mask {m.shape}")
    area = int(m.sum())
    grad = np.zeros_like(img)
    if area == 0:
        return 0.0, grad
    diff = (img - tgt)[m]
    value = float(np.sum(diff * diff) / area)
    grad[m] = 2.0 * diff / area
    return value, grad


def schedule_weight(step: int, total_steps: int, t0: float = T0, t_final: float = T_FINAL_GEOMETRY, rng=None) -> float:
    """Draw t ~ U[t0, t_final] for annealed stand-in objectives."""
    if t0 > t_final:
        raise ValueError(f"t0 ({t0}) must not exceed t_final ({t_final})")
    if not 0 <= step <= total_steps:
        raise ValueError("step must lie in [0, total_steps]")
    if t0 == t_final:
        return float(t0)
    rng = np.random.default_rng() if rng is None else rng
    return float(rng.uniform(t0, t_final))
