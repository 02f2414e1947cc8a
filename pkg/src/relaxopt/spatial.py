"""Discrete spatial operator for the linear transport part, and its exact transpose.

The relaxation system transports the characteristic combinations
w+ = v + a*u (speed +a) and w- = v - a*u (speed -a).  Interface values are
upwinded per characteristic family: cell i owns interfaces i-1/2 and i+1/2,
the w+ value at i+1/2 comes from cell i, the w- value from cell i+1.  The
operator returns the divergence of g(y) = (v, a^2 u), i.e. the increment pair

    out_u[i] = (v_face[i+1/2] - v_face[i-1/2]) / dx
    out_v[i] = a^2 * (u_face[i+1/2] - u_face[i-1/2]) / dx

with periodic wraparound.  Time steppers subtract this (the semi-discrete
equation is y' = -D_x g(y) + source).

The transpose used by the adjoint sweep is the exact linear-algebraic
transpose of this map; for the limited second-order scheme it transposes the
linearization with the limiter choices frozen at a given base state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Grid, RelaxState

SCHEMES = ("upwind1", "muscl2")


@dataclass(frozen=True)
class SpatialOp:
    """Transport discretization: grid, frozen speed a, scheme and slope limiter."""

    grid: Grid
    a: float
    scheme: str = "upwind1"
    limiter: str = "minmod"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme '{self.scheme}'; available: {', '.join(SCHEMES)}")
        if self.limiter != "minmod":
            raise ValueError(f"unknown limiter '{self.limiter}'; available: minmod")
        if not self.a > 0:
            raise ValueError(f"speed a must be positive, got {self.a}")


def minmod(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Slope limiter: 0 when the arguments disagree in sign, else the smaller magnitude.

    Sign ties (x*y <= 0, including zeros) resolve to the zero slope.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return np.where(x * y <= 0.0, 0.0, np.where(np.abs(x) <= np.abs(y), x, y))


def _minmod_masks(x, y):
    """Branch masks of minmod at (x, y): (zero-slope, took-x, took-y)."""
    zero = x * y <= 0.0
    left = ~zero & (np.abs(x) <= np.abs(y))
    right = ~zero & ~left
    return zero, left, right


def _check_state(op: SpatialOp, u, v):
    n = op.grid.n_cells
    if u.shape != (n,) or v.shape != (n,):
        raise ValueError(f"state size {u.shape}/{v.shape} does not match grid ({n} cells)")


def _char_vars(op, u, v):
    return v + op.a * u, v - op.a * u


def _face_values(op: SpatialOp, u, v):
    """Interface values of both characteristic families at faces i+1/2."""
    wp, wm = _char_vars(op, u, v)
    if op.scheme == "upwind1":
        fp = wp
        fm = np.roll(wm, -1)
    else:
        dp = wp - np.roll(wp, 1)
        sp = minmod(dp, np.roll(dp, -1))
        fp = wp + 0.5 * sp
        dm = wm - np.roll(wm, 1)
        sm = minmod(dm, np.roll(dm, -1))
        fm = np.roll(wm - 0.5 * sm, -1)
    return fp, fm


def _divergence(op: SpatialOp, fp, fm):
    a, dx = op.a, op.grid.dx
    u_face = (fp - fm) / (2.0 * a)
    v_face = 0.5 * (fp + fm)
    out_u = (v_face - np.roll(v_face, 1)) / dx
    out_v = a * a * (u_face - np.roll(u_face, 1)) / dx
    return out_u, out_v


def apply_dx(op: SpatialOp, state: RelaxState) -> RelaxState:
    """Divergence increment of the transport fluxes at every cell (see module docstring)."""
    u, v = state.u, state.v
    _check_state(op, u, v)
    fp, fm = _face_values(op, u, v)
    out_u, out_v = _divergence(op, fp, fm)
    return RelaxState(out_u, out_v)


def apply_dx_linearized(op: SpatialOp, base: RelaxState, delta: RelaxState) -> RelaxState:
    """Directional derivative of apply_dx at `base` applied to `delta`.

    For upwind1 the operator is linear, so this equals apply_dx(delta).  For
    muscl2 the limiter branches are frozen at `base`, making the result the
    exact Jacobian-vector product of the piecewise-linear map.
    """
    _check_state(op, delta.u, delta.v)
    if op.scheme == "upwind1":
        return apply_dx(op, delta)
    _check_state(op, base.u, base.v)
    fp_masks, fm_masks = _limiter_masks(op, base)
    du, dv = delta.u, delta.v
    wp, wm = _char_vars(op, du, dv)
    fp = _face_plus_frozen(wp, fp_masks)
    fm = _face_minus_frozen(wm, fm_masks)
    out_u, out_v = _divergence(op, fp, fm)
    return RelaxState(out_u, out_v)


def _limiter_masks(op: SpatialOp, base: RelaxState):
    bwp, bwm = _char_vars(op, base.u, base.v)
    dp = bwp - np.roll(bwp, 1)
    dm = bwm - np.roll(bwm, 1)
    return (_minmod_masks(dp, np.roll(dp, -1)),
            _minmod_masks(dm, np.roll(dm, -1)))


def _face_plus_frozen(wp, masks):
    _, left, right = masks
    d = wp - np.roll(wp, 1)
    sig = np.where(left, d, 0.0) + np.where(right, np.roll(d, -1), 0.0)
    return wp + 0.5 * sig


def _face_minus_frozen(wm, masks):
    _, left, right = masks
    d = wm - np.roll(wm, 1)
    sig = np.where(left, d, 0.0) + np.where(right, np.roll(d, -1), 0.0)
    return np.roll(wm - 0.5 * sig, -1)


def _slope_transpose(sbar, masks):
    """Transpose of the frozen-limiter slope map sigma(w) back onto w-cotangents.

    Forward: d = w - roll(w,1); sigma = left*d + right*roll(d,-1).
    """
    _, left, right = masks
    dbar = np.where(left, sbar, 0.0) + np.roll(np.where(right, sbar, 0.0), 1)
    return dbar - np.roll(dbar, -1)


def apply_dx_transpose(op: SpatialOp, costate: RelaxState, base: RelaxState = None) -> RelaxState:
    """Exact transpose of apply_dx (upwind1) or of its frozen linearization (muscl2).

    `base` supplies the linearization state for muscl2 and is ignored for
    upwind1.  Satisfies <apply_dx(z), w> == <z, apply_dx_transpose(w)> for all
    field pairs, with apply_dx replaced by apply_dx_linearized at `base` for
    muscl2.
    """
    zu, zv = costate.u, costate.v
    _check_state(op, zu, zv)
    a, dx = op.a, op.grid.dx

    # transpose of the face-difference / back-transform stage
    vf_bar = (zu - np.roll(zu, -1)) / dx
    uf_bar = a * a * (zv - np.roll(zv, -1)) / dx
    fp_bar = uf_bar / (2.0 * a) + 0.5 * vf_bar
    fm_bar = -uf_bar / (2.0 * a) + 0.5 * vf_bar

    if op.scheme == "upwind1":
        wp_bar = fp_bar
        wm_bar = np.roll(fm_bar, 1)
    else:
        if base is None:
            raise ValueError("muscl2 transpose needs the linearization base state")
        fp_masks, fm_masks = _limiter_masks(op, base)
        # w+ face: fp = wp + sigma(wp)/2
        wp_bar = fp_bar + 0.5 * _slope_transpose(fp_bar, fp_masks)
        # w- face: fm = roll(wm - sigma(wm)/2, -1)
        pre = np.roll(fm_bar, 1)
        wm_bar = pre - 0.5 * _slope_transpose(pre, fm_masks)

    # transpose of the characteristic transform w+ = v + a u, w- = v - a u
    out_u = a * (wp_bar - wm_bar)
    out_v = wp_bar + wm_bar
    return RelaxState(out_u, out_v)
