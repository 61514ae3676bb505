"""Projected gradient descent on the discrete perturbed energy.

The descent direction is the alpha-tension sampled at the nodes (the
L2-gradient, preconditioned by inverse quadrature weights so it is
mesh-independent), with Armijo backtracking and metric-projection
retraction: normalization for sphere values, plain addition for torus
displacements.  Accepted steps are strictly energy non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import energy as en
from . import fields as fl
from . import geometry as geo
from .errors import PreconditionError

ARMIJO_C = 1e-4
STEP_UNDERFLOW = 1e-14


@dataclass
class FlowStep:
    iteration: int
    energy: float
    tau_l2: float
    step_size: float


@dataclass
class FlowTrace:
    steps: list = field(default_factory=list)
    terminal_map: fl.MapField | None = None
    reason: str = ""
    alpha: float = 0.0
    tol: float = 0.0

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.steps])

    @property
    def terminal_energy(self) -> float:
        return self.steps[-1].energy

    @property
    def terminal_tau(self) -> float:
        return self.steps[-1].tau_l2


def _filtered(mp_src: "geo.ManifoldBackend", vals: np.ndarray) -> np.ndarray:
    shaped = vals.reshape(mp_src.grid_shape() + vals.shape[1:])
    for axis in range(mp_src.m):
        shaped = geo.grid_nyquist_filter(shaped, axis, mp_src.n_per_axis)
    return shaped.reshape(vals.shape)


def _updated(mp: fl.MapField, direction: np.ndarray, step: float) -> fl.MapField:
    vals = mp.values + step * direction
    if mp.target.kind == "sphere":
        vals = vals / np.linalg.norm(vals, axis=1, keepdims=True)
        vals = _filtered(mp.source, vals)
        vals = vals / np.linalg.norm(vals, axis=1, keepdims=True)
        return fl.discrete_from_values(mp.source, mp.target, vals)
    return fl.discrete_from_values(mp.source, mp.target, _filtered(mp.source, vals),
                                   base_matrix=mp.base_matrix)


def _tau_l2(mp: fl.MapField, tau: np.ndarray) -> float:
    return float(np.sqrt(np.dot(mp.source.weights,
                                en.pair_with_target_metric(mp, tau, tau))))


def flow(map0: fl.MapField, alpha: float, tol: float = 1e-6,
         max_iter: int = 20000) -> FlowTrace:
    """Descend E_alpha from a discrete seed until the alpha-tension is small.

    Stops with reason "converged" (|tau_alpha|_L2 <= tol), "max_iter", or
    "stall" (Armijo step underflow).  A NaN energy aborts with the last
    good state preserved in the trace.
    """
    if map0.kind != "discrete" or map0.source.kind != "torus":
        raise PreconditionError(
            "flow needs a discrete map with torus source (see fields.discretize)")
    en._check_alpha(alpha)

    trace = FlowTrace(alpha=alpha, tol=tol)
    mp = map0
    e_now = en.alpha_energy(mp, alpha).value
    step = 1.0
    reason = "max_iter"
    for it in range(max_iter + 1):
        tau = en.alpha_tension_all(mp, alpha)
        t_l2 = _tau_l2(mp, tau)
        trace.steps.append(FlowStep(it, e_now, t_l2, step))
        if t_l2 <= tol:
            reason = "converged"
            break
        if it == max_iter:
            break

        accepted = False
        failed = False
        floor = 8.0 * np.finfo(float).eps * (1.0 + abs(e_now))
        trial = min(2.0 * step, 1.0)
        while trial >= STEP_UNDERFLOW:
            if ARMIJO_C * trial * t_l2 * t_l2 < floor:
                # theoretical decrease below the resolution of E: the strict
                # test would only ever "accept" no-op steps
                break
            cand = _updated(mp, tau, trial)
            e_cand = en.alpha_energy(cand, alpha).value
            if not np.isfinite(e_cand):
                failed = True
                break
            if e_cand <= e_now - ARMIJO_C * trial * t_l2 * t_l2:
                mp, e_now, step, accepted = cand, e_cand, trial, True
                break
            trial *= 0.5
        if failed:
            reason = "numeric_failure"
            break
        if not accepted:
            # Floor regime: keep stepping at the last stable step size as
            # long as E does not measurably increase; the true decrease is
            # real but invisible to floating point.
            cand = _updated(mp, tau, step)
            e_cand = en.alpha_energy(cand, alpha).value
            if np.isfinite(e_cand) and e_cand <= e_now + floor:
                mp, e_now, accepted = cand, min(e_cand, e_now), True
        if not accepted:
            reason = "stall"
            break

    trace.terminal_map = mp
    trace.reason = reason
    return trace


def perturb_and_descend(mp: fl.MapField, alpha: float,
                        witness: fl.TangentSection, amplitude: float = 1e-2,
                        tol: float = 1e-4, max_iter: int = 3000,
                        harmonic_tol: float = 1e-6) -> dict:
    """Push an alpha-harmonic map along a witness direction and flow.

    A genuinely negative index direction must produce an energy decrease;
    the returned flag compares the terminal energy against the critical
    value minus 1e-8.
    """
    tau_sup = float(np.max(np.abs(en.alpha_tension_all(mp, alpha))))
    if tau_sup > harmonic_tol:
        raise PreconditionError(
            f"perturb_and_descend needs an alpha-harmonic map (sup {tau_sup:.2e})")
    disc = fl.discretize(mp) if mp.kind != "discrete" else mp
    e_before = en.alpha_energy(disc, alpha).value
    witness_vals = witness.values if witness.fn is None else np.asarray(
        witness.fn(disc.source.nodes), dtype=float)
    seed = fl.perturbed_map(disc, fl.section_from_values(disc, witness_vals),
                            amplitude)
    trace = flow(seed, alpha, tol=tol, max_iter=max_iter)
    e_after = trace.terminal_energy
    return {
        "energy_before": float(e_before),
        "energy_after": float(e_after),
        "decrease": bool(e_after < e_before - 1e-8),
        "trace": trace,
    }
