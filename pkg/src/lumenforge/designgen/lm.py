"""Damped Gauss-Newton (Levenberg-Marquardt) least-squares core.

Generic over the residual function so the same loop serves the surface fit
and small synthetic inverse problems in tests. The Jacobian comes from
central finite differences with per-variable steps; residual functions may
raise to veto a trial point (the step is rejected and damping increases).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    """Damping blew past its cap without ever accepting a step."""


@dataclass
class LMResult:
    x: np.ndarray
    rms: float
    iterations: int
    converged: bool
    lambda_capped: bool = False
    objective_history: list = field(default_factory=list)


def fd_jacobian(residual_fn, x, r0, steps, invalid=(ValueError,)) -> np.ndarray:
    """Central-difference Jacobian; falls back to one-sided at invalid points."""
    jac = np.empty((r0.size, x.size))
    for k in range(x.size):
        h = steps[k]
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        try:
            rp = residual_fn(xp)
        except invalid:
            rp = None
        try:
            rm = residual_fn(xm)
        except invalid:
            rm = None
        if rp is not None and rm is not None:
            jac[:, k] = (rp - rm) / (2.0 * h)
        elif rp is not None:
            jac[:, k] = (rp - r0) / h
        elif rm is not None:
            jac[:, k] = (r0 - rm) / h
        else:
            jac[:, k] = 0.0
    return jac


def levenberg_marquardt(residual_fn, x0, *, fd_steps, max_iter=100,
                        lambda_init=1e-3, lambda_up=10.0, lambda_down=10.0,
                        lambda_cap=1e10, rms_tol=None, rms_of=None,
                        invalid=(ValueError,)) -> LMResult:
    """Minimize |residual_fn(x)|^2, returning the best accepted iterate.

    rms_of maps a residual vector to the scalar checked against rms_tol
    (defaults to the RMS of the whole vector). Damping: accepted steps divide
    lambda by lambda_down, rejected ones multiply by lambda_up; the loop stops
    when rms_tol is met, max_iter is exhausted, or lambda passes lambda_cap.
    Raises DivergenceError only when the cap is hit with no accepted step at
    all (the fit never moved).
    """
    x = np.asarray(x0, dtype=float).copy()
    fd_steps = np.broadcast_to(np.asarray(fd_steps, dtype=float), x.shape)
    if rms_of is None:
        rms_of = lambda r: float(np.sqrt(np.mean(r * r)))
    if max_iter == 0:
        return LMResult(x=x, rms=float("nan"), iterations=0, converged=False)

    r = residual_fn(x)
    ssq = float(r @ r)
    best_x, best_ssq, best_rms = x.copy(), ssq, rms_of(r)
    history = [ssq]
    lam = lambda_init
    accepted_any = False
    capped = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        if rms_tol is not None and rms_of(r) < rms_tol:
            return LMResult(x=best_x, rms=best_rms, iterations=iterations - 1,
                            converged=True, objective_history=history)
        jac = fd_jacobian(residual_fn, x, r, fd_steps, invalid=invalid)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        eye = np.eye(x.size)
        while True:
            try:
                delta = np.linalg.solve(jtj + lam * eye, -jtr)
                r_new = residual_fn(x + delta)
                ssq_new = float(r_new @ r_new)
                ok = np.isfinite(ssq_new) and ssq_new < ssq
            except (np.linalg.LinAlgError, *invalid):
                ok = False
            if ok:
                x = x + delta
                r, ssq = r_new, ssq_new
                lam = max(lam / lambda_down, 1e-15)
                accepted_any = True
                history.append(ssq)
                if ssq < best_ssq:
                    best_x, best_ssq, best_rms = x.copy(), ssq, rms_of(r)
                break
            lam *= lambda_up
            if lam > lambda_cap:
                capped = True
                break
        if capped:
            break

    if capped and not accepted_any:
        raise DivergenceError("damping exceeded its cap before any step was accepted")
    converged = rms_tol is not None and rms_of(r) < rms_tol
    return LMResult(x=best_x, rms=best_rms, iterations=iterations,
                    converged=converged, lambda_capped=capped,
                    objective_history=history)
