"""Light-intensity and camera-response recovery over precomputed basis renders.

Minimizes a smoothed-absolute matching term between the target image and
(sum_k w_k * basis_k)^gamma, plus a sparsity/render-smoothness prior on w and
a pull of gamma toward its prior value, subject to w >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from numba import prange
from scipy.optimize import minimize

from .images import HdrImage, LdrImage, ValidationError
from .render import BasisSet, CompositeResult, differential_composite

GAMMA_PRIOR = 1.0 / 2.2
GAMMA_FLOOR = 0.1
GAMMA_CEIL = 10.0  # keeps the power law well-conditioned during line search
PRUNE_FLOOR = 1e-4
_S_FLOOR = 1e-12


class UnidentifiableError(RuntimeError):
    """Raised when the basis set carries no signal (all-black renders)."""


@dataclass(frozen=True)
class RelightProblem:
    target: HdrImage
    basis: BasisSet
    lambda_p: float = 0.1
    lambda_gamma: float = 0.1
    gamma0: float = GAMMA_PRIOR
    abs_epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not self.abs_epsilon > 0:
            raise ValidationError("abs_epsilon must be positive")
        im = self.basis.images[0]
        if (self.target.width, self.target.height) != (im.width, im.height):
            raise ValidationError("target and basis dimensions differ")


@dataclass(frozen=True)
class RelightSolution:
    w: np.ndarray
    gamma: float
    trace: tuple[float, ...]
    active: np.ndarray           # surviving lights after pruning
    kkt_residual: float
    model: HdrImage              # recombine(basis, w, gamma)


def _stack_basis(basis: BasisSet) -> np.ndarray:
    return np.stack([b.data.astype(np.float64).ravel() for b in basis.images])


def gradient_energy(basis: BasisSet) -> np.ndarray:
    """Per-basis total image-gradient magnitude (forward differences)."""
    out = np.empty(len(basis))
    for k, im in enumerate(basis.images):
        d = im.data.astype(np.float64)
        dx = np.zeros_like(d)
        dy = np.zeros_like(d)
        dx[:, :-1] = d[:, 1:] - d[:, :-1]
        dy[:-1, :] = d[1:, :] - d[:-1, :]
        out[k] = np.sqrt((dx ** 2 + dy ** 2).sum(axis=2)).sum()
    return out


def _model(w: np.ndarray, gamma: float, basis_mat: np.ndarray) -> np.ndarray:
    s = np.maximum(w @ basis_mat, _S_FLOOR)
    return s ** gamma


def data_term(w: np.ndarray, gamma: float, problem: RelightProblem) -> float:
    """Matching term: sum of smoothed absolute per-channel residuals."""
    w = np.asarray(w, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("light weights must be nonnegative")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    basis_mat = _stack_basis(problem.basis)
    t = problem.target.data.astype(np.float64).ravel()
    r = _model(w, gamma, basis_mat) - t
    return float(np.sqrt(r * r + problem.abs_epsilon).sum())


def prior_term(w: np.ndarray, basis: BasisSet,
               abs_epsilon: float = 1e-6) -> float:
    """Sparsity prior plus gradient-energy penalty on noisy basis renders."""
    w = np.asarray(w, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("light weights must be nonnegative")
    g = gradient_energy(basis)
    return float(np.sqrt(w * w + abs_epsilon).sum() + (w * g).sum())


def _objective_and_grad(theta: np.ndarray, basis_mat: np.ndarray,
                        t: np.ndarray, g_energy: np.ndarray,
                        lambda_p: float, lambda_gamma: float,
                        gamma0: float, eps: float) -> tuple[float, np.ndarray]:
    n = len(theta) - 1
    w = theta[:n]
    gamma = theta[n]
    s = np.maximum(w @ basis_mat, _S_FLOOR)
    m = s ** gamma
    r = m - t
    root = np.sqrt(r * r + eps)
    q = root.sum()
    dq_dm = r / root
    dm_ds = gamma * s ** (gamma - 1.0)
    dq_dw = basis_mat @ (dq_dm * dm_ds)
    dq_dgamma = float((dq_dm * m * np.log(s)).sum())

    pw = np.sqrt(w * w + eps)
    p = pw.sum() + float(w @ g_energy)
    dp_dw = w / pw + g_energy

    dg = gamma - gamma0
    groot = np.sqrt(dg * dg + eps)

    f = q + lambda_p * p + lambda_gamma * groot
    grad = np.empty_like(theta)
    grad[:n] = dq_dw + lambda_p * dp_dw
    grad[n] = dq_dgamma + lambda_gamma * dg / groot
    return float(f), grad


def initial_weights(basis_mat: np.ndarray, t: np.ndarray,
                    gamma0: float) -> np.ndarray:
    """Least-squares fit of the gamma0-linearized problem, clamped to >= 0."""
    b = t ** (1.0 / gamma0)
    gram = basis_mat @ basis_mat.T
    rhs = basis_mat @ b
    try:
        w = np.linalg.solve(gram + 1e-12 * np.eye(len(gram)), rhs)
    except np.linalg.LinAlgError:
        w = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return np.maximum(w, 0.0)


def _solve_subset(basis_mat: np.ndarray, t: np.ndarray, g_energy: np.ndarray,
                  problem: RelightProblem, w0: np.ndarray, gamma0: float,
                  max_iters: int, tol: float,
                  trace: list[float]) -> tuple[np.ndarray, float, float]:
    n = basis_mat.shape[0]
    theta0 = np.concatenate([w0, [gamma0]])
    args = (basis_mat, t, g_energy, problem.lambda_p, problem.lambda_gamma,
            problem.gamma0, problem.abs_epsilon)
    f0, _ = _objective_and_grad(theta0, *args)
    if not np.isfinite(f0):
        raise ValidationError("objective is not finite at initialization")
    trace.append(f0)

    def cb(xk: np.ndarray) -> None:
        trace.append(_objective_and_grad(xk, *args)[0])

    bounds = [(0.0, None)] * n + [(GAMMA_FLOOR, GAMMA_CEIL)]
    res = minimize(_objective_and_grad, theta0, args=args, jac=True,
                   method="L-BFGS-B", bounds=bounds, callback=cb,
                   options={"maxiter": max_iters, "ftol": tol, "gtol": 1e-8})
    f_final = float(_objective_and_grad(res.x, *args)[0])
    trace.append(f_final)
    return res.x[:n], float(res.x[n]), f_final


def solve(problem: RelightProblem, max_iters: int = 500,
          tol: float = 1e-10) -> RelightSolution:
    """Bound-constrained minimization of the full relighting objective.

    Projected quasi-Newton (L-BFGS-B) on (w, gamma) with w >= 0 and
    gamma >= GAMMA_FLOOR. When the sparsity prior is on, a backward
    elimination pass then drops lights whose removal leaves the objective no
    worse (redundant duplicates and do-nothing sources), and lights below
    PRUNE_FLOOR * max(w) are pruned from the active set afterwards.
    """
    basis_mat = _stack_basis(problem.basis)
    if basis_mat.max() <= 0:
        raise UnidentifiableError("all basis renders are black")
    t = problem.target.data.astype(np.float64).ravel()
    g_energy = gradient_energy(problem.basis)
    n = len(problem.basis)

    trace: list[float] = []
    w0 = initial_weights(basis_mat, t, problem.gamma0)
    w_sub, gamma, f_cur = _solve_subset(basis_mat, t, g_energy, problem,
                                        w0, problem.gamma0, max_iters, tol,
                                        trace)
    keep = np.ones(n, dtype=bool)
    w = w_sub.copy()

    if problem.lambda_p > 0 and n > 1:
        for idx in np.argsort(w_sub, kind="stable"):
            if keep.sum() <= 1 or not keep[idx]:
                continue
            cand = keep.copy()
            cand[idx] = False
            w_try, g_try, f_try = _solve_subset(
                basis_mat[cand], t, g_energy[cand], problem,
                w[cand], gamma, max_iters, tol, trace)
            if f_try <= f_cur + 1e-9 * max(1.0, abs(f_cur)):
                keep = cand
                f_cur = f_try
                gamma = g_try
                w = np.zeros(n)
                w[cand] = w_try

    theta = np.concatenate([w[keep], [gamma]])
    args_full = (basis_mat[keep], t, g_energy[keep], problem.lambda_p,
                 problem.lambda_gamma, problem.gamma0, problem.abs_epsilon)
    _, grad = _objective_and_grad(theta, *args_full)
    proj = grad.copy()
    at_wall = np.concatenate([w[keep] <= 1e-12, [gamma <= GAMMA_FLOOR + 1e-12]])
    proj[at_wall] = np.minimum(proj[at_wall], 0.0)
    kkt = float(np.abs(proj).max())

    wmax = w.max() if len(w) else 0.0
    active = (w > PRUNE_FLOOR * wmax) & keep if wmax > 0 \
        else np.zeros(n, dtype=bool)
    monotone = [trace[0]]
    for f in trace[1:]:
        monotone.append(min(monotone[-1], f))
    return RelightSolution(w=w, gamma=gamma, trace=tuple(monotone),
                           active=active, kkt_residual=kkt,
                           model=recombine(problem.basis, w, gamma))


_F32_MAX = np.float32(3.4e38)


@numba.njit(parallel=True, cache=True, fastmath=True)
def _recombine_kernel(basis, w, gamma, out):
    n, npix = basis.shape
    for i in prange(npix):
        s = np.float32(0.0)
        for k in range(n):
            s += w[k] * basis[k, i]
        if s < 0.0:
            s = np.float32(0.0)
        v = s ** gamma
        if v > _F32_MAX:
            v = _F32_MAX
        out[i] = v


def recombine(basis: BasisSet, w: np.ndarray, gamma: float) -> HdrImage:
    """(sum_k w_k basis_k)^gamma without touching the renderer. Fast enough
    for slider-rate recombination at editor resolutions."""
    w = np.asarray(w, dtype=np.float64)
    if len(w) != len(basis):
        raise ValidationError(f"{len(w)} weights for {len(basis)} basis images")
    if not (np.isfinite(w).all() and np.isfinite(gamma)):
        raise ValidationError("weights and gamma must be finite")
    im0 = basis.images[0]
    stacked = basis.stacked()
    out = np.empty(stacked.shape[1], dtype=np.float32)
    _recombine_kernel(stacked, w.astype(np.float32), np.float32(gamma), out)
    # output is clamped to [0, f32 max] inside the kernel, so the image
    # invariants hold by construction
    return HdrImage._wrap_trusted(out.reshape(im0.height, im0.width, 3))


def adjust_lights(basis_obj: BasisSet, basis_noobj: BasisSet,
                  i_b: HdrImage | LdrImage, mask: np.ndarray,
                  w_obj: np.ndarray, w_noobj: np.ndarray,
                  gamma: float) -> CompositeResult:
    """Differential composite of recombined with-object / without-object
    renders; equal edits to both leave the background untouched."""
    i_obj = recombine(basis_obj, w_obj, gamma)
    i_noobj = recombine(basis_noobj, w_noobj, gamma)
    return differential_composite(i_b, i_obj, i_noobj, mask)
