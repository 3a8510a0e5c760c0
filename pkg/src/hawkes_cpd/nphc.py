"""Moment matching of integrated cumulants for the kernel-integral matrix.

The optimisation variable is ``R = (I - H)^-1``. With ``L = diag(Lambda)``::

    C(R)   = R L R^T
    K^c(R) = (R * R) C^T + 2 (R * (C - R L)) R^T      (* is elementwise)

where ``K^c[i, j] = K_iij`` and ``C`` inside ``K^c`` is ``C(R)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .cumulants import CumulantSet
from .simulation import spectral_radius


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class NphcConfig:
    kappa: float | None = None  # None selects the scale-balancing default
    max_iters: int = 2000
    step_size: float = 0.01
    tol: float = 1e-8
    init: str | np.ndarray = "sqrt_C"
    symmetrize_C: bool = False
    method: str = "lbfgs"

    def __post_init__(self):
        if self.kappa is not None and not 0 <= self.kappa <= 1:
            raise ValueError("kappa must lie in [0, 1]")
        if self.max_iters < 1 or not self.step_size > 0 or not self.tol > 0:
            raise ValueError("max_iters, step_size and tol must be positive")
        if isinstance(self.init, str) and self.init not in ("identity", "sqrt_C"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.method not in ("lbfgs", "adam"):
            raise ValueError(f"unknown method {self.method!r}")

    def to_dict(self) -> dict:
        init = self.init if isinstance(self.init, str) else np.asarray(self.init).tolist()
        return {
            "kappa": self.kappa,
            "max_iters": self.max_iters,
            "step_size": self.step_size,
            "tol": self.tol,
            "init": init,
            "symmetrize_C": self.symmetrize_C,
            "method": self.method,
        }


@dataclass(frozen=True)
class KernelMatrix:
    H: np.ndarray
    R: np.ndarray
    fit_loss: float
    n_iters: int = 0
    kappa: float = 0.5
    loss_history: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.H)

    @property
    def antisymmetry(self) -> float:
        """``||(H - H^T) / 2||_F / ||H||_F`` (0 for a zero matrix)."""
        norm = np.linalg.norm(self.H)
        return float(np.linalg.norm((self.H - self.H.T) / 2) / norm) if norm > 0 else 0.0

    def mu_hat(self, lam) -> np.ndarray:
        return np.linalg.solve(self.R, np.asarray(lam, dtype=float))

    def to_dict(self, window_index: int | None = None) -> dict:
        d = {
            "H": self.H.tolist(),
            "loss": self.fit_loss,
            "spectral_radius": self.spectral_radius,
            "antisymmetry": self.antisymmetry,
            "iterations": self.n_iters,
            "kappa": self.kappa,
        }
        if window_index is not None:
            d["window_index"] = window_index
        return d


def cumulants_from_R(R, lam) -> tuple[np.ndarray, np.ndarray]:
    """Theoretical ``(C, K^c)`` implied by ``R`` and mean intensities ``lam``."""
    R = np.asarray(R, dtype=float)
    lam = np.asarray(lam, dtype=float)
    RL = R * lam
    C = RL @ R.T
    Kc = (R * R) @ C.T + 2 * (R * (C - RL)) @ R.T
    return C, Kc


def default_kappa(C_hat, Kc_hat) -> float:
    k2 = float(np.sum(np.square(Kc_hat)))
    c2 = float(np.sum(np.square(C_hat)))
    return k2 / (k2 + c2) if k2 + c2 > 0 else 0.5


def nphc_loss(R, lam, C_hat, Kc_hat, kappa: float) -> tuple[float, np.ndarray]:
    """Weighted squared Frobenius mismatch and its exact gradient in ``R``."""
    R = np.asarray(R, dtype=float)
    lam = np.asarray(lam, dtype=float)
    RL = R * lam
    C = RL @ R.T
    P = R * R
    Q = R * C - P * lam
    Kc = P @ C.T + 2 * Q @ R.T
    dK = Kc - Kc_hat
    dC = C - C_hat
    loss = (1 - kappa) * float(np.sum(dK * dK)) + kappa * float(np.sum(dC * dC))

    G = 2 * (1 - kappa) * dK
    M = 2 * G @ R
    # Adjoint with respect to C, collecting its three appearances.
    GC = 2 * kappa * dC + G.T @ P + M * R
    grad = (
        2 * R * (G @ C)
        + M * C
        - 2 * (M * lam) * R
        + 2 * G.T @ Q
        + (GC + GC.T) @ RL
    )
    return loss, grad


def kernel_matrix_from_R(R) -> np.ndarray:
    """``H = I - R^-1``."""
    R = np.asarray(R, dtype=float)
    try:
        inv = np.linalg.inv(R)
    except np.linalg.LinAlgError as exc:
        raise FitError("estimated R not invertible") from exc
    if not np.all(np.isfinite(inv)) or np.linalg.cond(R) > 1e12:
        raise FitError("estimated R not invertible")
    return np.eye(R.shape[0]) - inv


def R_from_kernel_matrix(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    return np.linalg.inv(np.eye(H.shape[0]) - H)


def initial_R(cumulants: CumulantSet, init) -> np.ndarray:
    m = cumulants.dim
    if not isinstance(init, str):
        R0 = np.array(init, dtype=float)
        if R0.shape != (m, m):
            raise ValueError(f"custom init must be {m}x{m}")
        return R0
    if init == "identity":
        return np.eye(m)
    lam = np.asarray(cumulants.lambda_hat, dtype=float)
    diag = np.diag(cumulants.C_hat)
    if np.any(lam <= 0) or np.any(diag <= 0):
        return np.eye(m)
    return np.diag(np.sqrt(diag / lam))


def _adam(R, objective, config: NphcConfig):
    """Adam with step halving whenever a proposal would increase the loss."""
    loss, grad = objective(R)
    b1, b2, eps = 0.9, 0.999, 1e-12
    m1 = np.zeros_like(R)
    m2 = np.zeros_like(R)
    step = config.step_size
    history = [loss]
    it = 0
    for it in range(1, config.max_iters + 1):
        if np.linalg.norm(grad) < config.tol or step < 1e-14:
            break
        m1 = b1 * m1 + (1 - b1) * grad
        m2 = b2 * m2 + (1 - b2) * grad * grad
        direction = (m1 / (1 - b1**it)) / (np.sqrt(m2 / (1 - b2**it)) + eps)
        candidate = R - step * direction
        new_loss, new_grad = objective(candidate)
        if np.isnan(new_loss):
            raise FitError(f"loss diverged (NaN) at iteration {it}; last iterate:\n{candidate}")
        if new_loss <= loss:
            R, loss, grad = candidate, new_loss, new_grad
            history.append(loss)
        else:
            step /= 2
    return R, loss, it, history


def _lbfgs(R, objective, config: NphcConfig):
    shape = R.shape
    best = {"R": R, "loss": objective(R)[0]}
    history = [best["loss"]]

    def fun(x):
        loss, grad = objective(x.reshape(shape))
        if np.isnan(loss):
            raise FitError(f"loss diverged (NaN); last iterate:\n{x.reshape(shape)}")
        if loss < best["loss"]:
            best["R"], best["loss"] = x.reshape(shape).copy(), loss
        return loss, grad.ravel()

    def callback(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = minimize(
        fun,
        R.ravel(),
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": config.max_iters, "gtol": config.tol, "ftol": 1e-15, "maxcor": 20},
    )
    return best["R"], float(best["loss"]), int(res.nit), history


def fit_R(cumulants: CumulantSet, config: NphcConfig = NphcConfig()) -> KernelMatrix:
    """Fit ``R`` to the estimated cumulants and return ``H = I - R^-1``.

    The default quasi-Newton solver and the optional Adam solver both accept
    only non-increasing losses; the best iterate is returned.
    """
    lam = np.asarray(cumulants.lambda_hat, dtype=float)
    C_hat = np.asarray(cumulants.C_hat, dtype=float)
    Kc_hat = np.asarray(cumulants.Kc_hat, dtype=float)
    if config.symmetrize_C:
        C_hat = (C_hat + C_hat.T) / 2
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(C_hat)) and np.all(np.isfinite(Kc_hat))):
        raise FitError("cumulants contain non-finite values")
    kappa = default_kappa(C_hat, Kc_hat) if config.kappa is None else config.kappa

    def objective(R):
        return nphc_loss(R, lam, C_hat, Kc_hat, kappa)

    R0 = initial_R(cumulants, config.init)
    if not np.isfinite(objective(R0)[0]):
        raise FitError(f"non-finite loss at initial iterate:\n{R0}")
    solver = _lbfgs if config.method == "lbfgs" else _adam
    R, loss, n_iters, history = solver(R0, objective, config)
    H = kernel_matrix_from_R(R)
    return KernelMatrix(H, R, float(loss), n_iters, float(kappa), np.asarray(history))
