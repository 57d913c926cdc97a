"""
Ground-truth functions for the three experiments and the analytic case

All functions accept a single point or a batch of points (rows) and return
the matching shape.
"""

import numpy as np

# Lorenz system parameters
LORENZ_RHO = 28.0
LORENZ_SIGMA = 10.0
LORENZ_BETA = 8.0 / 3.0

# Pendulum on a cart
GRAVITY = 9.81
PENDULUM_LENGTH = 10.0
FRICTION_LINEAR = 0.01   # k_L
FRICTION_COULOMB = 0.01  # k_R

# Minima of the three-dimensional energy landscape
STATE_A = np.array([1.0, 0.0, 0.0])
STATE_B = np.array([-1.0, 0.0, 0.0])


def _rows(x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    return np.atleast_2d(x), x.ndim == 1


def lorenz_vector_field(x) -> np.ndarray:
    """Right-hand side of the Lorenz system"""
    points, single = _rows(x)
    x1, x2, x3 = points[:, 0], points[:, 1], points[:, 2]
    out = np.column_stack([
        LORENZ_SIGMA * (x2 - x1),
        x1 * (LORENZ_RHO - x3) - x2,
        x1 * x2 - LORENZ_BETA * x3,
    ])
    return out[0] if single else out


def lorenz_flow_map(x, tau: float = 0.01, substeps: int = 10) -> np.ndarray:
    """
    Time-tau flow map of the Lorenz system by classical RK4

    Args:
        x: A 3-vector or an (n, 3) batch
        tau (float): Flow time
        substeps (int): Number of RK4 steps of size tau/substeps

    Returns:
        np.ndarray: The advanced state(s)
    """
    if substeps < 1:
        raise ValueError(f"substeps must be at least 1, got {substeps}")
    state, single = _rows(x)
    state = state.copy()
    h = tau / substeps
    for _ in range(substeps):
        k1 = lorenz_vector_field(state)
        k2 = lorenz_vector_field(state + 0.5 * h * k1)
        k3 = lorenz_vector_field(state + 0.5 * h * k2)
        k4 = lorenz_vector_field(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return state[0] if single else state


def pendulum_acceleration(x1, x2, u):
    """
    Angular acceleration of the pendulum on a cart

    sgn(0) is taken as 0, so the Coulomb friction vanishes at rest.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    value = (
        -(GRAVITY / PENDULUM_LENGTH) * np.sin(x1)
        - u * np.cos(x1)
        - (FRICTION_LINEAR / PENDULUM_LENGTH) * x2 * np.abs(x2)
        - FRICTION_COULOMB * np.sign(x2)
    )
    return float(value) if value.ndim == 0 else value


def pendulum_field(x) -> np.ndarray:
    """pendulum_acceleration on (x1, x2, u) rows, returned as an (n, 1) column"""
    points, single = _rows(x)
    out = pendulum_acceleration(points[:, 0], points[:, 1], points[:, 2]).reshape(-1, 1)
    return out[0] if single else out


def energy_and_gradient(x):
    """
    Double-well energy on R^3 and its gradient

    Args:
        x: A 3-vector or an (n, 3) batch

    Returns:
        tuple: (energy, gradient) with shapes () / (3,) or (n,) / (n, 3)
    """
    points, single = _rows(x)
    x1, x2, x3 = points[:, 0], points[:, 1], points[:, 2]
    energy = (
        (x1 ** 2 - 1.0) ** 2
        + 0.25 * (x2 ** 2 - 1.0) ** 2
        + 0.5 * x3 ** 2
        + x1 ** 2 * x2 ** 2
        + 0.1 * (x1 ** 3 - 3.0 * x1 + x2 ** 3 + 3.0 * x2 * (1.0 - x1 ** 2))
    )
    gradient = np.column_stack([
        4.0 * x1 * (x1 ** 2 - 1.0) + 2.0 * x1 * x2 ** 2 + 0.1 * (3.0 * x1 ** 2 - 3.0 - 6.0 * x1 * x2),
        x2 * (x2 ** 2 - 1.0) + 2.0 * x1 ** 2 * x2 + 0.1 * (3.0 * x2 ** 2 + 3.0 * (1.0 - x1 ** 2)),
        x3,
    ])
    if single:
        return float(energy[0]), gradient[0]
    return energy, gradient


def energy(x):
    return energy_and_gradient(x)[0]


def negative_energy_gradient(x) -> np.ndarray:
    """Training label for the energy experiment: -grad E"""
    return -energy_and_gradient(x)[1]


def example2_field(x, alpha: float = 1.0) -> np.ndarray:
    """One-dimensional vector field f*(x) = -alpha |x|"""
    points, single = _rows(x)
    out = -alpha * np.abs(points[:, :1])
    return out[0] if single else out


def example2_closed_form_error_sq(alpha: float, tau: float, steps: int) -> float:
    """
    Squared output error of the least-squares affine fit under explicit Euler

    The least-squares fit of -alpha|x| on U([-1, 1]) is the constant -alpha/2;
    its Euler trajectory from x0 = 1 is compared with the exact Euler
    trajectory (1 - alpha tau)^j of the true field.
    """
    j = np.arange(1, steps + 1, dtype=np.float64)
    return float(np.sum((1.0 - j * alpha * tau / 2.0 - (1.0 - alpha * tau) ** j) ** 2))
