import numpy as np

from tasks.base import FieldFn, SupportTrace
from utils.errors import InputError


def lipschitz_bound_check(
    f: FieldFn,
    f_star: FieldFn,
    support_f: SupportTrace,
    support_star: SupportTrace,
    C_L: float,
    tau: float,
) -> np.ndarray:
    """
    Per-step margin between the Euler error bound and the actual deviation

    bound_j = ((1 + tau C_L)^(j-1) - 1) / C_L * max_k |f(x~_k) - f*(x~_k)|
    with the maximum over the support of f. Margins are nonnegative whenever
    C_L is a Lipschitz constant of f* on the visited region.

    Args:
        f: Surrogate field
        f_star: True field
        support_f (SupportTrace): Euler support of the surrogate
        support_star (SupportTrace): Euler support of the true field
        C_L (float): Lipschitz constant of f_star
        tau (float): Euler step

    Returns:
        np.ndarray: bound_j - |s_j(f) - s_j(f*)| for j = 1..J
    """
    if support_f.J != support_star.J or support_f.dim != support_star.dim:
        raise InputError("Support traces must have the same length and dimension")
    if not C_L > 0 or not tau > 0:
        raise InputError("C_L and tau must be positive")
    points = support_f.points
    max_error = float(np.max(np.linalg.norm(np.asarray(f(points)) - np.asarray(f_star(points)), axis=1)))
    j = np.arange(1, support_f.J + 1, dtype=np.float64)
    bounds = ((1.0 + tau * C_L) ** (j - 1.0) - 1.0) / C_L * max_error
    deviations = np.linalg.norm(support_f.points - support_star.points, axis=1)
    return bounds - deviations
