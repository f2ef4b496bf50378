"""Training-time schedules for the entropy bonus, n-step length and discount."""

from __future__ import annotations


def exp_schedule(start: float, end: float, t: float, horizon: float) -> float:
    """Geometric interpolation from ``start`` to ``end`` over ``horizon`` steps, then flat."""
    if start <= 0 or end <= 0:
        raise ValueError("exponential schedule endpoints must be positive")
    if horizon <= 0:
        raise ValueError("schedule horizon must be positive")
    if t >= horizon:
        return float(end)
    frac = max(t, 0) / horizon
    return float(start * (end / start) ** frac)


def nstep_schedule(n_start: int, n_end: int, t: float, horizon: float) -> int:
    return int(round(exp_schedule(n_start, n_end, t, horizon)))


def check_beta_bounds(anneal_end: int, total_updates: int, final_freeze: int) -> None:
    if final_freeze < 0 or final_freeze > total_updates:
        raise ValueError(f"final_freeze {final_freeze} outside [0, {total_updates}]")
    if anneal_end < 0 or anneal_end > total_updates - final_freeze:
        raise ValueError(
            f"anneal_end {anneal_end} must not exceed total_updates - final_freeze "
            f"= {total_updates - final_freeze}"
        )


def beta_schedule(beta0: float, anneal_end: int, total_updates: int, final_freeze: int, t: int) -> float:
    """Entropy coefficient: linear from ``beta0`` at t=0 to 0 at ``anneal_end``.

    It is exactly 0 for the last ``final_freeze`` of ``total_updates`` updates
    (``t >= total_updates - final_freeze``).
    """
    check_beta_bounds(anneal_end, total_updates, final_freeze)
    if t >= total_updates - final_freeze or t >= anneal_end:
        return 0.0
    return float(beta0 * (1.0 - max(t, 0) / anneal_end))
