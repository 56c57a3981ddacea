"""Reeb flow integration, frame transport and flow-transport growth laws.

The integrator is an embedded Dormand-Prince 5(4) pair with standard step
control.  On boxes with boundary the exit time is located by bisecting the
crossing step; on level sets the state is renormalized onto the constraint
after every accepted step.  Frame transport integrates the variational
equation dV/dt = Dv(x(t)) V alongside the trajectory, with the Jacobian
taken from symbolic derivatives of the field components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .forms import (FormField, exterior_derivative, interior_product,
                    lie_derivative, restricted_sup, wedge, wedge_power)
from .manifold import ChartBox, LevelSet


class FlowError(RuntimeError):
    pass


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass(frozen=True)
class StepStats:
    accepted: int
    rejected: int
    min_step: float
    max_step: float


@dataclass(frozen=True)
class FlowSegment:
    """An integrated trajectory with optional transported frames."""

    manifold: object
    vfield: object
    x0: np.ndarray
    times: np.ndarray
    points: np.ndarray
    termination: str                 # "reached-horizon" | "exited-boundary"
    exit_face: tuple | None
    exit_time: float | None
    tol: float
    stats: StepStats
    frames: np.ndarray | None = None


def _rhs_factory(v, manifold, with_frames, k):
    m = manifold.n_sym

    def rhs(state):
        x = state[:m]
        vx = v.eval_at(x[None, :])[0]
        if not with_frames:
            return vx
        J = v.jacobian_at(x[None, :])[0]
        V = state[m:].reshape(k, m)
        return np.concatenate([vx, (V @ J.T).ravel()])

    return rhs


def _dp_step(rhs, y, h):
    k = [rhs(y)]
    for i in range(1, 7):
        acc = np.zeros_like(y)
        for j, a in enumerate(_DP_A[i]):
            if a:
                acc += a * k[j]
        k.append(rhs(y + h * acc))
    k = np.array(k)
    y5 = y + h * (_DP_B5 @ k)
    y4 = y + h * (_DP_B4 @ k)
    err = np.max(np.abs(y5 - y4))
    return y5, err


def _face_violation(manifold, x):
    """The first crossed face (index, side, bound) or None."""
    if not isinstance(manifold, ChartBox):
        return None
    for i, s in enumerate(manifold.specs):
        if s.period is not None:
            continue
        if np.isfinite(s.lo) and x[i] < s.lo:
            return (i, "lo", s.lo)
        if np.isfinite(s.hi) and x[i] > s.hi:
            return (i, "hi", s.hi)
    return None


def _renormalize(manifold, state, m):
    if isinstance(manifold, LevelSet):
        state = state.copy()
        state[:m] = manifold.project_point(state[:m])
    return state


def integrate_flow(v, x0, T, tol=1e-10, manifold=None, frames0=None,
                   grid_times=None, max_steps=200000):
    """Integrate the flow of ``v`` from ``x0`` for time ``T``.

    ``frames0`` (k, m) rides along through the variational equation.
    ``grid_times`` forces the solver to land on the given times exactly.
    """
    manifold = manifold or v.manifold
    m = manifold.n_sym
    x0 = np.asarray(x0, dtype=np.float64)
    with_frames = frames0 is not None
    k = 0 if frames0 is None else np.asarray(frames0).shape[0]
    rhs = _rhs_factory(v, manifold, with_frames, k)
    state = x0.copy() if not with_frames else np.concatenate(
        [x0, np.asarray(frames0, dtype=np.float64).ravel()])

    mandatory = sorted(set([float(T)] + ([] if grid_times is None else
                                         [float(t) for t in grid_times if 0.0 < t <= T])))
    times = [0.0]
    states = [state.copy()]
    t = 0.0
    h = min(T / 16.0, 0.1) or T
    accepted = rejected = 0
    min_h, max_h = np.inf, 0.0
    termination = "reached-horizon"
    exit_face = None
    exit_time = None
    next_stop_idx = 0

    while t < T - 1e-15:
        if accepted + rejected > max_steps:
            raise FlowError("step limit exceeded (step underflow?)")
        stop = mandatory[next_stop_idx]
        h = min(h, stop - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise FlowError("step underflow during integration")
        y_new, err = _dp_step(rhs, state, h)
        scale = tol * max(1.0, float(np.max(np.abs(state))))
        if err > scale:
            rejected += 1
            h *= max(0.2, 0.9 * (scale / err) ** 0.2)
            continue
        face = _face_violation(manifold, y_new[:m])
        if face is not None:
            # bisect the crossing step down to the exit tolerance
            lo_h, hi_h = 0.0, h
            for _ in range(200):
                if hi_h - lo_h <= max(tol, 1e-14) * max(1.0, hi_h):
                    break
                mid = 0.5 * (lo_h + hi_h)
                y_mid, _ = _dp_step(rhs, state, mid)
                if _face_violation(manifold, y_mid[:m]) is None:
                    lo_h = mid
                else:
                    hi_h = mid
            y_exit, _ = _dp_step(rhs, state, hi_h)
            t += hi_h
            state = y_exit
            times.append(t)
            states.append(state.copy())
            termination = "exited-boundary"
            exit_face = face
            exit_time = t
            accepted += 1
            min_h, max_h = min(min_h, hi_h), max(max_h, hi_h)
            break
        state = _renormalize(manifold, y_new, m)
        if isinstance(manifold, LevelSet):
            drift = abs(float(manifold.constraint_values(state[:m][None, :])[0]))
            if drift > 10 * max(tol, 1e-12):
                raise FlowError(f"constraint drift {drift:.2e} beyond 10x tol")
        t += h
        accepted += 1
        min_h, max_h = min(min_h, h), max(max_h, h)
        times.append(t)
        states.append(state.copy())
        if abs(t - stop) <= 1e-14 * max(1.0, stop) and stop < T:
            next_stop_idx += 1
        if err > 0:
            h = min(h * min(5.0, 0.9 * (scale / err) ** 0.2), T - t if T > t else h)
        else:
            h = min(5.0 * h, max(T - t, 1e-3))

    times = np.array(times)
    points = np.array([s[:m] for s in states])
    frames = None
    if with_frames:
        frames = np.array([s[m:].reshape(k, m) for s in states])
        if isinstance(manifold, LevelSet):
            frames = manifold.project_vectors(points, frames)
    return FlowSegment(manifold, v, x0, times, points, termination, exit_face,
                       exit_time, tol, StepStats(accepted, rejected,
                                                 float(min_h), float(max_h)),
                       frames)


def transport_frame(seg, frames0, consistency_tol=None):
    """Transport a frame along an existing segment's time grid.

    Re-integrates the variational equation jointly with the trajectory,
    landing on the stored grid times, and checks that the re-run trajectory
    agrees with the stored one.  Returns a new segment carrying the frames.
    """
    horizon = float(seg.times[-1])
    out = integrate_flow(seg.vfield, seg.x0, horizon, tol=seg.tol,
                         manifold=seg.manifold, frames0=frames0,
                         grid_times=seg.times[1:])
    consistency_tol = consistency_tol or 100 * max(seg.tol, 1e-12)
    common = min(len(out.times), len(seg.times))
    drift = 0.0
    for i in range(common):
        j = int(np.argmin(np.abs(out.times - seg.times[i])))
        if abs(out.times[j] - seg.times[i]) < 1e-10 * max(1.0, seg.times[i]):
            drift = max(drift, float(np.max(np.abs(out.points[j] - seg.points[i]))))
    if drift > consistency_tol:
        raise FlowError(f"frame transport re-run deviates by {drift:.2e}")
    return out


@dataclass(frozen=True)
class GrowthReport:
    """Affine growth of form values along transported frames."""

    times: np.ndarray
    points: np.ndarray
    values: np.ndarray
    predicted: np.ndarray
    intercept: float
    slope: float
    max_residual: float
    constancy_deviation: float | None
    precondition_residuals: dict
    passed: bool


def check_linear_growth(tau, eta, v, x0, T, frame0, tol=1e-8,
                        flow_tol=1e-11, samples=400, seed=11):
    """Verify the exact affine transport law for ``tau`` under the flow.

    Preconditions (rejected if violated): L_v tau = eta on the fixture and
    v . tau = 0.  Along the trajectory the values tau(frame(t)) must match
    tau(frame(0)) + eta(frame(0)) t; when the slope vanishes the values
    must be t-independent.
    """
    manifold = tau.manifold
    points = manifold.sample_points(samples, seed=seed)
    pre = {
        "lie_derivative_matches": restricted_sup(lie_derivative(v, tau) - eta, points),
        "tau_horizontal": restricted_sup(interior_product(v, tau), points),
    }
    if any(r > tol for r in pre.values()):
        return GrowthReport(np.array([]), np.empty((0, manifold.n_sym)),
                            np.array([]), np.array([]), 0.0, 0.0,
                            np.inf, None, pre, False)
    seg = integrate_flow(v, x0, T, tol=flow_tol, manifold=manifold,
                         frames0=frame0)
    values = np.array([
        tau.evaluate_on_frames(seg.points[i][None, :], seg.frames[i][None, :, :])[0]
        for i in range(len(seg.times))])
    from .forms import FrameK
    intercept = float(values[0])
    slope = eta.evaluate(FrameK(x0, frame0, require_independent=False))
    predicted = intercept + slope * seg.times
    max_residual = float(np.max(np.abs(values - predicted)))
    constancy = None
    if abs(slope) <= tol:
        constancy = float(np.max(np.abs(values - intercept)))
    passed = max_residual <= tol and (constancy is None or constancy <= tol)
    return GrowthReport(seg.times, seg.points, values, predicted, intercept,
                        slope, max_residual, constancy, pre, passed)


def growth_csv_rows(report, coords):
    header = ["t"] + [f"x_{c}" for c in coords] + ["value", "predicted", "residual"]
    rows = [header]
    for i, t in enumerate(report.times):
        rows.append([f"{t!r}"] + [f"{xi!r}" for xi in report.points[i]]
                    + [f"{report.values[i]!r}", f"{report.predicted[i]!r}",
                       f"{report.values[i] - report.predicted[i]!r}"])
    return rows


@dataclass(frozen=True)
class TrappedReport:
    """Exit certificate or bounded-horizon evidence (never proof)."""

    exited: bool
    exit_time: float | None
    exit_face: tuple | None
    horizon: float
    recurrent: bool
    min_return_distance: float | None
    note: str


def detect_trapped(v, x0, horizon, tol=1e-9, manifold=None, recurrence_eps=1e-3):
    """Exit certificate within the horizon, or honest non-exit evidence."""
    manifold = manifold or v.manifold
    if not getattr(manifold, "has_boundary", False) and isinstance(manifold, ChartBox):
        open_faces = any(s.period is None and (np.isfinite(s.lo) or np.isfinite(s.hi))
                         for s in manifold.specs)
    else:
        open_faces = getattr(manifold, "has_boundary", False)
    if isinstance(manifold, LevelSet) or not open_faces:
        return TrappedReport(False, None, None, horizon, False, None,
                             "manifold has no exit faces; non-exit holds trivially "
                             "(numerical non-exit is evidence, not proof of trapping)")
    seg = integrate_flow(v, np.asarray(x0, dtype=np.float64), horizon,
                         tol=min(tol, 1e-9), manifold=manifold)
    if seg.termination == "exited-boundary":
        return TrappedReport(True, seg.exit_time, seg.exit_face, horizon,
                             False, None, "trajectory exited through a face")
    x0a = np.asarray(x0, dtype=np.float64)
    later = seg.times > 0.1 * horizon
    min_ret = float(np.min(np.linalg.norm(seg.points[later] - x0a, axis=1))) \
        if np.any(later) else None
    recurrent = min_ret is not None and min_ret < recurrence_eps
    return TrappedReport(False, None, None, horizon, recurrent, min_ret,
                         "no exit up to the horizon; numerical non-exit is "
                         "evidence, never proof of trapping")


@dataclass(frozen=True)
class LyapunovVerdict:
    passed: bool
    mode: str
    min_value: float
    max_unit_deviation: float | None
    samples: int
    tol: float


def verify_lyapunov(f, v, manifold=None, mode="positive", samples=1000,
                    tol=1e-12, seed=13):
    """Sample df(v); ``positive`` needs min > tol, ``unit`` needs |df(v)-1| <= tol."""
    if mode not in ("positive", "unit"):
        raise ValueError("mode must be 'positive' or 'unit'")
    manifold = manifold or v.manifold
    if v.components is None:
        raise FlowError("Lyapunov verification needs an expression-backed field")
    derivative = ex.ZERO
    for name, comp in zip(manifold.coords, v.components):
        derivative = derivative + ex.diff(f, name) * comp
    from .engine import compile_tape
    points = manifold.sample_points(samples, seed=seed)
    if getattr(manifold, "has_boundary", False):
        # df(v) > 0 is required on all of X, boundary faces included
        boundary = manifold.sample_boundary(max(samples // 8, 16), seed=seed)
        points = np.vstack([points, boundary])
    vals = compile_tape([derivative], manifold.coords).evaluate(points)[:, 0]
    min_value = float(np.min(vals))
    if mode == "positive":
        return LyapunovVerdict(min_value > tol, mode, min_value, None, samples, tol)
    dev = float(np.max(np.abs(vals - 1.0)))
    return LyapunovVerdict(dev <= max(tol, 1e-9), mode, min_value, dev, samples, tol)


@dataclass(frozen=True)
class ChainVerdict:
    passed: bool
    links: dict
    tol: float


def verify_antiderivative_chain(ctx, alpha, tau, k, samples=500, tol=1e-9, seed=17):
    """Check the candidate antiderivative chain for (dbeta)^k.

    Links, each reported with its sup residual:
      d alpha = (dbeta)^k,
      d tau = alpha - beta ^ (dbeta)^(k-1),
      v . d tau = (dbeta)^(k-1),
      L_v tau = (dbeta)^(k-1).
    """
    manifold = ctx.manifold
    points = manifold.sample_points(samples, seed=seed)
    dbk = wedge_power(ctx.dbeta, k)
    dbk_minus = wedge_power(ctx.dbeta, k - 1)
    beta_wedge = wedge(ctx.beta, dbk_minus)
    links = {
        "d_alpha_eq_dbeta_power": restricted_sup(exterior_derivative(alpha) - dbk, points),
        "d_tau_eq_alpha_minus_beta_wedge": restricted_sup(
            exterior_derivative(tau) - (alpha - beta_wedge), points),
        "reeb_contract_d_tau": restricted_sup(
            interior_product(ctx.reeb, exterior_derivative(tau)) - dbk_minus, points),
        "lie_derivative_tau": restricted_sup(
            lie_derivative(ctx.reeb, tau) - dbk_minus, points),
    }
    return ChainVerdict(all(r <= tol for r in links.values()), links, tol)
