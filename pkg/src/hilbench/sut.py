"""Black-box driving controller contract and the reference implementation.

A controller sees only the platform-published observation (synchronized ego
pose, detected agents, route handle, goal speed) and returns one standardized
control command.  The module deliberately imports nothing from the plant,
link, or orchestration layers: the observation is the whole world.

The reference controller is pure pursuit for steering plus a curvature-based
speed cap and a constant-velocity yield rule; its processing latency is drawn
from a configurable model (constant or bimodal) so the closed loop exhibits a
realistic, measurable compute-time signature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ms_to_ns
from .safety import AgentState
from .spatial import ReferencePath, TrajectorySample, project


@dataclass(frozen=True)
class Observation:
    """Everything a controller is allowed to see for one cycle."""

    t_ns: int
    ego: TrajectorySample
    detections: tuple[AgentState, ...]
    route: ReferencePath
    goal_speed: float


@dataclass(frozen=True)
class ControlCommand:
    speed_setpoint: float
    steer_setpoint: float
    t_issued_ns: int

    def __post_init__(self):
        if not (math.isfinite(self.speed_setpoint) and math.isfinite(self.steer_setpoint)):
            raise ValueError("command setpoints must be finite")


@dataclass(frozen=True)
class SutLatencyModel:
    """Controller processing-latency model: constant or a bimodal mixture."""

    mode: str
    params: dict

    def __post_init__(self):
        if self.mode == "constant":
            if self.params["ms"] < 0.0:
                raise ValueError("latency must be >= 0")
        elif self.mode == "bimodal":
            comps = self.params["components"]
            if len(comps) != 2:
                raise ValueError("bimodal model needs exactly 2 components")
            if abs(sum(c["weight"] for c in comps) - 1.0) > 1e-9:
                raise ValueError("bimodal weights must sum to 1")
        else:
            raise ValueError(f"unknown latency mode {self.mode!r}")

    def sample_ms(self, rng: np.random.Generator) -> float:
        if self.mode == "constant":
            return float(self.params["ms"])
        comps = self.params["components"]
        u = float(rng.random())
        comp = comps[0] if u < comps[0]["weight"] else comps[1]
        for _ in range(100):
            v = comp["mean_ms"] + comp["std_ms"] * float(rng.standard_normal())
            if v >= 0.0:
                return v
        return max(comp["mean_ms"], 0.0)

    @staticmethod
    def constant(ms: float) -> "SutLatencyModel":
        return SutLatencyModel("constant", {"ms": float(ms)})

    @staticmethod
    def bimodal(mean1_ms: float = 10.0, std1_ms: float = 2.0, weight1: float = 0.6,
                mean2_ms: float = 28.0, std2_ms: float = 3.0) -> "SutLatencyModel":
        return SutLatencyModel("bimodal", {"components": [
            {"mean_ms": float(mean1_ms), "std_ms": float(std1_ms), "weight": float(weight1)},
            {"mean_ms": float(mean2_ms), "std_ms": float(std2_ms), "weight": float(1.0 - weight1)},
        ]})


@dataclass(frozen=True)
class PurePursuitParams:
    wheelbase: float = 0.09
    k_v: float = 0.5          # lookahead gain, seconds of travel
    l_min: float = 0.3
    l_max: float = 1.2
    a_lat_max: float = 0.35   # curvature feedforward speed cap, m/s^2
    t_h: float = 2.0          # yield prediction horizon, s
    d_stop: float = 0.5       # yield clearance, m
    ego_radius: float = 0.08


class SutError(RuntimeError):
    pass


class PurePursuitSut:
    """Reference controller: pure pursuit + speed governor + yield rule."""

    def __init__(self, params: PurePursuitParams, latency: SutLatencyModel,
                 latency_rng: np.random.Generator) -> None:
        self.params = params
        self.latency = latency
        self._lat_rng = latency_rng
        self._route: ReferencePath | None = None
        self._last_pose: TrajectorySample | None = None
        self._v_est = 0.0

    def reset(self, route: ReferencePath) -> None:
        if route is None or route.total_length <= 0.0:
            raise SutError("reset requires a valid route")
        self._route = route
        self._last_pose = None
        self._v_est = 0.0

    def step(self, obs: Observation) -> ControlCommand:
        if self._route is None:
            raise SutError("no route set; call reset first")
        p = self.params
        route = obs.route if obs.route is not None else self._route

        ex, ey, heading = obs.ego.x, obs.ego.y, obs.ego.heading
        self._update_velocity_estimate(obs.ego)

        proj = project(route, (ex, ey))
        lookahead = p.l_min + p.k_v * max(self._v_est, 0.0)
        lookahead = min(max(lookahead, p.l_min), p.l_max)
        s_look = proj.arclength + lookahead
        if not route.closed:
            s_look = min(s_look, route.total_length)
        target = route.point_at(s_look)

        alpha = math.atan2(target[1] - ey, target[0] - ex) - heading
        steer = math.atan2(2.0 * p.wheelbase * math.sin(alpha), lookahead)

        speed = self._speed_with_curvature_cap(obs.goal_speed, route, proj.arclength, lookahead)
        if self._should_yield(obs):
            speed = 0.0

        latency_ns = ms_to_ns(self.latency.sample_ms(self._lat_rng))
        return ControlCommand(speed_setpoint=speed, steer_setpoint=steer,
                              t_issued_ns=obs.t_ns + latency_ns)

    def _update_velocity_estimate(self, ego: TrajectorySample) -> None:
        last = self._last_pose
        if last is not None and ego.t_ns > last.t_ns:
            dt = (ego.t_ns - last.t_ns) / 1e9
            self._v_est = math.hypot(ego.x - last.x, ego.y - last.y) / dt
        self._last_pose = ego

    def _speed_with_curvature_cap(self, goal_speed, route, s_here, lookahead) -> float:
        """Cap speed from the heading change of the path over the lookahead."""
        tan_a = route.tangent_at(s_here)
        tan_b = route.tangent_at(s_here + lookahead)
        dtheta = abs(math.remainder(math.atan2(tan_b[1], tan_b[0]) - math.atan2(tan_a[1], tan_a[0]),
                                    2.0 * math.pi))
        kappa = dtheta / max(lookahead, 1e-9)
        if kappa <= 1e-9:
            return goal_speed
        return min(goal_speed, math.sqrt(self.params.a_lat_max / kappa))

    def _should_yield(self, obs: Observation) -> bool:
        """Stop if any detection's predicted body gap falls below the clearance."""
        p = self.params
        evx = self._v_est * math.cos(obs.ego.heading)
        evy = self._v_est * math.sin(obs.ego.heading)
        for det in obs.detections:
            dpx, dpy = det.x - obs.ego.x, det.y - obs.ego.y
            dvx, dvy = det.vx - evx, det.vy - evy
            rsum = p.ego_radius + det.radius
            # min over s in [0, t_h] of ||dp + dv s||
            a = dvx * dvx + dvy * dvy
            if a == 0.0:
                s_star = 0.0
            else:
                s_star = min(max(-(dpx * dvx + dpy * dvy) / a, 0.0), p.t_h)
            for s in (0.0, s_star, p.t_h):
                if math.hypot(dpx + dvx * s, dpy + dvy * s) - rsum < p.d_stop:
                    return True
        return False


# ---------------------------------------------------------------------------
# Plug-in registry: anything exposing reset/step with this data model
# can be named in a run config.

SUT_REGISTRY: dict = {}


def register_sut(name: str, factory) -> None:
    """factory(params_dict, latency_model, latency_rng) -> controller."""
    SUT_REGISTRY[name] = factory


def build_sut(name: str, params: dict, latency: SutLatencyModel, latency_rng):
    if name not in SUT_REGISTRY:
        raise KeyError(f"unknown SUT {name!r}; registered: {sorted(SUT_REGISTRY)}")
    return SUT_REGISTRY[name](params, latency, latency_rng)


def _pure_pursuit_factory(params: dict, latency: SutLatencyModel, latency_rng):
    return PurePursuitSut(PurePursuitParams(**params), latency, latency_rng)


register_sut("pure-pursuit", _pure_pursuit_factory)


def ashman_d(samples) -> float:
    """Two-cluster separation statistic for latency samples.

    1-D two-means split, then D = |mu1 - mu2| / sqrt((s1^2 + s2^2) / 2).
    A forced split of a single Gaussian lands near 2.66; use D > 4 as the
    bimodality verdict.
    """
    a = np.sort(np.asarray(samples, dtype=float))
    if a.size < 4:
        raise ValueError("need at least 4 samples")
    centers = np.array([a[0], a[-1]])
    for _ in range(100):
        split = (np.abs(a[:, None] - centers[None, :])).argmin(axis=1)
        new = np.array([a[split == k].mean() if np.any(split == k) else centers[k] for k in (0, 1)])
        if np.allclose(new, centers):
            break
        centers = new
    lo, hi = a[split == 0], a[split == 1]
    if lo.size < 2 or hi.size < 2:
        return 0.0
    s2 = (lo.var(ddof=1) + hi.var(ddof=1)) / 2.0
    if s2 == 0.0:
        return math.inf
    return float(abs(lo.mean() - hi.mean()) / math.sqrt(s2))
