"""Successive convex approximation for max-min rate UAV placement.

The non-convex epigraph problem (maximize R subject to per-user rate targets,
``d^2 <= 1/c`` and displacement limits) is convexified by replacing ``1/c``
with its tangent at ``c_tilde``. Each convex surrogate is solved by a
primal log-barrier interior-point method with Newton steps; the outer loop
moves the tangent point to the last solution until the min rate stalls.

Three problem shapes share one solver:

``joint``           all episodes at once, consecutive-episode displacement limits
``single_episode``  one episode, displacement limit to a fixed anchor (or none)
``static``          one position per UAV shared by every episode
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ConfigError, InfeasibleError, NonConvergenceError, NumericalError
from .scenario import EpisodeTracks, ScenarioConfig, displacement_budget

MODES = ("joint", "single_episode", "static")
C_MIN = 1e-12
MAX_JOINT_EPISODES = 20
GROUND_JITTER = 1e-3
POLISH_MARGIN = 1e-13
LN2 = math.log(2.0)


def linearize_inverse(c, c_tilde):
    """Tangent of ``1/c`` at ``c_tilde``: ``2/c_tilde - c/c_tilde**2``.

    Affine in ``c`` and a global under-estimator of ``1/c`` for ``c > 0``.
    Written around the tangent point so that ``c == c_tilde`` gives exactly
    ``1/c_tilde``.
    """
    c_tilde = np.asarray(c_tilde, dtype=float)
    if np.any(c_tilde <= 0):
        raise ValueError("linearization point must be > 0")
    return 1.0 / c_tilde - (np.asarray(c, dtype=float) - c_tilde) / c_tilde**2


def snr_coefficient(config: ScenarioConfig) -> float:
    """``P tau0 (M-K) / (M sigma^2)`` in m^2; multiplies sum_m c."""
    M, K = config.num_uavs, config.users_per_group
    return config.tx_power * config.ref_gain * (M - K) / (M * config.noise_power)


@dataclass
class SubproblemSpec:
    """One convex surrogate in native units.

    ``users`` (Ne, U, 2) and ``c_tilde`` (Ne, U, M) cover the episodes in the
    problem. Positions live in ``slots`` (Ne slots for joint, else 1) of M
    UAVs each. ``budgets`` is (Ne-1, M) for joint and (M,) for an anchored
    single episode.
    """

    mode: str
    users: np.ndarray
    c_tilde: np.ndarray
    altitude: float
    gamma: float
    prefactor: float
    num_uavs: int
    start: np.ndarray
    budgets: np.ndarray | None = None
    anchor: np.ndarray | None = None
    c_min: float = C_MIN
    c_max: float = math.inf
    arena_diagonal: float = 1.0
    episode: int | None = None

    @property
    def num_slots(self) -> int:
        return self.users.shape[0] if self.mode == "joint" else 1

    @property
    def num_variables(self) -> int:
        Ne, U, M = self.c_tilde.shape
        return 2 * self.num_slots * M + Ne * U * M + 1

    def slot_index(self) -> np.ndarray:
        """Position slot used by (episode, UAV), shape (Ne, M)."""
        Ne, M = self.users.shape[0], self.num_uavs
        slot = np.arange(Ne)[:, None] if self.mode == "joint" else np.zeros((Ne, 1), int)
        return slot * M + np.arange(M)[None, :]

    def displacement_pairs(self):
        """(i, j, budget) position-index triples; ``j == -1`` means the anchor."""
        M = self.num_uavs
        if self.mode == "joint" and self.budgets is not None:
            n = np.repeat(np.arange(self.users.shape[0] - 1), M)
            m = np.tile(np.arange(M), self.users.shape[0] - 1)
            return (n + 1) * M + m, n * M + m, self.budgets.reshape(-1)
        if self.mode == "single_episode" and self.anchor is not None:
            return np.arange(M), np.full(M, -1), np.broadcast_to(self.budgets, (M,)).astype(float)
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)

    def to_json(self) -> dict:
        return {
            "mode": self.mode, "users": self.users.tolist(), "c_tilde": self.c_tilde.tolist(),
            "altitude": self.altitude, "gamma": self.gamma, "prefactor": self.prefactor,
            "num_uavs": self.num_uavs, "start": self.start.tolist(),
            "budgets": None if self.budgets is None else np.asarray(self.budgets).tolist(),
            "anchor": None if self.anchor is None else self.anchor.tolist(),
            "episode": self.episode,
        }


@dataclass
class SubproblemSolution:
    """Primal point, recovered multipliers (native units) and KKT residuals.

    ``positions`` is (slots, M, 2); ``c`` and ``lam`` are (Ne, U, M); ``mu`` is
    per user; ``beta`` follows :meth:`SubproblemSpec.displacement_pairs`.
    """

    positions: np.ndarray
    c: np.ndarray
    rate: float
    mu: np.ndarray
    lam: np.ndarray
    beta: np.ndarray
    box_lower: np.ndarray
    box_upper: np.ndarray
    kkt: dict
    barrier_rate: float
    newton_steps: int
    barrier_t: float

    def to_json(self) -> dict:
        return {
            "positions": self.positions.tolist(), "c": self.c.tolist(), "rate": self.rate,
            "mu": self.mu.tolist(), "lam": self.lam.tolist(), "beta": self.beta.tolist(),
            "kkt": self.kkt, "newton_steps": self.newton_steps,
        }


def _mode_users(tracks: EpisodeTracks, mode, episode):
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "single_episode":
        if episode is None:
            raise ConfigError("single_episode mode needs an episode index")
        return tracks.users[episode:episode + 1]
    return tracks.users


def build_subproblem(tracks: EpisodeTracks, config: ScenarioConfig, c_tilde, mode,
                     start, episode=None, anchor=None, budgets=None) -> SubproblemSpec:
    """Assemble the convex surrogate around ``c_tilde``.

    ``start`` holds UAV positions (slots, M, 2) used to seed the solver.
    """
    users = _mode_users(tracks, mode, episode)
    Ne, U = users.shape[:2]
    M = config.num_uavs
    c_tilde = np.asarray(c_tilde, dtype=float)
    if c_tilde.shape != (Ne, U, M):
        raise ConfigError(f"c_tilde shape {c_tilde.shape} != {(Ne, U, M)} for mode {mode}")
    c_max = 1.0 / config.altitude**2 if config.altitude > 0 else math.inf
    if np.any(c_tilde < C_MIN) or np.any(c_tilde > c_max * (1 + 1e-12)):
        raise ValueError("c_tilde outside [c_min, 1/H^2]")
    slots = Ne if mode == "joint" else 1
    start = np.asarray(start, dtype=float).reshape(slots, M, 2)
    prefactor = 1.0 / (Ne * config.num_groups)
    if mode == "joint":
        if budgets is None:
            budgets = displacement_budget(config)[: Ne - 1]
        budgets = np.asarray(budgets, dtype=float).reshape(Ne - 1, M)
        anchor = None
    elif mode == "single_episode":
        if anchor is not None:
            anchor = np.asarray(anchor, dtype=float).reshape(M, 2)
            if budgets is None:
                budgets = np.full(M, config.displacement)
            budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (M,)).copy()
        else:
            budgets = None
    else:
        budgets = anchor = None
    return SubproblemSpec(
        mode=mode, users=np.array(users), c_tilde=c_tilde, altitude=float(config.altitude),
        gamma=snr_coefficient(config), prefactor=prefactor, num_uavs=M, start=start,
        budgets=budgets, anchor=anchor, c_min=C_MIN, c_max=c_max,
        arena_diagonal=config.arena_diagonal, episode=episode,
    )


class _Barrier:
    """Scaled barrier problem for one :class:`SubproblemSpec`.

    Lengths are divided by ``scale`` (the altitude, or a tenth of the arena
    diagonal when that is larger) and ``c`` multiplied by ``scale**2`` so every
    quantity is O(1).
    """

    def __init__(self, spec: SubproblemSpec):
        self.spec = spec
        L = max(spec.altitude, spec.arena_diagonal / 10, 1.0)
        self.scale = L
        Ne, U, M = spec.c_tilde.shape
        self.shape = (Ne, U, M)
        self.P = spec.num_slots * M
        self.c0 = 2 * self.P
        self.nc = Ne * U * M
        self.n = self.c0 + self.nc + 1
        self.iR = self.n - 1
        self.A = spec.users / L
        self.Ct = spec.c_tilde * L**2
        self.H2 = (spec.altitude / L) ** 2
        self.gam = spec.gamma / L**2
        self.alpha = spec.prefactor / LN2
        self.cmin = spec.c_min * L**2
        self.cmax = spec.c_max * L**2
        self.has_cmax = math.isfinite(self.cmax)
        self.pidx = np.broadcast_to(spec.slot_index()[:, None, :], (Ne, U, M))
        self.cidx = self.c0 + np.arange(self.nc).reshape(Ne, U, M)
        pi, pj, budget = spec.displacement_pairs()
        self.di, self.dj = np.asarray(pi, int), np.asarray(pj, int)
        self.dsq = (np.asarray(budget, dtype=float) / L) ** 2
        self.anchor = None if spec.anchor is None else spec.anchor / L
        self.anchored = self.dj < 0
        self.slots = spec.slot_index()

    # unpacking ---------------------------------------------------------------
    def split(self, z):
        X = z[: self.c0].reshape(self.P, 2)
        C = z[self.c0: self.c0 + self.nc].reshape(self.shape)
        return X, C, z[self.iR]

    def _other_end(self, X):
        other = np.empty((len(self.dj), 2))
        if len(self.dj):
            free = ~self.anchored
            other[free] = X[self.dj[free]]
            if np.any(self.anchored):
                other[self.anchored] = self.anchor[self.di[self.anchored] % self.spec.num_uavs]
        return other

    def slacks(self, z):
        X, C, R = self.split(z)
        diff = X[self.pidx] - self.A[:, :, None, :]
        S = C.sum(axis=-1)
        arg = 1.0 + self.gam * S
        with np.errstate(invalid="ignore", divide="ignore"):
            rate = self.alpha * np.log(arg).sum(axis=0) - R
        g = 2.0 / self.Ct - C / self.Ct**2 - np.sum(diff**2, axis=-1) - self.H2
        dvec = X[self.di] - self._other_end(X)
        disp = self.dsq - np.sum(dvec**2, axis=-1)
        lo = C - self.cmin
        hi = self.cmax - C if self.has_cmax else np.zeros(0)
        return {"rate": rate, "g": g, "disp": disp, "lo": lo, "hi": hi,
                "_diff": diff, "_S": S, "_dvec": dvec}

    def advance(self, s, z_new, ds):
        """Slacks at ``z_new`` by accumulating exact increments.

        Recomputing e.g. ``rate - R`` from scratch loses all relative accuracy
        once the slack is ~1e-12 of the rate; the increments do not.
        """
        fresh = self.slacks(z_new)
        for k in ("rate", "g", "disp", "lo", "hi"):
            fresh[k] = s[k] + ds[k]
        return fresh

    @staticmethod
    def feasible(s):
        return all(np.all(s[k] > 0) for k in ("rate", "g", "disp", "lo", "hi"))

    # derivatives -------------------------------------------------------------
    def constraint_gradient(self, s, w):
        """Sum of ``w_i * grad s_i`` over all constraints, weights per family."""
        out = np.zeros(self.n)
        gX = np.zeros((self.P, 2))
        gC = np.zeros(self.shape)
        q = self.alpha * self.gam / (1.0 + self.gam * s["_S"])  # (Ne, U)
        gC += (q * w["rate"][None, :])[:, :, None]
        out[self.iR] -= np.sum(w["rate"])
        gC -= w["g"] / self.Ct**2
        contrib = -2.0 * s["_diff"] * w["g"][..., None]
        np.add.at(gX, self.pidx.reshape(-1), contrib.reshape(-1, 2))
        if len(self.di):
            dv = -2.0 * s["_dvec"] * w["disp"][:, None]
            np.add.at(gX, self.di, dv)
            free = ~self.anchored
            np.add.at(gX, self.dj[free], -dv[free])
        gC += w["lo"]
        if self.has_cmax:
            gC -= w["hi"]
        out[: self.c0] = gX.reshape(-1)
        out[self.c0: self.c0 + self.nc] = gC.reshape(-1)
        return out

    def gradient(self, s, t):
        w = {k: 1.0 / s[k] for k in ("rate", "g", "disp", "lo", "hi")}
        grad = -self.constraint_gradient(s, w)
        grad[self.iR] -= t
        return grad

    def hessian(self, s):
        """Barrier Hessian in structured form.

        * c-c part: for every (n, u) the M x M block
          ``diag(Dc[n, u]) + kap[n, u] * 1 1^T`` (no other c-c coupling);
        * ``E`` (Ne, U, M, 2): coupling of c[n, u, m] with (x, y) of its slot;
        * ``Y`` (2P, 2P): the position block;
        * rank-one rate terms ``v_u v_u^T`` with ``v_u = w[n, u]`` on every
          c[n, u, :] and ``-sigma_u`` on R. These dwarf everything else near
          the end of the path, so they are kept separate.
        """
        denom = 1.0 + self.gam * s["_S"]                     # (Ne, U)
        sr = s["rate"]
        w = self.alpha * self.gam / denom / sr[None, :]
        kap = self.alpha * self.gam**2 / denom**2 / sr[None, :]
        g = s["g"]
        diff = s["_diff"]
        ig2 = 1.0 / g**2
        Dc = ig2 / self.Ct**4 + 1.0 / s["lo"] ** 2
        if self.has_cmax:
            Dc = Dc + 1.0 / s["hi"] ** 2
        E = (2.0 / self.Ct**2 * ig2)[..., None] * diff
        # position block: g-constraints give 4 d d^T / g^2 + 2 / g per link
        blk = 4.0 * diff[..., :, None] * diff[..., None, :] * ig2[..., None, None]
        blk = blk + (2.0 / g)[..., None, None] * np.eye(2)
        per_slot = np.zeros((self.P, 2, 2))
        np.add.at(per_slot, self.pidx.reshape(-1), blk.reshape(-1, 2, 2))
        Y = np.zeros((self.c0, self.c0))
        slots = np.arange(self.P)
        Y.reshape(self.P, 2, self.P, 2)[slots, :, slots, :] = per_slot
        if len(self.di):
            sd = s["disp"]
            dv = s["_dvec"]
            free = ~self.anchored
            if np.any(free):
                i, j = self.di[free], self.dj[free]
                vid = np.stack([2 * i, 2 * i + 1, 2 * j, 2 * j + 1], axis=-1)
                d = dv[free]
                gv = np.concatenate([-2 * d, 2 * d], axis=-1)
                sf = sd[free]
                outer = gv[:, :, None] * gv[:, None, :] / sf[:, None, None] ** 2
                outer = outer + (2.0 / sf)[:, None, None] * np.array(
                    [[1, 0, -1, 0], [0, 1, 0, -1], [-1, 0, 1, 0], [0, -1, 0, 1]], float)
                np.add.at(Y, (vid[:, :, None], vid[:, None, :]), outer)
            if np.any(self.anchored):
                i = self.di[self.anchored]
                vid = np.stack([2 * i, 2 * i + 1], axis=-1)
                gv = -2 * dv[self.anchored]
                sa = sd[self.anchored]
                outer = gv[:, :, None] * gv[:, None, :] / sa[:, None, None] ** 2
                outer = outer + (2.0 / sa)[:, None, None] * np.eye(2)
                np.add.at(Y, (vid[:, :, None], vid[:, None, :]), outer)
        return {"Dc": Dc, "kap": kap, "E": E, "Y": Y, "w": w, "sigma": 1.0 / sr}

    def newton_direction(self, hess, grad):
        """Solve the barrier Newton system ``(H0 + sum_u v_u v_u^T) dz = -grad``.

        ``H0`` (everything but the rank-one rate terms; no R entries) is
        inverted by block elimination: each (n, u) c-block is
        diagonal-plus-rank-one (Sherman-Morrison), which leaves a dense Schur
        complement on the positions. With ``xi = W^T a - sigma dR`` the rate
        terms reduce to a U x U system plus a scalar equation for ``dR``.
        """
        Ne, U, M = self.shape
        Dc, kap, E, Y, w, sigma = (hess[k] for k in ("Dc", "kap", "E", "Y", "w", "sigma"))
        ny = self.c0
        iD = 1.0 / Dc
        rho = kap / (1.0 + kap * iD.sum(axis=-1))             # (Ne, U)

        def b_inv(r):                                         # r: (Ne, U, M, k)
            proj = np.einsum("num,numk->nuk", iD, r)
            return iD[..., None] * r - (rho[..., None] * proj)[:, :, None, :] * iD[..., None]

        yidx = 2 * self.pidx[..., None] + np.arange(2)        # (Ne, U, M, 2)

        def ct(r):                                            # C^T r -> (ny, k)
            out = np.zeros((ny, r.shape[-1]))
            np.add.at(out, yidx.reshape(-1), (E[..., None] * r[..., None, :]).reshape(-1, r.shape[-1]))
            return out

        def c_apply(y):                                       # C y -> (Ne, U, M, k)
            return np.einsum("numa,numak->numk", E, y[yidx])

        # Schur complement S = Y - C^T B^-1 C
        S = Y.copy()
        diag_part = np.einsum("numa,numb,num->numab", E, E, iD)
        per_slot = np.zeros((self.P, 2, 2))
        np.add.at(per_slot, self.pidx.reshape(-1), diag_part.reshape(-1, 2, 2))
        slots = np.arange(self.P)
        S.reshape(self.P, 2, self.P, 2)[slots, :, slots, :] -= per_slot
        f = (E * iD[..., None]).reshape(Ne, U, 2 * M)         # C^T zeta per (n, u)
        F = np.einsum("nu,nui,nuj->nij", rho, f, f)
        ys = (2 * self.slots[..., None] + np.arange(2)).reshape(Ne, 2 * M)
        np.add.at(S, (ys[:, :, None], ys[:, None, :]), F)
        ds = np.sqrt(np.diag(S))
        try:
            fs = scipy.linalg.cho_factor(S / ds[:, None] / ds[None, :], lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("reduced Newton system is not positive definite") from exc

        # right-hand sides: column 0 the gradient, column 1+u the vector w_u
        rc = np.zeros((Ne, U, M, 1 + U))
        rc[..., 0] = grad[self.c0: self.c0 + self.nc].reshape(Ne, U, M)
        rc[:, np.arange(U), :, 1 + np.arange(U)] = np.broadcast_to(w.T[:, :, None], (U, Ne, M))
        ry = np.zeros((ny, 1 + U))
        ry[:, 0] = grad[:ny]
        br = b_inv(rc)
        sol_y = scipy.linalg.cho_solve(fs, (ry - ct(br)) / ds[:, None], check_finite=False) / ds[:, None]
        sol_c = b_inv(rc - c_apply(sol_y))
        h0_c, h0_y = sol_c[..., 0], sol_y[:, 0]
        Hw_c, Hw_y = sol_c[..., 1:], sol_y[:, 1:]
        Mmat = np.einsum("nu,numk->uk", w, Hw_c)
        h = np.einsum("nu,num->u", w, h0_c)
        # with eta = sigma * xi the (xi, dR) system becomes
        # A eta + 1 dR = -h / sigma, 1^T eta = g_R, A = S^-1 (I + M) S^-1
        A = (np.eye(U) + Mmat) / sigma[:, None] / sigma[None, :]
        A = 0.5 * (A + A.T)
        da = np.sqrt(np.diag(A))
        try:
            fa = scipy.linalg.cho_factor(A / da[:, None] / da[None, :], lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("rate-coupling system is not positive definite") from exc
        solve_a = lambda v: scipy.linalg.cho_solve(fa, v / da, check_finite=False) / da
        p1 = solve_a(-h / sigma)
        p2 = solve_a(np.ones(U))
        dR = (np.sum(p1) - grad[self.iR]) / np.sum(p2)
        xi = (p1 - dR * p2) / sigma
        dz = np.empty(self.n)
        dz[:ny] = -(h0_y + Hw_y @ xi)
        dz[self.c0: self.c0 + self.nc] = -(h0_c + Hw_c @ xi).reshape(-1)
        dz[self.iR] = dR
        return dz

    def slack_change(self, s, z, dz):
        """Exact constraint changes along ``dz`` (no cancellation)."""
        dX, dC, dR = self.split(dz)
        dS = dC.sum(axis=-1)
        ratio = self.gam * dS / (1.0 + self.gam * s["_S"])
        with np.errstate(invalid="ignore", divide="ignore"):
            drate = self.alpha * np.log1p(ratio).sum(axis=0) - dR
        dXg = dX[self.pidx]
        dg = -dC / self.Ct**2 - np.sum(2 * s["_diff"] * dXg + dXg**2, axis=-1)
        if len(self.di):
            other = np.zeros((len(self.dj), 2))
            free = ~self.anchored
            other[free] = dX[self.dj[free]]
            ddv = dX[self.di] - other
            ddisp = -np.sum(2 * s["_dvec"] * ddv + ddv**2, axis=-1)
        else:
            ddisp = np.zeros(0)
        out = {"rate": drate, "g": dg, "disp": ddisp, "lo": dC}
        out["hi"] = -dC if self.has_cmax else np.zeros(0)
        return out


def _strict_start(bar: _Barrier, spec: SubproblemSpec):
    """Strictly feasible scaled point from ``spec.start``."""
    L = bar.scale
    X = spec.start.reshape(-1, 2) / L
    if len(bar.di):
        if np.any(bar.dsq <= 0):
            raise InfeasibleError("zero displacement budget leaves no strictly feasible point")
        if spec.mode == "joint":
            Ne, M = spec.num_slots, spec.num_uavs
            Xs = X.reshape(Ne, M, 2).copy()
            steps = np.diff(Xs, axis=0)
            lim = np.sqrt(bar.dsq).reshape(Ne - 1, M)
            norm = np.linalg.norm(steps, axis=-1)
            shrink = np.minimum(1.0, 0.999 * lim / np.maximum(norm, 1e-300))
            Xs[1:] = Xs[0] + np.cumsum(steps * shrink[..., None], axis=0)
            X = Xs.reshape(-1, 2)
        else:
            off = X - bar.anchor
            norm = np.linalg.norm(off, axis=-1)
            lim = np.sqrt(bar.dsq)
            shrink = np.minimum(1.0, 0.999 * lim / np.maximum(norm, 1e-300))
            X = bar.anchor + off * shrink[:, None]
    diff = X[bar.pidx] - bar.A[:, :, None, :]
    dsq = np.sum(diff**2, axis=-1) + bar.H2
    cap = 2 * bar.Ct - bar.Ct**2 * dsq
    if np.any(cap <= bar.cmin):
        raise InfeasibleError("start positions too far from the linearization point")
    C = np.minimum(0.99 / dsq, bar.cmin + 0.99 * (cap - bar.cmin))
    if bar.has_cmax:
        C = np.minimum(C, bar.cmin + 0.99 * (bar.cmax - bar.cmin))
    z = np.zeros(bar.n)
    z[: bar.c0] = X.reshape(-1)
    z[bar.c0: bar.c0 + bar.nc] = C.reshape(-1)
    rates = bar.alpha * np.log1p(bar.gam * C.sum(-1)).sum(axis=0)
    z[bar.iR] = rates.min() - 1e-6
    return z


def solve_convex_subproblem(spec: SubproblemSpec, gap_tol=1e-10, newton_tol=1e-8,
                            stat_tol=1e-9, max_newton=200, max_total=4000) -> SubproblemSolution:
    """Primal log-barrier interior point for one convex surrogate.

    Barrier weight ``t`` starts at 1 and grows 10x per stage until the
    duality-gap bound ``m/t`` is below ``gap_tol`` (bps/Hz). Each stage is
    centred by damped Newton steps with Armijo backtracking (factor 0.5,
    slope 0.01) until ``decrement^2 / 2 <= newton_tol``; the last stage is
    additionally centred until ``max|grad| / t <= stat_tol`` so the recovered
    multipliers satisfy stationarity.
    """
    bar = _Barrier(spec)
    z = _strict_start(bar, spec)
    s = bar.slacks(z)
    if not bar.feasible(s):
        raise InfeasibleError("could not construct a strictly feasible start")
    m = sum(s[k].size for k in ("rate", "g", "disp", "lo", "hi"))
    t = 1.0
    total = 0
    while True:
        last = m / t <= gap_tol
        refine = 0
        z, s = _recenter_rate(bar, z, s, t)
        for _ in range(max_newton):
            grad = bar.gradient(s, t)
            gnorm = float(np.max(np.abs(grad)))
            hess = bar.hessian(s)
            dz = bar.newton_direction(hess, grad)
            slope = float(grad @ dz)
            if not np.all(np.isfinite(dz)) or slope > 0:
                raise NumericalError("Newton system produced a non-descent direction")
            if -slope / 2 <= newton_tol:
                if not last or gnorm / t <= stat_tol or refine >= 20:
                    break
                # inside the quadratic region the barrier value is dominated by
                # round-off at large t; take pure Newton steps while the
                # gradient keeps shrinking
                z_new, s_new = _feasible_step(bar, s, z, dz)
                if float(np.max(np.abs(bar.gradient(s_new, t)))) >= gnorm:
                    break
                z, s = z_new, s_new
                refine += 1
                total += 1
                continue
            step = 1.0
            ds = bar.slack_change(s, z, dz)
            while not _inside(ds, s):
                step *= 0.5
                ds = bar.slack_change(s, z, step * dz)
            while True:
                dphi = -t * step * dz[bar.iR] - sum(np.sum(np.log1p(ds[k] / s[k])) for k in ds)
                if dphi <= 0.01 * step * slope or step < 1e-14:
                    break
                step *= 0.5
                ds = bar.slack_change(s, z, step * dz)
            if step < 1e-14:
                break
            z = z + step * dz
            s = bar.advance(s, z, ds)
            z, s = _recenter_rate(bar, z, s, t)
            total += 1
            if total > max_total:
                raise NonConvergenceError("barrier solver hit its Newton-step limit",
                                          best=_finish(bar, z, s, t, total))
        if last:
            break
        t *= 10.0
    return _finish(bar, z, s, t, total)


def _recenter_rate(bar, z, s, t):
    """Exact barrier minimization over the epigraph variable R alone.

    Moving R by ``delta`` solves ``sum_u 1/(s_u - delta) = t``; the root
    ``y = min(s) - delta`` lies in [1/t, U/t].
    """
    sr = s["rate"]
    smin = float(np.min(sr))
    gap = sr - smin
    f = lambda y: float(np.sum(1.0 / (gap + y))) - t
    lo, hi = 1.0 / t, len(sr) / t
    y = lo if f(lo) <= 0 else (hi if f(hi) >= 0 else scipy.optimize.brentq(f, lo, hi, xtol=1e-15 * hi, rtol=1e-13))
    delta = smin - y
    z = z.copy()
    z[bar.iR] += delta
    s = dict(s)
    s["rate"] = gap + y
    return z, s


def _inside(ds, s, keep=0.01):
    """Strictly feasible and no slack shrinks below ``keep`` of its value."""
    return np.all(np.isfinite(ds["rate"])) and all(np.all(ds[k] / s[k] >= keep - 1.0) for k in ds)


def _feasible_step(bar, s, z, dz):
    step = 1.0
    ds = bar.slack_change(s, z, dz)
    while not _inside(ds, s):
        step *= 0.5
        ds = bar.slack_change(s, z, step * dz)
    z = z + step * dz
    return z, bar.advance(s, z, ds)


def _finish(bar: _Barrier, z, s, t, total) -> SubproblemSolution:
    """Recover multipliers, tighten c onto the surrogate boundary, report KKT."""
    spec = bar.spec
    L = bar.scale
    fams = ("rate", "g", "disp", "lo", "hi")
    duals = {k: 1.0 / (t * s[k]) for k in fams}
    X, C, R_bar = bar.split(z)
    diff = s["_diff"]
    cap = 2 * bar.Ct - bar.Ct**2 * (np.sum(diff**2, axis=-1) + bar.H2)
    # a hair inside the cap: with a tiny c_tilde the surrogate bound 2/c_tilde is
    # huge and c placed exactly on the cap is only feasible up to roundoff
    cap = cap - POLISH_MARGIN * np.abs(cap)
    C_pol = np.maximum(cap, C)
    if bar.has_cmax:
        C_pol = np.minimum(C_pol, bar.cmax)
    rates = bar.alpha * np.log1p(bar.gam * C_pol.sum(-1)).sum(axis=0)
    z_pol = z.copy()
    z_pol[bar.c0: bar.c0 + bar.nc] = C_pol.reshape(-1)
    z_pol[bar.iR] = rates.min()
    s_pol = bar.slacks(z_pol)

    stat = bar.constraint_gradient(s_pol, duals)
    stat[bar.iR] += 1.0
    viol = max(0.0, *(float(np.max(-s_pol[k], initial=0.0)) for k in fams)) + 0.0
    kkt = {
        "stationarity": float(np.max(np.abs(stat))),
        "primal": viol * L**2,
        "dual": float(max(np.max(-duals[k], initial=0.0) for k in fams)),
        "complementarity": float(max(np.max(np.abs(duals[k] * s_pol[k]), initial=0.0) for k in fams)),
        "gap_bound": float(sum(s[k].size for k in fams) / t),
    }
    slots, M = spec.num_slots, spec.num_uavs
    return SubproblemSolution(
        positions=(X * L).reshape(slots, M, 2),
        c=C_pol / L**2,
        rate=float(rates.min()),
        mu=duals["rate"],
        lam=duals["g"] / L**2,
        beta=duals["disp"] / L**2,
        box_lower=duals["lo"] * L**2,
        box_upper=duals["hi"] * L**2,
        kkt=kkt,
        barrier_rate=float(R_bar),
        newton_steps=total,
        barrier_t=t,
    )


def verify_weighted_average(solution: SubproblemSolution, spec: SubproblemSpec, rel_tol=1e-3) -> dict:
    """Check each UAV position against the multiplier-weighted average.

    For every position slot the right-hand side is
    ``(sum lam * user + sum beta * neighbour) / (sum lam + sum beta)``;
    slots whose weights all vanish are reported as indeterminate.
    """
    Ne, U, M = spec.c_tilde.shape
    X = solution.positions.reshape(-1, 2)
    P = X.shape[0]
    num = np.zeros((P, 2))
    den = np.zeros(P)
    pidx = np.broadcast_to(spec.slot_index()[:, None, :], (Ne, U, M)).reshape(-1)
    lam = solution.lam.reshape(-1)
    users = np.broadcast_to(spec.users[:, :, None, :], (Ne, U, M, 2)).reshape(-1, 2)
    np.add.at(num, pidx, lam[:, None] * users)
    np.add.at(den, pidx, lam)
    pi, pj, _ = spec.displacement_pairs()
    for b, i, j in zip(solution.beta, pi, pj):
        other = spec.anchor[i % M] if j < 0 else X[j]
        num[i] += b * other
        den[i] += b
        if j >= 0:
            num[j] += b * X[i]
            den[j] += b
    good = np.isfinite(den) & (den > 1e-300)
    rhs = np.full((P, 2), np.nan)
    rhs[good] = num[good] / den[good, None]
    res = np.abs(X - rhs)
    tol = rel_tol * spec.arena_diagonal
    res_x = float(np.max(res[good, 0], initial=0.0))
    res_y = float(np.max(res[good, 1], initial=0.0))
    return {
        "residual_x": res_x,
        "residual_y": res_y,
        "tolerance": tol,
        "indeterminate": [int(p) for p in np.flatnonzero(~good)],
        "passed": bool(res_x <= tol and res_y <= tol),
        "rhs": rhs,
    }


@dataclass
class ScaTrace:
    """Outer-loop history; ``rates[0]`` is the objective at the initial placement."""

    mode: str
    rates: list
    solutions: list = field(default_factory=list)
    specs: list = field(default_factory=list)
    converged: bool = False

    @property
    def final(self) -> SubproblemSolution:
        return self.solutions[-1]

    @property
    def final_spec(self) -> SubproblemSpec:
        return self.specs[-1]


def _slot_distance_sq(positions, users, altitude, mode):
    """Squared distances (Ne, U, M) for positions (slots, M, 2)."""
    pos = positions if mode == "joint" else np.broadcast_to(positions, (users.shape[0],) + positions.shape[1:])
    diff = pos[:, None, :, :] - users[:, :, None, :]
    return np.sum(diff**2, axis=-1) + altitude**2


def _separate(positions, users, mode, step=GROUND_JITTER):
    """Nudge ground UAVs off any user they sit on so every distance is positive."""
    positions = np.array(positions)
    for _ in range(100):
        hit = _slot_distance_sq(positions, users, 0.0, mode) == 0      # (Ne, U, M)
        if not hit.any():
            return positions
        if mode == "joint":
            slots, uavs = np.nonzero(hit.any(axis=1))
        else:
            uavs = np.flatnonzero(hit.any(axis=(0, 1)))
            slots = np.zeros_like(uavs)
        positions[slots, uavs, 0] += step
    raise NumericalError("could not separate ground UAVs from users")


def surrogate_objective(positions, users, config: ScenarioConfig, mode) -> float:
    """Min-rate objective with ``c = 1/d^2`` (the exact lower-bound objective)."""
    dsq = _slot_distance_sq(np.asarray(positions, float), users, config.altitude, mode)
    gamma = snr_coefficient(config)
    Ne = users.shape[0]
    rates = np.log2(1.0 + gamma * np.sum(1.0 / dsq, axis=-1)).sum(axis=0) / (Ne * config.num_groups)
    return float(rates.min())


def tightness(solution: SubproblemSolution, spec: SubproblemSpec) -> float:
    """max |c d^2 - 1| at the solution."""
    dsq = _slot_distance_sq(solution.positions, spec.users, spec.altitude, spec.mode)
    return float(np.max(np.abs(solution.c * dsq - 1.0)))


def run_sca(tracks: EpisodeTracks, config: ScenarioConfig, mode, init, eps=1e-3, max_outer=50,
            episode=None, anchor=None, budgets=None, tightness_tol=1e-4, gap_tol=1e-10,
            max_joint_episodes=MAX_JOINT_EPISODES, monotone_tol=1e-9, dump=None) -> ScaTrace:
    """Outer SCA loop.

    ``init`` is the starting placement (slots, M, 2). Tangent points start at
    ``1/d^2`` of that placement and are then set to the last ``c``. Stops
    once the min-rate gain is at most ``eps`` and every ``c d^2`` is within
    ``tightness_tol`` of one. ``dump`` may be a list that collects
    (spec, solution) JSON records.
    """
    users = _mode_users(tracks, mode, episode)
    if mode == "joint" and users.shape[0] > max_joint_episodes:
        raise ConfigError(
            f"joint mode with N={users.shape[0]} exceeds the desk-scale limit {max_joint_episodes}; "
            "pass max_joint_episodes to override")
    slots = users.shape[0] if mode == "joint" else 1
    positions = np.asarray(init, dtype=float).reshape(slots, config.num_uavs, 2)
    ground = config.altitude == 0
    if ground:
        # the rate grows without bound as a ground unit nears a user, so the
        # surrogate keeps every link at least GROUND_JITTER long
        positions = _separate(positions, users, mode)
        config = config.replace(altitude=GROUND_JITTER)
    dsq = _slot_distance_sq(positions, users, config.altitude, mode)
    c_max = 1.0 / config.altitude**2 if config.altitude > 0 else math.inf
    c_tilde = np.clip(1.0 / dsq, C_MIN, c_max)
    trace = ScaTrace(mode, [surrogate_objective(positions, users, config, mode)])
    for _ in range(max_outer):
        spec = build_subproblem(tracks, config, c_tilde, mode, positions, episode=episode,
                                anchor=anchor, budgets=budgets)
        sol = solve_convex_subproblem(spec, gap_tol=gap_tol)
        if dump is not None:
            dump.append({"spec": spec.to_json(), "solution": sol.to_json()})
        prev = trace.rates[-1]
        if sol.rate < prev - monotone_tol:
            raise NumericalError(
                f"SCA objective decreased from {prev!r} to {sol.rate!r}: subproblem tolerance breached")
        trace.rates.append(sol.rate)
        trace.solutions.append(sol)
        trace.specs.append(spec)
        c_tilde = np.clip(sol.c, C_MIN, c_max)
        positions = sol.positions
        if sol.rate - prev <= eps and tightness(sol, spec) <= tightness_tol:
            trace.converged = True
            break
    if ground:
        # a unit parked on a user moves GROUND_JITTER aside, which leaves that
        # link exactly as long as the surrogate assumed
        trace.final.positions = _separate(trace.final.positions, users, mode)
    return trace


def dump_subproblems(records, path) -> None:
    Path(path).write_text(json.dumps(records))
