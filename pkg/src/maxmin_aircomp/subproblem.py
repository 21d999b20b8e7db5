"""Linearized convex subproblem of the SCA scheme and its interior-point solver.

At a reference allocation ``b0`` every (pair, element) entry whose
discriminant gain is non-negligible gets a slack ``S`` and the d.c.
constraint

    sig2_m s_m^2 + sum_k h_k^2 dl2_km b_km^2 + n0 <= Qhat(s_m, S)

where ``Qhat`` is the first-order expansion of ``c s^2 / S`` at the
reference. Since ``c s^2 / S`` is jointly convex for ``S > 0``, ``Qhat``
is a global under-estimator and every feasible point of the subproblem is
feasible for the original problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from . import kernels
from .errors import DomainError, SolverFailureError
from .model import SystemInstance, class_pairs

START_SHRINK = 1e-3
ACTIVE_TOL = 1e-7
NEWTON_TOL = 1e-16
NEWTON_FLOOR = 1e-8


@dataclass(frozen=True)
class SubproblemSolverConfig:
    barrier_tolerance: float = 1e-8
    kkt_tolerance: float = 1e-6
    max_newton_steps: int = 200
    barrier_reduction: float = 10.0


@dataclass(frozen=True)
class LinearizedQ:
    """Affine under-estimator ``coef_s * s + coef_t * T`` of ``c s^2 / T``."""

    coef_s: float
    coef_t: float

    def __call__(self, s, T):
        return self.coef_s * s + self.coef_t * T


def q_value(instance, pair, m, s, T):
    l, lp = pair
    c = (instance.stats.class_means[l, m] - instance.stats.class_means[lp, m]) ** 2
    return c * s**2 / T


def linearize_q(b_ref, t_ref, instance: SystemInstance, pair, m, eps_t=1e-12) -> LinearizedQ:
    """Tangent plane of ``Q(b, T) = c (h.b)^2 / T`` at ``(b_ref, t_ref)``.

    ``b_ref`` is the K-vector of slot m.
    """
    if not t_ref >= eps_t:
        raise DomainError(f"reference slack {t_ref!r} is below the floor {eps_t!r}")
    l, lp = pair
    c = (instance.stats.class_means[l, m] - instance.stats.class_means[lp, m]) ** 2
    s0 = float(instance.channel.gains @ np.asarray(b_ref, dtype=float))
    return LinearizedQ(2.0 * c * s0 / t_ref, -c * s0**2 / t_ref**2)


def element_gains(instance, b_cols, elements):
    """Per-pair gains (num_pairs, len(elements)) and received variances of selected slots."""
    st = instance.stats
    h = instance.channel.gains
    s = h @ b_cols
    var = (
        s**2 * st.feature_variances[elements]
        + np.sum((h[:, None] * b_cols) ** 2 * st.sensing_noise_variances[:, elements], axis=0)
        + instance.channel.channel_noise_variance
    )
    mu = st.class_means[:, elements]
    pairs = class_pairs(st.num_classes)
    i = np.array([p[0] for p in pairs])
    j = np.array([p[1] for p in pairs])
    c = (mu[i] - mu[j]) ** 2
    return c * (s**2 / var)[None, :], var, s, c


@dataclass(frozen=True)
class Subproblem:
    """One linearized convex program; see ``kernels`` for the variable layout."""

    instance: SystemInstance
    elements: np.ndarray  # global indices of the slots in this subproblem
    has_t: bool  # True: maximize T (max-min); False: maximize sum of slacks
    use_total: bool
    cap1: np.ndarray
    cap2: np.ndarray
    e_pair: np.ndarray
    e_elem: np.ndarray  # local slot index of each entry
    e_as: np.ndarray
    e_at: np.ndarray
    e_scale: np.ndarray
    num_pairs: int
    eps_t: float
    b_ref: np.ndarray  # (K, Ml)
    s_ref: np.ndarray  # (E,) tight slacks = true gains at b_ref

    @property
    def num_devices(self):
        return self.b_ref.shape[0]

    @property
    def num_slots(self):
        return self.b_ref.shape[1]

    @property
    def num_entries(self):
        return self.e_pair.size

    @property
    def num_vars(self):
        return self.num_devices * self.num_slots + self.num_entries + int(self.has_t)

    def _data(self):
        inst = self.instance
        return (
            self.num_devices,
            self.num_slots,
            inst.channel.gains,
            np.ascontiguousarray(inst.stats.feature_variances[self.elements]),
            np.ascontiguousarray(inst.stats.sensing_noise_variances[:, self.elements]),
            inst.channel.channel_noise_variance,
            self.cap1,
            self.cap2,
            self.use_total,
            self.e_pair,
            self.e_elem,
            self.e_as,
            self.e_at,
            self.e_scale,
            self.num_pairs,
            self.eps_t,
            self.has_t,
        )

    def constraints(self, z):
        """Normalized constraint values and Jacobian at ``z``."""
        return kernels.subproblem_constraints_numpy(np.asarray(z, dtype=float), *self._data())

    def barrier(self, z, t, want_derivs=True):
        return kernels.barrier_oracle(z, float(t), want_derivs, *self._data())

    def objective_vector(self):
        c = np.zeros(self.num_vars)
        KM = self.num_devices * self.num_slots
        if self.has_t:
            c[-1] = -1.0
        else:
            c[KM:KM + self.num_entries] = -1.0
        return c

    def pack(self, b, slacks, T=None):
        parts = [np.ravel(b), np.asarray(slacks, dtype=float)]
        if self.has_t:
            parts.append([T])
        return np.concatenate(parts)

    def unpack(self, z):
        KM = self.num_devices * self.num_slots
        b = z[:KM].reshape(self.num_devices, self.num_slots)
        S = z[KM:KM + self.num_entries]
        T = z[-1] if self.has_t else float(np.sum(S))
        return b, S, float(T)

    def pair_sums(self, slacks):
        return np.bincount(self.e_pair, weights=slacks, minlength=self.num_pairs)

    def reference_point(self):
        """Tight reference: slacks at the true gains, T at the smallest pair sum."""
        T = float(np.min(self.pair_sums(self.s_ref))) if self.has_t else None
        return self.pack(self.b_ref, self.s_ref, T)

    def start_point(self):
        """Strictly feasible start obtained by shrinking the tight reference."""
        b = np.array(self.b_ref)
        ratio = np.max(b**2 / self.cap1[:, None])
        if self.use_total:
            ratio = max(ratio, np.max(np.sum(b**2, axis=1) / self.cap2))
        if ratio > 1.0 - 1e-12:
            b *= np.sqrt((1.0 - 1e-10) / ratio)
        S = self.s_ref * (1.0 - START_SHRINK)
        T = None
        if self.has_t:
            lo = float(np.min(self.pair_sums(S)))
            T = lo - START_SHRINK * max(abs(lo), 1e-12)
        return self.pack(b, S, T)


def build_subproblem(instance: SystemInstance, b_ref, maxmin=True, elements=None, eps_t=1e-12) -> Subproblem:
    """Linearize at ``b_ref`` (K, len(elements)) with slacks at the true gains.

    ``maxmin=True`` gives the epigraph form with per-slot and total caps.
    ``maxmin=False`` maximizes the sum of slacks with the per-slot cap
    ``min(P_k, Ptot_k / M)`` and no coupling between slots.
    """
    K, M = instance.shape
    elements = np.arange(M) if elements is None else np.asarray(elements, dtype=np.int64)
    b_ref = np.asarray(b_ref, dtype=float).reshape(K, elements.size)
    gains, var, s, c = element_gains(instance, b_ref, elements)
    active = gains > 2.0 * eps_t
    e_pair, e_elem = np.nonzero(active)
    g = gains[e_pair, e_elem]
    cc = c[e_pair, e_elem]
    s0 = s[e_elem]
    budget = instance.budget
    if maxmin:
        cap1 = np.array(budget.per_slot)
        cap2 = np.array(budget.total)
    else:
        cap1 = np.minimum(budget.per_slot, budget.total / M)
        cap2 = cap1.copy()
    return Subproblem(
        instance=instance,
        elements=elements,
        has_t=maxmin,
        use_total=maxmin,
        cap1=cap1,
        cap2=cap2,
        e_pair=e_pair.astype(np.int64),
        e_elem=e_elem.astype(np.int64),
        e_as=2.0 * cc * s0 / g,
        e_at=cc * s0**2 / g**2,
        e_scale=np.array(var[e_elem]),
        num_pairs=gains.shape[0],
        eps_t=float(eps_t),
        b_ref=b_ref,
        s_ref=g,
    )


@dataclass(frozen=True)
class SubproblemSolution:
    b: np.ndarray
    T: float
    slacks: np.ndarray
    kkt_residual: float
    newton_steps: int
    from_reference: bool = False


def estimate_multipliers(model: Subproblem, z, g=None, J=None, hint=None, rel=1e-6):
    """Non-negative least-squares multipliers on the near-active constraints.

    Without ``hint`` a constraint is near-active when ``g >= -ACTIVE_TOL``;
    with barrier multipliers as ``hint`` it is active when its hint exceeds
    ``rel * max(1, max(hint))``.
    """
    if g is None:
        g, J = model.constraints(z)
    lam = np.zeros(g.size)
    if hint is None:
        active = np.flatnonzero(g >= -ACTIVE_TOL)
    else:
        active = np.flatnonzero(hint > rel * max(1.0, float(np.max(hint))))
    if active.size:
        lam[active], _ = nnls(J[active].T, -model.objective_vector(), maxiter=50 * max(active.size, 1))
    return lam


def kkt_residual(model: Subproblem, z, multipliers=None) -> float:
    """Largest scaled stationarity, complementarity and feasibility residual."""
    z = np.asarray(z, dtype=float)
    g, J = model.constraints(z)
    lam = estimate_multipliers(model, z, g, J) if multipliers is None else np.asarray(multipliers)
    c = model.objective_vector()
    weighted = np.abs(lam[:, None] * J)
    stat = np.max(np.abs(c + J.T @ lam)) / max(1.0, np.max(weighted) if weighted.size else 0.0)
    comp = np.max(np.abs(lam * g)) / max(1.0, abs(c @ z)) if g.size else 0.0
    feas = max(0.0, float(np.max(g))) if g.size else 0.0
    return float(max(stat, comp, feas))


def certify(model: Subproblem, z, t) -> float:
    """Smallest KKT residual over a few candidate multiplier vectors.

    Any non-negative multiplier vector is a valid certificate. The barrier
    estimate ``1 / (t * -g)`` degrades when the Hessian is badly conditioned,
    so NNLS refits are tried as well: first one over all constraints with
    complementarity ``|g_i| lam_i`` penalized, then refits on active sets
    cut at each decade of the barrier multipliers.
    """
    g, J = model.constraints(z)
    lam = 1.0 / (t * -g)
    best = kkt_residual(model, z, lam)
    rhs = np.concatenate([-model.objective_vector(), np.zeros(g.size)])
    for rho in (1.0, 1e2, 1e4):
        if best <= 1e-9:
            break
        A = np.vstack([J.T, np.diag(rho * np.abs(g))])
        lam_p, _ = nnls(A, rhs, maxiter=100 * g.size)
        best = min(best, kkt_residual(model, z, lam_p))
    for j in range(2, 13):
        if best <= 1e-9:
            break
        best = min(best, kkt_residual(model, z, estimate_multipliers(model, z, g, J, hint=lam, rel=10.0**-j)))
    return best


def _center(model, z, t, max_steps):
    val, grad, H = model.barrier(z, t)
    prev = np.inf
    for step in range(max_steps):
        try:
            dz = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            dz = -np.linalg.lstsq(H, grad, rcond=None)[0]
        lam2 = -grad @ dz
        if lam2 / 2.0 <= NEWTON_TOL or (lam2 / 2.0 <= NEWTON_FLOOR and lam2 >= 0.5 * prev):
            # converged, or stuck at the rounding floor of the gradient
            return z, step
        prev = lam2
        a = 1.0
        slope = grad @ dz
        # inside the quadratic region of a self-concordant barrier a full step
        # is safe; the value test is skipped there because t * T swamps
        # the decrease in floating point
        pure = lam2 < 0.25
        while True:
            znew = z + a * dz
            vnew, _, _ = model.barrier(znew, t, False)
            if np.isfinite(vnew) and (pure or vnew <= val + 0.25 * a * slope):
                break
            a *= 0.5
            if a < 1e-14:
                break
        if a < 1e-14:
            # no measurable decrease left; accept if already nearly centered
            if lam2 / 2.0 <= 1e-6:
                return z, step
            raise SolverFailureError(f"line search stalled (Newton decrement {lam2:.3e})", best=z)
        z = znew
        val, grad, H = model.barrier(z, t)
    raise SolverFailureError(f"centering did not converge in {max_steps} Newton steps", best=z)


def solve_subproblem(model: Subproblem, config: SubproblemSolverConfig = SubproblemSolverConfig()):
    """Maximize the subproblem objective with a primal log-barrier method."""
    z_ref = model.reference_point()
    if kkt_residual(model, z_ref) <= config.kkt_tolerance:
        b, S, T = model.unpack(z_ref)
        return SubproblemSolution(b, T, S, kkt_residual(model, z_ref), 0, from_reference=True)

    z = model.start_point()
    val, _, _ = model.barrier(z, 1.0, False)
    if not np.isfinite(val):
        raise SolverFailureError("start point is not strictly feasible")
    c = model.objective_vector()
    g, _ = model.constraints(z)
    mc = g.size
    t = mc / max(abs(c @ z), 1e-6)
    steps = 0
    while True:
        try:
            z, n = _center(model, z, t, config.max_newton_steps)
        except SolverFailureError as exc:
            raise SolverFailureError(str(exc), best=exc.best) from None
        steps += n
        if mc / t <= config.barrier_tolerance:
            break
        t *= config.barrier_reduction

    res = certify(model, z, t)
    if res > config.kkt_tolerance:
        raise SolverFailureError(f"KKT residual {res:.3e} above tolerance", best=z)
    b, S, T = model.unpack(z)
    return SubproblemSolution(b, T, S, res, steps)
