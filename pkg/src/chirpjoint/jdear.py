"""Joint Doppler estimation and ambiguity resolving across chirp sequences.

The slow-time samples of every sequence share one block-Vandermonde
column space, up to a per-mode phase rotation that grows with the
sequence offset. Stacking per-sequence Hankel matrices exposes that
structure; the mode phase steps are then fitted to the estimated signal
subspace by separable nonlinear least squares::

    minimise  tr(P_perp(A(phi)) U U^H)  over the unwrapped phase steps phi

Phase steps are kept unwrapped, so the sequence-offset rotation
``exp(j 2 pi f_d T_l)`` is single valued and the fitted values carry the
integer ambiguity directly. Each target shows up as ``K_Tx`` DDM replicas;
these are grouped, compensated and combined into one velocity.

Sign convention: a mode with slow-time frequency ``f`` has phase step
``phi = 2 pi f T_ri`` and phasor ``exp(+j phi)``, matching the synthesized
beat signal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from chirpjoint.hankel import HankelParams, SubspaceEstimate, estimate_subspace, stack_blocks
from chirpjoint.scenario import (
    RadarScenario, doppler_to_velocity, require_valid, unambiguous_velocity, velocity_to_doppler,
)

logger = logging.getLogger(__name__)

DEGENERACY_CONDITION = 1e12
FD_STEP_RAD = 1e-6


class DegenerateModesError(ValueError):
    """Two modes produce (numerically) collinear manifold columns."""

    def __init__(self, pair, condition):
        self.pair = tuple(int(i) for i in pair)
        self.condition = float(condition)
        super().__init__(f"modes {self.pair} are degenerate (condition number {condition:.3g})")


class InitializationError(RuntimeError):
    pass


class GroupingError(RuntimeError):
    def __init__(self, message, cost=float("nan")):
        self.cost = cost
        super().__init__(message)


@dataclass(frozen=True)
class PhaseStep:
    value: float
    wrapped: bool = False

    @property
    def phasor(self) -> complex:
        return complex(np.exp(1j * self.value))

    def wrap(self) -> "PhaseStep":
        return PhaseStep(float(np.angle(self.phasor)), wrapped=True)


@dataclass
class ManifoldModel:
    """Unwrapped phase steps with their DDM transmitter labels.

    ``ddm_labels[j]`` is the (0-based) transmitter whose replica mode ``j``
    is; it fixes the Doppler seen by the sequence-offset rotation,
    ``f_d = phi / (2 pi T_ri) - f_ddm[label]``.
    """

    phase_steps: np.ndarray
    ddm_labels: np.ndarray
    scenario: RadarScenario
    hankel_params: HankelParams

    def __post_init__(self):
        self.phase_steps = np.atleast_1d(np.asarray(self.phase_steps, dtype=float))
        if self.ddm_labels is None:
            self.ddm_labels = np.zeros(self.phase_steps.size, dtype=int)
        self.ddm_labels = np.atleast_1d(np.asarray(self.ddm_labels, dtype=int))
        if self.ddm_labels.shape != self.phase_steps.shape:
            raise ValueError("one DDM label per phase step required")

    @property
    def order(self) -> int:
        return self.phase_steps.size

    @property
    def mode_frequencies_hz(self) -> np.ndarray:
        return self.phase_steps / (2 * np.pi * self.scenario.t_ri)

    @property
    def doppler_hz(self) -> np.ndarray:
        ddm = np.asarray(self.scenario.ddm.ddm_freqs_hz)
        return self.mode_frequencies_hz - ddm[self.ddm_labels]

    def with_phases(self, phases) -> "ManifoldModel":
        return ManifoldModel(np.asarray(phases, dtype=float), self.ddm_labels, self.scenario, self.hankel_params)


def _exponents(model: ManifoldModel) -> np.ndarray:
    """Phase of every manifold entry, shape ``(L, rows, d)``."""
    sc = model.scenario
    i = np.arange(model.hankel_params.rows)
    lag = sc.offsets - sc.offsets[0]
    return (i[None, :, None] * model.phase_steps[None, None, :]
            + 2 * np.pi * lag[:, None, None] * model.doppler_hz[None, None, :])


def build_manifold(m: ManifoldModel) -> np.ndarray:
    """Block manifold ``[M'; M' Theta_12; ...; M' Theta_1L]`` of shape ``(L rows) x d``."""
    return np.exp(1j * _exponents(m)).reshape(-1, m.order)


def _manifold_derivative(m: ManifoldModel, A: np.ndarray) -> np.ndarray:
    """Column-wise derivative of :func:`build_manifold` w.r.t. each phase step."""
    sc = m.scenario
    i = np.arange(m.hankel_params.rows)
    lag = (sc.offsets - sc.offsets[0]) / sc.t_ri
    factor = (i[None, :] + lag[:, None]).reshape(-1)
    return 1j * factor[:, None] * A


def _basis(U) -> np.ndarray:
    return U.basis if isinstance(U, SubspaceEstimate) else np.asarray(U)


def _orthonormalize(A: np.ndarray):
    Q, R = np.linalg.qr(A)
    sv = np.linalg.svd(R, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if cond > DEGENERACY_CONDITION:
        An = A / np.linalg.norm(A, axis=0)
        gram = np.abs(An.conj().T @ An)
        np.fill_diagonal(gram, -1)
        pair = np.unravel_index(np.argmax(gram), gram.shape)
        raise DegenerateModesError(sorted(pair), cond)
    return Q, R


def projector(A: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column span of ``A``."""
    Q, _ = _orthonormalize(A)
    return Q @ Q.conj().T


def projection_residual(model: ManifoldModel, U) -> np.ndarray:
    """``P_perp(A) U`` for the manifold of ``model``."""
    U = _basis(U)
    Q, _ = _orthonormalize(build_manifold(model))
    return U - Q @ (Q.conj().T @ U)


def snls_cost(phases, U, scenario: RadarScenario, hankel_params: HankelParams, labels=None) -> float:
    """Subspace-fitting cost ``tr(P_perp(A) U U^H)``; lies in ``[0, d]``."""
    model = ManifoldModel(phases, labels, scenario, hankel_params)
    if model.order != _basis(U).shape[1]:
        raise ValueError(f"{model.order} phases for a {_basis(U).shape[1]}-dimensional subspace")
    R = projection_residual(model, U)
    return float(np.vdot(R, R).real)


def _as_real(R: np.ndarray) -> np.ndarray:
    flat = R.reshape(-1)
    return np.concatenate([flat.real, flat.imag])


def residual_vector(model: ManifoldModel, U) -> np.ndarray:
    return _as_real(projection_residual(model, U))


def numerical_jacobian(model: ManifoldModel, U, step: float = FD_STEP_RAD) -> np.ndarray:
    """Central-difference Jacobian of :func:`residual_vector`."""
    phases = model.phase_steps
    cols = []
    for j in range(phases.size):
        up, down = phases.copy(), phases.copy()
        up[j] += step
        down[j] -= step
        cols.append((residual_vector(model.with_phases(up), U)
                     - residual_vector(model.with_phases(down), U)) / (2 * step))
    return np.stack(cols, axis=1)


def varpro_jacobian(model: ManifoldModel, U) -> np.ndarray:
    """Exact Jacobian of the variable-projection residual ``P_perp(A(phi)) U``.

    Each column of ``A`` depends on one phase only, so the derivative of
    the projector splits into two rank-one terms per parameter (Golub and
    Pereyra).
    """
    U = _basis(U)
    A = build_manifold(model)
    Q, R = _orthonormalize(A)
    dA = _manifold_derivative(model, A)
    res = U - Q @ (Q.conj().T @ U)
    coeffs = np.linalg.solve(R, Q.conj().T @ U)          # A^+ U, d x d
    pinv_h = Q @ np.linalg.inv(R).conj().T               # (A^+)^H
    perp_dA = dA - Q @ (Q.conj().T @ dA)
    cols = []
    for j in range(model.order):
        term1 = np.outer(perp_dA[:, j], coeffs[j])
        term2 = np.outer(pinv_h[:, j], dA[:, j].conj() @ res)
        cols.append(_as_real(-(term1 + term2)))
    return np.stack(cols, axis=1)


@dataclass
class SolverSettings:
    """Knobs of the Levenberg-Marquardt refinement and the initializer.

    ``search_interval_mps`` bounds the ambiguity hypotheses tried at
    initialization; ``None`` means the full extended unambiguous span
    centred on zero. Hypotheses scoring within ``hypothesis_sigmas``
    noise standard deviations of the best (at most
    ``hypotheses_checked``) are all refined and the lowest cost is kept.
    """

    max_iterations: int = 100
    gradient_tolerance: float = 1e-12
    step_tolerance: float = 1e-11
    lm_damping_init: float = 1e-3
    search_interval_mps: Optional[tuple] = None
    jacobian: str = "numerical"
    order_criterion: str = "mdl"
    grouping_tolerance_hz: Optional[float] = None
    rotation: str = "conjugate"
    hypotheses_checked: int = 8
    hypothesis_sigmas: float = 4.0

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be > 0")
        if self.jacobian not in ("numerical", "varpro"):
            raise ValueError(f"unknown jacobian {self.jacobian!r}")
        if self.hypotheses_checked < 1 or self.hypothesis_sigmas < 0:
            raise ValueError("hypotheses_checked must be >= 1 and hypothesis_sigmas >= 0")


@dataclass
class LMResult:
    phases: np.ndarray
    cost: float
    iterations: int
    converged: bool
    history: list


def levenberg_marquardt(model: ManifoldModel, U, settings: SolverSettings) -> LMResult:
    """Minimise :func:`snls_cost` from ``model``'s phases; accepted steps never raise the cost."""
    jac = varpro_jacobian if settings.jacobian == "varpro" else numerical_jacobian
    phi = model.phase_steps.copy()
    r = residual_vector(model, U)
    cost = float(r @ r)
    history = [cost]
    lam = settings.lm_damping_init
    converged = False
    it = 0
    for it in range(1, settings.max_iterations + 1):
        J = jac(model.with_phases(phi), U)
        grad = J.T @ r
        if np.max(np.abs(grad)) < settings.gradient_tolerance:
            converged = True
            break
        JTJ = J.T @ J
        scale = np.maximum(np.diag(JTJ), 1e-30)
        accepted = False
        while lam < 1e16:
            delta = np.linalg.solve(JTJ + lam * np.diag(scale), -grad)
            if np.max(np.abs(delta)) < settings.step_tolerance:
                converged = True
                break
            trial = phi + delta
            try:
                r_new = residual_vector(model.with_phases(trial), U)
            except DegenerateModesError:
                lam *= 10
                continue
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                phi, r, cost = trial, r_new, cost_new
                history.append(cost)
                lam = max(lam / 10, 1e-12)
                accepted = True
                break
            lam *= 10
        if converged:
            break
        if not accepted:
            # no descent direction left at machine precision
            converged = True
            break
    return LMResult(phi, cost, it, converged, history)


def _circ(x, period):
    if period is None:
        return x
    return np.mod(x + period / 2, period) - period / 2


@dataclass
class ReplicaGrouping:
    """Targets formed from DDM replica modes.

    ``groups[p][k]`` is the index of the mode that is transmitter ``k``'s
    replica of target ``p``; ``centres_hz[p]`` is the target's consensus
    Doppler.
    """

    groups: list
    centres_hz: np.ndarray
    cost: float
    max_spread_hz: float
    tie: bool = False


def _match_replicas(freqs_hz, ddm_hz, period=None, refine_iterations=10) -> ReplicaGrouping:
    """Partition modes into targets, one replica per transmitter, by min-cost matching.

    Every mode ``j`` read as transmitter ``k`` implies a Doppler
    ``freqs[j] - ddm[k]`` (modulo ``period`` when frequencies are wrapped).
    Centres are seeded greedily, then modes are assigned to
    (target, transmitter) slots by a linear assignment and centres
    re-estimated until the assignment is stable.
    """
    freqs = np.asarray(freqs_hz, dtype=float)
    ddm = np.asarray(ddm_hz, dtype=float)
    d, K = freqs.size, ddm.size
    if d == 0 or d % K:
        raise GroupingError(f"{d} modes cannot be split into groups of {K} replicas")
    P = d // K
    cand = freqs[:, None] - ddm[None, :]

    if K == 1:
        order = np.argsort(_circ(cand[:, 0], period) if period else cand[:, 0])
        groups = [[int(j)] for j in order]
        return ReplicaGrouping(groups, cand[order, 0], 0.0, 0.0)

    remaining = list(range(d))
    centres = []
    for _ in range(P):
        best = None
        for a in remaining:
            others = [j for j in remaining if j != a]
            for ka in range(K):
                c = cand[a, ka]
                labels = [k for k in range(K) if k != ka]
                cost = _circ(cand[np.ix_(others, labels)] - c, period) ** 2
                ri, ci = linear_sum_assignment(cost)
                total = cost[ri, ci].sum()
                if best is None or total < best[0]:
                    best = (total, c, [a] + [others[i] for i in ri])
        centres.append(best[1])
        remaining = [j for j in remaining if j not in best[2]]

    centres = np.asarray(centres)
    assign = None
    for _ in range(refine_iterations):
        slot_cost = _circ(cand[:, None, :] - centres[None, :, None], period) ** 2   # (d, P, K)
        rows, cols = linear_sum_assignment(slot_cost.reshape(d, P * K))
        new_assign = dict(zip(cols.tolist(), rows.tolist()))
        new_centres = np.array([
            centres[p] + np.mean([_circ(cand[new_assign[p * K + k], k] - centres[p], period) for k in range(K)])
            for p in range(P)])
        done = new_assign == assign and np.allclose(new_centres, centres, rtol=0, atol=1e-12)
        assign, centres = new_assign, new_centres
        if done:
            break

    groups = [[assign[p * K + k] for k in range(K)] for p in range(P)]
    devs = np.array([[_circ(cand[groups[p][k], k] - centres[p], period) for k in range(K)] for p in range(P)])
    order = np.argsort(centres)
    groups = [groups[p] for p in order]
    return ReplicaGrouping(groups, centres[order], float(np.sum(devs ** 2)), float(np.max(np.abs(devs))))


def group_replicas(phases, scenario: RadarScenario, tolerance_hz: Optional[float] = None) -> ReplicaGrouping:
    """Group unwrapped phase steps into targets, one replica per DDM transmitter.

    Each mode's DDM-corrected frequency ``phi / (2 pi T_ri) - f_ddm,k`` is
    matched so that every group uses every transmitter once and its
    corrected frequencies agree. Groups come out sorted by Doppler.
    Raises :class:`GroupingError` if a group spreads wider than
    ``tolerance_hz`` (default: a quarter of the slow-time Rayleigh
    resolution ``1 / (M T_ri)``). ``tie`` is set when two modes coincide,
    which makes the partition unidentifiable.
    """
    phases = np.asarray([p.value if isinstance(p, PhaseStep) else p for p in phases], dtype=float)
    t_ri = scenario.t_ri
    freqs = phases / (2 * np.pi * t_ri)
    if tolerance_hz is None:
        tolerance_hz = 0.25 / (scenario.plan.chirps_per_sequence * t_ri)
    out = _match_replicas(freqs, scenario.ddm.ddm_freqs_hz)
    gaps = np.abs(freqs[:, None] - freqs[None, :])
    np.fill_diagonal(gaps, np.inf)
    out.tie = bool(gaps.size and gaps.min() < tolerance_hz)
    if out.max_spread_hz > tolerance_hz:
        raise GroupingError(f"replica spread {out.max_spread_hz:.4g} Hz exceeds {tolerance_hz:.4g} Hz",
                            cost=out.cost)
    return out


def combine_ddm(group: Sequence[PhaseStep], scenario: RadarScenario, rotation: str = "conjugate"):
    """Compensate and coherently sum one target's replica phasors.

    ``group[k]`` is transmitter ``k``'s replica. With ``rotation="conjugate"``
    each phasor is rotated by the conjugate of its DDM phasor so the DDM
    term cancels; ``"as_printed"`` applies ``exp(-j 2 pi k / K)`` to the
    conjugate-sign phasor ``exp(-j phi)``; ``"none"`` skips compensation.
    The magnitude of the sum is a coherence diagnostic (``K`` when the
    replicas agree). The Doppler is the mean DDM-corrected frequency.
    """
    K = scenario.ddm.num_tx
    if len(group) != K:
        raise ValueError(f"expected {K} replicas, got {len(group)}")
    t_ri = scenario.t_ri
    phi = np.array([g.value for g in group])
    ddm_steps = scenario.ddm.phase_steps(t_ri)
    if rotation == "conjugate":
        combined = np.sum(np.exp(1j * phi) * np.exp(-1j * ddm_steps))
    elif rotation == "as_printed":
        combined = np.sum(np.exp(-1j * phi) * np.exp(-2j * np.pi * np.arange(K) / K))
    elif rotation == "none":
        combined = np.sum(np.exp(1j * phi))
    else:
        raise ValueError(f"unknown rotation {rotation!r}")
    doppler = float(np.mean((phi - ddm_steps) / (2 * np.pi * t_ri)))
    return complex(combined), doppler


def _real_lcm(a: float, b: float, max_denominator: int = 10_000) -> float:
    ratio = Fraction(b / a).limit_denominator(max_denominator)
    return a * ratio.numerator


def ambiguity_span(scenario: RadarScenario) -> float:
    """Width (m/s) of the velocity interval resolved by ``T_ri`` and the sequence offsets.

    The single-sequence Doppler period ``1 / (K T_ri)`` and each offset's
    phase-wrap period ``1 / (T_l - T_1)`` repeat jointly only after their
    least common multiple. Ratios are rationalised by continued fractions
    with denominators up to 10^4.
    """
    if scenario.plan.num_sequences < 2:
        raise ValueError("ambiguity resolving needs at least two sequences")
    period = 1.0 / (scenario.ddm.num_tx * scenario.t_ri)
    for lag in scenario.offsets[1:] - scenario.offsets[0]:
        period = _real_lcm(period, 1.0 / lag)
    return float(doppler_to_velocity(period, scenario.waveform))


@dataclass
class TargetEstimate:
    velocity_mps: float
    doppler_hz: float
    replica_phases: tuple
    combined_phasor: complex
    residual_cost: float

    @property
    def velocity_kmh(self) -> float:
        return self.velocity_mps * 3.6

    @property
    def coherence(self) -> float:
        return abs(self.combined_phasor) / len(self.replica_phases)


@dataclass
class VelocityReport:
    targets: list
    model_order: int
    iterations: int = 0
    converged: bool = True
    method: str = "jdear"
    ambiguous: bool = False
    grouping_consistent: bool = True
    cost_history: list = field(default_factory=list)

    @property
    def velocities_kmh(self) -> np.ndarray:
        return np.array([t.velocity_kmh for t in self.targets])


@dataclass
class InitialGuess:
    model: ManifoldModel
    groups: list
    wrapped_hz: np.ndarray
    shortlist: list = field(default_factory=list)


def shift_invariance_frequencies(U: np.ndarray, rows: int, num_blocks: int, t_ri: float) -> np.ndarray:
    """Wrapped mode frequencies from the rotational invariance of every block of ``U``."""
    d = U.shape[1]
    blocks = U.reshape(num_blocks, rows, d)
    upper = blocks[:, :-1, :].reshape(-1, d)
    lower = blocks[:, 1:, :].reshape(-1, d)
    psi = np.linalg.lstsq(upper, lower, rcond=None)[0]
    roots = np.linalg.eigvals(psi)
    return np.angle(roots) / (2 * np.pi * t_ri)


def search_interval_hz(scenario: RadarScenario, settings: SolverSettings) -> tuple:
    if settings.search_interval_mps is not None:
        lo, hi = settings.search_interval_mps
    elif scenario.plan.num_sequences < 2:
        half = unambiguous_velocity(scenario.waveform, scenario.ddm)
        lo, hi = -half, half
    else:
        half = ambiguity_span(scenario) / 2
        lo, hi = -half, half
    return float(velocity_to_doppler(lo, scenario.waveform)), float(velocity_to_doppler(hi, scenario.waveform))


def initialize_phases(snap, U: SubspaceEstimate, settings: SolverSettings,
                      hankel_params: HankelParams) -> InitialGuess:
    """Two-scale initial guess of the unwrapped phase steps.

    Coarse scale: wrapped mode frequencies from the shift invariance of
    the subspace, grouped into targets by their DDM replica pattern.
    Fine scale: per-sequence least-squares amplitudes of every mode give
    the phase rotation across the sequence offsets. For each target,
    every ambiguity hypothesis in the search interval (a Doppler shift by
    whole DDM or ``1/T_ri`` periods, which relabels the replicas) is scored
    by how well its predicted rotation matches the measured one, summed
    over the target's replicas; the best hypothesis wins.
    """
    sc = snap.scenario
    t_ri = sc.t_ri
    L, M = snap.vectors.shape
    ddm = np.asarray(sc.ddm.ddm_freqs_hz)
    K = ddm.size
    basis = _basis(U)
    wrapped = shift_invariance_frequencies(basis, hankel_params.rows, L, t_ri)
    period = 1.0 / t_ri

    V = np.exp(2j * np.pi * np.outer(np.arange(M), wrapped) * t_ri)
    amps, resid = np.linalg.lstsq(V, snap.vectors.T, rcond=None)[:2]  # d x L
    dof = max(L * (M - wrapped.size), 1)
    noise_var = float(np.sum(resid)) / dof if np.size(resid) else 0.0
    cross = amps[:, 1:] * amps[:, :1].conj()                         # d x (L-1)
    lags = sc.offsets[1:] - sc.offsets[0]

    try:
        grouping = _match_replicas(wrapped, ddm, period)
    except GroupingError as exc:
        raise InitializationError(str(exc)) from exc
    lo, hi = search_interval_hz(sc, settings)

    d = wrapped.size
    phases = np.empty(d)
    labels = np.empty(d, dtype=int)
    shortlist = []
    for members in grouping.groups:
        members = np.asarray(members)
        f = wrapped[members]
        anchor = f[np.argmax(np.abs(amps[members, 0]))]
        cands = []
        for k in range(K):
            base = anchor - ddm[k]
            q = np.arange(np.ceil((lo - base) / period), np.floor((hi - base) / period) + 1)
            cands.append(base + q * period)
        cands = np.concatenate(cands)
        if L < 2:
            # no offset information: stay inside the single-sequence span
            cands = cands[np.argsort(np.abs(cands))[:1]]
        if cands.size == 0:
            raise InitializationError("no ambiguity hypothesis inside the search interval")
        # dev[c, j, k]: offset of member j read as transmitter k from hypothesis c
        dev = _circ(f[None, :, None] - ddm[None, None, :] - cands[:, None, None], period)
        lab = np.argmin(np.abs(dev), axis=2)
        distinct = np.array([np.unique(row).size == row.size for row in lab])
        if not distinct.any():
            raise InitializationError("replicas do not fit the DDM pattern")
        g = cands[:, None] + np.take_along_axis(dev, lab[:, :, None], axis=2)[:, :, 0]
        if L >= 2:
            rot = np.exp(-2j * np.pi * g[:, :, None] * lags[None, None, :])
            score = np.real(np.sum(cross[members][None, :, :] * rot, axis=(1, 2)))
        else:
            score = np.zeros(cands.size)
        score[~distinct] = -np.inf
        # keep every hypothesis within the noise-predicted phase spread of the best one
        power = float(np.sum(np.abs(amps[members]) ** 2))
        spread = settings.hypothesis_sigmas * np.sqrt(2 * noise_var / (M * power)) if power > 0 else np.pi
        best_score = score.max()
        close = np.flatnonzero(score >= best_score - abs(best_score) * (1 - np.cos(min(spread, np.pi))))
        ranked = close[np.argsort(-score[close])][:max(1, settings.hypotheses_checked)]
        shortlist.append((members, [(lab[c], 2 * np.pi * (g[c] + ddm[lab[c]]) * t_ri) for c in ranked]))
        labels[members], phases[members] = shortlist[-1][1][0]

    model = ManifoldModel(phases, labels, sc, hankel_params)
    return InitialGuess(model, grouping.groups, wrapped, shortlist)


def solve(snap, settings: Optional[SolverSettings] = None, order: Optional[int] = None,
          hankel_params: Optional[HankelParams] = None) -> VelocityReport:
    """Estimate unambiguous target velocities from one range-bin snapshot.

    Block-Hankel subspace, two-scale initialization, LM refinement of the
    subspace-fitting cost, replica grouping and DDM combining. With a
    single sequence the result is wrapped into the single-sequence span
    and flagged ``ambiguous``.
    """
    settings = settings or SolverSettings()
    sc = snap.scenario
    require_valid(sc)
    L, M = snap.vectors.shape
    hp = hankel_params or HankelParams.for_length(M)
    sub = estimate_subspace(stack_blocks(snap, hp), order, settings.order_criterion)
    K = sc.ddm.num_tx
    if sub.model_order % K:
        raise InitializationError(f"model order {sub.model_order} is not a multiple of K_Tx={K}")

    init = initialize_phases(snap, sub, settings, hp)
    lm = levenberg_marquardt(init.model, sub, settings)
    model = init.model.with_phases(lm.phases)
    # the score only ranks hypotheses; runners-up are refined and kept if they fit better
    for members, options in init.shortlist:
        for lab_c, ph_c in options[1:]:
            phases, labels = model.phase_steps.copy(), model.ddm_labels.copy()
            phases[members], labels[members] = ph_c, lab_c
            try:
                trial = ManifoldModel(phases, labels, sc, hp)
                alt = levenberg_marquardt(trial, sub, settings)
            except DegenerateModesError:
                continue
            if alt.cost < lm.cost:
                lm, model = alt, trial.with_phases(alt.phases)

    consistent = True
    try:
        grouping = group_replicas(model.phase_steps, sc, settings.grouping_tolerance_hz)
    except GroupingError:
        consistent = False
        grouping = group_replicas(model.phase_steps, sc, tolerance_hz=np.inf)

    targets = []
    for members in grouping.groups:
        steps = tuple(PhaseStep(float(model.phase_steps[j])) for j in members)
        phasor, doppler = combine_ddm(steps, sc, settings.rotation)
        targets.append(TargetEstimate(float(doppler_to_velocity(doppler, sc.waveform)), doppler,
                                      steps, phasor, lm.cost))
    return VelocityReport(targets, sub.model_order, lm.iterations, lm.converged, "jdear",
                          ambiguous=L < 2, grouping_consistent=consistent, cost_history=lm.history)
