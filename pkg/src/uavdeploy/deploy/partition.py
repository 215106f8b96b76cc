"""Fair partition of the service region among UAVs.

Every UAV must carry the same ratio kappa of assigned transmit power to
available power. The solver is a multiplier (weighted power-diagram) method:
cell c goes to argmin_i lambda_i P_i(c), and lambda_i grows for UAVs whose
share is above kappa. Because cells are discrete, the multiplier phase is
followed by single-cell moves and pair swaps that close the remaining
imbalance, then by cost-reducing moves that keep the partition balanced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..channel import ChannelParams
from .grid import DemandGrid, DeployError
from .power import UavState, effective_users, path_loss_matrix, poses_array, power_prefactor, rate_factor


@dataclass(eq=False)
class Partition:
    assignment: np.ndarray  # cell -> position in uav_ids
    uav_ids: tuple
    transmit_power: np.ndarray  # per UAV, sum of P_min * cell area (W)
    n_users: np.ndarray
    rate_demand: np.ndarray  # alpha_i (bit/s)
    available: np.ndarray  # P_a_i
    converged: bool = True
    multipliers: np.ndarray = None
    rounds: int = 0
    trace: list = field(default_factory=list)

    @property
    def kappa(self) -> float:
        return float(self.transmit_power.sum() / self.available.sum())

    @property
    def shares(self) -> np.ndarray:
        return self.transmit_power / self.available

    @property
    def imbalance(self) -> float:
        return _imbalance(self.transmit_power, self.available)

    @property
    def total_power(self) -> float:
        return float(self.transmit_power.sum())

    def cells_of(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == i)

    def to_json(self) -> dict:
        return {
            "assignment": self.assignment.tolist(), "uav_ids": list(self.uav_ids),
            "transmit_power_w": self.transmit_power.tolist(), "n_users": self.n_users.tolist(),
            "rate_demand_bps": self.rate_demand.tolist(), "kappa": self.kappa,
            "shares": self.shares.tolist(), "imbalance": self.imbalance, "converged": self.converged,
            "rounds": self.rounds,
            "multipliers": None if self.multipliers is None else self.multipliers.tolist(),
        }


class PartitionError(DeployError):
    """Balance tolerance not reached; ``best`` holds the least imbalanced partition found."""

    def __init__(self, message: str, best: Partition):
        super().__init__(message)
        self.best = best


def _imbalance(loads, available) -> float:
    total = loads.sum()
    if not total > 0:
        return 0.0
    kappa = total / available.sum()
    return float(np.max(np.abs(loads / available / kappa - 1.0)))


class LoadModel:
    """Exact per-UAV loads of an assignment, including the coupling through N_i."""

    def __init__(self, uavs: Sequence[UavState], grid: DemandGrid, channel: ChannelParams, poses=None):
        self.grid = grid
        self.channel = channel
        self.poses = poses_array(uavs) if poses is None else np.asarray(poses, dtype=float)
        self.loss = path_loss_matrix(channel, self.poses, grid.centers)
        self.beta = grid.rate_density
        self.users = grid.users
        self.cell_rate = grid.cell_rate_bps
        self.bandwidth = np.array([u.bandwidth_hz for u in uavs], dtype=float)
        self.available = np.array([u.available_energy_j for u in uavs], dtype=float)
        self.n_uav = len(uavs)

    def users_of(self, assign) -> np.ndarray:
        u = np.bincount(assign, weights=self.users, minlength=self.n_uav)
        r = np.bincount(assign, weights=self.cell_rate, minlength=self.n_uav)
        return effective_users(u, r)

    def power_matrix(self, n_users) -> np.ndarray:
        pref = power_prefactor(self.channel, self.bandwidth, n_users) * self.grid.cell_area
        z = rate_factor(self.beta[:, None], n_users[None, :], self.bandwidth[None, :])
        return pref[None, :] * z * self.loss

    def evaluate(self, assign):
        n_users = self.users_of(assign)
        p = self.power_matrix(n_users)
        loads = np.bincount(assign, weights=p[np.arange(len(assign)), assign], minlength=self.n_uav)
        return n_users, loads, p

    def partition(self, assign, uav_ids, **kw) -> Partition:
        n_users, loads, _ = self.evaluate(assign)
        alpha = np.bincount(assign, weights=self.cell_rate, minlength=self.n_uav)
        return Partition(assign.copy(), tuple(uav_ids), loads, n_users, alpha, self.available.copy(), **kw)


def _excluded_extremes(shares):
    """max / min of ``shares`` over all UAVs except a pair (a, b), as (I, I) arrays."""
    n = len(shares)
    order = np.argsort(shares)
    top = order[::-1][:3]
    bottom = order[:3]
    a = np.arange(n)[:, None]
    b = np.arange(n)[None, :]
    mx = np.full((n, n), -np.inf)
    mn = np.full((n, n), np.inf)
    for t in top[::-1]:
        ok = (a != t) & (b != t)
        mx = np.where(ok, shares[t], mx)
    for t in bottom[::-1]:
        ok = (a != t) & (b != t)
        mn = np.where(ok, shares[t], mn)
    return mx, mn


def _score_pair_changes(loads, available, src, dst, d_src, d_dst):
    """Imbalance and total-power change after changing two UAV loads (vectorised)."""
    shares = loads / available
    mx, mn = _excluded_extremes(shares)
    total = loads.sum() + d_src + d_dst
    kappa = total / available.sum()
    s_src = (loads[src] + d_src) / available[src]
    s_dst = (loads[dst] + d_dst) / available[dst]
    with np.errstate(invalid="ignore", divide="ignore"):
        dev = np.maximum(np.abs(s_src / kappa - 1), np.abs(s_dst / kappa - 1))
        dev = np.maximum(dev, mx[src, dst] / kappa - 1)
        dev = np.maximum(dev, 1 - mn[src, dst] / kappa)
    return np.nan_to_num(dev, nan=np.inf), d_src + d_dst


def _moves(assign, p, cells=None):
    """All single-cell moves (cell, src, dst, d_src, d_dst) for the given cells."""
    n, n_uav = p.shape
    cells = np.arange(n) if cells is None else cells
    c = np.repeat(cells, n_uav)
    dst = np.tile(np.arange(n_uav), len(cells))
    src = assign[c]
    keep = src != dst
    c, src, dst = c[keep], src[keep], dst[keep]
    return c, src, dst, -p[c, src], p[c, dst]


def _swaps(assign, p, w, max_pairs=40000):
    """Pair swaps between UAV ``w`` and every other UAV."""
    n_uav = p.shape[1]
    mine = np.flatnonzero(assign == w)
    out = []
    for b in range(n_uav):
        if b == w:
            continue
        theirs = np.flatnonzero(assign == b)
        if len(mine) == 0 or len(theirs) == 0 or len(mine) * len(theirs) > max_pairs:
            continue
        cm, ct = np.meshgrid(mine, theirs, indexing="ij")
        cm, ct = cm.ravel(), ct.ravel()
        out.append((cm, ct, np.full(len(cm), w), np.full(len(cm), b),
                    -p[cm, w] + p[ct, w], p[cm, b] - p[ct, b]))
    if not out:
        return None
    return tuple(np.concatenate(parts) for parts in zip(*out))


def _pair_potential(loads, available, src, dst, d_src, d_dst):
    """Share potential sum_i (s_i / kappa - 1)^2 after changing two UAV loads (vectorised)."""
    s = loads / available
    ns = s[src] + d_src / available[src]
    nd = s[dst] + d_dst / available[dst]
    s2 = (s * s).sum() - s[src] ** 2 - s[dst] ** 2 + ns * ns + nd * nd
    s1 = s.sum() + d_src / available[src] + d_dst / available[dst]
    kappa = (loads.sum() + d_src + d_dst) / available.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        pot = s2 / kappa ** 2 - 2 * s1 / kappa + len(loads)
    return np.nan_to_num(pot, nan=np.inf)


def _spread(model: LoadModel, assign, tol, max_steps):
    """Moves that most reduce the share potential; unlike the worst-UAV moves
    this still makes progress when several UAVs are equally far off.

    Each step applies a batch of the best moves touching disjoint UAV pairs
    (their potential changes are nearly additive) and falls back to the single
    best move when the batch does not pay off under exact evaluation.
    """
    n_users, loads, p = model.evaluate(assign)
    pot = _potential(loads, model.available)
    n_uav = model.n_uav
    for _ in range(max_steps):
        if _imbalance(loads, model.available) <= tol:
            break
        c, src, dst, ds, dd = _moves(assign, p)
        cand = _pair_potential(loads, model.available, src, dst, ds, dd)
        order = np.argsort(cand, kind="stable")
        order = order[cand[order] < pot][: 4 * n_uav]
        if len(order) == 0:
            break
        used = np.zeros(n_uav, dtype=bool)
        batch = []
        for j in order:
            if not (used[src[j]] or used[dst[j]]):
                batch.append(j)
                used[src[j]] = used[dst[j]] = True
        accepted = False
        for group in (batch, batch[:1]) if len(batch) > 1 else (batch,):
            trial = assign.copy()
            trial[c[group]] = dst[group]
            t_users, t_loads, t_p = model.evaluate(trial)
            t_pot = _potential(t_loads, model.available)
            if t_pot < pot:
                assign, n_users, loads, p, pot, accepted = trial, t_users, t_loads, t_p, t_pot, True
                break
        if not accepted:
            break
    return assign


def _rebalance(model: LoadModel, assign, tol, max_steps):
    """Greedy moves and swaps that reduce the worst share deviation."""
    n_users, loads, p = model.evaluate(assign)
    imb = _imbalance(loads, model.available)
    steps = 0
    while imb > tol and steps < max_steps:
        steps += 1
        improved = False
        w = int(np.argmax(np.abs(loads / model.available / (loads.sum() / model.available.sum()) - 1)))
        c, src, dst, ds, dd = _moves(assign, p)
        relevant = (src == w) | (dst == w)
        c, src, dst, ds, dd = c[relevant], src[relevant], dst[relevant], ds[relevant], dd[relevant]
        dev, dcost = _score_pair_changes(loads, model.available, src, dst, ds, dd)
        for j in np.lexsort((dcost, dev))[:5]:
            if not dev[j] < imb:
                break
            trial = assign.copy()
            trial[c[j]] = dst[j]
            t_users, t_loads, t_p = model.evaluate(trial)
            t_imb = _imbalance(t_loads, model.available)
            if t_imb < imb:
                assign, n_users, loads, p, imb, improved = trial, t_users, t_loads, t_p, t_imb, True
                break
        if improved:
            continue
        sw = _swaps(assign, p, w)
        if sw is not None:
            ca, cb, src, dst, ds, dd = sw
            dev, dcost = _score_pair_changes(loads, model.available, src, dst, ds, dd)
            for j in np.lexsort((dcost, dev))[:5]:
                if not dev[j] < imb:
                    break
                trial = assign.copy()
                trial[ca[j]], trial[cb[j]] = dst[j], src[j]
                t_users, t_loads, t_p = model.evaluate(trial)
                t_imb = _imbalance(t_loads, model.available)
                if t_imb < imb:
                    assign, n_users, loads, p, imb, improved = trial, t_users, t_loads, t_p, t_imb, True
                    break
        if not improved:
            break
    return assign, imb


def _pair_swaps(assign, p, max_pairs):
    """Swaps of one cell each between every pair of UAVs (at most ``max_pairs`` per pair)."""
    n_uav = p.shape[1]
    owned = [np.flatnonzero(assign == i) for i in range(n_uav)]
    out = []
    for a in range(n_uav):
        for b in range(a + 1, n_uav):
            ca, cb = owned[a], owned[b]
            if len(ca) == 0 or len(cb) == 0 or len(ca) * len(cb) > max_pairs:
                continue
            x, y = np.meshgrid(ca, cb, indexing="ij")
            x, y = x.ravel(), y.ravel()
            out.append((x, y, np.full(len(x), a), np.full(len(x), b),
                        p[y, a] - p[x, a], p[x, b] - p[y, b]))
    if not out:
        return None
    return tuple(np.concatenate(parts) for parts in zip(*out))


def _two_for_one(assign, p, max_pairs):
    """One cell of UAV a traded for two cells of UAV b, for every ordered pair of UAVs."""
    n_uav = p.shape[1]
    owned = [np.flatnonzero(assign == i) for i in range(n_uav)]
    out = []
    for a in range(n_uav):
        for b in range(n_uav):
            ca, cb = owned[a], owned[b]
            nb = len(cb)
            if a == b or len(ca) == 0 or nb < 2 or len(ca) * nb * (nb - 1) // 2 > max_pairs:
                continue
            i1, i2 = np.triu_indices(nb, 1)
            x = np.repeat(ca, len(i1))
            y1 = np.tile(cb[i1], len(ca))
            y2 = np.tile(cb[i2], len(ca))
            out.append((x, y1, y2, np.full(len(x), a), np.full(len(x), b),
                        p[y1, a] + p[y2, a] - p[x, a], p[x, b] - p[y1, b] - p[y2, b]))
    if not out:
        return None
    return tuple(np.concatenate(parts) for parts in zip(*out))


def _polish(model: LoadModel, assign, tol, max_steps, trades=True, max_pairs=4096):
    """Cost-reducing single-cell moves, then one-for-one and two-for-one trades, that keep the partition within ``tol``."""
    n_users, loads, p = model.evaluate(assign)
    for _ in range(max_steps):
        total = loads.sum()
        c, src, dst, ds, dd = _moves(assign, p)
        dev, dcost = _score_pair_changes(loads, model.available, src, dst, ds, dd)
        ok = np.flatnonzero((dev <= tol) & (dcost < -1e-12 * total))
        trials = []
        for j in ok[np.argsort(dcost[ok], kind="stable")][:5]:
            t = assign.copy()
            t[c[j]] = dst[j]
            trials.append(t)
        if not trials and trades:
            sw = _pair_swaps(assign, p, max_pairs)
            if sw is not None:
                ca, cb, sa, sb, da, db = sw
                dev, dcost = _score_pair_changes(loads, model.available, sa, sb, da, db)
                ok = np.flatnonzero((dev <= tol) & (dcost < -1e-12 * total))
                for j in ok[np.argsort(dcost[ok], kind="stable")][:5]:
                    t = assign.copy()
                    t[ca[j]], t[cb[j]] = sb[j], sa[j]
                    trials.append(t)
        if not trials and trades:
            tr = _two_for_one(assign, p, max_pairs)
            if tr is not None:
                x, y1, y2, sa, sb, da, db = tr
                dev, dcost = _score_pair_changes(loads, model.available, sa, sb, da, db)
                ok = np.flatnonzero((dev <= tol) & (dcost < -1e-12 * total))
                for j in ok[np.argsort(dcost[ok], kind="stable")][:5]:
                    t = assign.copy()
                    t[x[j]] = sb[j]
                    t[y1[j]] = t[y2[j]] = sa[j]
                    trials.append(t)
        accepted = False
        for trial in trials:
            t_users, t_loads, t_p = model.evaluate(trial)
            if _imbalance(t_loads, model.available) <= tol and t_loads.sum() < total * (1 - 1e-12):
                assign, n_users, loads, p, accepted = trial, t_users, t_loads, t_p, True
                break
        if not accepted:
            break
    return assign


def _potential(loads, available) -> float:
    total = loads.sum()
    if not total > 0:
        return 0.0
    return float(np.sum((loads / available / (total / available.sum()) - 1.0) ** 2))


def _loads(p, assign, n_uav):
    return np.bincount(assign, weights=p[np.arange(len(assign)), assign], minlength=n_uav)


def _assign(lam, p, nearest, zero):
    """Cell -> argmin_i lam_i P_i(c); first index wins ties, zero-demand cells go to the nearest UAV."""
    out = np.argmin(lam[None, :] * p, axis=1)
    out[zero] = nearest[zero]
    return out


def _line_search(p, lam, i, available, zero):
    """Exact minimisation of the share potential over lam_i with the others fixed.

    As lam_i falls, cell c switches to UAV i once lam_i < r_c, the ratio of
    its best competing score to P_i(c); sorting the r_c enumerates every
    reachable assignment, and cumulative sums give all their loads at once.
    """
    n, n_uav = p.shape
    score = lam[None, :] * p
    score[:, i] = np.inf
    owner = np.argmin(score, axis=1)
    live = ~zero & (p[:, i] > 0)
    idx = np.flatnonzero(live)
    best_other = score[idx, owner[idx]]
    r = best_other / p[idx, i]
    order = np.argsort(-r, kind="stable")
    idx, r = idx[order], r[order]
    base = np.bincount(owner[~zero], weights=p[~zero, owner[~zero]], minlength=n_uav)
    # potential = S2 / kappa^2 - 2 S1 / kappa + n_uav, with S1, S2 the sums of
    # shares and squared shares; each step only touches UAV i and one owner
    o = owner[idx]
    w = p[idx, o]
    grp = np.argsort(o, kind="stable")
    cs = np.cumsum(w[grp])
    starts = np.searchsorted(o[grp], o[grp], side="left")
    removed = np.empty(len(idx))
    removed[grp] = cs - np.concatenate([[0.0], cs])[starts]
    new_load = np.maximum(base[o] - removed, 0.0)
    old_load = new_load + w
    a_o = available[o]
    mine = np.concatenate([[0.0], np.cumsum(p[idx, i])]) / available[i]
    shares0 = base / available
    s1 = shares0.sum() + np.concatenate([[0.0], np.cumsum((new_load - old_load) / a_o)]) + mine
    s2 = (shares0 ** 2).sum() + np.concatenate([[0.0], np.cumsum((new_load ** 2 - old_load ** 2) / a_o ** 2)]) \
        + mine ** 2
    kappa = (base.sum() - np.concatenate([[0.0], np.cumsum(w)]) + mine * available[i]) / available.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        pot = s2 / kappa ** 2 - 2 * s1 / kappa + n_uav
    pot = np.nan_to_num(pot, nan=np.inf)
    # k cells join UAV i; only cut between distinct ratios
    ok = np.ones(len(idx) + 1, dtype=bool)
    if len(idx) > 1:
        ok[1:-1] = r[:-1] > r[1:] * (1 + 1e-12)
    pot[~ok] = np.inf
    k = int(np.argmin(pot))
    if len(idx) == 0:
        return lam[i], pot[0]
    if k == 0:
        new = r[0] * 2.0
    elif k == len(idx):
        new = r[-1] * 0.5
    else:
        new = np.sqrt(r[k - 1] * r[k])
    return float(new), float(pot[k])


def _neighbour_cuts(p, lam, i, zero, width):
    """Multiplier values for UAV i that move the cut up to ``width`` cells either way."""
    score = lam[None, :] * p
    score[:, i] = np.inf
    owner = np.argmin(score, axis=1)
    idx = np.flatnonzero(~zero & (p[:, i] > 0))
    if len(idx) == 0:
        return []
    r = np.sort(score[idx, owner[idx]] / p[idx, i])[::-1]
    r = r[np.concatenate([[True], r[1:] < r[:-1] * (1 - 1e-12)])]
    k0 = int(np.searchsorted(-r, -lam[i]))  # cells with r_c > lam_i already belong to i
    cuts = []
    for k in range(max(0, k0 - width), min(len(r), k0 + width) + 1):
        if k == k0:
            continue
        if k == 0:
            cuts.append(r[0] * 2.0)
        elif k == len(r):
            cuts.append(r[-1] * 0.5)
        else:
            cuts.append(float(np.sqrt(r[k - 1] * r[k])))
    return cuts


def _restarts(model, lam, p, nearest, zero, tol, width, rebalance_steps, polish_steps):
    """Balanced, polished partitions grown from the cuts next to each multiplier."""
    out = []
    seen = set()
    for i in range(model.n_uav):
        for value in _neighbour_cuts(p, lam, i, zero, width):
            trial_lam = lam.copy()
            trial_lam[i] = value
            assign = _assign(trial_lam, p, nearest, zero)
            key = assign.tobytes()
            if key in seen:
                continue
            seen.add(key)
            assign, imb = _rebalance(model, assign, tol, rebalance_steps)
            if imb <= tol:
                out.append(_polish(model, assign, tol, polish_steps))
    return out


def _fallback_owner(loss):
    return np.argmin(loss, axis=1)


def partition_solve(uavs: Sequence[UavState], grid: DemandGrid, channel: ChannelParams, tol: float = 0.01,
                    max_rounds: int = 2000, max_outer: int = 20, rebalance_steps: int = 400, polish_steps: int = 200,
                    stall_rounds: int = 25, restart_width: int = 36, restart_budget: int = 128,
                    trade_budget: int = 2000, poses=None) -> Partition:
    """Assign every cell to one UAV so that per-UAV power shares match within ``tol``.

    Loads are evaluated at ``poses`` (default: the UAVs' current poses).
    Below ``trade_budget`` (cells x UAVs) the final polish also tries cell
    trades between UAV pairs; below ``restart_budget`` the search is repeated
    from the multiplier cuts next to the final ones and the cheapest balanced
    result is kept. Raises :class:`PartitionError` (carrying the best partition) if the
    tolerance cannot be met.
    """
    if len(uavs) == 0:
        raise DeployError("fleet is empty")
    if not grid.has_demand:
        raise DeployError("grid has no demand")
    ids = tuple(u.id for u in uavs)
    model = LoadModel(uavs, grid, channel, poses)
    n_uav = model.n_uav
    nearest = _fallback_owner(model.loss)
    if n_uav == 1:
        assign = np.zeros(grid.n_cells, dtype=int)
        return model.partition(assign, ids, multipliers=np.ones(1), rounds=0, trace=[0.0])

    lam = np.ones(n_uav)
    p = model.power_matrix(model.users_of(nearest))
    zero = ~np.any(p > 0, axis=1)
    best_assign, best_imb = nearest.copy(), np.inf
    trace = []
    rounds = 0
    # inner: exact coordinate line searches with N_i frozen; outer: refresh N_i
    for _ in range(max_outer):
        assign = _assign(lam, p, nearest, zero)
        loads = _loads(p, assign, n_uav)
        history = []
        while rounds < max_rounds and _imbalance(loads, model.available) > 0.5 * tol:
            rounds += 1
            pot = _potential(loads, model.available)
            history.append(pot)
            if len(history) > stall_rounds and pot > 0.99 * history[-stall_rounds - 1]:
                break
            dev = np.abs(loads / model.available / (loads.sum() / model.available.sum()) - 1)
            moved = False
            for i in np.argsort(-dev, kind="stable"):
                new_lam, predicted = _line_search(p, lam, int(i), model.available, zero)
                if predicted < pot * (1 - 1e-9):
                    lam[i] = new_lam
                    moved = True
                    break
            if not moved:
                break
            lam /= np.exp(np.mean(np.log(lam)))
            assign = _assign(lam, p, nearest, zero)
            loads = _loads(p, assign, n_uav)
        n_users, exact, p_new = model.evaluate(assign)
        imb = _imbalance(exact, model.available)
        trace.append(imb)
        if imb < best_imb:
            best_assign, best_imb = assign.copy(), imb
        if imb <= tol or rounds >= max_rounds or np.allclose(p_new, p, rtol=1e-12, atol=0):
            break
        p = p_new

    assign = best_assign
    if best_imb > tol:
        assign = _spread(model, assign, tol, rebalance_steps)
        assign, best_imb = _rebalance(model, assign, tol, rebalance_steps)
        trace.append(best_imb)
    converged = best_imb <= tol
    size = grid.n_cells * n_uav
    if converged and polish_steps:
        assign = _polish(model, assign, tol, polish_steps, trades=size <= trade_budget)
    if restart_width and size <= restart_budget:
        found = _restarts(model, lam, p, nearest, zero, tol, restart_width, rebalance_steps, polish_steps)
        if converged:
            found.append(assign)
        if found:
            costs = [model.evaluate(a)[1].sum() for a in found]
            assign = found[int(np.argmin(costs))]
            converged = True
    result = model.partition(assign, ids, converged=converged, multipliers=lam, rounds=rounds, trace=trace)
    if not converged:
        raise PartitionError(f"partition imbalance {result.imbalance:.4g} exceeds tolerance {tol}", result)
    return result


def evaluate_assignment(uavs: Sequence[UavState], assignment, grid: DemandGrid, channel: ChannelParams,
                        poses=None, tol: float = 0.01) -> Partition:
    """Loads of a fixed cell assignment against (possibly different) demand and poses.

    ``converged`` reports whether the shares still match within ``tol``.
    """
    model = LoadModel(uavs, grid, channel, poses)
    assign = np.asarray(assignment, dtype=int)
    part = model.partition(assign, tuple(u.id for u in uavs))
    part.converged = part.imbalance <= tol
    return part
