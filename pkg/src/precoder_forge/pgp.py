"""Per-group processing: independent small precoders on groups of virtual subchannels.

Groups are index sets (0-based) into the descending channel singular values
padded to N_t. Each group is optimized on its own diagonal subchannel with a
fixed power share, and the global precoder is

    G = V_H * P(blockdiag(Sigma_Gg V_Gg^H))

where P places each block on its group's rows and columns. The sufficient
statistic of H G is block diagonal, so the total mutual information is the
sum of the group values.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channels import as_channel, svd_factor, virtual_sigma
from .errors import GroupBudgetExceeded, InvalidGroupSize
from .mi import EffectiveChannel, MiEstimate, mi_gh, term_budget
from .optimizer import OptimizerParams, PrecoderResult, _optimize_virtual, build_w

PAIRINGS = ("consecutive", "max_min")


@dataclass(frozen=True)
class GroupPlan:
    groups: tuple
    group_nt: tuple
    group_nr: tuple
    power_shares: tuple
    ragged: bool = False

    def __post_init__(self):
        flat = sorted(i for g in self.groups for i in g)
        if flat != list(range(len(flat))):
            raise InvalidGroupSize("groups must partition 0..N_t-1")
        if not (len(self.groups) == len(self.group_nt) == len(self.group_nr) == len(self.power_shares)):
            raise InvalidGroupSize("per-group fields must have one entry per group")
        if any(p <= 0 for p in self.power_shares):
            raise InvalidGroupSize("every group needs a positive power share")
        if abs(sum(self.power_shares) - len(flat)) > 1e-9:
            raise InvalidGroupSize("power shares must sum to N_t")

    @property
    def n_t(self):
        return sum(len(g) for g in self.groups)

    def to_dict(self):
        return {"groups": [list(g) for g in self.groups], "group_nt": list(self.group_nt),
                "group_nr": list(self.group_nr), "power_shares": list(self.power_shares),
                "ragged": self.ragged}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(int(i) for i in g) for g in d["groups"]), tuple(d["group_nt"]),
                   tuple(d["group_nr"]), tuple(float(p) for p in d["power_shares"]),
                   bool(d.get("ragged", False)))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _split_counts(total, n_groups):
    base, extra = divmod(total, n_groups)
    return [base + (1 if i < extra else 0) for i in range(n_groups)]


def plan_groups(sigma_h, group_size, pairing="consecutive", n_r=None):
    """Partition the N_t = len(sigma_h) virtual subchannels into groups of ``group_size``.

    ``consecutive`` takes contiguous blocks of the descending singular values;
    ``max_min`` pairs the i-th largest with the i-th smallest before chunking.
    A last group smaller than ``group_size`` is allowed and marks the plan ragged.
    ``n_r`` (default N_t) is split as evenly as possible into per-group receive counts.
    """
    n = len(np.atleast_1d(sigma_h))
    group_size = int(group_size)
    if group_size < 1 or group_size > n:
        raise InvalidGroupSize(f"group size {group_size} must lie in 1..{n}")
    if pairing == "consecutive":
        order = list(range(n))
    elif pairing == "max_min":
        order = []
        lo, hi = 0, n - 1
        while lo <= hi:
            order.append(lo)
            if hi != lo:
                order.append(hi)
            lo, hi = lo + 1, hi - 1
    else:
        raise ValueError(f"unknown pairing {pairing!r}; expected one of {PAIRINGS}")
    groups = tuple(tuple(sorted(order[i:i + group_size])) for i in range(0, n, group_size))
    nts = tuple(len(g) for g in groups)
    nrs = tuple(_split_counts(n if n_r is None else int(n_r), len(groups)))
    return GroupPlan(groups, nts, nrs, tuple(float(k) for k in nts), ragged=n % group_size != 0)


@dataclass
class PgpResult:
    per_group: list
    g_global: np.ndarray
    mi_total_bits: float
    plan: GroupPlan
    group_mi: list = field(default_factory=list)


def _group_sigmas(h, plan):
    h = as_channel(h)
    factors = svd_factor(h)
    n_t = h.shape[1]
    if plan.n_t != n_t:
        raise InvalidGroupSize(f"plan covers {plan.n_t} subchannels, channel has N_t = {n_t}")
    sig = virtual_sigma(factors.sigma_h, n_t)
    return factors, [sig[list(g)] for g in plan.groups]


def _check_group_budget(c, rule, plan, budget=None):
    budget = term_budget() if budget is None else budget
    for g in plan.groups:
        n = len(g)
        terms = rule.order ** (2 * n) * c.order ** n
        if terms > budget:
            raise GroupBudgetExceeded(
                f"group of size {n} needs {terms} quadrature terms, above budget {budget}")


def assemble(factors, plan, states):
    """Global precoder V_H * P(blockdiag(diag(sqrt(s_g)) V_Gg^H))."""
    n_t = plan.n_t
    gv = np.zeros((n_t, n_t), complex)
    for g, st in zip(plan.groups, states):
        idx = np.array(g)
        gv[np.ix_(idx, idx)] = np.sqrt(st.sigma_g2)[:, None] * st.v_g.conj().T
    return factors.v_h @ gv


def optimize_pgp(h, c, noise, rule, params=None, plan=None, *, group_size=2, pairing="consecutive",
                 workers=1, starts=2, backend=None):
    """Optimize each group independently and assemble the global precoder."""
    params = OptimizerParams() if params is None else params
    h = as_channel(h)
    if plan is None:
        plan = plan_groups(virtual_sigma(svd_factor(h).sigma_h, h.shape[1]), group_size, pairing,
                           n_r=h.shape[0])
    _check_group_budget(c, rule, plan)
    factors, sigmas = _group_sigmas(h, plan)

    def run(i):
        return _optimize_virtual(sigmas[i], c, noise, rule, params, power=plan.power_shares[i],
                                 starts=starts, backend=backend)

    if workers and workers > 1 and len(plan.groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run, range(len(plan.groups))))
    else:
        outs = [run(i) for i in range(len(plan.groups))]

    per_group = []
    for (st, traj, conv, stall), sig in zip(outs, sigmas):
        g_local = np.sqrt(st.sigma_g2)[:, None] * st.v_g.conj().T
        per_group.append(PrecoderResult(g_local, st, traj, conv, stall))
    g_global = assemble(factors, plan, [o[0] for o in outs])
    group_mi = [o[0].mi_bits for o in outs]
    return PgpResult(per_group, g_global, float(sum(group_mi)), plan, group_mi)


def no_precoding_per_group(h, c, noise, rule, plan, **kw):
    """Sum over groups of the mutual information of diag(sigma_g) with uniform power."""
    _check_group_budget(c, rule, plan)
    _, sigmas = _group_sigmas(h, plan)
    total = 0.0
    for sig, share in zip(sigmas, plan.power_shares):
        scale = np.sqrt(share / len(sig))
        total += mi_gh(EffectiveChannel(np.diag(sig * scale).astype(complex), "sqrt_w"),
                       c, noise, rule, **kw).bits
    return MiEstimate(total, "gauss_hermite")


def block_system_mi(result, c, noise, rule, **kw):
    """Mutual information of the full block-diagonal virtual system for a PGP result."""
    n_t = result.plan.n_t
    w = np.zeros((n_t, n_t), complex)
    for g, pg in zip(result.plan.groups, result.per_group):
        idx = np.array(g)
        st = pg.state
        w[np.ix_(idx, idx)] = build_w(st.v_g, st.sigma_h, st.sigma_g2)
    return mi_gh(EffectiveChannel.from_w(w), c, noise, rule, **kw)


def _mean_se(vals):
    vals = np.asarray(vals, dtype=float)
    if len(vals) == 0:
        raise ValueError("need at least one channel draw")
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se


def ergodic_pgp(channels, c, noise, rule, params=None, plan=None, **kw):
    """Mean PGP mutual information over channel draws, re-optimizing per draw."""
    vals = [optimize_pgp(h, c, noise, rule, params, plan, **kw).mi_total_bits for h in channels]
    mean, se = _mean_se(vals)
    return MiEstimate(mean, "gauss_hermite", std_err=se)


def ergodic_no_precoding_per_group(channels, c, noise, rule, plan):
    mean, se = _mean_se([no_precoding_per_group(h, c, noise, rule, plan).bits for h in channels])
    return MiEstimate(mean, "gauss_hermite", std_err=se)
