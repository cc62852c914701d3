#!/usr/bin/env python3
"""Independent 50-digit re-evaluation of the decoy-state finite-key pipeline.

Writes the frozen fixtures used by the Rust tests:

    tests/fixtures/keyrate_table.toml   reference parameter set
    tests/fixtures/keyrate_draws.toml   1000 random parameter draws

Run from crates/core:  python3 tests/oracles/keyrate_mp.py
The draws are seeded, so rerunning reproduces the files exactly.
"""

import os
import random

from mpmath import mp, mpf, exp, log, sqrt

mp.dps = 50

HERE = os.path.dirname(os.path.abspath(__file__))
FIXTURES = os.path.join(HERE, "..", "fixtures")


def h(p):
    p = mpf(p)
    if p <= 0 or p >= 1:
        return mpf(0)
    return -p * log(p, 2) - (1 - p) * log(1 - p, 2)


def y1_lower(mu, nu, y0, q_mu, q_nu):
    mu, nu, y0 = mpf(mu), mpf(nu), mpf(y0)
    return mu / (mu * nu - nu * nu) * (
        q_nu * exp(nu) - q_mu * exp(mu) * nu**2 / mu**2 - (mu**2 - nu**2) / mu**2 * y0
    )


def e1_upper(nu, y0, e0, eq_nu, y1):
    return (mpf(eq_nu) * exp(mpf(nu)) - mpf(e0) * mpf(y0)) / (y1 * mpf(nu))


def failure_log2(e, n_test, n_key, theta):
    n = n_test + n_key
    q = n_test / n
    xi = h(e + theta - q * theta) - q * h(e) - (1 - q) * h(e + theta)
    return log(n, 2) / 2 - log(e * (1 - e), 2) / 2 - n * xi


def theta_root(e, n_test, n_key, eps):
    """Root of failure_log2(theta) = log2(eps), by 200 bisection steps."""
    target = log(mpf(eps), 2)
    lo, hi = mpf(0), (1 - e) * (1 - mpf(10) ** -15)
    if failure_log2(e, n_test, n_key, hi) > target:
        return None
    for _ in range(200):
        mid = (lo + hi) / 2
        if failure_log2(e, n_test, n_key, mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def gauss(chi, n, delta):
    chi = mpf(chi)
    if chi <= 0 or n <= 0:
        return max(chi, 0), max(chi, 0)
    w = mpf(delta) * sqrt(chi / n)
    return max(chi - w, mpf(0)), chi + w


def floored_upper(count, n, delta, floor):
    chi = mpf(count) / n
    sized = max(chi, mpf(floor) / n)
    if sized <= 0:
        return mpf(0)
    return chi + mpf(delta) * sqrt(sized / n)


def pipeline(p, cells, n_sent):
    """cells[basis][intensity] = (sent, det, err); basis 0 = Z, 1 = X;
    intensity 0 = signal, 1 = decoy, 2 = vacuum."""
    mu, nu = mpf(p["mu"]), mpf(p["nu"])
    delta = mpf(p["delta_sigmas"])
    out = {"abort": ""}
    bases = []
    for b in range(2):
        if sum(c[1] for c in cells[b]) == 0:
            out["abort"] = "no_detections"
            return out
    for b in range(2):
        (s_sent, s_det, s_err), (d_sent, d_det, d_err), _ = cells[b]
        s_sent, d_sent = mpf(s_sent), mpf(d_sent)
        floor = p.get("zero_count_floor", 1.0)
        q_mu_l, _ = gauss(s_det / s_sent, s_sent, delta)
        q_mu_u = floored_upper(s_det, s_sent, delta, floor)
        q_nu_l, _ = gauss(d_det / d_sent, d_sent, delta)
        eq_mu_u = floored_upper(s_err, s_sent, delta, floor)
        eq_nu_u = floored_upper(d_err, d_sent, delta, floor)
        y1 = y1_lower(mu, nu, p["y0"], q_mu_u, q_nu_l)
        if y1 <= 0:
            out["abort"] = "non_positive_yield"
            return out
        e1 = min(max(e1_upper(nu, p["y0"], p["e0"], eq_nu_u, y1), mpf(0)), mpf("0.5"))
        e_mu_u = min(eq_mu_u / q_mu_l, mpf("0.5")) if q_mu_l > 0 else mpf("0.5")
        n_b = mpf(sum(c[0] for c in cells[b]))
        p1s = mpf(p["q_signal"]) * mu * exp(-mu)
        p1d = mpf(p["q_decoy"]) * nu * exp(-nu)
        m1s = n_b * y1 * p1s
        m1a = n_b * y1 * (p1s + p1d)
        m1s_l = max(m1s - delta * sqrt(m1s), mpf(0))
        m1a_l = max(m1a - delta * sqrt(m1a), mpf(0))
        bases.append(
            dict(y1=y1, e1=e1, e_mu_u=e_mu_u, m1s=m1s_l, m1a=m1a_l, sig_det=mpf(s_det))
        )
    ks = []
    thetas = []
    for key in range(2):
        kb, tb = bases[key], bases[1 - key]
        e1 = tb["e1"]
        if e1 <= 0 or e1 >= mpf("0.5"):
            theta = mpf(0)
        else:
            if tb["m1a"] <= 0 or kb["m1s"] <= 0:
                theta = None
            else:
                theta = theta_root(e1, tb["m1a"], kb["m1s"], p["eps_step"])
            if theta is None:
                out["abort"] = "no_feasible_theta"
                return out
        thetas.append(theta)
        e_ph = min(e1 + theta, mpf("0.5"))
        k = kb["m1s"] * (1 - h(e_ph)) - kb["sig_det"] * mpf(p["f"]) * h(kb["e_mu_u"]) - mpf(p["delta_cost"])
        ks.append(max(k, mpf(0)))
    k_tot = ks[0] + ks[1]
    for name, b in (("z", 0), ("x", 1)):
        out["y1_lower_" + name] = bases[b]["y1"]
        out["e1_upper_" + name] = bases[b]["e1"]
        out["m1_signal_lower_" + name] = bases[b]["m1s"]
        out["m1_all_lower_" + name] = bases[b]["m1a"]
        out["theta_" + name] = thetas[b]
    out["k_z"] = ks[0]
    out["k_x"] = ks[1]
    out["k_tot"] = k_tot
    out["rate_bps"] = mpf(p["rep_rate_hz"]) * k_tot / n_sent
    return out


def expected_cells(n_sent, p, gains, qbers):
    probs = [p["q_signal"], p["q_decoy"], 1 - p["q_signal"] - p["q_decoy"]]
    cells = []
    for _ in range(2):
        row = []
        for i in range(3):
            sent = int(mp.floor(mpf(n_sent) * mpf(probs[i]) * mpf("0.25") + mpf("0.5")))
            det = min(int(mp.floor(sent * mpf(gains[i]) + mpf("0.5"))), sent)
            err = min(int(mp.floor(det * mpf(qbers[i]) + mpf("0.5"))), det)
            row.append((sent, det, err))
        cells.append(row)
    return cells


def fmt(v):
    if isinstance(v, str):
        return '"%s"' % v
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def table():
    p = dict(
        mu=0.6, nu=0.2, q_signal=0.75, q_decoy=0.125, f=1.5, e0=0.5, y0=1e-6,
        rep_rate_hz=40e6, delta_sigmas=10.0, eps_step=1e-10, delta_cost=200.0,
    )
    n_sent = 63_000_000
    gains = [mpf("0.067"), mpf("0.022"), mpf("1e-6")]
    qbers = [mpf("0.01"), mpf("0.024"), mpf("0.5")]
    y1 = y1_lower(p["mu"], p["nu"], p["y0"], gains[0], gains[1])
    e1 = e1_upper(p["nu"], p["y0"], p["e0"], qbers[1] * gains[1], y1)
    mu = mpf("0.6")
    r = -mpf("1.5") * gains[0] * h(qbers[0]) + y1 * mu * exp(-mu) * (1 - h(e1))
    cells = expected_cells(n_sent, p, gains, qbers)
    res = pipeline(p, cells, n_sent)
    theta_ref = theta_root(mpf("0.0323"), mpf(10) ** 6, mpf(10) ** 6, mpf("1e-10"))
    lines = [
        "# Generated by tests/oracles/keyrate_mp.py (mpmath, 50 digits). Do not edit.",
        "h_0_01 = " + fmt(h(mpf("0.01"))),
        "y1_lower = " + fmt(y1),
        "e1_upper = " + fmt(e1),
        "asymptotic_rate = " + fmt(r),
        "theta_0_0323_1e6 = " + fmt(theta_ref),
        "n_sent = %d" % n_sent,
        "cells = [" + ", ".join(
            "[" + ", ".join("[%d, %d, %d]" % c for c in row) + "]" for row in cells
        ) + "]",
        "",
        "[finite]",
    ]
    for k in sorted(res):
        lines.append("%s = %s" % (k, fmt(res[k])))
    return "\n".join(lines) + "\n"


def draws(count=1000, seed=20240917):
    rng = random.Random(seed)
    out = ["# Generated by tests/oracles/keyrate_mp.py (mpmath, 50 digits). Do not edit.", ""]
    for _ in range(count):
        mu = rng.uniform(0.3, 0.9)
        nu = rng.uniform(0.05, 0.45) * mu
        q_s = rng.uniform(0.5, 0.85)
        q_d = rng.uniform(0.05, 0.95 - q_s)
        p = dict(
            mu=mu, nu=nu, q_signal=q_s, q_decoy=q_d,
            f=rng.uniform(1.05, 1.6), e0=0.5, y0=10 ** rng.uniform(-7, -5),
            rep_rate_hz=40e6, delta_sigmas=rng.uniform(3, 10),
            eps_step=10 ** rng.uniform(-12, -6), delta_cost=rng.uniform(0, 1000),
        )
        eta = 10 ** rng.uniform(-3, -1.2)
        ed = rng.uniform(0.002, 0.03)
        n_sent = int(10 ** rng.uniform(8, 11))
        gains, qbers = [], []
        for m in (mu, nu, 0.0):
            det = 1 - exp(-mpf(eta) * mpf(m))
            q = mpf(p["y0"]) + det
            gains.append(q)
            qbers.append((mpf(p["e0"]) * mpf(p["y0"]) + mpf(ed) * det) / q)
        cells = expected_cells(n_sent, p, gains, qbers)
        # Decoy closed forms on the exact (unrounded) observables.
        y1 = y1_lower(mu, nu, p["y0"], gains[0], gains[1])
        e1 = e1_upper(nu, p["y0"], p["e0"], qbers[1] * gains[1], y1) if y1 > 0 else mpf(0)
        res = pipeline(p, cells, n_sent)
        out.append("[[draw]]")
        for k in ("mu", "nu", "q_signal", "q_decoy", "f", "y0", "delta_sigmas", "eps_step", "delta_cost"):
            out.append("%s = %s" % (k, fmt(p[k])))
        out.append("q_mu = " + fmt(gains[0]))
        out.append("q_nu = " + fmt(gains[1]))
        out.append("e_nu = " + fmt(qbers[1]))
        out.append("decoy_y1_lower = " + fmt(y1))
        out.append("decoy_e1_upper = " + fmt(e1))
        out.append("n_sent = %d" % n_sent)
        out.append("cells = [" + ", ".join(
            "[" + ", ".join("[%d, %d, %d]" % c for c in row) + "]" for row in cells
        ) + "]")
        for k in sorted(res):
            if res[k] is None:
                continue
            out.append("%s = %s" % (k, fmt(res[k])))
        out.append("")
    return "\n".join(out)


if __name__ == "__main__":
    os.makedirs(FIXTURES, exist_ok=True)
    with open(os.path.join(FIXTURES, "keyrate_table.toml"), "w") as fh:
        fh.write(table())
    with open(os.path.join(FIXTURES, "keyrate_draws.toml"), "w") as fh:
        fh.write(draws())
