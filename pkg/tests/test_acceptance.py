"""Acceptance criteria 1-9, each at its stated tolerance.

Every criterion records a PASS/FAIL line that the session summary prints.
"""
import json
import math

import numpy as np
import pytest
from scipy import integrate

from genflow.association import (
    LimitFlow, NetFunction, comb_l1_norm, default_densities, default_tests, fast_assoc,
)
from genflow.cli import run_scenario, strip_volatile
from genflow.epsilon import ScalingLaw, classify_growth, make_epsilon_net
from genflow.fields import check_logtype_derivative, marsden_field, torus_field, zero_field
from genflow.flow import (
    IvpConfig, closed_form_torus, closed_form_torus_limit, flow_identity_residual, flow_point,
    solve_ivp, variational_derivative,
)
from genflow.manifold import Space, distance, distances, wrap
from genflow.mollifier import build_bump

from conftest import ACCEPTANCE
from oracles import TOL, arc, marsden_limit_oracle

NET = make_epsilon_net(1e-2, 1e-8, 7)
RHO_SUP = 0.8285688398691  # [DERIVED] frozen in test_mollifier


def record(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")


# -- 1: Marsden limiting solution --------------------------------------------------------------


def _c1_worst(net):
    f = marsden_field("a", net)
    cfg = IvpConfig.uniform(-5.0, 5.0, 201, tol=TOL)
    rows = []
    for eps in net:
        s = net.sigma(eps)
        worst = 0.0
        for a0 in (-1.2, -0.6, 0.0, 0.3, 0.9):
            tr = solve_ivp(f, eps, [a0], cfg)
            worst = max(worst, max(arc(y[0], marsden_limit_oracle(a0, t)) for t, y in zip(tr.times, tr.states)))
        rows.append((eps, s, worst))
    return rows


def test_c1_marsden_limiting_solution():
    # on the default net no σ is below 0.05 (σ_min ≈ 0.054), so the literal quantifier is empty;
    # the extended net reaches ε = 1e-14 to make it bite, and the default net is checked for all ε
    default = _c1_worst(NET)
    extended = [r for r in _c1_worst(make_epsilon_net(1e-2, 1e-14, 7)) if r[1] < 0.05]
    assert not [r for r in default if r[1] < 0.05]
    ok = len(extended) == 3 and all(w <= 2 * s + 10 * TOL for _, s, w in default + extended)
    worst = max(w / (2 * s + 10 * TOL) for _, s, w in default + extended)
    record("C1", ok, f"sup_t distance / (2 sigma + 10 tol) <= {worst:.3f} over {len(default)} + "
                     f"{len(extended)} eps (extended net covers sigma < 0.05)")
    assert ok


# -- 2: refutation of the limit flow property ----------------------------------------------------


def _c2_rows(run):
    table = run.artifacts["table"]
    f = run.artifacts["field"]
    psi = LimitFlow(table, f, run.artifacts["ivp"])
    rows = []
    for p in table.p_grid:
        a = float(p[0])
        r = distance(f.space, psi(math.pi, psi(-math.pi, p)), p)
        rows.append((a, r))
    return rows, float(table.sigmas[-1])


def _inner(rows):
    return [(a, r) for a, r in rows if abs(a) <= math.pi / 2 - 0.05]


@pytest.mark.xfail(strict=True, reason="for alpha > 0 the composed limit lands on pi/2 and the "
                                       "residual is pi/2 - alpha, below the stated floor; see ledger")
def test_c2_literal_lower_bound(marsden_run):
    rows, s_min = _c2_rows(marsden_run)
    floor = math.pi / 2 - 2 * s_min - 20 * TOL
    inner = _inner(rows)
    bad = [a for a, r in inner if r < floor]
    record("C2 literal", not bad, f"{len(inner) - len(bad)}/{len(inner)} inner grid alpha have "
                                  f"residual >= pi/2 - 2 sigma_min - 20 tol")
    assert not bad


def test_c2_refutation(marsden_run):
    rows, s_min = _c2_rows(marsden_run)
    inner = _inner(rows)
    outer = [(a, r) for a, r in rows if abs(a) >= math.pi / 2 + 0.05]
    # Ψ(-π, α) = -π/2 for every inner α and Ψ(π, -π/2) = π/2, so the residual is π/2 - α
    dev = max(abs(r - (math.pi / 2 - a)) for a, r in inner)
    at0 = min(inner, key=lambda x: abs(x[0]))
    outer_max = max(r for _, r in outer)
    msg = "pw-association held, flow property failed" in marsden_run.report["limiting_flow"]["messages"]
    ok = (dev <= 2 * s_min + 20 * TOL and outer_max <= 20 * TOL and msg
          and at0[1] >= math.pi / 2 - 2 * s_min - 20 * TOL)
    record("C2", ok, f"inner residual = pi/2 - alpha within {dev:.2e}; residual {at0[1]:.4f} at "
                     f"alpha={at0[0]:.3g}; outer max {outer_max:.1e}; message present: {msg}")
    assert ok


# -- 3: per-ε group law ------------------------------------------------------------------------


def test_c3_group_law():
    rng = np.random.default_rng(3)
    cfg = IvpConfig((0.0,), 0.0, TOL, TOL)
    worst = {}
    for name, f in (("marsden", marsden_field("a", NET)), ("torus", torus_field("a", NET))):
        res = []
        for _ in range(100):
            eps = NET.values[rng.integers(len(NET.values))]
            s, t = rng.uniform(-3, 3, 2)
            p = rng.uniform(-math.pi, math.pi, f.space.n)
            res.append(flow_identity_residual(f, eps, s, t, p, cfg))
        worst[name] = max(res)
    ok = all(w <= 20 * TOL for w in worst.values())
    record("C3", ok, "max residual " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f" (bound {20 * TOL:.0e})")
    assert ok


# -- 4: torus closed form ------------------------------------------------------------------------


def _off_lines(a, s_min):
    return abs(wrap(float(a))) > s_min


def test_c4_torus(torus_run):
    table = torus_run.artifacts["table"]
    f = torus_run.artifacts["field"]
    bump = build_bump("a")
    assert table.values.shape[:3] == (7, 21, 21 * 21)
    err = 0.0
    for ke in range(len(table.eps)):
        for kt, t in enumerate(table.t_grid):
            exact = np.array([closed_form_torus(bump, table.sigmas[ke], float(t), a, b) for a, b in table.p_grid])
            err = max(err, float(distances(f.space, table.values[ke, kt], exact).max()))

    s_min = float(table.sigmas[-1])
    lf = torus_run.report["limiting_flow"]["flow_property"]
    flow = [r["residual"] for r in lf["residuals"]
            if all(_off_lines(r["p"][0] + x, s_min) for x in (0.0, r["t"], r["s"] + r["t"]))]
    flow_max = max(flow)

    index = {e: k for k, e in enumerate(table.eps)}
    fast_nodes = fast_fail = 0
    for kt, t in enumerate(table.t_grid):
        keep = [j for j, (a, _) in enumerate(table.p_grid)
                if _off_lines(a, s_min) and _off_lines(a + t, s_min)]
        u = NetFunction(f.space, f.space, lambda e, p, kt=kt: table.values[index[e], kt, table.p_index(p)],
                        f.net, "phi")
        v = fast_assoc(u, lambda p, t=t: closed_form_torus_limit("a", float(t), p[0], p[1]),
                       table.p_grid[keep], noise_floor=10 * TOL)
        fast_nodes += len(keep)
        fast_fail += sum(not r["holds"] for r in v.evidence["points"])

    ok = err <= 10 * TOL and flow_max <= 1e-6 and fast_fail == 0
    record("C4", ok, f"closed form max error {err:.1e}; limit flow residual {flow_max:.1e} over "
                     f"{len(flow)} off-line checks; fast holds at {fast_nodes - fast_fail}/{fast_nodes} nodes")
    assert ok


# -- 5: hierarchy ----------------------------------------------------------------------------------


def test_c5_hierarchy(hierarchy_run):
    rep = hierarchy_run.report["hierarchy"]
    sin, comb = rep["cases"]["sin"], rep["cases"]["comb"]
    dens = {d.name: d for d in default_densities()}
    tests = {t.name: t for t in default_tests()}

    rn = sin["details"]["assoc-Rn"]["evidence"]["integrals"]
    decreasing = all(np.all(np.diff(np.abs(r["integral"])) < 0) for r in rn)
    sq_rel = []
    for r in sin["details"]["model"]["evidence"]["integrals"]:
        if r["f"] == "x^2":
            d = dens[r["phi"]]
            mass, _ = integrate.quad(lambda x: float(d.phi(np.array([x]))[0]), *d.support, epsabs=1e-13, limit=200)
            assert r["eps"][-1] == pytest.approx(1e-4)
            sq_rel.append(abs(r["integral"][-1] - mass / 2) / (mass / 2))
    l1 = comb_l1_norm()
    bound_ok = all(abs(I) <= e * tests[r["f"]].grad_sup * dens[r["phi"]].sup * l1
                   for r in comb["details"]["model"]["evidence"]["integrals"]
                   for e, I in zip(r["eps"], r["integral"]))
    pw = comb["details"]["pw"]
    pw_points = {p["point"][0]: p for p in pw["evidence"]["points"]}
    ok = (hierarchy_run.exit_code == 0 and rep["status"] == "PASS" and decreasing
          and sin["verdicts"]["assoc-Rn"] == "holds" and sin["verdicts"]["model"] == "fails"
          and len(sq_rel) == 2 and max(sq_rel) <= 0.01
          and abs(l1 - 3) <= 1e-6 and bound_ok and comb["verdicts"]["model"] == "holds"
          and pw["verdict"] == "fails" and sorted(pw_points) == [0.5, 1.0, 2.0])
    record("C5", ok, f"status {rep['status']}; |int sin phi| decreasing: {decreasing}; x^2 within "
                     f"{max(sq_rel):.1e} of half mass; ||rho||_1 = {l1:.9f}; comb bound: {bound_ok}; "
                     f"pw on subnets: {pw['verdict']}")
    assert ok


# -- 6: hypothesis checkers --------------------------------------------------------------------------


def test_c6_conditions(marsden_run, torus_run):
    mc = marsden_run.report["conditions"]
    tc = torus_run.report["conditions"]
    gb, lt = mc["global-bound-h"], mc["logtype-derivative"]
    flipped = check_logtype_derivative(
        marsden_field("a", make_epsilon_net(1e-2, 1e-8, 7, ScalingLaw.power(1.0))), 256)
    ok = (gb["verdict"] == "holds" and gb["constant"] <= 1 + 1e-9
          and lt["verdict"] == "holds" and abs(lt["constant"] / RHO_SUP - 1) <= 0.05
          and tc["global-bound-h"]["verdict"] == "fails"
          and tc["global-bound-h"]["growth"]["class"] == "log-type"
          and flipped.verdict == "fails" and flipped.growth.kind == "power"
          and abs(flipped.growth.exponent - 1) <= 0.05)
    record("C6", ok, f"marsden bound C={gb['constant']:.6g}, log-type constant/||rho||_inf = "
                     f"{lt['constant'] / RHO_SUP:.4f}; torus bound {tc['global-bound-h']['verdict']} "
                     f"({tc['global-bound-h']['growth']['class']}); sigma=eps gives {flipped.verdict}, "
                     f"exponent {flipped.growth.exponent:.4f}")
    assert ok


# -- 7: variational correctness ------------------------------------------------------------------------


def test_c7_variational():
    rng = np.random.default_rng(7)
    cfg = IvpConfig((0.0,), 0.0, TOL, TOL)
    worst = 0.0
    for f in (marsden_field("a", NET), torus_field("a", NET)):
        for _ in range(100):
            eps = NET.values[rng.integers(len(NET.values))]
            s = NET.sigma(eps)
            centers = f.layer_list(eps)[0].centers
            while True:  # off the layers: at least 1.05 σ from every center
                p = rng.uniform(-math.pi, math.pi, f.space.n)
                if min(abs(wrap(p[0] - c)) for c in centers) >= 1.05 * s:
                    break
            t = rng.uniform(-3, 3)
            J = variational_derivative(f, eps, t, p, cfg).matrix
            h = s / 100
            fd = np.column_stack([(flow_point(f, eps, t, p + h * d, cfg) - flow_point(f, eps, t, p - h * d, cfg))
                                  / (2 * h) for d in np.eye(f.space.n)])
            worst = max(worst, float(np.linalg.norm(fd - J) / np.linalg.norm(J)))
    ident = 0.0
    for space in (Space.circle(), Space.torus2()):
        z = zero_field(space, NET)
        for _ in range(10):
            J = variational_derivative(z, NET.values[rng.integers(7)], rng.uniform(-3, 3),
                                       rng.uniform(-3, 3, space.n), cfg).matrix
            ident = max(ident, float(np.max(np.abs(J - np.eye(space.n)))))
    ok = worst <= 1e-3 and ident <= 1e-12
    record("C7", ok, f"worst relative error {worst:.1e} over 200 samples; zero field |J - I| = {ident:.1e}")
    assert ok


# -- 8: growth classifier ----------------------------------------------------------------------------------

MODELS = {
    "bounded": lambda e, c, k: c * np.ones_like(e),
    "log-type": lambda e, c, k: c * np.abs(np.log(e)),
    "power": lambda e, c, k: c * e ** (-k),
    "negligible-like": lambda e, c, k: c * e ** k,
}


def test_c8_classifier():
    rng = np.random.default_rng(8)
    e = np.array(NET.values)
    total = correct = 0
    per = {}
    for kind, model in MODELS.items():
        for k in ((1,) if kind in ("bounded", "log-type") else range(1, 6)):
            hits = 0
            for _ in range(100):
                c = 10 ** rng.uniform(-2, 2)
                v = model(e, c, k) * (1 + 0.01 * rng.standard_normal(len(e)))
                g = classify_growth(list(zip(e, v)))
                hits += g.kind == kind
            per[f"{kind}{'' if kind in ('bounded', 'log-type') else k}"] = hits
            total += 100
            correct += hits
    rate = correct / total
    ok = rate >= 0.99 and all(h >= 99 for h in per.values())
    record("C8", ok, f"{correct}/{total} correct ({rate:.1%}); worst class {min(per, key=per.get)} "
                     f"{min(per.values())}/100")
    assert ok


# -- 9: determinism ------------------------------------------------------------------------------------------


def test_c9_determinism(marsden_run, tmp_path):
    again = run_scenario("marsden", {"output": {"dir": str(tmp_path)}})
    assert again.exit_code == 0
    names = sorted(p.name for p in marsden_run.out_dir.iterdir() if p.suffix in (".csv", ".dat"))
    same = {n: (marsden_run.out_dir / n).read_bytes() == (tmp_path / n).read_bytes() for n in names}

    def load(d):
        rep = strip_volatile(json.loads((d / "report.json").read_text()))
        rep["config"]["output"].pop("dir")
        return rep

    json_same = load(marsden_run.out_dir) == load(tmp_path)
    ok = "trajectories.csv" in same and "flowtable.csv" in same and all(same.values()) and json_same
    record("C9", ok, f"byte-identical: {', '.join(n for n, v in same.items() if v)}; "
                     f"report.json equal without timestamp: {json_same}")
    assert ok
