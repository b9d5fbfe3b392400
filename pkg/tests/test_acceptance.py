"""Acceptance criteria 1-12, one test per criterion (several sub-checks each).

Tolerances are pinned here and not derived from the results.  Run with
``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import io
import time

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from xfg import functionals as fn
from xfg import gamma_lab as gl
from xfg import integrands as ig
from xfg import sobolev as sb
from xfg import vector_fields as vf
from xfg.cli import run

SEED = 20240611
UNIT2 = vf.Box.cube(2, 0.0, 1.0)
UNIT3 = vf.Box.cube(3, 0.0, 1.0)
LINE = vf.Box((0.0,), (1.0,))


def field(grid, f):
    return grid.sample(lambda p: f(*(p[..., i] for i in range(grid.dim))))


def spec(f, fam):
    return fn.FunctionalSpec(f, fam, f.p)


def nondegenerate_points(fam, count, rng):
    pts = np.empty((0, fam.n))
    while len(pts) < count:
        cand = rng.uniform(fam.domain.lo, fam.domain.hi, (count, fam.n))
        mask, _ = vf.degenerate_mask(np.asarray(fam.matrices(cand)))
        pts = np.concatenate([pts, cand[~mask]])
    return pts[:count]


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    return run([str(a) for a in argv], out, err), out.getvalue()


# -- 1 ------------------------------------------------------------------------

def test_criterion_01_projection_algebra():
    """Projection algebra at 1000 points per built-in family, under 1 s"""
    rng = np.random.default_rng(SEED)
    families = [vf.euclidean(2), vf.euclidean(3), vf.grushin(), vf.heisenberg()]
    samples = [nondegenerate_points(fam, 1000, rng) for fam in families]
    t0 = time.perf_counter()
    worst = {}
    for fam, pts in zip(families, samples):
        C = vf.coefficient_matrix(fam, pts)
        P = vf.horizontal_projection(fam, pts)
        L = vf.pseudo_inverse_map(fam, pts)
        B = vf.gram_matrix(fam, pts)
        inf = lambda M: np.abs(M).sum(-1).max(-1)  # noqa: E731  (row-sum norm per point)
        idem = inf(P @ P - P) / np.maximum(1.0, inf(P))
        sym = inf(P - np.swapaxes(P, -1, -2))
        repro = inf(C @ P - C) / inf(C)
        right = inf(C @ L - np.eye(fam.m)) / np.linalg.cond(B)
        worst[fam.name] = max(idem.max(), sym.max(), repro.max(), right.max())
    elapsed = time.perf_counter() - t0
    assert all(w <= 1e-12 for w in worst.values()), worst
    assert elapsed < 1.0, elapsed


# -- 2 ------------------------------------------------------------------------

def test_criterion_02_counterexample():
    """Heisenberg |xi|^2 fails compatibility with residual 1 at x=0, xi=(0,0,1)"""
    samples = ig.SampleSpec(np.zeros(3), [0.0, 0.0, 1.0])
    rep = ig.compatibility_check(ig.power(3), vf.heisenberg(), samples)
    assert not rep.passed
    assert rep.worst_residual == 1.0
    x, xi = rep.worst_witness
    assert np.array_equal(x, [0, 0, 0]) and np.array_equal(xi, [0, 0, 1])
    # the default lattice contains x = 0 and the canonical basis, so the witness surfaces there too
    full = ig.compatibility_check(ig.power(3), vf.heisenberg())
    assert not full.passed
    code, out = run_cli("check-compat", "--family", "heisenberg", "--fe", "xi1^2+xi2^2+xi3^2",
                        "--x", "0,0,0", "--xi", "0,0,1")
    assert code == 1
    assert "worst_residual=1.0000000000000000e+00" in out


# -- 3 ------------------------------------------------------------------------

def _round_trip_integrands(m, n):
    quad = ig.from_expression("(2 + x1^2)*eta1^2 + eta1*eta2 + (1 + x2^2)*eta2^2", m, n)
    auto = ig.from_expression("(eta1^2 + eta2^2)^(3/2) + exp(eta1 - eta2)", m, n, p=3)
    gen = ig.from_expression("(1 + sin(x1)^2)*(eta1^4 + eta2^4) + x2^2*eta1^2", m, n, p=4)
    return {"quadratic": quad, "autonomous": auto, "general": gen}


def test_criterion_03_round_trips():
    """lower(lift f) = f on 10^4 samples; lift(lower f_e) = f_e when compatible, not at the witness"""
    rng = np.random.default_rng(SEED + 3)
    for fam in (vf.grushin(), vf.heisenberg()):
        fs = _round_trip_integrands(fam.m, fam.n)
        assert [f.kind for f in fs.values()] == ["quadratic", "autonomous", "general"]
        x = nondegenerate_points(fam, 10_000, rng)
        eta = rng.uniform(-3, 3, (10_000, fam.m))
        for kind, f in fs.items():
            back = ig.lower_to_x(ig.lift_to_euclidean(f, fam), fam)
            want = f(x, eta)
            gap = np.abs(back(x, eta) - want) / (1 + np.abs(want))
            assert gap.max() <= 1e-12, (fam.name, kind, gap.max())

    fam = vf.grushin()
    x = nondegenerate_points(fam, 10_000, rng)
    xi = rng.uniform(-3, 3, (10_000, 2))
    for kind, f in _round_trip_integrands(2, 2).items():
        fe = ig.lift_to_euclidean(f, fam)
        again = ig.lift_to_euclidean(ig.lower_to_x(fe, fam), fam)
        want = fe(x, xi)
        assert (np.abs(again(x, xi) - want) / (1 + np.abs(want))).max() <= 1e-12, kind

    heis = vf.heisenberg()
    fe = ig.power(3)
    again = ig.lift_to_euclidean(ig.lower_to_x(fe, heis), heis)
    witness_x, witness_xi = np.zeros(3), np.array([0.0, 0.0, 1.0])
    assert abs(again(witness_x, witness_xi) - fe(witness_x, witness_xi)) >= 0.5


# -- 4 ------------------------------------------------------------------------

def test_criterion_04_quadratic_pushforward():
    """Closed-form pushforward matches lowering at 1000 points; hand values"""
    rng = np.random.default_rng(SEED + 4)
    for fam in (vf.grushin(), vf.heisenberg()):
        M = rng.standard_normal((fam.n, fam.n))
        a_e = M @ M.T + np.eye(fam.n)
        pts = nondegenerate_points(fam, 1000, rng)
        assert ig.pushforward_consistency(a_e, fam, pts) <= 1e-10, fam.name
    a_e = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.25], [0.0, 0.25, 3.0]])
    assert np.array_equal(ig.quadratic_pushforward(a_e, vf.euclidean(3), [0.2, -0.4, 0.6]), a_e)
    big = vf.grushin(vf.Box.cube(2, -5, 5))
    assert np.allclose(ig.quadratic_pushforward(np.eye(2), big, [2.0, 0.0]), np.diag([1.0, 0.25]),
                       rtol=0, atol=1e-15)
    assert np.allclose(ig.quadratic_pushforward(np.eye(3), vf.heisenberg(), np.zeros(3)), np.eye(2),
                       rtol=0, atol=1e-15)


# -- 5 ------------------------------------------------------------------------

def test_criterion_05_integral_goldens():
    """Psi_2(x3, heisenberg) = 1/6 and Psi_2(x2, grushin) = 1/3 at 64 cells, order >= 1.9"""
    cases = [
        (vf.heisenberg(UNIT3), UNIT3, lambda x, y, z: z, 1 / 6),
        (vf.grushin(UNIT2), UNIT2, lambda x, y: y, 1 / 3),
    ]
    for fam, box, u, exact in cases:
        errs = {}
        for N in (32, 64):
            g = sb.Grid.uniform(box, N)
            errs[N] = abs(fn.psi_p(field(g, u), fam, 2) - exact)
        assert errs[64] <= 1e-3, (fam.name, errs)
        assert np.log2(errs[32] / errs[64]) >= 1.9, (fam.name, errs)


# -- 6 ------------------------------------------------------------------------

def test_criterion_06_affine_residuals():
    """X-affine residuals: linear u exact; x3 gives 1/24, grushin x2 gives 1/12"""
    g = sb.Grid.uniform(vf.Box.cube(3), 16)
    c, r = sb.x_affine_residual(field(g, lambda x, y, z: 1.5 * x - 0.5 * y + 2.0), vf.heisenberg())
    assert r <= 1e-12 and np.allclose(c, [1.5, -0.5], rtol=0, atol=1e-12)
    g = sb.Grid.uniform(UNIT3, 64)
    _, r = sb.x_affine_residual(field(g, lambda x, y, z: z), vf.heisenberg(UNIT3))
    assert abs(r ** 2 - 1 / 24) <= 1e-3
    g = sb.Grid.uniform(UNIT2, 64)
    _, r = sb.x_affine_residual(field(g, lambda x, y: y), vf.grushin(UNIT2))
    assert abs(r ** 2 - 1 / 12) <= 1e-3


# -- 7 ------------------------------------------------------------------------

def _convex_suite(rng, count=20):
    """Seeded convex autonomous integrands on R^2."""
    out = []
    for k in range(count):
        kind = k % 5
        if kind == 0:
            p = rng.uniform(1.2, 4.0)
            out.append(ig.power(2, p, rng.uniform(0.5, 2.0)))
        elif kind == 1:
            M = rng.standard_normal((2, 2))
            Q = M @ M.T + 0.1 * np.eye(2)
            out.append(ig.autonomous(lambda v, Q=Q: np.einsum("...i,ij,...j->...", v, Q, v), 2))
        elif kind == 2:
            A = rng.standard_normal((2, 2))
            p = rng.uniform(1.5, 3.0)
            out.append(ig.autonomous(lambda v, A=A, p=p: np.linalg.norm(v @ A.T, axis=-1) ** p, 2, p=p))
        elif kind == 3:
            w = rng.standard_normal(2)
            out.append(ig.autonomous(lambda v, w=w: np.logaddexp(0.0, v @ w) + np.sum(v * v, -1), 2))
        else:
            q = rng.uniform(1.1, 3.0, 2)
            out.append(ig.autonomous(lambda v, q=q: np.sum(np.abs(v) ** q, -1) + np.sqrt(1 + np.sum(v * v, -1)),
                                     2, p=float(q.max())))
    return out


def test_criterion_07_jensen():
    """Jensen mollification inequality: 20 integrands x 5 fields x 3 eps, no violations"""
    rng = np.random.default_rng(SEED + 7)
    fam = vf.grushin()
    g = sb.Grid.uniform(fam.domain, 40)
    outer = sb.whole(g)
    inner = sb.Subdomain.of((-0.6, -0.6), (0.6, 0.6))
    fields = []
    for _ in range(5):
        k = rng.standard_normal((3, 2)) * 2
        ph = rng.uniform(0, 2 * np.pi, 3)
        fields.append(field(g, lambda x, y, k=k, ph=ph: sum(np.sin(a * x + b * y + c) for (a, b), c in zip(k, ph))))
    integrands = _convex_suite(rng)
    violations = 0
    for f in integrands:
        assert ig.convexity_check(f, ig.default_samples(fam.domain, 2, per_axis=3)).passed
        for u in fields:
            for eps in (0.1, 0.2, 0.3):
                violations += fn.jensen_mollification_check(
                    spec(f, fam), u, eps, inner, outer).violations
    assert violations == 0

    for f in integrands:
        c = rng.standard_normal(2)
        w = sb.VectorSampleField(g, np.broadcast_to(c, g.cell_shape + (2,)).copy())
        for eps in (0.1, 0.2, 0.3):
            lhs, _ = fn.jensen_sides(f, w, eps, inner, outer)
            exact = fn.quadrature(f(g.cell_centers(), w.values), g, inner)
            assert abs(lhs - exact) <= 1e-12 * max(1.0, abs(exact))


# -- 8 ------------------------------------------------------------------------

def test_criterion_08_mollifier_approximation():
    """Interior W^{1,2}_X errors decrease (5% noise) over eps 0.4..0.05, final < initial/4"""
    fam = vf.euclidean(2)
    g = sb.Grid.uniform(fam.domain, 200)
    interior = sb.Subdomain.of((-0.5, -0.5), (0.5, 0.5))
    eps = [0.4, 0.2, 0.1, 0.05]
    outcomes = {}
    for name, u in (("x1*x2", lambda x, y: x * y), ("|x1|", lambda x, y: np.abs(x))):
        rep = sb.mollifier_approx_check(field(g, u), fam, eps, interior, p=2.0, noise=0.05)
        outcomes[name] = (rep.monotone, rep.reduction, rep.errors)
    for name, (monotone, reduction, errors) in outcomes.items():
        assert monotone, (name, errors)
    for name, (monotone, reduction, errors) in outcomes.items():
        assert reduction > 4.0, (name, reduction, errors)


# -- 9 ------------------------------------------------------------------------

def _series_oracle(grid, member):
    """Independent sparse direct solve of the 1D two-phase problem with u(0)=0, u(1)=1."""
    x = grid.axes()[0]
    h = np.diff(x)
    a = member.a(grid.cell_centers())[..., 0, 0]
    w = a / h
    n = len(x)
    K = sps.diags([np.r_[w, 0] + np.r_[0, w], -w, -w], [0, 1, -1], shape=(n, n)).tocsr()
    inner = slice(1, n - 1)
    rhs = -K[inner][:, [n - 1]].toarray().ravel()
    u = np.zeros(n)
    u[-1] = 1.0
    u[inner] = spla.spsolve(K[inner][:, inner].tocsc(), rhs)
    return float(np.sum(w * np.diff(u) ** 2))


def test_criterion_09_homogenization_1d():
    """1D two-phase laminate: minima converge to 1.6 within 2%, brute force agrees, under 30 s"""
    t0 = time.perf_counter()
    hs = [2, 4, 8, 16, 32, 64]
    seq = gl.SequenceSpec.laminate(1.0, 4.0, 0.5, hs, oracle=True)
    fam = vf.euclidean(1, LINE)
    g = sb.Grid.uniform(LINE, 4096)
    tmpl = gl.EnergyProblem(spec(seq.member(hs[0]), fam), g, lambda p: p[..., 0])
    rep = gl.gamma_min_study(seq, tmpl, g, threshold=0.02)
    elapsed = time.perf_counter() - t0
    assert rep.reference == gl.homogenization_oracle_1d(1.0, 4.0, 0.5) == 1.6
    assert rep.verdict
    assert rep.rows[-1]["gap"] / 1.6 < 0.02
    brute = _series_oracle(g, seq.member(64))
    assert abs(brute - 1.6) / 1.6 < 0.02
    assert elapsed < 30.0, elapsed


# -- 10 -----------------------------------------------------------------------

def test_criterion_10_j2_study():
    """J2 sequence (1+1/h)|eta|^2 over heisenberg: gaps ~ 1/h, pointwise gaps exact"""
    fam = vf.heisenberg(UNIT3)
    hs = [2, 4, 8, 16, 32, 64]
    seq = gl.SequenceSpec.scaled_power(2, hs)
    g = sb.Grid.uniform(UNIT3, 16)
    tmpl = gl.EnergyProblem(spec(seq.member(hs[0]), fam), g,
                            lambda p: p[..., 0] * p[..., 1] + p[..., 2] ** 2, tether=1e-2, target=0.0)
    rep = gl.gamma_min_study(seq, tmpl, g)
    slope = np.polyfit(np.log(hs), np.log(rep.gaps()), 1)[0]
    assert 0.9 <= -slope <= 1.1, slope

    u = field(g, lambda x, y, z: z)
    check = gl.pointwise_limit_functional_check([(h, seq.member(h)) for h in hs], seq.limit, fam, u, tol=1.0)
    F = check.details["limit_value"]
    rel = np.abs(np.array(check.details["gaps"]) - F / np.array(hs)) / (F / np.array(hs))
    assert rel.max() <= 1e-10, rel


# -- 11 -----------------------------------------------------------------------

def test_criterion_11_measure_properties():
    """Additivity over 4-box partitions; monotone and superadditive on 100 triples"""
    rng = np.random.default_rng(SEED + 11)
    g = sb.Grid.uniform(UNIT2, 16)
    fam = vf.grushin(UNIT2)
    u = field(g, lambda x, y: np.sin(3 * x) * np.cos(2 * y) + x * y)
    s = spec(ig.from_expression("(1 + x1^2)*eta1^2 + eta2^4", 2, 2, p=4), fam)
    quads = [sb.Subdomain.of((0, 0), (0.5, 0.5)), sb.Subdomain.of((0.5, 0), (1, 0.5)),
             sb.Subdomain.of((0, 0.5), (0.5, 1)), sb.Subdomain.of((0.5, 0.5), (1, 1))]
    total = fn.evaluate_functional(s, u)
    parts = sum(fn.evaluate_functional(s, u, q) for q in quads)
    assert abs(total - parts) <= 1e-10 * (1 + total)

    integrands = [ig.power(2, 2.0), ig.power(2, 3.0), ig.from_expression("(2 + x2)*eta1^2 + eta2^2", 2, 2),
                  ig.from_expression("eta1^4 + (eta1 - eta2)^2", 2, 2, p=4)]
    for _ in range(100):
        vals = rng.standard_normal(g.resolution)
        f = integrands[rng.integers(len(integrands))]
        i, j = rng.integers(1, 16, 2) / 16
        partition = [sb.Subdomain.of((0, 0), (i, j)), sb.Subdomain.of((i, 0), (1, j)),
                     sb.Subdomain.of((0, j), (i, 1)), sb.Subdomain.of((i, j), (1, 1))]
        rep = fn.measure_property_check(spec(f, fam), sb.ScalarField(g, vals), partition, sb.whole(g), tol=1e-10)
        assert rep.passed, rep.summary()


# -- 12 -----------------------------------------------------------------------

def test_criterion_12_lic_scan():
    """Grushin flags exactly the x1=0 nodes; (d1, 0) is fully degenerate and warns"""
    g = sb.Grid.uniform(vf.Box.cube(2), 100)
    rep = vf.lic_scan(vf.grushin(), g, 1e-10)
    nodes = g.nodes().reshape(-1, 2)
    expected = nodes[nodes[:, 0] == 0.0]
    assert rep.degenerate_samples == len(expected) == 101
    assert np.array_equal(rep.degenerate_locations, expected)

    flat = vf.custom([["1", "0"], ["0", "0"]], 2)
    rep = vf.lic_scan(flat, g, 1e-10)
    assert rep.degenerate_fraction == 1.0
    g2 = ig.from_expression("eta1^2 + 2*eta2^2", 2, 2)
    uniq = ig.representation_uniqueness_check(ig.power(2), g2, flat)
    assert uniq.passed
    assert uniq.warnings
