import numpy as np
import pytest

from rdcontrol import (Activator, ControlField, CostSpec, Grid2D, InputGainSpec, ModelSpec, ReducedProblem,
                       RegulatorySpec, Stepper, TimeGrid, adjoint_step, adjoint_sweep, duality_residual, gradcheck,
                       make_initial_condition, make_target, nodal_lefty_preset, reduced_cost, reduced_gradient,
                       simulate, stationarity_residual, tangent_step, tangent_sweep)

NL = nodal_lefty_preset(0.8, 4.0)


def instance(n=8, steps=10, stride=1, seed=0, cp=3, model=NL, upper=1.0):
    rng = np.random.default_rng(seed)
    g = Grid2D(n, n, 10.0, 10.0)
    tg = TimeGrid(steps * 0.5, 0.5)
    y0 = make_initial_condition(g, seed, names=model.names, n=model.n)
    c = ControlField.zeros(g, model.n, tg, stride=stride, upper=upper)
    c = c.with_values(rng.uniform(0.1, 0.9, c.values.shape) * upper)
    return g, tg, y0, c, rng


def test_cost_spec_validation():
    with pytest.raises(ValueError):
        CostSpec(0.0, 1.0, np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        CostSpec(1.0, -1.0, np.zeros((1, 2, 2)))


def test_tangent_step_matches_richardson_fd():
    g, tg, y0, c, rng = instance()
    st = Stepper(NL, g, 0.5)
    y = rng.uniform(20, 40, (2,) + g.shape)
    u = c.values[0]
    w = rng.standard_normal(y.shape)
    h = rng.uniform(-1, 1, u.shape)

    def D(eps):
        yp, mp = st.step(y + eps * w, u + eps * h)
        ym, mm = st.step(y - eps * w, u - eps * h)
        assert mp is None and mm is None
        return (yp - ym) / (2 * eps)

    eps = 1e-3
    rich = (4 * D(eps / 2) - D(eps)) / 3
    exact = tangent_step(st, y, w, h, u)
    assert np.linalg.norm(exact - rich) <= 1e-8 * np.linalg.norm(exact)


def test_tangent_zero_direction_stays_zero():
    g, tg, y0, c, rng = instance()
    traj = simulate(NL, y0, c, tg, 3)
    w, hist = tangent_sweep(traj, np.zeros_like(c.values), keep_history=True)
    assert len(hist) == tg.N + 1 and all(not np.any(x) for x in hist)


def test_tangent_linearity():
    g, tg, y0, c, rng = instance(steps=12, stride=5)
    traj = simulate(NL, y0, c, tg, 4)
    h1, h2 = rng.standard_normal(c.values.shape), rng.standard_normal(c.values.shape)
    a, b = 0.7, -2.3
    lhs = tangent_sweep(traj, a * h1 + b * h2)
    rhs = a * tangent_sweep(traj, h1) + b * tangent_sweep(traj, h2)
    assert np.linalg.norm(lhs - rhs) <= 1e-13 * np.linalg.norm(rhs)


@pytest.mark.parametrize("n,steps,stride,cp", [(8, 10, 1, 3), (12, 25, 4, 7), (16, 40, 3, 100)])
def test_duality(n, steps, stride, cp):
    g, tg, y0, c, rng = instance(n, steps, stride, seed=n, cp=cp)
    traj = simulate(NL, y0, c, tg, cp)
    for _ in range(3):
        h = rng.standard_normal(c.values.shape)
        s = rng.standard_normal(y0.values.shape)
        assert duality_residual(traj, h, s) <= 1e-12


def test_duality_with_clamped_cells():
    reg = RegulatorySpec((Activator(0, 1.0, 1.0),), (), 5.0, 2.0)
    m = ModelSpec([3383.4], [0.339], [30.0], reg, InputGainSpec.linear([10.0]))
    g = Grid2D(8, 8, 10.0, 10.0)
    tg = TimeGrid(3.0, 0.5)
    y0 = np.zeros((1,) + g.shape)
    y0[0, 3, 3] = 200.0
    rng = np.random.default_rng(9)
    c = ControlField.zeros(g, 1, tg, upper=1.0)
    c = c.with_values(rng.uniform(0, 0.01, c.values.shape))
    traj = simulate(m, y0, c, tg, 2, grid=g)
    assert traj.clamp_count.sum() > 0
    h = rng.standard_normal(c.values.shape)
    s = rng.standard_normal(y0.shape)
    assert duality_residual(traj, h, s) <= 1e-12


def test_adjoint_terminal_and_zero_mismatch():
    g, tg, y0, c, rng = instance()
    traj = simulate(NL, y0, c, tg, 3)
    target = traj.final + rng.standard_normal(traj.final.shape)
    prob = ReducedProblem(NL, g, y0, tg, CostSpec(2.5, 0.0, target), 3)
    _, _, _, adj = prob.gradient(c)
    assert np.allclose(adj.terminal, 2.5 * (traj.final - target), rtol=0, atol=0)
    zero = adjoint_sweep(traj, np.zeros_like(traj.final), keep_history=True)
    assert all(not np.any(p) for p in zero.history) and not np.any(zero.sensitivity)


def test_one_species_uniform_adjoint_decay():
    reg = RegulatorySpec((Activator(0),), (), 1.0)
    m = ModelSpec([50.0], [0.2], [0.0], reg, InputGainSpec.linear([1.0]))
    g = Grid2D(6, 5, 10.0, 10.0)
    tg = TimeGrid(4.0, 0.5)
    c = ControlField.zeros(g, 1, tg)
    traj = simulate(m, np.full((1,) + g.shape, 3.0), c, tg, 3, grid=g)
    adj = adjoint_sweep(traj, np.full((1,) + g.shape, 2.0), keep_history=True)
    factor = (1 - 0.05) / (1 + 0.05)
    for k, p in enumerate(adj.history):
        assert np.allclose(p, 2.0 * factor ** (tg.N - k), rtol=1e-13)


def test_zero_coupling_decouples_species(rng):
    m = ModelSpec(NL.diffusion, NL.degradation, [0.0, 0.0], NL.regulatory, NL.gains, NL.names)
    g, tg, y0, c, _ = instance(model=m, steps=15)
    traj = simulate(m, y0, c, tg, 4)
    seed = np.zeros(y0.values.shape)
    seed[0] = rng.standard_normal(g.shape)
    adj = adjoint_sweep(traj, seed, keep_history=True)
    assert all(not np.any(p[1]) for p in adj.history)
    assert np.any(adj.history[0][0])
    # with coupling, the Lefty adjoint picks up Nodal sensitivity
    coupled = adjoint_sweep(simulate(NL, y0, c, tg, 4), seed)
    assert np.any(coupled.initial[1])


def test_cost_zero_for_self_target():
    g = Grid2D(16, 16, 10.0, 10.0)
    tg = TimeGrid(10.0, 0.5)
    y0 = make_initial_condition(g, 0, names=NL.names)
    target = make_target(NL, y0, tg).state
    prob = ReducedProblem(NL, g, y0, tg, CostSpec(1.0, 1e-12, target))
    u0 = ControlField.zeros(g, 2, tg)
    parts, grad, _, _ = prob.gradient(u0)
    assert parts.total == 0.0
    assert not np.any(grad)


def test_control_term_quadrature():
    g = Grid2D(80, 80, 10.0, 10.0)
    tg = TimeGrid(1.0, 0.5)
    c = ControlField.zeros(g, 2, tg)
    c = c.with_values(np.ones_like(c.values))
    y0 = np.full((2,) + g.shape, 10.0)
    prob = ReducedProblem(NL, g, y0, tg, CostSpec(1.0, 2.0, np.zeros_like(y0)))
    assert prob.cost_parts(c).control == pytest.approx(1_280_000.0, rel=1e-14)
    coarse = ControlField(np.ones((1, 2) + g.shape), stride=2)
    assert prob.cost_parts(coarse).control == pytest.approx(1_280_000.0, rel=1e-14)


def test_gradient_structure_linear_gains():
    g, tg, y0, c, rng = instance(steps=8)
    target = rng.uniform(0, 100, y0.values.shape)
    lam = 3.0
    prob = ReducedProblem(NL, g, y0, tg, CostSpec(1.0, lam, target), 3)
    _, grad, _, adj = prob.gradient(c)
    assert np.array_equal(adj.sensitivity[:, 0], 48.0 * adj.slab_mean[:, 0])
    assert np.array_equal(adj.sensitivity[:, 1], 240.0 * adj.slab_mean[:, 1])
    assert np.allclose(grad, lam * c.values + adj.sensitivity, rtol=0, atol=0)


def test_gradient_is_zero_for_zero_lambda_and_matched_target():
    g, tg, y0, c, _ = instance()
    traj = simulate(NL, y0, c, tg, 3)
    grad = reduced_gradient(NL, g, c, y0, CostSpec(1.0, 0.0, traj.final), tg, 3)
    assert not np.any(grad)
    assert reduced_cost(NL, g, c, y0, CostSpec(1.0, 0.0, traj.final), tg, 3) == 0.0


@pytest.mark.parametrize("stride", [1, 4])
def test_gradcheck_small(stride):
    g, tg, y0, c, rng = instance(n=10, steps=20, stride=stride)
    target = rng.uniform(0, 100, y0.values.shape)
    prob = ReducedProblem(NL, g, y0, tg, CostSpec(1.0, 1e-3, target), 6)
    rep = gradcheck(prob, c, n_dirs=3, seed=1)
    assert rep.passed, rep.to_dict()
    assert max(rep.min_errors) <= 1e-6 and max(rep.duality) <= 1e-12


def test_gradient_is_riesz_representative():
    g, tg, y0, c, rng = instance(n=8, steps=6, stride=4)
    target = rng.uniform(0, 100, y0.values.shape)
    prob = ReducedProblem(NL, g, y0, tg, CostSpec(1.0, 0.5, target), 2)
    _, grad, _, _ = prob.gradient(c)
    h = np.zeros_like(c.values)
    h[1, 0, 2, 3] = 1.0  # a single cell of the short trailing slab
    eps = 1e-4
    fd = (prob.cost(c.with_values(c.values + eps * h)) - prob.cost(c.with_values(c.values - eps * h))) / (2 * eps)
    assert prob.inner(grad, h, c) == pytest.approx(fd, rel=1e-6)
    assert prob.inner(grad, h, c) == pytest.approx(grad[1, 0, 2, 3] * 1.0 * 100.0, rel=1e-15)


def _box(values, lower=0.0, upper=1.0):
    return ControlField(np.asarray(values, float).reshape(1, 1, 1, -1), 1, lower, upper)


def test_stationarity_examples(rng):
    u = _box(rng.uniform(0.2, 0.8, 6))
    assert stationarity_residual(u, np.zeros((1, 1, 1, 6))) == 0.0
    top = _box(np.ones(6))
    assert stationarity_residual(top, -rng.uniform(0.1, 5, (1, 1, 1, 6))) == 0.0
    gsmall = rng.uniform(-0.1, 0.1, (1, 1, 1, 6))
    expect = np.linalg.norm(gsmall) / max(1.0, np.linalg.norm(u.values))
    assert stationarity_residual(u, gsmall) == pytest.approx(expect, rel=1e-15)
    tiny = _box(np.full(6, 0.5)).with_values(np.full((1, 1, 1, 6), 0.05))
    assert stationarity_residual(tiny, gsmall * 0.1) == pytest.approx(np.linalg.norm(gsmall * 0.1), rel=1e-15)


def test_stationarity_weighted_inner():
    g, tg, y0, c, rng = instance(steps=5, stride=2)
    prob = ReducedProblem(NL, g, y0, tg, CostSpec(1.0, 0.0, y0.values))
    grad = rng.uniform(-0.05, 0.05, c.values.shape)
    r = stationarity_residual(c, grad, lambda a, b: prob.inner(a, b, c))
    assert r == pytest.approx(prob.norm(grad, c) / max(1.0, prob.norm(c.values, c)), rel=1e-14)


def test_stationarity_invariant_under_blocked_components(rng):
    vals = rng.uniform(0, 1, 40)
    vals[:10], vals[10:20] = 0.0, 1.0
    u = _box(vals)
    g = rng.standard_normal((1, 1, 1, 40))
    extra = np.zeros(40)
    extra[:10] = rng.uniform(0, 10, 10)    # pushes below the lower bound
    extra[10:20] = -rng.uniform(0, 10, 10)  # pushes above the upper bound
    g2 = g.copy()
    g2[..., :10] = np.maximum(g[..., :10], 0)
    g2[..., 10:20] = np.minimum(g[..., 10:20], 0)
    r = stationarity_residual(u, g2)
    assert stationarity_residual(u, g2 + extra.reshape(g.shape)) == pytest.approx(r, rel=1e-15)
