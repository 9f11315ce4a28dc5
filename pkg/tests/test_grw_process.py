import numpy as np
import pytest

from models.domain import Detected, DetectorProfile, NeverDetected, SpatialGrid, WaveFunction
from models.errors import CollapseError
from models.observables import gaussian_convolve, gaussian_density, gaussian_packet, integrate, squared_norm
from simulators.grw_process import (
    ConstantRate,
    GrwOptions,
    PositionDependent,
    absorption_profile,
    apply_collapse,
    collapse_rate_density,
    first_detection,
    first_detection_ensemble,
    grw_ensemble,
    outcomes_distribution,
    run_grw,
    sample_collapse_center,
    sample_from_density,
    trace_semigroup,
)
from simulators.propagator import Absorbing, PropagatorConfig


CONSTANT = GrwOptions(mode='constant')


@pytest.fixture
def small_grid():
    return SpatialGrid(0.0, 20.0, 64)


@pytest.fixture
def small_packet(small_grid):
    return gaussian_packet(small_grid, center=10.0, width=2.0, momentum=0.0)


@pytest.fixture
def detector_setup():
    """Packet launched at a rate-2 region on [14, 20]."""
    grid = SpatialGrid(0.0, 20.0, 201)
    psi0 = gaussian_packet(grid, center=8.0, width=1.0, momentum=1.5)
    lam = np.where(grid.x >= 14.0 - 1e-9, 2.0, 0.0)
    profile = DetectorProfile(V=np.zeros(grid.n_points), lam=lam, sigma=0.02)
    config = PropagatorConfig(dt=0.01, t_max=10.0)
    return psi0, profile, config


def test_options_reject_unknown_modes():
    with pytest.raises(ValueError):
        GrwOptions(mode='sometimes')
    with pytest.raises(ValueError):
        GrwOptions(jump_mode='teleport')


def test_rate_kinds_reject_negative_rates():
    with pytest.raises(ValueError):
        ConstantRate(-1.0)
    with pytest.raises(ValueError):
        PositionDependent([0.0, -1.0, 0.0])


@pytest.mark.slow
def test_constant_rate_collapse_counts_are_poisson(small_grid, small_packet):
    profile = DetectorProfile.free(small_grid, lambda0=1.0)
    config = PropagatorConfig(dt=0.1, t_max=3.0)
    records = grw_ensemble(small_packet, profile, config, n=10_000, options=CONSTANT)
    counts = np.array([r.n_events for r in records])
    assert counts.mean() == pytest.approx(3.0, abs=0.07)
    assert counts.var() == pytest.approx(3.0, abs=0.25)
    assert np.mean(counts == 0) == pytest.approx(np.exp(-3.0), abs=0.009)


def test_constant_rate_events_are_ordered_and_normalized(small_grid, small_packet):
    profile = DetectorProfile.free(small_grid, lambda0=2.0)
    config = PropagatorConfig(dt=0.1, t_max=3.0)
    record = run_grw(small_packet, profile, config, rng=11, options=CONSTANT)
    times = record.event_times
    assert np.all(np.diff(times) > 0)
    assert np.all((times > 0) & (times <= 3.0))
    assert squared_norm(record.final_state) == pytest.approx(1.0, abs=1e-10)
    assert record.seed == 11


def test_zero_rate_never_collapses(small_grid, small_packet):
    profile = DetectorProfile.free(small_grid, lambda0=0.0)
    record = run_grw(small_packet, profile, PropagatorConfig(dt=0.1, t_max=2.0), rng=0, options=CONSTANT)
    assert record.n_events == 0
    assert record.rate_vanished


def test_runs_are_reproducible_from_the_seed(small_grid, small_packet):
    profile = DetectorProfile.free(small_grid, lambda0=2.0)
    config = PropagatorConfig(dt=0.1, t_max=3.0)
    first = run_grw(small_packet, profile, config, rng=7, options=CONSTANT)
    second = run_grw(small_packet, profile, config, rng=7, options=CONSTANT)
    assert first.events == second.events
    np.testing.assert_array_equal(first.final_state.values, second.final_state.values)


def test_absorbing_walls_are_rejected(small_grid, small_packet):
    config = PropagatorConfig(dt=0.1, t_max=1.0, bc_right=Absorbing(1.0))
    with pytest.raises(ValueError):
        run_grw(small_packet, DetectorProfile.free(small_grid, lambda0=1.0), config, rng=0)
    with pytest.raises(ValueError):
        trace_semigroup(small_packet, DetectorProfile.free(small_grid), config)


def test_zero_state_cannot_collapse(small_grid):
    zero = WaveFunction(small_grid, np.zeros(small_grid.n_points))
    with pytest.raises(CollapseError):
        sample_collapse_center(zero, ConstantRate(1.0), 0.5, np.random.default_rng(0))


def test_underflowed_jump_is_reported(small_grid):
    values = np.zeros(small_grid.n_points)
    values[0] = 1.0
    psi = WaveFunction(small_grid, values)
    with pytest.raises(CollapseError):
        apply_collapse(psi, 20.0, ConstantRate(1.0), 0.1)


@pytest.mark.parametrize('jump_mode', ['gaussian_root', 'rate_operator'])
def test_jump_localizes_around_centre(jump_mode):
    grid = SpatialGrid(0.0, 20.0, 401)
    broad = gaussian_packet(grid, center=10.0, width=5.0, momentum=0.0)
    after = apply_collapse(broad, 12.0, ConstantRate(1.0), 0.5, jump_mode)
    density = np.abs(after.values) ** 2
    mean = np.sum(grid.weights * grid.x * density) * grid.dx
    assert squared_norm(after) == pytest.approx(1.0, abs=1e-12)
    assert mean == pytest.approx(12.0, abs=0.1)


def test_samples_stay_where_the_density_lives():
    x = np.linspace(0.0, 10.0, 101)
    density = np.zeros(101)
    density[40:61] = 1.0
    rng = np.random.default_rng(5)
    samples = np.array([sample_from_density(x, density, rng) for _ in range(2000)])
    assert samples.min() >= x[39]
    assert samples.max() <= x[61]
    assert samples.mean() == pytest.approx(5.0, abs=0.1)


def test_smeared_absorption_profile(detector_setup):
    psi0, profile, _ = detector_setup
    plain = absorption_profile(profile, psi0.grid, GrwOptions())
    smeared = absorption_profile(profile, psi0.grid, GrwOptions(smeared_absorption=True))
    np.testing.assert_array_equal(plain, profile.lam)
    np.testing.assert_allclose(smeared, gaussian_convolve(psi0.grid, profile.lam, profile.sigma))


def test_survival_decreases_from_one(detector_setup):
    path = trace_semigroup(*detector_setup)
    assert path.survival[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(path.survival) <= 1e-15)
    assert path.survival[-1] < 0.2


def test_ensemble_member_matches_single_run(detector_setup):
    psi0, profile, config = detector_setup
    outcomes = first_detection_ensemble(psi0, profile, config, n=5, base_seed=100)
    for i, outcome in enumerate(outcomes):
        assert outcome == first_detection(psi0, profile, config, rng=100 + i)


def test_ensemble_order_does_not_depend_on_workers(detector_setup):
    psi0, profile, config = detector_setup
    path = trace_semigroup(psi0, profile, config)
    serial = first_detection_ensemble(psi0, profile, config, n=50, path=path)
    threaded = first_detection_ensemble(psi0, profile, config, n=50, workers=4, path=path)
    assert serial == threaded


def test_first_detection_lands_in_the_detector(detector_setup):
    psi0, profile, config = detector_setup
    outcomes = first_detection_ensemble(psi0, profile, config, n=200)
    detected = [o for o in outcomes if isinstance(o, Detected)]
    assert len(detected) > 150
    assert all(13.9 - 1e-12 <= o.position <= 20.0 for o in detected)
    assert all(0.0 < o.time <= 10.0 for o in detected)


def test_no_rate_means_never_detected(small_grid, small_packet):
    config = PropagatorConfig(dt=0.1, t_max=2.0)
    outcome = first_detection(small_packet, DetectorProfile.free(small_grid), config, rng=3)
    assert outcome == NeverDetected()


def _expected_joint(path, time_edges, x_edges):
    """Probability of each (time bin, position bin) cell implied by the semigroup path."""
    x = path.grid.x[path.lo:path.hi]
    dx = path.grid.dx
    step_mass = -np.diff(path.survival) / path.survival[0]
    expected = np.zeros((time_edges.size - 1, x_edges.size - 1))
    for j, mass in enumerate(step_mass):
        if mass <= 0:
            continue
        density = path.densities[j]
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[:-1] + density[1:]) * dx)])
        if cdf[-1] <= 0:
            continue
        fractions = np.diff(np.interp(x_edges, x, cdf / cdf[-1]))
        midpoint = 0.5 * (path.times[j] + path.times[j + 1])
        row = min(int(np.searchsorted(time_edges, midpoint)) - 1, time_edges.size - 2)
        expected[row] += mass * fractions
    return expected


def _checkpoints(path, count=20):
    """`count` evenly spread steps where the survival is neither near 1 nor near 0."""
    s = path.survival / path.survival[0]
    informative = np.flatnonzero((s > 0.02) & (s < 0.98))
    picks = np.linspace(0, informative.size - 1, count).round().astype(int)
    return informative[picks]


def _assert_survival_bands(path, times):
    n = times.size
    z = []
    for k in _checkpoints(path):
        s = path.survival[k] / path.survival[0]
        empirical = np.mean(times > path.times[k])
        z.append(abs(empirical - s) / np.sqrt(s * (1 - s) / n))
    z = np.array(z)
    assert z.size == 20
    assert np.all(z <= 4)
    # at most 10% of the checkpoints may leave the 3 sigma band
    assert np.mean(z > 3) <= 0.1


@pytest.mark.slow
def test_first_detection_statistics_follow_the_semigroup(detector_setup):
    psi0, profile, config = detector_setup
    path = trace_semigroup(psi0, profile, config)
    n = 100_000
    outcomes = first_detection_ensemble(psi0, profile, config, n=n, path=path)

    times = np.array([o.time if isinstance(o, Detected) else np.inf for o in outcomes])
    _assert_survival_bands(path, times)

    time_edges = np.linspace(0.0, 10.0, 21)
    x_edges = np.linspace(path.grid.x[path.lo], path.grid.x[path.hi - 1], 11)
    detected = [o for o in outcomes if isinstance(o, Detected)]
    counts, _, _ = np.histogram2d([o.time for o in detected], [o.position for o in detected],
                                  bins=[time_edges, x_edges])
    expected = n * _expected_joint(path, time_edges, x_edges)
    checked = expected >= 5
    deviations = np.abs(counts[checked] - expected[checked]) / np.sqrt(expected[checked])
    assert checked.sum() > 20
    assert np.mean(deviations > 3) <= 0.05


def test_outcomes_distribution():
    edges = np.linspace(0.0, 2.0, 3)
    outcomes = [Detected(0.5, 1.0), Detected(1.5, 2.0), Detected(1.2, 0.0), NeverDetected()]
    dist = outcomes_distribution(outcomes, edges)
    np.testing.assert_allclose(dist.mass_bulk, [0.25, 0.5])
    assert dist.p_never == 0.25
    assert dist.side_mass('left') == 0.0
    with pytest.raises(ValueError):
        outcomes_distribution([], edges)


def test_position_mode_never_collapses_out_of_reach():
    grid = SpatialGrid(0.0, 20.0, 201)
    psi0 = gaussian_packet(grid, center=5.0, width=1.0, momentum=0.0)
    lam = np.where(grid.x >= 15.0 - 1e-9, 3.0, 0.0)
    profile = DetectorProfile(V=np.zeros(grid.n_points), lam=lam, sigma=0.02)
    config = PropagatorConfig(dt=0.02, t_max=2.0)
    records = [run_grw(psi0, profile, config, rng=seed) for seed in range(50)]
    assert all(r.n_events == 0 for r in records)
    assert all(squared_norm(r.final_state) > 1 - 1e-8 for r in records)


def _first_collapsing_run(psi0, profile, config):
    for seed in range(20):
        record = run_grw(psi0, profile, config, rng=seed)
        if record.n_events:
            return record
    pytest.fail("no trajectory collapsed")


def test_position_mode_is_reproducible_from_the_seed(detector_setup):
    psi0, profile, config = detector_setup
    first = _first_collapsing_run(psi0, profile, config)
    second = run_grw(psi0, profile, config, rng=first.seed)
    assert first.events == second.events
    np.testing.assert_array_equal(first.final_state.values, second.final_state.values)
    assert run_grw(psi0, profile, config, rng=first.seed + 1).events != first.events


def test_position_mode_collapses_inside_the_rate_region(detector_setup):
    psi0, profile, config = detector_setup
    record = _first_collapsing_run(psi0, profile, config)
    assert np.all(np.diff(record.event_times) > 0)
    assert all(e.center >= 14.0 - psi0.grid.dx - 1e-12 for e in record.events)


@pytest.mark.slow
def test_position_mode_first_collapse_follows_the_survival(detector_setup):
    psi0, profile, config = detector_setup
    path = trace_semigroup(psi0, profile, config)
    records = grw_ensemble(psi0, profile, config, n=1000)
    times = np.array([r.events[0].time if r.events else np.inf for r in records])
    _assert_survival_bands(path, times)


def test_collapse_density_integrates_to_the_norm_away_from_walls():
    grid = SpatialGrid(0.0, 80.0, 801)
    psi0 = gaussian_packet(grid, center=40.0, width=1.0, momentum=0.0)
    profile = DetectorProfile.free(grid, sigma=0.5, lambda0=2.0)
    config = PropagatorConfig(dt=0.01, t_max=3.0)
    events = [e for seed in range(10) for e in run_grw(psi0, profile, config, rng=seed, options=CONSTANT).events]
    assert len(events) > 20
    assert max(abs(e.center_mass - e.pre_norm) for e in events) < 1e-8


def test_collapse_density_leaks_at_a_near_wall(small_grid):
    psi0 = gaussian_packet(small_grid, center=1.0, width=1.0, momentum=0.0)
    profile = DetectorProfile.free(small_grid, sigma=0.5, lambda0=10.0)
    record = run_grw(psi0, profile, PropagatorConfig(dt=0.1, t_max=1.0), rng=0, options=CONSTANT)
    assert record.n_events > 0
    assert record.events[0].pre_norm - record.events[0].center_mass > 1e-3


def test_constant_rate_density_carries_the_total_rate(box_grid, matched_packet):
    density = collapse_rate_density(matched_packet, ConstantRate(0.7), 0.5)
    assert integrate(box_grid, density) == pytest.approx(0.7, abs=1e-8)


def test_rate_density_vanishes_off_the_rate_support(box_grid):
    psi = gaussian_packet(box_grid, center=10.0, width=1.0, momentum=0.0)
    lam = np.where(box_grid.x >= 30.0, 3.0, 0.0)
    density = collapse_rate_density(psi, PositionDependent(lam), 0.5)
    assert integrate(box_grid, density) < 1e-12


def test_narrow_kernel_leaves_the_density_pointwise(box_grid, matched_packet):
    lam = 1.0 + 0.05 * box_grid.x
    density = collapse_rate_density(matched_packet, PositionDependent(lam), 0.1)
    near = np.abs(box_grid.x - 20.0) < 4.0
    expected = lam * np.abs(matched_packet.values) ** 2
    np.testing.assert_allclose(density[near], expected[near], rtol=0.01)


def test_centres_of_a_spike_spread_by_sigma():
    grid = SpatialGrid(0.0, 20.0, 401)
    values = np.zeros(grid.n_points)
    values[grid.index_of(12.0)] = 1.0
    spike = WaveFunction(grid, values)
    rng = np.random.default_rng(21)
    n = 4000
    centres = np.array([sample_collapse_center(spike, ConstantRate(1.0), 0.5, rng) for _ in range(n)])
    assert abs(centres.mean() - 12.0) < 3 * 0.5 / np.sqrt(n)
    assert centres.std() == pytest.approx(0.5, rel=0.05)


def test_mirror_symmetric_state_gives_symmetric_centres(box_grid, mirror_packet):
    density = collapse_rate_density(mirror_packet, ConstantRate(1.0), 0.5)
    np.testing.assert_allclose(density, density[::-1], atol=1e-12 * density.max())
    rng = np.random.default_rng(4)
    n = 4000
    centres = np.array([sample_collapse_center(mirror_packet, ConstantRate(1.0), 0.5, rng) for _ in range(n)])
    assert abs(centres.mean() - 20.0) < 3 * centres.std() / np.sqrt(n)


def test_centres_stay_inside_the_rate_region():
    grid = SpatialGrid(0.0, 20.0, 401)
    psi = gaussian_packet(grid, center=10.0, width=3.0, momentum=0.0)
    lam = np.where((grid.x >= 12.0 - 1e-9) & (grid.x <= 14.0 + 1e-9), 2.0, 0.0)
    rng = np.random.default_rng(9)
    centres = np.array([sample_collapse_center(psi, PositionDependent(lam), 0.5, rng) for _ in range(2000)])
    assert centres.min() >= 12.0 - grid.dx - 1e-12
    assert centres.max() <= 14.0 + grid.dx + 1e-12


@pytest.mark.parametrize('jump_mode, power', [('gaussian_root', 1), ('rate_operator', 2)])
def test_jump_of_a_flat_state_takes_the_kernel_shape(jump_mode, power):
    grid = SpatialGrid(0.0, 20.0, 401)
    flat = WaveFunction(grid, np.ones(grid.n_points, dtype=complex))
    after = apply_collapse(flat, 10.0, ConstantRate(1.0), 0.5, jump_mode)
    g = gaussian_density(grid.x - 10.0, 0.5) ** power
    inside = g > 1e-12
    ratio = np.abs(after.values[inside]) ** 2 / g[inside]
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9)
    assert squared_norm(after) == pytest.approx(1.0, abs=1e-12)


def test_wide_kernel_barely_moves_the_state():
    grid = SpatialGrid(0.0, 20.0, 401)
    psi = gaussian_packet(grid, center=10.0, width=0.5, momentum=1.0)
    after = apply_collapse(psi, 10.0, ConstantRate(1.0), 20.0)
    overlap = np.sum(grid.weights * np.conj(psi.values) * after.values) * grid.dx
    assert abs(overlap) ** 2 > 0.99


def test_normalization_tolerance_is_configurable(detector_setup):
    psi0, profile, _ = detector_setup
    config = PropagatorConfig(dt=0.01, t_max=0.5)
    loose = psi0.with_values(psi0.values * np.sqrt(1 + 5e-7))
    path = trace_semigroup(loose, profile, config, eps_tol=1e-6)
    assert path.survival[0] == pytest.approx(1 + 5e-7, abs=1e-12)
    with pytest.raises(ValueError):
        trace_semigroup(loose, profile, config)
    with pytest.raises(ValueError):
        first_detection(loose, profile, config, rng=0)
    assert first_detection(loose, profile, config, rng=0, eps_tol=1e-6) == NeverDetected()
