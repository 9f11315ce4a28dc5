import math
from pathlib import Path

import pytest

from experiments.config import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    load_config,
    override,
    parse_config,
    read_bindings,
    serialize_config,
)


ABR = """\
model=abr
x_max=40
n_points=401
packet_center=20
packet_width=2
packet_momentum=2
kappa_right=2
dt=0.01
t_max=20
"""


def _errors(text):
    with pytest.raises(ConfigError) as excinfo:
        parse_config(text)
    return excinfo.value.errors


def test_minimal_abr_config_fills_defaults():
    config = parse_config(ABR)
    assert config.model == 'abr'
    assert config.run_name == 'abr'
    assert config.x_min == 0.0
    assert config.bc_left == 'neumann'
    assert config.bc_right == 'absorbing'
    assert config.n_bins == 200
    assert config.eps_tol == 1e-8
    assert config.ensemble_size == 1000
    assert config.output_dir == 'results'
    assert not config.is_stochastic


def test_range_error_names_the_field():
    errors = _errors(ABR.replace('kappa_right=2', 'kappa_right=-1'))
    assert len(errors) == 1
    assert errors[0].startswith('kappa_right:')


def test_duplicate_key_lists_both_lines():
    errors = _errors(ABR + "dt=0.02\n")
    assert errors == ["dt: duplicate key (line 8, line 10)"]


def test_unknown_key():
    errors = _errors(ABR + "kapa_right=2\n")
    assert errors == ["kapa_right: unknown key"]


def test_missing_required_field():
    errors = _errors(ABR.replace('x_max=40\n', ''))
    assert errors == ["x_max: missing required field"]


def test_every_problem_is_reported_at_once():
    text = ABR.replace('x_max=40\n', '').replace('dt=0.01', 'dt=0') + "colour=blue\nt_max=30\n"
    errors = _errors(text)
    joined = "\n".join(errors)
    assert "t_max: duplicate key" in joined
    assert "x_max: missing required field" in joined
    assert "colour: unknown key" in joined
    assert any(e.startswith('dt:') for e in errors)
    assert len(errors) == 4


def test_cross_field_rules_are_collected():
    text = ABR.replace('kappa_right=2\n', '').replace('t_max=20', 't_max=0.001')
    errors = _errors(text)
    assert "kappa_right: required when bc_right=absorbing" in errors
    assert any(e.startswith('t_max: must be at least dt') for e in errors)


def test_abr_needs_an_absorbing_side():
    errors = _errors(ABR + "bc_right=neumann\n")
    assert any(e.startswith('bc_left/bc_right') for e in errors)


def test_packet_or_state_file(tmp_path):
    errors = _errors(ABR.replace('packet_width=2\n', ''))
    assert errors == ["packet_width: required unless initial_state_file is given"]
    state = tmp_path / 'psi0.txt'
    state.write_text("0 0\n")
    text = "\n".join(l for l in ABR.splitlines() if not l.startswith('packet_')) + f"\ninitial_state_file={state}\n"
    assert parse_config(text).initial_state_file == str(state)


def test_missing_state_file_is_a_config_error(tmp_path):
    missing = tmp_path / 'nowhere.txt'
    text = "\n".join(l for l in ABR.splitlines() if not l.startswith('packet_')) + f"\ninitial_state_file={missing}\n"
    assert _errors(text) == [f"initial_state_file: no such file {str(missing)!r}"]


def test_omitted_resolution_comes_from_the_packet():
    config = parse_config(ABR.replace('n_points=401\n', '').replace('dt=0.01\n', ''))
    # k0 = 2 plus three momentum spreads 1/(2 w) = 0.75
    dx = 2 * math.pi / (20 * 2.75)
    assert config.n_points == math.ceil(40 / dx) + 1
    grid_dx = 40 / (config.n_points - 1)
    assert grid_dx <= dx
    assert config.dt == pytest.approx(grid_dx ** 2)


def test_omitted_dt_follows_the_given_grid():
    config = parse_config(ABR.replace('dt=0.01\n', '').replace('n_points=401', 'n_points=201'))
    assert config.n_points == 201
    assert config.dt == pytest.approx(0.2 ** 2)
    heavy = parse_config(ABR.replace('dt=0.01\n', '') + "mass=2\nhbar=0.5\n")
    assert heavy.dt == pytest.approx(0.1 ** 2 * 2 / 0.5)


def test_filled_resolution_survives_serialization():
    config = parse_config(ABR.replace('n_points=401\n', '').replace('dt=0.01\n', ''))
    text = serialize_config(config)
    assert f"n_points={config.n_points}" in text
    assert parse_config(text).model_dump() == config.model_dump()


def test_state_file_needs_an_explicit_grid(tmp_path):
    state = tmp_path / 'psi0.txt'
    state.write_text("0 0\n")
    text = "\n".join(l for l in ABR.splitlines() if not l.startswith(('packet_', 'n_points')))
    assert _errors(text + f"\ninitial_state_file={state}\n") == [
        "n_points: required unless packet_momentum and packet_width are given"
    ]


def test_model_specific_requirements():
    soft = ABR.replace('model=abr', 'model=soft')
    errors = _errors(soft)
    assert "layer_length: required for model=soft" in errors
    assert "layer_rate: required for model=soft" in errors

    study = ABR.replace('model=abr', 'model=limit_study') + "layer_length=1\n"
    assert _errors(study) == ["layer_kappa: required for model=limit_study"]

    grw = ABR.replace('model=abr', 'model=grw_constant').replace('kappa_right=2', 'bc_right=neumann')
    assert _errors(grw) == ["lambda0: must be positive for model=grw_constant"]


def test_layered_models_ignore_bc_right():
    text = ABR.replace('model=abr', 'model=soft').replace('kappa_right=2\n', '') + "layer_length=0.5\nlayer_rate=4\n"
    config = parse_config(text)
    assert config.bc_right == 'absorbing'
    assert config.kappa_right is None


def test_collapse_models_reject_absorbing_walls():
    text = ABR.replace('model=abr', 'model=grw_first_detection') + "rate_value=2\nrate_left=30\n"
    errors = _errors(text)
    assert errors == ["bc_right: collapse models need reflecting walls, not absorbing"]


def test_rate_region_must_be_ordered():
    text = (ABR.replace('model=abr', 'model=grw_first_detection').replace('kappa_right=2', 'bc_right=neumann')
            + "rate_value=2\nrate_left=30\nrate_right=10\n")
    assert _errors(text) == ["rate_right: must exceed rate_left"]


def test_radial_geometry_rules():
    errors = _errors(ABR + "geometry=radial\nx_min=1\n")
    assert "x_min: must be 0 for geometry=radial" in errors
    assert "bc_left: must be dirichlet for geometry=radial" in errors
    config = parse_config(ABR + "geometry=radial\nbc_left=dirichlet\n")
    assert config.geometry == 'radial'


def test_radial_geometry_is_only_for_the_boundary_rule():
    soft = (ABR.replace('model=abr', 'model=soft').replace('kappa_right=2\n', '')
            + "layer_length=0.5\nlayer_rate=4\ngeometry=radial\nbc_left=dirichlet\n")
    assert _errors(soft) == ["geometry: radial is only supported for model=abr, not soft"]


def test_comments_quotes_and_blank_values():
    text = "# leading comment\n" + ABR.replace('model=abr', "model='abr'  # inline") + "run_name=\n"
    config = parse_config(text)
    assert config.model == 'abr'
    assert config.run_name == 'abr'


def test_key_without_value():
    with pytest.raises(ConfigError) as excinfo:
        read_bindings("model\n")
    assert excinfo.value.errors == ["model: no value given (line 1)"]


def test_serialization_round_trip():
    config = parse_config(ABR + "run_name=sweeps/k=2\nsmeared_absorption=true\nrobin_alpha_left=-0.25\n")
    text = serialize_config(config)
    assert "smeared_absorption=true" in text
    assert "run_name=sweeps/k=2" in text
    assert "kappa_left" not in text
    again = parse_config(text)
    assert again.model_dump() == config.model_dump()
    assert serialize_config(again) == text


def test_hash_is_stable_and_sensitive():
    first = parse_config(ABR)
    assert config_hash(first) == config_hash(parse_config("# reordered\n" + "\n".join(reversed(ABR.splitlines()))))
    assert config_hash(first) != config_hash(parse_config(ABR.replace('dt=0.01', 'dt=0.02')))
    assert len(config_hash(first)) == 64


def test_override_revalidates():
    config = parse_config(ABR)
    changed = override(config, 'kappa_right', '4', run_name='abr/kappa_right=4')
    assert changed.kappa_right == 4.0
    assert changed.run_name == 'abr/kappa_right=4'
    assert config.kappa_right == 2.0
    with pytest.raises(ConfigError):
        override(config, 'kappa_right', '-4')
    with pytest.raises(ConfigError) as excinfo:
        override(config, 'kapa', '4')
    assert excinfo.value.errors == ["kapa: unknown key"]


def test_load_config(write_config):
    path = write_config(ABR)
    assert isinstance(load_config(path), ExperimentConfig)
    with pytest.raises(ConfigError) as excinfo:
        load_config(path.parent / 'missing.cfg')
    assert excinfo.value.errors[0].startswith('cannot read')


@pytest.mark.parametrize('name', ['abr', 'soft', 'grw_constant', 'grw_first_detection', 'limit_study', 'radial'])
def test_shipped_configs_are_valid(name):
    config = load_config(Path(__file__).parent.parent / 'config' / f'{name}.cfg')
    assert config.run_name
