"""
Launch vehicle navigation starter.
"""
# pylint: disable=too-many-locals
from config.constants import DEFAULT_OUTPUT_PATH, SCENARIO_CONFIG_PATH
from core_utils.nav.filter_kind import FilterKind
from core_utils.nav.time_decorator import report_time
from launch_nav.estimators import run_filter
from launch_nav.scenario import build_dynamics, generate_observations, generate_truth, load_scenario


@report_time
def main() -> None:
    """
    Run every filter once on the CRS-5 scenario.
    """
    cfg = load_scenario(SCENARIO_CONFIG_PATH)
    truth = generate_truth(cfg)
    stream = generate_observations(truth, cfg)

    result = None
    for kind in FilterKind:
        result = run_filter(kind, cfg.initial_belief.to_belief(), stream, build_dynamics(cfg),
                            cfg.process_noise(kind), cfg.site, cfg.measurement_settings(),
                            cfg.filter.unscented, truth.state_at)
        result.export(DEFAULT_OUTPUT_PATH / f'run_{kind}_k{cfg.channels}.csv')
        print(f'{kind.label}: mean position error {result.mean_position_error:.2f} m, '
              f'mean step {result.mean_step_ms:.2f} ms')
    assert result is not None, 'Demo does not work correctly'


if __name__ == '__main__':
    main()
