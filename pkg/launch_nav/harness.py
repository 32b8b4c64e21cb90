"""
Monte Carlo campaigns, timing benchmarks and the command-line interface.
"""

# pylint: disable=too-many-arguments, too-many-locals, redefined-builtin
import dataclasses
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence

import numpy as np
import pandas as pd
import simplejson as json
from pydantic import ValidationError
from tap import Tap
from tqdm import tqdm

from config.constants import DEFAULT_OUTPUT_PATH, SCENARIO_CONFIG_PATH
from config.reference_scores import ReferenceMetric, ReferenceScores
from config.scenario_settings import ScenarioConfig
from core_utils.nav.campaign_evaluator import AbstractCampaignEvaluator
from core_utils.nav.filter_kind import FilterKind, MeasurementMode
from core_utils.nav.time_decorator import report_time
from launch_nav.estimators import FilterRun, run_filter
from launch_nav.gnss import GnssObservation, export_observations
from launch_nav.scenario import (ObservationSynthesizer, TruthLog, build_dynamics,
                                 generate_observations, generate_truth, load_scenario)

#: Environment variable holding the campaign worker count
WORKERS_ENV = 'LAUNCH_NAV_WORKERS'

#: Columns of the campaign summary
SUMMARY_COLUMNS = ['filter', 'channels', 'median_pos_err_m', 'mean_pos_err_m', 'p95_pos_err_m',
                   'median_vel_err_mps', 'mean_step_ms', 'reduction_vs_ukf_pct', 'pos_err_ratio',
                   'diverged_runs', 'runs', 'mean_pdop', 'sigma_rho_m']


class ConfigurationError(Exception):
    """
    Error for invalid command-line options or environment.
    """


class DivergenceThresholdError(Exception):
    """
    Error for a share of diverged runs above the configured threshold.
    """


def position_error_ratio(pdop: float, sigma_rho: float, median_err: float) -> float:
    """
    Geometry-scaled noise over the median position error.

    Args:
        pdop (float): Position dilution of precision
        sigma_rho (float): Pseudo-range noise standard deviation, m
        median_err (float): Median position error, m

    Returns:
        float: Dimensionless ratio

    Raises:
        ValueError: In case of a non-positive median error
    """
    if not median_err > 0:
        raise ValueError(f'median position error must be positive, got {median_err}')
    return pdop * sigma_rho / median_err


def reduction_vs_ukf(step_ms: float, ukf_step_ms: float) -> float:
    """
    Processing time saved relative to the unscented Kalman filter.

    Args:
        step_ms (float): Mean step duration of a filter, ms
        ukf_step_ms (float): Mean step duration of the unscented Kalman filter, ms

    Returns:
        float: Reduction, percent
    """
    return 100.0 * (1.0 - step_ms / ukf_step_ms)


class ReportEvaluator(AbstractCampaignEvaluator):
    """
    Aggregation of per-run campaign results into per-filter statistics.
    """

    def __init__(self, filters: Iterable[FilterKind], runs: pd.DataFrame, sigma_rho: float) -> None:
        """
        Initialize an instance of ReportEvaluator.

        Args:
            filters (Iterable[FilterKind]): Filters to summarize
            runs (pandas.DataFrame): One row per run, channel count and filter
            sigma_rho (float): Pseudo-range noise standard deviation, m
        """
        super().__init__(filters)
        self._runs = runs
        self._sigma_rho = sigma_rho

    def run(self) -> pd.DataFrame:
        """
        Summarize every filter at every channel count.

        Returns:
            pandas.DataFrame: Summary table
        """
        rows = []
        for channels in sorted(self._runs['channels'].unique()):
            block = self._runs[self._runs['channels'] == channels]
            ukf = block[block['filter'] == str(FilterKind.UKF)]
            ukf_step = float(ukf['mean_step_ms'].mean()) if len(ukf) else math.nan
            for kind in self._filters:
                group = block[block['filter'] == str(kind)]
                if group.empty:
                    continue
                errors = group['mean_pos_err_m'].to_numpy(dtype=float)
                median = float(np.median(errors))
                mean_pdop = float(group['mean_pdop'].mean())
                step = float(group['mean_step_ms'].mean())
                rows.append({
                    'filter': str(kind),
                    'channels': int(channels),
                    'median_pos_err_m': median,
                    'mean_pos_err_m': float(np.mean(errors)),
                    'p95_pos_err_m': float(np.percentile(errors, 95)),
                    'median_vel_err_mps': float(np.median(group['mean_vel_err_mps'])),
                    'mean_step_ms': step,
                    'reduction_vs_ukf_pct': reduction_vs_ukf(step, ukf_step),
                    'pos_err_ratio': position_error_ratio(mean_pdop, self._sigma_rho, median)
                    if median > 0 else math.nan,
                    'diverged_runs': int(group['diverged'].sum()),
                    'runs': len(group),
                    'mean_pdop': mean_pdop,
                    'sigma_rho_m': self._sigma_rho,
                })
        return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


@dataclasses.dataclass
class MonteCarloReport:
    """
    Per-run results of a campaign and their summary.
    """

    runs: pd.DataFrame
    filters: tuple[FilterKind, ...]
    sigma_rho: float

    def summary(self) -> pd.DataFrame:
        """
        Per-filter statistics at every channel count.

        Returns:
            pandas.DataFrame: Summary table
        """
        return ReportEvaluator(self.filters, self.runs, self.sigma_rho).run()

    def divergence_share(self) -> float:
        """
        Largest share of diverged runs over filters and channel counts.

        Returns:
            float: Share between 0 and 1
        """
        summary = self.summary()
        if summary.empty:
            return 0.0
        return float((summary['diverged_runs'] / summary['runs']).max())

    def ordering_confidence(self, better: FilterKind, worse: FilterKind, channels: int,
                            resamples: int = 1000, seed: int = 0) -> float:
        """
        Bootstrap share of resampled campaigns whose median errors keep two filters in order.

        Runs are resampled with replacement and both filters keep the same runs.

        Args:
            better (FilterKind): Filter expected to have the lower median error
            worse (FilterKind): Filter expected to have the higher median error
            channels (int): Channel count
            resamples (int): Bootstrap resamples
            seed (int): Resampling seed

        Returns:
            float: Share between 0 and 1

        Raises:
            ValueError: In case either filter has no runs at the channel count
        """
        block = self.runs[self.runs['channels'] == channels]
        errors = block.pivot(index='run', columns='filter', values='mean_pos_err_m')
        if str(better) not in errors or str(worse) not in errors:
            raise ValueError(f'no {better.label} and {worse.label} runs at {channels} channels')
        paired = errors[[str(better), str(worse)]].dropna().to_numpy(dtype=float)
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, len(paired), size=(resamples, len(paired)))
        medians = np.median(paired[picks], axis=1)
        return float(np.mean(medians[:, 0] <= medians[:, 1]))

    def export(self, out_dir: Path) -> None:
        """
        Save per-run results and the summary as CSV.

        Args:
            out_dir (Path): Destination directory
        """
        out_dir.mkdir(parents=True, exist_ok=True)
        self.runs.to_csv(out_dir / 'runs.csv', index=False)
        self.summary().to_csv(out_dir / 'summary.csv', index=False)


@dataclasses.dataclass
class TimingReport:
    """
    Mean per-step processing time of every filter.
    """

    table: pd.DataFrame

    def reduction(self, kind: FilterKind) -> float:
        """
        Processing time saved relative to the unscented Kalman filter.

        Args:
            kind (FilterKind): Filter

        Returns:
            float: Reduction, percent
        """
        row = self.table[self.table['filter'] == str(kind)]
        return float(row['reduction_vs_ukf_pct'].iloc[0])

    def step_ms(self, kind: FilterKind) -> float:
        """
        Mean step duration of a filter.

        Args:
            kind (FilterKind): Filter

        Returns:
            float: Duration, ms
        """
        row = self.table[self.table['filter'] == str(kind)]
        return float(row['mean_step_ms'].iloc[0])

    def export(self, path: Path) -> None:
        """
        Save the timing table as CSV.

        Args:
            path (Path): Destination file
        """
        path.parent.mkdir(parents=True, exist_ok=True)
        self.table.to_csv(path, index=False)


def _run_record(run: int, channels: int, result: FilterRun,
                stream: Sequence[GnssObservation]) -> dict:
    geometry = [observation.pdop for observation in stream if not math.isnan(observation.pdop)]
    return {
        'run': run,
        'channels': channels,
        'filter': str(result.kind),
        'mean_pos_err_m': result.mean_position_error,
        'mean_vel_err_mps': result.mean_velocity_error,
        'mean_step_ms': result.mean_step_ms,
        'mean_pdop': float(np.mean(geometry)) if geometry else math.nan,
        'diverged': result.diverged,
        'diverged_at_s': result.diverged_at,
        'propagations': result.propagations,
    }


def run_unit(cfg: ScenarioConfig, truth: TruthLog, run: int, channels: int,
             filters: Sequence[FilterKind], seed: int) -> list[dict]:
    """
    Every filter on one noise realization at one channel count.

    Args:
        cfg (ScenarioConfig): Scenario
        truth (TruthLog): Reference trajectory
        run (int): Run number
        channels (int): Channel count
        filters (Sequence[FilterKind]): Filters sharing the observation stream
        seed (int): Campaign seed

    Returns:
        list[dict]: One record per filter
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, run, channels]))
    synthesizer = ObservationSynthesizer(truth, cfg, channels, rng)
    synthesizer.transform()
    stream: list[GnssObservation] = synthesizer.data or []
    records = []
    for kind in filters:
        result = run_filter(kind, cfg.initial_belief.to_belief(), stream, build_dynamics(cfg),
                            cfg.process_noise(kind), cfg.site, cfg.measurement_settings(),
                            cfg.filter.unscented, truth.state_at)
        records.append(_run_record(run, channels, result, stream))
    return records


def _run_unit_star(arguments: tuple) -> list[dict]:
    return run_unit(*arguments)


def worker_count() -> int:
    """
    Campaign worker count from the environment.

    Returns:
        int: Worker count, 1 by default

    Raises:
        ConfigurationError: In case of a malformed value
    """
    value = os.environ.get(WORKERS_ENV, '1')
    try:
        workers = int(value)
    except ValueError as error:
        raise ConfigurationError(f'{WORKERS_ENV} must be an integer, got {value!r}') from error
    if workers < 1:
        raise ConfigurationError(f'{WORKERS_ENV} must be positive, got {workers}')
    return workers


@report_time
def run_campaign(cfg: ScenarioConfig, runs: int, filters: Iterable[FilterKind],
                 channel_counts: Iterable[int], workers: int = 1,
                 truth: TruthLog | None = None) -> MonteCarloReport:
    """
    Monte Carlo comparison of filters on paired observation streams.

    Args:
        cfg (ScenarioConfig): Scenario
        runs (int): Noise realizations per channel count
        filters (Iterable[FilterKind]): Filters to compare
        channel_counts (Iterable[int]): Channel counts
        workers (int): Parallel worker processes
        truth (TruthLog | None): Reference trajectory, generated from the scenario by default

    Returns:
        MonteCarloReport: Campaign results

    Raises:
        ValueError: In case of no runs
    """
    if runs < 1:
        raise ValueError(f'runs must be positive, got {runs}')
    filters = tuple(filters)
    truth = truth if truth is not None else generate_truth(cfg)
    units = [(cfg, truth, run, channels, filters, cfg.simulation.seed)
             for channels in sorted(set(channel_counts)) for run in range(runs)]
    records: list[dict] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for unit_records in tqdm(executor.map(_run_unit_star, units), total=len(units)):
                records.extend(unit_records)
    else:
        for unit in tqdm(units):
            records.extend(_run_unit_star(unit))
    return MonteCarloReport(pd.DataFrame(records), filters, cfg.errors.sigma_rho)


@report_time
def benchmark_timing(cfg: ScenarioConfig, filters: Iterable[FilterKind], steps: int = 1000,
                     warmup: int = 100) -> TimingReport:
    """
    Mean predict plus update duration of every filter on one observation stream.

    Args:
        cfg (ScenarioConfig): Scenario
        filters (Iterable[FilterKind]): Filters to time
        steps (int): Timed steps per filter
        warmup (int): Discarded leading steps

    Returns:
        TimingReport: Timing table
    """
    truth = generate_truth(cfg)
    stream = generate_observations(truth, cfg)
    durations = {}
    for kind in filters:
        timings: list[float] = []
        while len(timings) < warmup + steps:
            result = run_filter(kind, cfg.initial_belief.to_belief(), stream, build_dynamics(cfg),
                                cfg.process_noise(kind), cfg.site, cfg.measurement_settings(),
                                cfg.filter.unscented, truth.state_at)
            passed = [timing.total_ms for timing in result.timings[1:]]
            if not passed:
                break
            timings.extend(passed)
        window = timings[warmup:warmup + steps] or timings
        durations[kind] = float(np.mean(window)) if window else math.nan
    ukf_step = durations.get(FilterKind.UKF, math.nan)
    table = pd.DataFrame([{'filter': str(kind), 'mean_step_ms': step,
                           'reduction_vs_ukf_pct': reduction_vs_ukf(step, ukf_step)}
                          for kind, step in durations.items()])
    return TimingReport(table)


def format_report(summary: pd.DataFrame, references: ReferenceScores) -> str:
    """
    Summary blocks per channel count next to the published results.

    Args:
        summary (pandas.DataFrame): Campaign summary
        references (ReferenceScores): Published results

    Returns:
        str: Printable report
    """
    blocks = []
    for channels in sorted(summary['channels'].unique()):
        block = summary[summary['channels'] == channels]
        rows = []
        for _, row in block.iterrows():
            kind = FilterKind(row['filter'])
            published = int(channels) in references.channel_counts
            rows.append({
                'Filter': kind.label,
                'Position error (m)': row['median_pos_err_m'],
                'Processing time (ms)': row['mean_step_ms'],
                'Reduction vs UKF (%)': row['reduction_vs_ukf_pct'],
                'Error ratio': row['pos_err_ratio'],
                'Published error (m)': references.get(int(channels), kind,
                                                      ReferenceMetric.POSITION_ERROR)
                if published else math.nan,
                'Published time (ms)': references.get(int(channels), kind,
                                                      ReferenceMetric.PROCESSING_TIME)
                if published else math.nan,
            })
        table = pd.DataFrame(rows).to_string(index=False, float_format=lambda value: f'{value:.2f}')
        blocks.append(f'No. of GPS observations: {int(channels)}\n{table}')
    return '\n\n'.join(blocks)


@report_time
def report(out_dir: Path) -> str:
    """
    Render an exported campaign summary and save it as JSON.

    Args:
        out_dir (Path): Directory holding summary.csv

    Returns:
        str: Printable report

    Raises:
        ConfigurationError: In case no campaign summary exists
    """
    summary_path = out_dir / 'summary.csv'
    if not summary_path.exists():
        raise ConfigurationError(f'{summary_path} does not exist, run a campaign first')
    summary = pd.read_csv(summary_path)
    with (out_dir / 'report.json').open('w', encoding='utf-8') as file:
        json.dump(summary.to_dict(orient='records'), file, indent=4, sort_keys=True,
                  ignore_nan=True)
    return format_report(summary, ReferenceScores())


class ArgumentParser(Tap):
    """
    Types for CLI interface of the simulator.
    """

    command: Literal['truth', 'observe', 'run', 'campaign', 'bench', 'report']
    config: Path = SCENARIO_CONFIG_PATH
    channels: Optional[int] = None
    runs: Optional[int] = None
    filter: Literal['ekf', 'ukf', 'spukf', 'espukf', 'all'] = 'all'
    seed: Optional[int] = None
    out: Path = DEFAULT_OUTPUT_PATH
    measurement_mode: Optional[Literal['range', 'range-rate']] = None
    steps: int = 1000

    def configure(self) -> None:
        """
        Declare the positional subcommand.
        """
        self.add_argument('command')

    def error(self, message: str) -> None:  # type: ignore[override]
        """
        Report a malformed command line and exit with status 1.

        Args:
            message (str): Description of the problem
        """
        self.print_usage(sys.stderr)
        print(f'error: {message}', file=sys.stderr)
        sys.exit(1)


def configure_scenario(args: ArgumentParser) -> ScenarioConfig:
    """
    Load the scenario and apply command-line overrides.

    Args:
        args (ArgumentParser): Parsed command line

    Returns:
        ScenarioConfig: Scenario

    Raises:
        ConfigurationError: In case the scenario file does not exist
    """
    if not args.config.exists():
        raise ConfigurationError(f'config file {args.config} does not exist')
    cfg = load_scenario(args.config)
    filter_settings = cfg.filter
    if args.channels is not None:
        filter_settings = dataclasses.replace(filter_settings, channels=args.channels)
    if args.measurement_mode is not None:
        mode = MeasurementMode(args.measurement_mode)
        filter_settings = dataclasses.replace(filter_settings, measurement_mode=mode)
    simulation = cfg.simulation
    errors = cfg.errors
    if args.runs is not None:
        simulation = dataclasses.replace(simulation, runs=args.runs)
    if args.seed is not None:
        simulation = dataclasses.replace(simulation, seed=args.seed)
        errors = dataclasses.replace(errors, seed=args.seed)
    if args.channels is not None:
        simulation = dataclasses.replace(simulation, channel_counts=[args.channels])
    return dataclasses.replace(cfg, filter=filter_settings, simulation=simulation, errors=errors)


def selected_filters(choice: str) -> list[FilterKind]:
    """
    Filters named on the command line.

    Args:
        choice (str): Filter value or all

    Returns:
        list[FilterKind]: Filters
    """
    return list(FilterKind) if choice == 'all' else [FilterKind(choice)]


def _check_divergence(share: float, threshold: float) -> None:
    if share > threshold:
        raise DivergenceThresholdError(f'{share:.0%} of runs diverged, threshold is '
                                       f'{threshold:.0%}')


def execute(args: ArgumentParser, cfg: ScenarioConfig) -> None:
    """
    Run a subcommand.

    Args:
        args (ArgumentParser): Parsed command line
        cfg (ScenarioConfig): Scenario

    Raises:
        ConfigurationError: In case report inputs are missing
    """
    filters = selected_filters(args.filter)
    out = args.out
    if args.command == 'report':
        print(report(out))
        return
    if args.command == 'bench':
        timing = benchmark_timing(cfg, filters, args.steps)
        timing.export(out / 'timing.csv')
        print(timing.table.to_string(index=False))
        return

    truth = generate_truth(cfg)
    if args.command == 'truth':
        truth.export(out / 'truth.csv')
        return
    if args.command == 'campaign':
        campaign = run_campaign(cfg, cfg.simulation.runs, filters,
                                cfg.simulation.channel_counts, worker_count(), truth)
        campaign.export(out)
        print(campaign.summary().to_string(index=False))
        _check_divergence(campaign.divergence_share(), cfg.simulation.divergence_threshold)
        return

    stream = generate_observations(truth, cfg)
    if args.command == 'observe':
        export_observations(stream, out / f'observations_k{cfg.channels}.csv')
        return
    diverged = 0
    for kind in filters:
        result = run_filter(kind, cfg.initial_belief.to_belief(), stream, build_dynamics(cfg),
                            cfg.process_noise(kind), cfg.site, cfg.measurement_settings(),
                            cfg.filter.unscented, truth.state_at)
        result.export(out / f'run_{kind}_k{cfg.channels}.csv')
        logging.info('%s mean position error %.2f m', kind.label, result.mean_position_error)
        diverged += result.diverged
    _check_divergence(diverged / len(filters), cfg.simulation.divergence_threshold)


def main(argv: Sequence[str] | None = None) -> int:
    """
    Entrypoint for the simulator command line.

    Args:
        argv (Sequence[str] | None): Arguments, sys.argv by default

    Returns:
        int: 0 on success, 1 on configuration errors, 2 on a divergence threshold breach
    """
    args = ArgumentParser(underscores_to_dashes=True).parse_args(argv)
    try:
        cfg = configure_scenario(args)
        execute(args, cfg)
    except (ValidationError, ConfigurationError) as error:
        logging.error('Configuration error: %s', error)
        return 1
    except DivergenceThresholdError as error:
        logging.error('%s', error)
        return 2
    return 0


def cli() -> None:
    """
    Run the command line and exit with its status.
    """
    sys.exit(main())


if __name__ == '__main__':
    cli()
