"""
CRS-5 mission assembly: reference trajectory and observation streams.
"""

# pylint: disable=too-many-arguments
import dataclasses
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
import simplejson as json
from scipy import optimize

from config.scenario_settings import ScenarioConfig, ScenarioSettings
from core_utils.nav.observation_processor import AbstractObservationProcessor
from core_utils.nav.time_decorator import report_time
from core_utils.nav.trajectory_source import AbstractTrajectorySource
from launch_nav.dynamics import DynamicsError, LaunchVehicleDynamics, StateIndex
from launch_nav.gnss import (MIN_CHANNELS, GnssObservation, constellation_at, elevation,
                             embed_states, select_channels, synthesize_observation,
                             visible_satellites)

#: Pitch kick angles solved per vehicle, environment and lift-off state
_PITCH_KICKS: dict[str, float] = {}


class TruthGenerationError(Exception):
    """
    Error for a reference trajectory the dynamics cannot complete.
    """


@dataclasses.dataclass(frozen=True)
class TruthLog:
    """
    Reference trajectory sampled at the measurement epochs.
    """

    times: np.ndarray
    states: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self) -> None:
        """
        Check that epochs increase.

        Raises:
            ValueError: In case of non-monotone epochs
        """
        if np.any(np.diff(self.times) <= 0):
            raise ValueError('truth epochs must increase')

    def __len__(self) -> int:
        """
        Number of epochs.

        Returns:
            int: Epoch count
        """
        return len(self.times)

    def index_of(self, t: float) -> int:
        """
        Position of an epoch.

        Args:
            t (float): Epoch, s

        Returns:
            int: Index

        Raises:
            KeyError: In case t is not a logged epoch
        """
        index = int(np.searchsorted(self.times, t - 1e-6))
        if index >= len(self.times) or abs(self.times[index] - t) > 1e-6:
            raise KeyError(f'no truth epoch at t={t} s')
        return index

    def state_at(self, t: float) -> np.ndarray:
        """
        True state at a logged epoch.

        Args:
            t (float): Epoch, s

        Returns:
            numpy.ndarray: State
        """
        return self.states[self.index_of(t)]

    def to_frame(self) -> pd.DataFrame:
        """
        Per-epoch table.

        Returns:
            pandas.DataFrame: One row per epoch
        """
        frame = pd.DataFrame(self.states, columns=['x', 'h', 'v', 'gamma', 'm', 'C', 'b', 'bdot'])
        frame.insert(0, 't', self.times)
        for axis, name in enumerate(('ecef_x', 'ecef_y', 'ecef_z')):
            frame[name] = self.positions[:, axis]
        return frame

    def export(self, path: Path) -> None:
        """
        Save the trajectory as CSV.

        Args:
            path (Path): Destination file
        """
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.9g')


def build_crs5() -> ScenarioConfig:
    """
    CRS-5 mission scenario.

    Returns:
        ScenarioConfig: Scenario with every default
    """
    return ScenarioConfig()


def load_scenario(path: Path) -> ScenarioConfig:
    """
    Read and validate a scenario file.

    Args:
        path (Path): JSON scenario

    Returns:
        ScenarioConfig: Scenario
    """
    return ScenarioSettings(path).scenario


@report_time
def _solve_pitch_kick(cfg: ScenarioConfig) -> float:
    """
    Search the pitch kick angle that ends powered flight at the burnout altitude.

    The search brackets the configured angle within a factor of two on either side.
    A larger kick bends the ascent lower; an ascent that falls back counts as reaching
    zero altitude.

    Args:
        cfg (ScenarioConfig): Scenario with a burnout altitude

    Returns:
        float: Kick angle, rad

    Raises:
        TruthGenerationError: In case no angle in the bracket reaches the altitude
    """
    vehicle = cfg.vehicle
    target = float(vehicle.burnout_altitude or 0.0)
    lift_off = np.array(cfg.initial_belief.mean)

    def miss(angle: float) -> float:
        trial = dataclasses.replace(vehicle, pitch_kick_angle=angle, burnout_altitude=None)
        dynamics = LaunchVehicleDynamics(trial, cfg.environment,
                                         cfg.simulation.substep).calibrated(lift_off)
        try:
            burnout = dynamics.propagate(lift_off, 0.0, trial.powered_flight_time)
        except DynamicsError:
            return -target
        return float(burnout[StateIndex.H]) - target

    low, high = 0.5 * vehicle.pitch_kick_angle, 2.0 * vehicle.pitch_kick_angle
    try:
        angle = float(optimize.brentq(miss, low, high, xtol=1e-12))
    except ValueError as error:
        raise TruthGenerationError(f'No pitch kick in [{low:.3g}, {high:.3g}] rad ends powered '
                                   f'flight at {target / 1e3:.1f} km') from error
    logging.info('Pitch kick of %.6g rad ends powered flight at %.1f km', angle, target / 1e3)
    return angle


def target_pitch_kick(cfg: ScenarioConfig) -> float:
    """
    Pitch kick angle of a scenario.

    Args:
        cfg (ScenarioConfig): Scenario

    Returns:
        float: Configured angle, or the angle reaching the burnout altitude when one is set, rad
    """
    if cfg.vehicle.burnout_altitude is None:
        return cfg.vehicle.pitch_kick_angle
    key = json.dumps([dataclasses.asdict(cfg.vehicle), dataclasses.asdict(cfg.environment),
                      cfg.initial_belief.mean, cfg.simulation.substep], sort_keys=True)
    if key not in _PITCH_KICKS:
        _PITCH_KICKS[key] = _solve_pitch_kick(cfg)
    return _PITCH_KICKS[key]


def build_dynamics(cfg: ScenarioConfig) -> LaunchVehicleDynamics:
    """
    System model with the pitch kick calibrated on the initial mean.

    Args:
        cfg (ScenarioConfig): Scenario

    Returns:
        LaunchVehicleDynamics: System model
    """
    vehicle = dataclasses.replace(cfg.vehicle, pitch_kick_angle=target_pitch_kick(cfg),
                                  burnout_altitude=None)
    dynamics = LaunchVehicleDynamics(vehicle, cfg.environment, cfg.simulation.substep)
    return dynamics.calibrated(np.array(cfg.initial_belief.mean))


class TruthGenerator(AbstractTrajectorySource):
    """
    Reference trajectory integrated from the configured truth clock and initial state.
    """

    def __init__(self, cfg: ScenarioConfig) -> None:
        """
        Initialize an instance of TruthGenerator.

        Args:
            cfg (ScenarioConfig): Scenario
        """
        super().__init__()
        self._cfg = cfg
        self._dynamics = build_dynamics(cfg)

    def initial_state(self) -> np.ndarray:
        """
        True lift-off state.

        Returns:
            numpy.ndarray: State
        """
        state = np.array(self._cfg.initial_belief.mean)
        state[StateIndex.B] = self._cfg.truth_clock.b
        state[StateIndex.B_DOT] = self._cfg.truth_clock.b_dot
        return state

    def obtain(self) -> None:
        """
        Integrate the trajectory epoch by epoch.

        Raises:
            TruthGenerationError: In case the dynamics fail along the way
        """
        step = 1.0 / self._cfg.simulation.epoch_rate
        count = int(math.floor(self._cfg.simulation.duration / step + 1e-9)) + 1
        times = step * np.arange(count)
        states = np.empty((count, len(self.initial_state())))
        states[0] = self.initial_state()
        for index in range(1, count):
            try:
                states[index] = self._dynamics.propagate(states[index - 1], times[index - 1],
                                                         times[index] - times[index - 1])
            except DynamicsError as error:
                raise TruthGenerationError(f'Truth generation aborted at '
                                           f't={times[index - 1]:.1f} s: {error}') from error
        positions, velocities = embed_states(states, self._cfg.site)
        self._truth = TruthLog(times, states, positions, velocities)


@report_time
def generate_truth(cfg: ScenarioConfig) -> TruthLog:
    """
    Reference trajectory of a scenario.

    Args:
        cfg (ScenarioConfig): Scenario

    Returns:
        TruthLog: Reference trajectory
    """
    generator = TruthGenerator(cfg)
    generator.obtain()
    truth: TruthLog = generator.truth
    return truth


class ObservationSynthesizer(AbstractObservationProcessor):
    """
    Observation stream over a reference trajectory.
    """

    def __init__(self, truth: TruthLog, cfg: ScenarioConfig, channels: int,
                 rng: np.random.Generator) -> None:
        """
        Initialize an instance of ObservationSynthesizer.

        Args:
            truth (TruthLog): Reference trajectory
            cfg (ScenarioConfig): Scenario
            channels (int): Channel count
            rng (numpy.random.Generator): Random source
        """
        super().__init__(truth)
        self._cfg = cfg
        self._channels = channels
        self._rng = rng

    def transform(self) -> None:
        """
        Synthesize observables at every epoch after the first.
        """
        truth: TruthLog = self._truth
        ambiguities: dict[int, int] = {}
        stream = []
        for t, state, position in zip(truth.times[1:], truth.states[1:], truth.positions[1:]):
            visible = visible_satellites(constellation_at(float(t), self._cfg.constellation),
                                         position)
            short = len(visible) < self._channels
            if short:
                chosen = sorted(visible, key=lambda sat, p=position: (-elevation(p, sat.position),
                                                                      sat.index))
            else:
                chosen = select_channels(visible, self._channels, position)
            observation = synthesize_observation(state, chosen, self._cfg.errors, self._cfg.site,
                                                 self._rng, float(t), ambiguities)
            if short:
                observation = dataclasses.replace(observation, degraded=True)
            stream.append(observation)
        self._data = stream

    def analyze(self) -> dict:
        """
        Analyze an observation stream.

        Returns:
            dict: Epoch count, degraded epochs, average channel count and PDOP
        """
        stream: list[GnssObservation] = self._data or []
        geometry = [observation.pdop for observation in stream if not math.isnan(observation.pdop)]
        return {
            'epochs': len(stream),
            'degraded_epochs': sum(observation.degraded for observation in stream),
            'mean_channels': float(np.mean([len(observation.channels) for observation in stream]))
            if stream else 0.0,
            'mean_pdop': float(np.mean(geometry)) if geometry else math.nan,
        }


@report_time
def generate_observations(truth: TruthLog, cfg: ScenarioConfig, channels: int | None = None,
                          rng: np.random.Generator | None = None) -> list[GnssObservation]:
    """
    Observation stream of a reference trajectory.

    Args:
        truth (TruthLog): Reference trajectory
        cfg (ScenarioConfig): Scenario
        channels (int | None): Channel count, the scenario's by default
        rng (numpy.random.Generator | None): Random source, seeded from the error budget by default

    Returns:
        list[GnssObservation]: Observations in epoch order

    Raises:
        ValueError: In case of an empty trajectory or fewer than four channels
    """
    if not len(truth):
        raise ValueError('truth trajectory is empty')
    channels = cfg.channels if channels is None else channels
    if channels < MIN_CHANNELS:
        raise ValueError(f'at least {MIN_CHANNELS} channels are required, got {channels}')
    synthesizer = ObservationSynthesizer(truth, cfg, channels,
                                         rng or np.random.default_rng(cfg.errors.seed))
    synthesizer.transform()
    summary = synthesizer.analyze()
    if summary['degraded_epochs']:
        logging.warning('%d of %d epochs are degraded with %d channels',
                        summary['degraded_epochs'], summary['epochs'], channels)
    stream: list[GnssObservation] = synthesizer.data or []
    return stream
