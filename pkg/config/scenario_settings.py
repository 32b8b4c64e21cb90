"""
Settings manager.
"""

# pylint: disable=no-name-in-module
import dataclasses
from pathlib import Path

import numpy as np
from pydantic import (NonNegativeFloat, NonNegativeInt, PositiveFloat, PositiveInt, field_validator,
                      model_validator)
from pydantic.dataclasses import dataclass

from core_utils.nav.filter_kind import FilterKind, MeasurementMode
from launch_nav.dynamics import (STATE_DIM, Environment, ProcessNoise, StageParams,
                                 VehicleConfig)
from launch_nav.estimators import GaussianBelief, MeasurementSettings, UnscentedParams
from launch_nav.gnss import MIN_CHANNELS, ConstellationAlmanac, ErrorBudget, LaunchSiteFrame

#: Lift-off estimate: down-range, altitude, speed, flight path angle, mass, aerodynamic
#: coefficient, clock bias and clock bias rate
CRS5_INITIAL_MEAN = (0.0, 0.0, 5.6543, 1.5708, 5.20e5, 0.5010, 400.0, 2.0)

#: Lift-off variances in the same order
CRS5_INITIAL_VARIANCES = (1.0, 1.0, 0.01, 1e-6, 9.0, 0.01, 9e4, 25.0)

#: Extra per-step process noise of the EKF, in the state order, compensating for the
#: linearised covariance propagation
EKF_PROCESS_NOISE_FUDGE = (25.0, 25.0, 1e-2, 1e-8, 0.0, 0.0, 25.0, 1e-2)


def crs5_vehicle() -> VehicleConfig:
    """
    Two-stage vehicle of the CRS-5 mission.

    Returns:
        VehicleConfig: Vehicle
    """
    return VehicleConfig(
        stages=[
            StageParams(inert_mass=23100.0, propellant_mass=395700.0, thrust=5886e3,
                        isp=282.0, burn_duration=187.0),
            StageParams(inert_mass=3900.0, propellant_mass=92670.0, thrust=801e3,
                        isp=340.0, burn_duration=386.0),
        ],
        payload_mass=2317.0,
        spacecraft_mass=4200.0,
        initial_mass=5.20e5,
        frontal_area=float(np.pi * 1.83 ** 2),
        pitch_kick_time=10.0,
        pitch_kick_angle=6.0e-5,
        burnout_altitude=410e3,
    )


@dataclass
class FilterSettings:
    """
    Filter configuration shared by every filter kind.
    """

    channels: PositiveInt = 6
    measurement_mode: MeasurementMode = MeasurementMode.RANGE_RATE
    use_graphic: bool = True
    model_tropo: bool = True
    unscented: UnscentedParams = dataclasses.field(default_factory=UnscentedParams)
    process_noise: NonNegativeFloat = 1e-30
    ekf_fudge: list[NonNegativeFloat] = dataclasses.field(
        default_factory=lambda: list(EKF_PROCESS_NOISE_FUDGE))

    @field_validator('channels')
    @classmethod
    def check_channels(cls, channels: int) -> int:
        """
        Check that the channel count can fix a position.

        Args:
            channels (int): Channel count

        Returns:
            int: Validated channel count

        Raises:
            ValueError: In case of fewer than four channels
        """
        if channels < MIN_CHANNELS:
            raise ValueError(f'at least {MIN_CHANNELS} channels are required, got {channels}')
        return channels

    @field_validator('ekf_fudge')
    @classmethod
    def check_fudge_length(cls, values: list[float]) -> list[float]:
        """
        Check that every state component has an EKF fudge term.

        Args:
            values (list[float]): Fudge terms by state component

        Returns:
            list[float]: Validated fudge terms

        Raises:
            ValueError: In case of a wrong length
        """
        if len(values) != STATE_DIM:
            raise ValueError(f'expected {STATE_DIM} fudge terms, got {len(values)}')
        return values


@dataclass
class InitialBelief:
    """
    Filter initialization.
    """

    mean: list[float] = dataclasses.field(default_factory=lambda: list(CRS5_INITIAL_MEAN))
    variances: list[PositiveFloat] = dataclasses.field(
        default_factory=lambda: list(CRS5_INITIAL_VARIANCES))

    @field_validator('mean', 'variances')
    @classmethod
    def check_length(cls, values: list[float]) -> list[float]:
        """
        Check that every state component is given.

        Args:
            values (list[float]): Values by state component

        Returns:
            list[float]: Validated values

        Raises:
            ValueError: In case of a wrong length
        """
        if len(values) != STATE_DIM:
            raise ValueError(f'expected {STATE_DIM} values, got {len(values)}')
        return values

    def to_belief(self, t: float = 0.0) -> GaussianBelief:
        """
        Build the initial belief.

        Args:
            t (float): Epoch, s

        Returns:
            GaussianBelief: Belief with a diagonal covariance
        """
        return GaussianBelief(np.array(self.mean), np.diag(self.variances), t)


@dataclass
class TruthClock:
    """
    Receiver clock of the reference trajectory.
    """

    b: float = 400.0
    b_dot: float = 2.0


@dataclass
class SimulationSettings:
    """
    Trajectory span and Monte Carlo campaign parameters.
    """

    epoch_rate: PositiveFloat = 1.0
    duration: PositiveFloat = 573.0
    substep: PositiveFloat = 0.1
    runs: PositiveInt = 200
    seed: NonNegativeInt = 2015
    channel_counts: list[PositiveInt] = dataclasses.field(default_factory=lambda: [4, 6, 8, 10])
    divergence_threshold: NonNegativeFloat = 0.5

    @field_validator('channel_counts')
    @classmethod
    def check_channel_counts(cls, counts: list[int]) -> list[int]:
        """
        Check the campaign channel counts.

        Args:
            counts (list[int]): Channel counts

        Returns:
            list[int]: Sorted unique channel counts

        Raises:
            ValueError: In case of an empty list or a count below four
        """
        if not counts or min(counts) < MIN_CHANNELS:
            raise ValueError(f'channel counts must be at least {MIN_CHANNELS}, got {counts}')
        return sorted(set(counts))


@dataclass
class ScenarioConfig:
    """
    DTO for storing a mission scenario.
    """

    vehicle: VehicleConfig = dataclasses.field(default_factory=crs5_vehicle)
    environment: Environment = dataclasses.field(default_factory=Environment)
    site: LaunchSiteFrame = dataclasses.field(default_factory=LaunchSiteFrame)
    constellation: ConstellationAlmanac = dataclasses.field(default_factory=ConstellationAlmanac)
    errors: ErrorBudget = dataclasses.field(default_factory=ErrorBudget)
    filter: FilterSettings = dataclasses.field(default_factory=FilterSettings)
    initial_belief: InitialBelief = dataclasses.field(default_factory=InitialBelief)
    truth_clock: TruthClock = dataclasses.field(default_factory=TruthClock)
    simulation: SimulationSettings = dataclasses.field(default_factory=SimulationSettings)

    @model_validator(mode='after')
    def check_consistency(self) -> 'ScenarioConfig':
        """
        Check that the span covers powered flight and both Earth models agree.

        Returns:
            ScenarioConfig: Validated scenario

        Raises:
            ValueError: In case of a short span or mismatched Earth radii
        """
        if self.simulation.duration < self.vehicle.powered_flight_time:
            raise ValueError(f'duration {self.simulation.duration} s is shorter than powered '
                             f'flight {self.vehicle.powered_flight_time} s')
        if self.site.earth_radius != self.environment.earth_radius:
            raise ValueError('site and environment Earth radii differ')
        return self

    @property
    def channels(self) -> int:
        """
        Channel count of single runs.

        Returns:
            int: Channel count
        """
        return self.filter.channels

    def measurement_settings(self) -> MeasurementSettings:
        """
        Measurement settings of the filters.

        Returns:
            MeasurementSettings: Settings with the noise levels of the error budget
        """
        return MeasurementSettings(mode=self.filter.measurement_mode,
                                   use_graphic=self.filter.use_graphic,
                                   model_tropo=self.filter.model_tropo,
                                   sigma_rho=self.errors.sigma_rho,
                                   sigma_phi=self.errors.sigma_phi,
                                   sigma_rate=self.errors.sigma_rate)

    def process_noise(self, kind: FilterKind | None = None) -> np.ndarray:
        """
        Process noise covariance Q of a filter.

        The EKF adds its fudge terms to the diagonal.

        Args:
            kind (FilterKind | None): Filter kind, the shared Q when None

        Returns:
            numpy.ndarray: Covariance matrix
        """
        noise = ProcessNoise.isotropic(self.filter.process_noise).matrix
        if kind is FilterKind.EKF:
            noise = noise + np.diag(self.filter.ekf_fudge)
        return noise


class ScenarioSettings:
    """
    Main model for working with settings.
    """

    # Scenario settings
    _dto: ScenarioConfig

    def __init__(self, config_path: Path) -> None:
        """
        Initialize ScenarioSettings.

        Args:
            config_path (Path): Path to configuration
        """
        super().__init__()
        with config_path.open(encoding='utf-8') as config_file:
            # pylint: disable=no-member
            self._dto = ScenarioConfig.__pydantic_validator__.validate_json(config_file.read())

    @property
    def scenario(self) -> ScenarioConfig:
        """
        Property for the scenario.

        Returns:
            ScenarioConfig: Scenario DTO.
        """
        return self._dto

    @property
    def simulation(self) -> SimulationSettings:
        """
        Property for the simulation parameters.

        Returns:
            SimulationSettings: Simulation DTO.
        """
        return self._dto.simulation
