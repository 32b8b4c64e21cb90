"""
Synthetic GPS constellation, trajectory geometry and observable generation.
"""

# pylint: disable=invalid-name, too-many-arguments, too-many-locals
import dataclasses
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from pydantic import NonNegativeFloat, PositiveFloat, PositiveInt, model_validator
from pydantic.dataclasses import dataclass

from launch_nav.dynamics import StateIndex, StateVector

#: Speed of light, m/s
SPEED_OF_LIGHT = 299792458.0

#: GPS L1 carrier wavelength, m
L1_WAVELENGTH = 0.1903

#: Earth gravitational parameter, m^3/s^2
EARTH_MU = 3.986004418e14

#: Lowest elevation of a usable satellite, rad
ELEVATION_MASK = math.radians(5.0)

#: Altitude above which the troposphere is neglected, m
TROPOSPHERE_CEILING = 86000.0

#: Smallest channel count a position fix needs
MIN_CHANNELS = 4


class GnssError(Exception):
    """
    Base error of the GNSS models.
    """


class ElevationMaskError(GnssError):
    """
    Error for a satellite below the elevation mask.
    """


class ChannelSelectionError(GnssError):
    """
    Error for a channel request exceeding the visible satellites.
    """

    def __init__(self, requested: int, visible: int) -> None:
        """
        Initialize an instance of ChannelSelectionError.

        Args:
            requested (int): Requested channel count
            visible (int): Visible satellite count
        """
        super().__init__(f'{requested} channels requested, only {visible} satellites visible')
        self.visible = visible


class SingularGeometryError(GnssError):
    """
    Error for satellite geometry that does not fix a position.
    """


@dataclasses.dataclass(frozen=True)
class GnssSatellite:
    """
    Satellite position, velocity and clock offset at an epoch.
    """

    index: int
    position: np.ndarray
    velocity: np.ndarray
    clock_bias: float = 0.0


@dataclass
class ConstellationAlmanac:
    """
    Circular Walker-like constellation layout.
    """

    semi_major_axis: PositiveFloat = 26560e3
    inclination: NonNegativeFloat = math.radians(55.0)
    planes: PositiveInt = 6
    slots_per_plane: PositiveInt = 6
    mu: PositiveFloat = EARTH_MU
    clock_biases: list[float] | None = None

    @model_validator(mode='after')
    def check_clock_biases(self) -> 'ConstellationAlmanac':
        """
        Check that every satellite has a clock offset when offsets are given.

        Returns:
            ConstellationAlmanac: Validated almanac

        Raises:
            ValueError: In case of a length mismatch
        """
        if self.clock_biases is not None and len(self.clock_biases) != self.satellite_count:
            raise ValueError(f'{len(self.clock_biases)} clock biases given for '
                             f'{self.satellite_count} satellites')
        return self

    @property
    def satellite_count(self) -> int:
        """
        Number of satellites.

        Returns:
            int: Count
        """
        return self.planes * self.slots_per_plane

    @property
    def mean_motion(self) -> float:
        """
        Orbital angular rate.

        Returns:
            float: Rate, rad/s
        """
        return math.sqrt(self.mu / self.semi_major_axis ** 3)

    @property
    def period(self) -> float:
        """
        Orbital period.

        Returns:
            float: Period, s
        """
        return 2.0 * math.pi / self.mean_motion


@dataclass
class LaunchSiteFrame:
    """
    Great-circle embedding of the planar trajectory.
    """

    latitude: float = math.radians(28.5)
    longitude: float = math.radians(279.4)
    azimuth: float = math.radians(90.0)
    earth_radius: PositiveFloat = 6378137.0

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Site up direction and launch direction along the surface.

        Returns:
            tuple[numpy.ndarray, numpy.ndarray]: Unit vectors
        """
        sin_lat, cos_lat = math.sin(self.latitude), math.cos(self.latitude)
        sin_lon, cos_lon = math.sin(self.longitude), math.cos(self.longitude)
        up = np.array([cos_lat * cos_lon, cos_lat * sin_lon, sin_lat])
        east = np.array([-sin_lon, cos_lon, 0.0])
        north = np.array([-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat])
        downrange = math.cos(self.azimuth) * north + math.sin(self.azimuth) * east
        return up, downrange


@dataclass
class ErrorBudget:
    """
    Observable error sources.
    """

    sigma_rho: NonNegativeFloat = 5.0
    sigma_phi: NonNegativeFloat = 0.05
    sigma_rate: NonNegativeFloat = 0.2
    iono_zenith: NonNegativeFloat = 5.0
    use_iono: bool = True
    use_tropo: bool = True
    seed: int = 0

    @classmethod
    def noiseless(cls) -> 'ErrorBudget':
        """
        Budget with every error source switched off.

        Returns:
            ErrorBudget: Budget
        """
        return cls(sigma_rho=0.0, sigma_phi=0.0, sigma_rate=0.0, iono_zenith=0.0,
                   use_iono=False, use_tropo=False)


@dataclasses.dataclass(frozen=True)
class ChannelRecord:
    """
    Observables of a single tracked satellite.
    """

    sat_index: int
    rho: float
    phi: float
    range_rate: float
    ambiguity: int
    elevation: float
    sat_position: np.ndarray
    sat_velocity: np.ndarray
    sat_clock_bias: float

    @property
    def graphic(self) -> float:
        """
        Ionosphere-free half sum of code and ambiguity-corrected carrier.

        Returns:
            float: Range, m
        """
        return float(graphic_combine(self.rho, self.phi, self.ambiguity))


@dataclasses.dataclass(frozen=True)
class GnssObservation:
    """
    Observables of every channel at one epoch.
    """

    t: float
    channels: tuple[ChannelRecord, ...]
    degraded: bool = False
    pdop: float = math.nan

    @property
    def sat_positions(self) -> np.ndarray:
        """
        Positions of the tracked satellites.

        Returns:
            numpy.ndarray: Array of shape (channels, 3), m
        """
        return np.array([channel.sat_position for channel in self.channels]).reshape(-1, 3)


def constellation_at(t: float, almanac: ConstellationAlmanac) -> list[GnssSatellite]:
    """
    Positions and velocities of every satellite from two-body circular motion.

    Args:
        t (float): Epoch, s
        almanac (ConstellationAlmanac): Constellation layout

    Returns:
        list[GnssSatellite]: Satellites ordered by index

    Raises:
        ValueError: In case of a negative epoch
    """
    if t < 0:
        raise ValueError(f'epoch must be non-negative, got {t}')
    plane = np.repeat(np.arange(almanac.planes), almanac.slots_per_plane)
    slot = np.tile(np.arange(almanac.slots_per_plane), almanac.planes)
    raan = 2.0 * math.pi * plane / almanac.planes
    phase = 2.0 * math.pi * (slot / almanac.slots_per_plane
                             + plane / (almanac.planes * almanac.slots_per_plane))
    u = phase + almanac.mean_motion * t

    cos_raan, sin_raan = np.cos(raan), np.sin(raan)
    cos_u, sin_u = np.cos(u), np.sin(u)
    cos_i, sin_i = math.cos(almanac.inclination), math.sin(almanac.inclination)
    a = almanac.semi_major_axis
    speed = a * almanac.mean_motion
    positions = a * np.column_stack([cos_raan * cos_u - sin_raan * cos_i * sin_u,
                                     sin_raan * cos_u + cos_raan * cos_i * sin_u,
                                     sin_i * sin_u])
    velocities = speed * np.column_stack([-cos_raan * sin_u - sin_raan * cos_i * cos_u,
                                          -sin_raan * sin_u + cos_raan * cos_i * cos_u,
                                          sin_i * cos_u])
    clocks = almanac.clock_biases or [0.0] * almanac.satellite_count
    return [GnssSatellite(index, positions[index], velocities[index], float(clocks[index]))
            for index in range(almanac.satellite_count)]


def embed_states(states: np.ndarray, frame: LaunchSiteFrame) -> tuple[np.ndarray, np.ndarray]:
    """
    Earth-centred positions and velocities of one or many states.

    Args:
        states (numpy.ndarray): States of shape (8,) or (N, 8)
        frame (LaunchSiteFrame): Embedding frame

    Returns:
        tuple[numpy.ndarray, numpy.ndarray]: Positions and velocities, trailing axis of size 3
    """
    states = np.asarray(states, dtype=float)
    up, downrange = frame.axes()
    theta = states[..., StateIndex.X] / frame.earth_radius
    radius = frame.earth_radius + states[..., StateIndex.H]
    v = states[..., StateIndex.V]
    gamma = states[..., StateIndex.GAMMA]
    cos_theta, sin_theta = np.cos(theta)[..., None], np.sin(theta)[..., None]
    local_up = cos_theta * up + sin_theta * downrange
    local_ahead = -sin_theta * up + cos_theta * downrange
    positions = radius[..., None] * local_up
    velocities = (v * np.sin(gamma))[..., None] * local_up \
        + (v * np.cos(gamma))[..., None] * local_ahead
    return positions, velocities


def embedding_jacobian(state: np.ndarray, frame: LaunchSiteFrame) -> tuple[np.ndarray, np.ndarray]:
    """
    Partial derivatives of the embedded position and velocity with respect to the state.

    Args:
        state (numpy.ndarray): State
        frame (LaunchSiteFrame): Embedding frame

    Returns:
        tuple[numpy.ndarray, numpy.ndarray]: Two 3x8 matrices
    """
    up, downrange = frame.axes()
    x, h, v, gamma = np.asarray(state, dtype=float)[:4].tolist()
    theta = x / frame.earth_radius
    local_up = math.cos(theta) * up + math.sin(theta) * downrange
    local_ahead = -math.sin(theta) * up + math.cos(theta) * downrange
    sin_gamma, cos_gamma = math.sin(gamma), math.cos(gamma)

    d_position = np.zeros((3, 8))
    d_position[:, StateIndex.X] = (frame.earth_radius + h) / frame.earth_radius * local_ahead
    d_position[:, StateIndex.H] = local_up
    d_velocity = np.zeros((3, 8))
    d_velocity[:, StateIndex.X] = v * (sin_gamma * local_ahead - cos_gamma * local_up) \
        / frame.earth_radius
    d_velocity[:, StateIndex.V] = sin_gamma * local_up + cos_gamma * local_ahead
    d_velocity[:, StateIndex.GAMMA] = v * (cos_gamma * local_up - sin_gamma * local_ahead)
    return d_position, d_velocity


def user_ecef(s: np.ndarray | StateVector, frame: LaunchSiteFrame) -> tuple[np.ndarray, np.ndarray]:
    """
    Earth-centred position and velocity of the vehicle.

    Args:
        s (numpy.ndarray | StateVector): State
        frame (LaunchSiteFrame): Embedding frame

    Returns:
        tuple[numpy.ndarray, numpy.ndarray]: Position (m) and velocity (m/s)
    """
    state = s.to_array() if isinstance(s, StateVector) else np.asarray(s, dtype=float)
    return embed_states(state, frame)


def true_range(user: np.ndarray, sat: GnssSatellite) -> float:
    """
    Geometric distance between the vehicle and a satellite.

    Args:
        user (numpy.ndarray): Vehicle position, m
        sat (GnssSatellite): Satellite

    Returns:
        float: Distance, m
    """
    return float(np.linalg.norm(np.asarray(sat.position) - np.asarray(user)))


def elevation(user: np.ndarray, sat_position: np.ndarray) -> float:
    """
    Elevation of a satellite above the local spherical horizon.

    Args:
        user (numpy.ndarray): Vehicle position, m
        sat_position (numpy.ndarray): Satellite position, m

    Returns:
        float: Elevation, rad
    """
    line_of_sight = np.asarray(sat_position) - np.asarray(user)
    sine = np.dot(line_of_sight, user) / (np.linalg.norm(line_of_sight) * np.linalg.norm(user))
    return math.asin(float(np.clip(sine, -1.0, 1.0)))


def visible_satellites(sats: Iterable[GnssSatellite], user: np.ndarray,
                       mask: float = ELEVATION_MASK) -> list[GnssSatellite]:
    """
    Satellites at or above the elevation mask.

    Args:
        sats (Iterable[GnssSatellite]): Candidate satellites
        user (numpy.ndarray): Vehicle position, m
        mask (float): Elevation mask, rad

    Returns:
        list[GnssSatellite]: Visible satellites in input order
    """
    return [sat for sat in sats if elevation(user, sat.position) >= mask]


def _zenith_tropo(h: np.ndarray) -> np.ndarray:
    h = np.maximum(h, 0.0)
    pressure = 1013.25 * np.exp(-h / 8434.5)
    temperature = np.maximum(291.15 - 0.0065 * h, 216.65)
    humidity = 11.75 * np.exp(-h / 2000.0)
    delay = 0.002277 * (pressure + (1255.0 / temperature + 0.05) * humidity)
    return np.where(h > TROPOSPHERE_CEILING, 0.0, delay)


def tropo_delays(elevations: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Saastamoinen slant delays without mask checks, used inside filter predictions.

    Negative altitudes are treated as sea level.

    Args:
        elevations (numpy.ndarray): Elevations, rad
        h (numpy.ndarray): Vehicle altitudes broadcastable against elevations, m

    Returns:
        numpy.ndarray: Delays, m
    """
    sine = np.maximum(np.sin(elevations), math.sin(ELEVATION_MASK))
    return _zenith_tropo(np.asarray(h, dtype=float)) / sine


def saastamoinen_tropo(elevation_angle: float, h: float, mask: float = ELEVATION_MASK) -> float:
    """
    Saastamoinen tropospheric delay mapped by 1/sin(elevation).

    Surface pressure, temperature and water vapour pressure follow standard lapse rates
    with altitude; the delay vanishes above 86 km.

    Args:
        elevation_angle (float): Satellite elevation, rad
        h (float): Vehicle altitude, m
        mask (float): Elevation mask, rad

    Returns:
        float: Delay, m

    Raises:
        ElevationMaskError: In case of an elevation below the mask
    """
    if elevation_angle < mask or elevation_angle > math.pi / 2 + 1e-12:
        raise ElevationMaskError(f'elevation {math.degrees(elevation_angle):.2f} deg is outside '
                                 f'[{math.degrees(mask):.1f}, 90] deg')
    return float(tropo_delays(np.array(elevation_angle), np.array(h)))


def ionosphere_delay(elevation_angle: float, zenith_delay: float, earth_radius: float = 6378137.0,
                     shell_height: float = 350e3) -> float:
    """
    First-order ionospheric group delay of a thin shell.

    Args:
        elevation_angle (float): Satellite elevation, rad
        zenith_delay (float): Vertical delay, m
        earth_radius (float): Earth radius, m
        shell_height (float): Shell altitude, m

    Returns:
        float: Slant delay, m
    """
    ratio = earth_radius * math.cos(elevation_angle) / (earth_radius + shell_height)
    return zenith_delay / math.sqrt(1.0 - ratio * ratio)


def graphic_combine(rho: float | np.ndarray, phi: float | np.ndarray, N: int | np.ndarray,
                    wavelength: float = L1_WAVELENGTH) -> float | np.ndarray:
    """
    Group and phase ionospheric calibration.

    Args:
        rho (float | numpy.ndarray): Pseudo-range, m
        phi (float | numpy.ndarray): Carrier range, m
        N (int | numpy.ndarray): Resolved integer ambiguity, cycles
        wavelength (float): Carrier wavelength, m

    Returns:
        float | numpy.ndarray: Ionosphere-free range, m
    """
    return (rho + (phi - wavelength * N)) / 2.0


def select_channels(visible: Sequence[GnssSatellite], k: int,
                    user: np.ndarray) -> list[GnssSatellite]:
    """
    The k highest satellites, ties broken by ascending index.

    Args:
        visible (Sequence[GnssSatellite]): Visible satellites
        k (int): Channel count
        user (numpy.ndarray): Vehicle position, m

    Returns:
        list[GnssSatellite]: Selected satellites, highest first

    Raises:
        ValueError: In case of a non-positive channel count
        ChannelSelectionError: In case of fewer visible satellites than channels
    """
    if k < 1:
        raise ValueError(f'channel count must be positive, got {k}')
    if k > len(visible):
        raise ChannelSelectionError(k, len(visible))
    ranked = sorted(visible, key=lambda sat: (-elevation(user, sat.position), sat.index))
    return ranked[:k]


def _geometry_matrix(sat_positions: np.ndarray, user: np.ndarray) -> np.ndarray:
    line_of_sight = np.asarray(sat_positions, dtype=float) - np.asarray(user, dtype=float)
    units = line_of_sight / np.linalg.norm(line_of_sight, axis=1, keepdims=True)
    return np.column_stack([units, np.ones(len(units))])


def pdop(sat_positions: np.ndarray, user: np.ndarray) -> float:
    """
    Position dilution of precision.

    Args:
        sat_positions (numpy.ndarray): Satellite positions of shape (N, 3), m
        user (numpy.ndarray): Vehicle position, m

    Returns:
        float: Dimensionless geometry factor

    Raises:
        SingularGeometryError: In case of fewer than four satellites or rank-deficient geometry
    """
    sat_positions = np.asarray(sat_positions, dtype=float).reshape(-1, 3)
    if len(sat_positions) < MIN_CHANNELS:
        raise SingularGeometryError(f'{len(sat_positions)} satellites cannot fix a position')
    geometry = _geometry_matrix(sat_positions, user)
    information = geometry.T @ geometry
    if np.linalg.matrix_rank(geometry, tol=1e-9) < MIN_CHANNELS:
        raise SingularGeometryError('satellite geometry is rank deficient')
    cofactor = np.linalg.inv(information)
    return math.sqrt(float(np.trace(cofactor[:3, :3])))


def least_squares_fix(sat_positions: np.ndarray, pseudo_ranges: np.ndarray,
                      initial: np.ndarray | None = None, iterations: int = 20,
                      tolerance: float = 1e-9) -> tuple[np.ndarray, float]:
    """
    Iterative Gauss-Newton point solution from pseudo-ranges.

    Args:
        sat_positions (numpy.ndarray): Satellite positions of shape (N, 3), m
        pseudo_ranges (numpy.ndarray): Clock-corrected pseudo-ranges, m
        initial (numpy.ndarray | None): Starting position, Earth centre by default
        iterations (int): Iteration cap
        tolerance (float): Step norm ending the iteration, m

    Returns:
        tuple[numpy.ndarray, float]: Position (m) and receiver clock bias (m)

    Raises:
        SingularGeometryError: In case of fewer than four satellites or rank-deficient geometry
    """
    sat_positions = np.asarray(sat_positions, dtype=float).reshape(-1, 3)
    pseudo_ranges = np.asarray(pseudo_ranges, dtype=float)
    if len(sat_positions) < MIN_CHANNELS:
        raise SingularGeometryError(f'{len(sat_positions)} satellites cannot fix a position')
    solution = np.zeros(4)
    if initial is not None:
        solution[:3] = initial
    for _ in range(iterations):
        ranges = np.linalg.norm(sat_positions - solution[:3], axis=1)
        residuals = pseudo_ranges - (ranges + solution[3])
        design = _geometry_matrix(sat_positions, solution[:3])
        design[:, :3] *= -1.0
        step, _, rank, _ = np.linalg.lstsq(design, residuals, rcond=None)
        if rank < MIN_CHANNELS:
            raise SingularGeometryError('satellite geometry is rank deficient')
        solution += step
        if np.linalg.norm(step) < tolerance:
            break
    return solution[:3], float(solution[3])


def synthesize_observation(s_true: np.ndarray | StateVector, sats: Sequence[GnssSatellite],
                           budget: ErrorBudget, frame: LaunchSiteFrame,
                           rng: np.random.Generator, t: float = 0.0,
                           ambiguities: dict[int, int] | None = None) -> GnssObservation:
    """
    Pseudo-range, carrier range and range-rate of every satellite above the mask.

    Ambiguities are drawn once per satellite and stored in the ambiguities mapping, so
    passing the same mapping across epochs keeps them constant over a pass.

    Args:
        s_true (numpy.ndarray | StateVector): True state
        sats (Sequence[GnssSatellite]): Satellites to track
        budget (ErrorBudget): Error sources
        frame (LaunchSiteFrame): Embedding frame
        rng (numpy.random.Generator): Random source
        t (float): Epoch, s
        ambiguities (dict[int, int] | None): Integer ambiguities by satellite index

    Returns:
        GnssObservation: Observation, degraded when fewer than four satellites are usable
    """
    state = s_true.to_array() if isinstance(s_true, StateVector) else np.asarray(s_true, float)
    position, velocity = embed_states(state, frame)
    ambiguities = {} if ambiguities is None else ambiguities
    clock, clock_rate = state[StateIndex.B], state[StateIndex.B_DOT]

    channels = []
    for sat in sats:
        elevation_angle = elevation(position, sat.position)
        if elevation_angle < ELEVATION_MASK:
            continue
        line_of_sight = np.asarray(sat.position) - position
        distance = float(np.linalg.norm(line_of_sight))
        relative_rate = float(np.dot(line_of_sight / distance, np.asarray(sat.velocity) - velocity))
        iono = ionosphere_delay(elevation_angle, budget.iono_zenith, frame.earth_radius) \
            if budget.use_iono else 0.0
        tropo = saastamoinen_tropo(elevation_angle, state[StateIndex.H]) \
            if budget.use_tropo else 0.0
        if sat.index not in ambiguities:
            ambiguities[sat.index] = int(rng.integers(-1_000_000, 1_000_000))
        ambiguity = ambiguities[sat.index]
        common = distance + clock - SPEED_OF_LIGHT * sat.clock_bias + tropo
        channels.append(ChannelRecord(
            sat_index=sat.index,
            rho=common + iono + budget.sigma_rho * rng.standard_normal(),
            phi=common - iono + L1_WAVELENGTH * ambiguity
            + budget.sigma_phi * rng.standard_normal(),
            range_rate=relative_rate + clock_rate + budget.sigma_rate * rng.standard_normal(),
            ambiguity=ambiguity,
            elevation=elevation_angle,
            sat_position=np.asarray(sat.position, dtype=float),
            sat_velocity=np.asarray(sat.velocity, dtype=float),
            sat_clock_bias=sat.clock_bias,
        ))

    degraded = len(channels) < MIN_CHANNELS
    geometry = math.nan
    if not degraded:
        try:
            geometry = pdop(np.array([channel.sat_position for channel in channels]), position)
        except SingularGeometryError:
            degraded = True
    return GnssObservation(t=t, channels=tuple(channels), degraded=degraded, pdop=geometry)


def observations_to_frame(stream: Iterable[GnssObservation]) -> pd.DataFrame:
    """
    Flatten an observation stream into one row per channel.

    Args:
        stream (Iterable[GnssObservation]): Observations

    Returns:
        pandas.DataFrame: Table of observables
    """
    rows = [{'t': observation.t,
             'sat_id': channel.sat_index,
             'rho_m': channel.rho,
             'phi_m': channel.phi,
             'rate_mps': channel.range_rate,
             'elevation_rad': channel.elevation,
             'pdop': observation.pdop}
            for observation in stream for channel in observation.channels]
    return pd.DataFrame(rows, columns=['t', 'sat_id', 'rho_m', 'phi_m', 'rate_mps',
                                       'elevation_rad', 'pdop'])


def export_observations(stream: Iterable[GnssObservation], path: Path) -> None:
    """
    Save an observation stream as CSV with nine significant digits.

    Args:
        stream (Iterable[GnssObservation]): Observations
        path (Path): Destination file
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    observations_to_frame(stream).to_csv(path, index=False, float_format='%.9g')
