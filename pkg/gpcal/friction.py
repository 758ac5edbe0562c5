"""
Single-phase friction pressure drop in a heated tube
Isothermal friction factor, heating correction, and a generator of synthetic
experimental campaigns used by the friction demo
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.stats import qmc

from exceptions import ContractViolation

logger = logging.getLogger(__name__)

# Isothermal friction factor
A_LAMINAR = 64.0
RE_LAMINAR = 2000.0
RE_TURBULENT = 4000.0

# Heating correction
C_F = 0.01
D_EXP = 0.5
N_EXP = 2.0
T_REF = 100.0
HEATED_WETTED_RATIO = 1.0
H_CONV = 35e3

# Calibrated parameters beta = (a_t, b_t)
BETA_NOMINAL = (0.22, 0.21)
BETA_TRUE = (0.235, 0.215)
PRIOR_SD = (0.11, 0.105)
SIGMA_MES = 150.0
DISCREPANCY_AMPLITUDE = 1200.0

MIN_EXPERIMENTS = 30

CONDITION_LABELS = ('G_i', 'phi_w', 'h_i', 'P_o', 'H_f', 'D_h')


def bulk_temperature(h_in):
    """Liquid temperature (degC) from the inlet enthalpy (kJ/kg)"""
    return np.asarray(h_in, dtype=float) / 4.186


def wall_temperature(t_bulk, phi_w):
    """Wall temperature (degC) for a wall heat flux phi_w (MW/m2)"""
    return np.asarray(t_bulk, dtype=float) + 1e6 * np.asarray(phi_w, dtype=float) / H_CONV


def water_density(t, p):
    """Liquid water density (kg/m3) at t (degC) and p (MPa)"""
    t = np.asarray(t, dtype=float)
    return (1000.0 - 0.0036 * (t - 4.0) ** 2) * (1.0 + 4.5e-4 * (np.asarray(p, dtype=float) - 10.0))


def water_viscosity(t):
    """Liquid water dynamic viscosity (Pa s) at t (degC)"""
    return 2.414e-5 * 10.0 ** (247.8 / (np.asarray(t, dtype=float) + 133.15))


def reynolds(G, D_h, mu):
    """Re = G D_h / mu"""
    return np.asarray(G, dtype=float) * np.asarray(D_h, dtype=float) / np.asarray(mu, dtype=float)


def isothermal_friction(Re, a_t, b_t, a_l: float = A_LAMINAR, re_l: float = RE_LAMINAR, re_t: float = RE_TURBULENT):
    """
    Isothermal friction factor.

    a_l / Re below re_l, a_t / Re^b_t above re_t, linear blend of the two
    branches in between (continuous at both ends).
    """
    Re = np.asarray(Re, dtype=float)
    if np.any(Re <= 0):
        raise ContractViolation("Reynolds number must be positive")
    laminar = a_l / Re
    turbulent = a_t / Re ** b_t
    weight = np.clip((Re - re_l) / (re_t - re_l), 0.0, 1.0)
    blend = laminar * (1.0 - weight) + turbulent * weight
    return np.where(Re <= re_l, laminar, np.where(Re >= re_t, turbulent, blend))


def heating_correction(
    t_wall,
    t_bulk,
    c_f: float = C_F,
    d: float = D_EXP,
    n: float = N_EXP,
    ratio: float = HEATED_WETTED_RATIO
):
    """f_h = 1 - (P_h/P_w) C_f (T_w - T_b) / (1 + d ((T_w + T_b) / (2 T_0))^n); exactly 1 when T_w = T_b"""
    t_wall = np.asarray(t_wall, dtype=float)
    t_bulk = np.asarray(t_bulk, dtype=float)
    return 1.0 - ratio * c_f * (t_wall - t_bulk) / (1.0 + d * ((t_wall + t_bulk) / (2.0 * T_REF)) ** n)


def pressure_drop(G, H_f, D_h, rho, f_iso, f_h):
    """Friction pressure drop (Pa): H / (2 rho D_h) G^2 f_iso f_h"""
    G = np.asarray(G, dtype=float)
    return np.asarray(H_f, dtype=float) / (2.0 * np.asarray(rho, dtype=float) * np.asarray(D_h, dtype=float)) \
        * G ** 2 * f_iso * f_h


class FrictionModel:
    """
    Computer model x -> pressure drop with beta = (a_t, b_t).

    x = (G_i, phi_w, h_i, P_o, H_f, D_h); a_l, C_f, d and n stay at their
    nominal values.
    """

    def __call__(self, x, beta) -> float:
        return float(self.evaluate(np.asarray(x, dtype=float).reshape(1, -1), beta)[0])

    def evaluate(self, X, beta) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(CONDITION_LABELS):
            raise ContractViolation(f"Friction conditions have {len(CONDITION_LABELS)} columns, got {X.shape[1]}")
        a_t, b_t = np.asarray(beta, dtype=float).reshape(-1)
        G, phi_w, h_in, p_out, H_f, D_h = X.T

        t_bulk = bulk_temperature(h_in)
        t_wall = wall_temperature(t_bulk, phi_w)
        Re = reynolds(G, D_h, water_viscosity(t_bulk))
        f_iso = isothermal_friction(Re, a_t, b_t)
        f_h = heating_correction(t_wall, t_bulk)
        return pressure_drop(G, H_f, D_h, water_density(t_bulk, p_out), f_iso, f_h)


@dataclass(frozen=True)
class CampaignRanges:
    """Sampling ranges of the environment variables and the campaign control variables"""

    G: Tuple[float, float] = (1500.0, 5000.0)
    h_in: Tuple[float, float] = (400.0, 1200.0)
    p_out: Tuple[float, float] = (7.0, 16.0)
    phi_w: Tuple[float, float] = (0.2, 1.5)
    heated_lengths: Tuple[float, ...] = (1.0, 1.6, 2.2, 3.0)
    diameters: Tuple[float, ...] = (0.006, 0.010, 0.014, 0.018)

    def __post_init__(self):
        for name in ('G', 'h_in', 'p_out', 'phi_w'):
            low, high = getattr(self, name)
            if not (np.isfinite(low) and np.isfinite(high) and low < high):
                raise ContractViolation(f"Degenerate range for {name}: ({low}, {high})")
        if len(self.heated_lengths) != len(self.diameters) or len(self.heated_lengths) < 1:
            raise ContractViolation("Each campaign needs one heated length and one diameter")
        if min(self.heated_lengths) <= 0 or min(self.diameters) <= 0:
            raise ContractViolation("Campaign heated lengths and diameters must be positive")

    @property
    def campaigns(self) -> int:
        return len(self.heated_lengths)


@dataclass(frozen=True, eq=False)
class FrictionExperiments:
    """Synthetic experiments: conditions (n, 6), observed pressure drops and campaign ids"""

    conditions: np.ndarray
    y: np.ndarray
    campaign: np.ndarray
    heated: np.ndarray
    labels: Tuple[str, ...] = field(default=CONDITION_LABELS)

    @property
    def n(self) -> int:
        return self.y.shape[0]


def discrepancy(X, ranges: CampaignRanges, amplitude: float = DISCREPANCY_AMPLITUDE) -> np.ndarray:
    """Smooth low-frequency model error in normalized G_i and phi_w"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    g = (X[:, 0] - ranges.G[0]) / (ranges.G[1] - ranges.G[0])
    p = X[:, 1] / ranges.phi_w[1]
    return amplitude * (np.sin(1.5 * np.pi * g) + 0.8 * p ** 2 - 0.5)


def generate_campaigns(
    seed: int,
    n_iso: int = 60,
    n_heated: int = 60,
    ranges: CampaignRanges = CampaignRanges(),
    beta_true=BETA_TRUE,
    amplitude: float = DISCREPANCY_AMPLITUDE,
    noise_sd: float = SIGMA_MES
) -> FrictionExperiments:
    """
    Draw synthetic isothermal and heated experiments.

    Environment variables come from a seeded Latin hypercube; rows are dealt
    round-robin into campaigns sharing (H_f, D_h). Observations are the
    friction model at beta_true plus a smooth discrepancy plus Gaussian noise.

    Args:
        seed: Random seed
        n_iso: Isothermal experiments (phi_w = 0)
        n_heated: Heated experiments
        ranges: Sampling ranges
        beta_true: (a_t, b_t) used for the synthetic truth
        amplitude: Discrepancy amplitude (Pa)
        noise_sd: Measurement noise standard deviation (Pa)

    Returns:
        FrictionExperiments
    """
    if n_iso < 0 or n_heated < 0 or n_iso + n_heated < MIN_EXPERIMENTS:
        raise ContractViolation(
            f"Need at least {MIN_EXPERIMENTS} experiments, got n_iso={n_iso}, n_heated={n_heated}"
        )

    n = n_iso + n_heated
    sample = qmc.LatinHypercube(d=4, seed=seed).random(n)
    heated = np.arange(n) >= n_iso
    campaign = np.concatenate([np.arange(n_iso), np.arange(n_heated)]) % ranges.campaigns

    def scale(column, bounds):
        return bounds[0] + sample[:, column] * (bounds[1] - bounds[0])

    conditions = np.column_stack([
        scale(0, ranges.G),
        np.where(heated, scale(3, ranges.phi_w), 0.0),
        scale(1, ranges.h_in),
        scale(2, ranges.p_out),
        np.asarray(ranges.heated_lengths)[campaign],
        np.asarray(ranges.diameters)[campaign],
    ])

    truth = FrictionModel().evaluate(conditions, beta_true) + discrepancy(conditions, ranges, amplitude)
    rng = np.random.default_rng(seed)
    y = truth + noise_sd * rng.standard_normal(n)

    logger.info(
        f"Generated {n} synthetic experiments ({n_iso} isothermal, {n_heated} heated, "
        f"{ranges.campaigns} campaigns)"
    )
    return FrictionExperiments(conditions, y, campaign, heated)
