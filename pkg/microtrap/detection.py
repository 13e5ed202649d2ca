#!/usr/bin/env python3
"""
Photon-count state detection.

Bright (S1/2) ion: counts ~ Poisson((signal + background)·T).
Dark (D5/2) ion:   counts ~ Poisson(background·T), unless the D5/2 level
decays at time t_d < T, after which the ion scatters at the bright rate:
counts ~ Poisson(background·T + signal·(T − t_d)).

Threshold: the count where the two Poisson likelihoods cross,
c* = (μ_bright − μ_dark)/ln(μ_bright/μ_dark); a shot is classified D when
its count is ≤ floor(c*).
"""
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import integrate, stats

from microtrap.constants import D52_LIFETIME_S
from microtrap.errors import DomainError

SIGNAL_KHZ = 12.0
BACKGROUND_KHZ = 4.0
WINDOW_US = 5000.0


@dataclass(frozen=True)
class DetectionModel:
    """
    PMT detection parameters.

    signal_kHz: ion fluorescence above background
    background_kHz: stray light and dark counts
    window_us: detection time
    d_lifetime_s: D5/2 lifetime (decay during the window turns D bright)
    """

    signal_kHz: float = SIGNAL_KHZ
    background_kHz: float = BACKGROUND_KHZ
    window_us: float = WINDOW_US
    d_lifetime_s: float = D52_LIFETIME_S

    def __post_init__(self):
        if not self.window_us > 0:
            raise DomainError("Detection window must be > 0")
        if self.signal_kHz <= 0 or self.background_kHz < 0:
            raise DomainError("Need signal > 0 and background >= 0")
        if not self.d_lifetime_s > 0:
            raise DomainError("D5/2 lifetime must be > 0")

    @property
    def window_s(self) -> float:
        return self.window_us * 1e-6

    @property
    def bright_mean(self) -> float:
        return (self.signal_kHz + self.background_kHz) * 1e3 * self.window_s

    @property
    def dark_mean(self) -> float:
        return self.background_kHz * 1e3 * self.window_s

    @property
    def threshold(self) -> int:
        """Largest count still classified as D."""
        if self.dark_mean == 0:
            return 0
        crossing = (self.bright_mean - self.dark_mean) / np.log(self.bright_mean / self.dark_mean)
        return int(np.floor(crossing))

    def with_window(self, window_us: float) -> "DetectionModel":
        return DetectionModel(self.signal_kHz, self.background_kHz, window_us, self.d_lifetime_s)


def _decayed_means(model: DetectionModel, decay_s: np.ndarray) -> np.ndarray:
    t = model.window_s
    bright_time = np.clip(t - decay_s, 0.0, t)
    return model.dark_mean + model.signal_kHz * 1e3 * bright_time


def detect_shots(
    shelved: np.ndarray, model: DetectionModel, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Simulate detection for many shots.

    Args:
        shelved: True where the ion was transferred to D5/2
        model: Detection parameters
        rng: Random stream of the scan point

    Returns:
        (photon counts, True where the shot is classified D)
    """
    shelved = np.asarray(shelved, dtype=bool)
    # decay times are drawn for every shot so the stream consumption is fixed
    decay = rng.exponential(model.d_lifetime_s, size=shelved.shape)
    means = np.where(shelved, _decayed_means(model, decay), model.bright_mean)
    counts = rng.poisson(means)
    return counts, counts <= model.threshold


def detect(
    true_state: str, model: DetectionModel, rng: np.random.Generator
) -> Tuple[int, str]:
    """Single-shot detection; true_state is "S" or "D"."""
    if true_state not in ("S", "D"):
        raise DomainError(f"State must be 'S' or 'D', got {true_state!r}")
    counts, dark = detect_shots(np.array([true_state == "D"]), model, rng)
    return int(counts[0]), "D" if dark[0] else "S"


def detection_error_budget(model: DetectionModel) -> Dict[str, float]:
    """
    Analytic misclassification probabilities.

    Returns:
        Dict with bright_error (S read as D), dark_error (D read as S, with
        in-window decay), decay_probability, threshold and mean error.
    """
    thr = model.threshold
    t = model.window_s
    tau = model.d_lifetime_s
    bright_error = float(stats.poisson.cdf(thr, model.bright_mean))
    survive = np.exp(-t / tau)
    dark_error = survive * float(stats.poisson.sf(thr, model.dark_mean))

    def decayed(td):
        mu = _decayed_means(model, np.array([td]))[0]
        return np.exp(-td / tau) / tau * stats.poisson.sf(thr, mu)

    dark_error += integrate.quad(decayed, 0.0, t, limit=200)[0]
    return {
        "threshold": thr,
        "bright_mean": model.bright_mean,
        "dark_mean": model.dark_mean,
        "bright_error": bright_error,
        "dark_error": float(dark_error),
        "decay_probability": float(1.0 - survive),
        "mean_error": 0.5 * (bright_error + float(dark_error)),
    }
