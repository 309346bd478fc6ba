"""Random Fourier feature map for the unit-amplitude RBF kernel.

A feature bank holds Monte Carlo samples from the kernel's spectral
density.  Inner products of the resulting cosine features approximate
``exp(-(tp - tq)^2 / (2 * lengthscale^2))``, which lets Bayesian linear
regression over the features stand in for Gaussian process regression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FeatureBank", "sample_feature_bank"]


@dataclass(frozen=True)
class FeatureBank:
    """Sampled spectral frequencies and phases defining the feature map.

    Immutable after construction; :meth:`phi` and :meth:`kernel_approx`
    are pure, so one bank can be shared across classes, dimensions and
    threads.
    """

    n_features: int
    lengthscale: float
    seed: int
    omegas: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError(f"n_features must be >= 1, got {self.n_features}")
        if self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be > 0, got {self.lengthscale}")
        object.__setattr__(self, "omegas", np.asarray(self.omegas, dtype=np.float64))
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=np.float64))
        if self.omegas.shape != (self.n_features,) or self.phases.shape != (self.n_features,):
            raise ValueError("omegas and phases must both have shape (n_features,)")

    def phi(self, t) -> np.ndarray:
        """Feature vector ``sqrt(2/M) * cos(omega * t + phase)``.

        Accepts a scalar or an array of times; the feature axis is last,
        so an input of shape ``(...,)`` yields ``(..., n_features)``.
        Times are raw within-segment indices; scaling is the job of the
        lengthscale baked into the frequencies.
        """
        t = np.asarray(t, dtype=np.float64)
        proj = np.multiply.outer(t, self.omegas) + self.phases
        return np.sqrt(2.0 / self.n_features) * np.cos(proj)

    def kernel_approx(self, t_p: float, t_q: float) -> float:
        """Monte Carlo kernel value ``phi(t_p) . phi(t_q)``.

        Converges to the RBF kernel as n_features grows; exactly
        symmetric in its arguments.
        """
        return float(self.phi(t_p) @ self.phi(t_q))

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "lengthscale": self.lengthscale,
            "seed": self.seed,
            "omegas": self.omegas.tolist(),
            "phases": self.phases.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureBank":
        return cls(
            n_features=int(d["n_features"]),
            lengthscale=float(d["lengthscale"]),
            seed=int(d["seed"]),
            omegas=np.asarray(d["omegas"], dtype=np.float64),
            phases=np.asarray(d["phases"], dtype=np.float64),
        )


def sample_feature_bank(n_features: int, lengthscale: float = 1.0, seed: int = 0) -> FeatureBank:
    """Draw a feature bank from the RBF kernel's spectral density.

    Frequencies come first (``Normal(0, 1/lengthscale^2)``, i.i.d.), then
    phases (``Uniform[0, 2pi)``, i.i.d.), in one fixed pass over the
    generator, so a given ``(n_features, lengthscale, seed)`` triple
    always reproduces the same bank bit-exactly.
    """
    if n_features < 1:
        raise ValueError(f"n_features must be >= 1, got {n_features}")
    if lengthscale <= 0:
        raise ValueError(f"lengthscale must be > 0, got {lengthscale}")
    rng = np.random.default_rng(seed)
    omegas = rng.normal(0.0, 1.0 / lengthscale, size=n_features)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    return FeatureBank(
        n_features=n_features,
        lengthscale=float(lengthscale),
        seed=int(seed),
        omegas=omegas,
        phases=phases,
    )
