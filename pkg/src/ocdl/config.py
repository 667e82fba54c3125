"""Training run configuration shared by the CLI and the trainers."""

from __future__ import annotations

from dataclasses import dataclass

from ocdl.csc import AdmmSettings


@dataclass
class TrainConfig:
    """Everything a training run needs; defaults match the solver defaults.

    ``lambda_abs`` overrides the ``lambda_frac`` rule when set.  ``height``
    and ``width`` default to the first image's native size.  ``eps`` feeds
    both the absolute and relative ADMM tolerances.
    """

    data_dir: str
    k: int
    filter_size: int = 8
    algorithm: str = "alg2"
    lambda_frac: float = 0.1
    lambda_abs: float | None = None
    rho0: float = 10.0
    max_iter: int = 300
    eps: float = 1e-4
    relax: float = 1.8
    seed: int = 0
    height: int | None = None
    width: int | None = None
    checkpoint_path: str | None = None
    checkpoint_every: int = 0
    metrics_path: str | None = None
    shuffle_seed: int | None = None
    highpass_reg: float = 5.0
    resume: str | None = None
    threads: int = 1
    plot: bool = True
    rescue_dead_filters: bool = False

    def settings(self) -> AdmmSettings:
        return AdmmSettings(
            rho0=self.rho0,
            max_iter=self.max_iter,
            eps_abs=self.eps,
            eps_rel=self.eps,
            relax=self.relax,
        ).validate()

    def validate(self) -> "TrainConfig":
        if self.algorithm not in ("alg1", "alg2"):
            raise ValueError(f"algorithm must be alg1 or alg2, got {self.algorithm!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.filter_size < 1:
            raise ValueError("filter_size must be at least 1")
        if self.lambda_abs is not None and self.lambda_abs <= 0:
            raise ValueError("lambda_abs must be positive")
        if self.lambda_frac <= 0:
            raise ValueError("lambda_frac must be positive")
        if (self.height is None) != (self.width is None):
            raise ValueError("height and width must be given together")
        self.settings()
        return self
