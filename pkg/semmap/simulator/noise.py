from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, field_validator


class NoiseSpec(BaseModel):
    """
    Sensor corruption applied by the simulator. Every random draw is seeded from
    ``seed`` and the frame index.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    seg_flip_prob: float = Field(0.05, ge=0.0, le=1.0)
    gnss_sigma: NonNegativeFloat = 0.03
    gnss_blocked: list[tuple[float, float]] = Field(default_factory=list)
    """Arclength intervals ``[start, end]`` (meters) without a GNSS fix."""
    odom_p_sigma: NonNegativeFloat = 0.02
    odom_yaw_sigma: NonNegativeFloat = 0.001
    odom_scale_error: float = Field(0.0, gt=-1.0, lt=1.0)
    """Multiplicative odometry distance bias, e.g. ``0.01`` for 1% of distance."""
    seed: int = 0

    @field_validator("gnss_blocked")
    @classmethod
    def _check_intervals(cls, value: list[tuple[float, float]]) -> list[tuple[float, float]]:
        for start, end in value:
            if end < start:
                raise ValueError(f"Blocked interval [{start}, {end}] is reversed.")

        return value

    @classmethod
    def noiseless(
        cls, seed: int = 0, gnss_blocked: Optional[list[tuple[float, float]]] = None
    ) -> "NoiseSpec":
        return cls(
            seg_flip_prob=0.0,
            gnss_sigma=0.0,
            gnss_blocked=gnss_blocked or [],
            odom_p_sigma=0.0,
            odom_yaw_sigma=0.0,
            seed=seed,
        )

    def gnss_available(self, arclength: float) -> bool:
        return not any(start <= arclength <= end for start, end in self.gnss_blocked)
