"""
Process-level settings for the Floquet SNAP toolkit.
"""
from pydantic_settings import BaseSettings
import os


class Settings(BaseSettings):
    """Settings loaded from environment variables (prefix FLOQUET_SNAP_) or .env."""

    # Logging
    log_level: str = "INFO"

    # File Storage
    artifacts_path: str = "./artifacts"

    # Parallelism
    max_workers: int = 4

    # Integrators
    magnus_steps_per_period: int = 256
    propagation_steps_per_period: int = 64
    floquet_frame_substeps: int = 4
    qoc_steps_per_period: int = 40

    # Floquet analysis
    mode_samples: int = 128
    k_window: int = 4
    k_window_max: int = 32
    label_overlap_threshold: float = 0.5

    # Tolerances
    hermiticity_tolerance: float = 1e-12
    unitarity_tolerance: float = 1e-9
    leakage_warning: float = 1e-2

    class Config:
        env_file = ".env"
        env_prefix = "FLOQUET_SNAP_"
        case_sensitive = False

    def ensure_directories(self, path: str = None) -> str:
        """Create the artifact directory if it doesn't exist."""
        target = path or self.artifacts_path
        os.makedirs(target, exist_ok=True)
        return target


# Global settings instance
settings = Settings()
