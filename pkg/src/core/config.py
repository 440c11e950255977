"""Process-level settings for the simulator."""

import os

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings:
    """Settings read from the environment, with defaults for local runs."""

    # Logging
    LOG_LEVEL = os.getenv("SIMPD_LOG_LEVEL", "INFO").upper()

    # Where run, sweep and compare write their reports unless --out is given
    OUTPUT_DIR = os.getenv("SIMPD_OUTPUT_DIR", "results")

    # Parallel scenario runs for sweeps and compares (0 = one per CPU)
    MAX_WORKERS = int(os.getenv("SIMPD_MAX_WORKERS", "0"))

    # Attainment threshold used when reporting goodput
    GOODPUT_THRESHOLD = float(os.getenv("SIMPD_GOODPUT_THRESHOLD", "0.9"))

    # Decimal digits used for every float written to CSV
    CSV_DIGITS = 9

    @classmethod
    def max_workers(cls) -> int | None:
        """Worker count for process pools; None lets the pool pick one per CPU."""
        return cls.MAX_WORKERS if cls.MAX_WORKERS > 0 else None

    @classmethod
    def float_format(cls) -> str:
        return f"%.{cls.CSV_DIGITS}f"
