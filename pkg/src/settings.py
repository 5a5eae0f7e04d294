"""Environment configuration and logging setup."""
import os
import hashlib
import logging
from typing import Optional
from dotenv import load_dotenv

load_dotenv()

DEFAULT_SEED = int(os.getenv("HARNESS_SEED", "1"))
DEFAULT_OUTPUT_DIR = os.getenv("HARNESS_OUTPUT_DIR", "runs")
DEFAULT_CONFIG = os.getenv("HARNESS_CONFIG", "configs/default.json")
LOG_LEVEL = os.getenv("HARNESS_LOG_LEVEL", "INFO")


def configure_logging(verbose: bool = False, level: Optional[str] = None) -> None:
    """Configure root logging once for a CLI process."""
    name = "DEBUG" if verbose else (level or LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def derive_seed(parent: int, name: str) -> int:
    """Child seed: first 8 bytes (big endian) of sha256("{parent}:{name}")."""
    digest = hashlib.sha256(f"{parent}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
