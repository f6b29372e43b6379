import logging
import os
from pathlib import Path
from dotenv import dotenv_values
from .errors import SpecError

config_logger = logging.getLogger("config")
config_logger.setLevel(logging.DEBUG)
config_logger.addHandler(logging.NullHandler())


class Settings:
    """
    Runtime configuration, read from .env and overridden by the process environment
    """

    # key: (type, default)
    _KEYS: dict = {
        "RESULT_DIR": (str, "results"),
        "ENUMERATION_CAP": (int, 24),
        "EXACT_SPLIT_CAP": (int, 20),
        "ORACLE_CAP": (int, 8),
        "BRUTE_ROUNDING_CAP": (int, 22),
        "UNBOUNDED_THRESHOLD": (float, 1e6),
        "DEFAULT_SEED": (int, 0),
    }

    def __init__(self, env_file: str | Path = ".env", environ: dict | None = None):
        """
        :param env_file: dotenv file to read, missing file means no values
        :param environ: mapping that overrides the file, defaults to os.environ
        """
        values = {k: v for k, v in dotenv_values(env_file).items() if v is not None}
        values.update(os.environ if environ is None else environ)

        self._values: dict = {}
        for key, (kind, default) in self._KEYS.items():
            raw = values.get(key, None)
            if raw is None or raw == "":
                self._values[key] = default
                continue
            try:
                self._values[key] = kind(raw)
            except ValueError:
                raise SpecError(f"Invalid configuration value {raw!r}, expected {kind.__name__}", field=key)
        config_logger.debug(f"Settings loaded: {self._values}")

    def __getitem__(self, key: str):
        return self._values[key]

    @property
    def result_dir(self) -> Path:
        return Path(self._values["RESULT_DIR"])

    @property
    def enumeration_cap(self) -> int:
        return self._values["ENUMERATION_CAP"]

    @property
    def exact_split_cap(self) -> int:
        return self._values["EXACT_SPLIT_CAP"]

    @property
    def oracle_cap(self) -> int:
        return self._values["ORACLE_CAP"]

    @property
    def brute_rounding_cap(self) -> int:
        return self._values["BRUTE_ROUNDING_CAP"]

    @property
    def unbounded_threshold(self) -> float:
        return self._values["UNBOUNDED_THRESHOLD"]

    @property
    def default_seed(self) -> int:
        return self._values["DEFAULT_SEED"]


settings = Settings()
