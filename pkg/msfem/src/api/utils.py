import io
from typing import Dict, Optional

from dotenv import dotenv_values

from msfem.src.experiments.config import ExperimentConfig, config_from_mapping


class ApiUtils:
    @staticmethod
    def parse_experiment_upload(content: bytes) -> ExperimentConfig:
        """Parse an uploaded key=value experiment file.

        Raises:
            ConfigValidationError: unknown keys or malformed values
            UnicodeDecodeError: the upload is not UTF-8 text
        """
        values: Dict[str, Optional[str]] = dotenv_values(stream=io.StringIO(content.decode("utf-8")))
        return config_from_mapping(values)
