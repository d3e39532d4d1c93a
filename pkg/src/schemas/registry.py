"""
JSON schema handling module.

This module loads the JSON schemas that describe the lab's machine-readable
outputs (run manifests, metric records) and validates documents against them.
"""
import os
import json
from typing import Any, Dict, Optional

import yaml
from jsonschema import ValidationError, validate

from src.core.errors import ConfigError
from src.utils import log

SCHEMA_DIR = os.path.join(os.path.dirname(__file__), "f2at")


class SchemaRegistry:
    """
    Schema registry.

    This class loads every schema file under a directory and validates
    documents against a schema by name.
    """

    def __init__(self, schema_path: Optional[str] = None, auto_load: bool = True):
        """
        Initialize the schema registry.

        Args:
            schema_path (str, optional): Path to schema directory. Defaults to the packaged schemas.
            auto_load (bool, optional): Whether to load schemas automatically. Defaults to True.
        """
        self.schema_path = schema_path or SCHEMA_DIR
        self.schemas: Dict[str, Dict[str, Any]] = {}
        if auto_load:
            self.load_schemas()

    def load_schemas(self) -> None:
        """Load all schemas from the schema directory."""
        if not os.path.exists(self.schema_path):
            log.warning(f"Schema path does not exist: {self.schema_path}")
            return

        for root, _, files in os.walk(self.schema_path):
            for file in sorted(files):
                if not file.endswith((".json", ".yaml", ".yml")):
                    continue
                file_path = os.path.join(root, file)
                schema_name = os.path.splitext(file)[0]
                try:
                    with open(file_path, "r") as f:
                        schema = json.load(f) if file.endswith(".json") else yaml.safe_load(f)
                    self.schemas[schema_name] = schema
                    log.debug(f"Loaded schema: {schema_name}")
                except (OSError, ValueError, yaml.YAMLError) as e:
                    log.error(f"Failed to load schema {file_path}: {str(e)}")

        log.debug(f"Loaded {len(self.schemas)} schemas")

    def validate(self, document: Dict[str, Any], schema_type: str) -> None:
        """
        Validate a document, raising on failure.

        Args:
            document (dict): The document to validate
            schema_type (str): The schema name to validate against
        """
        if schema_type not in self.schemas:
            raise ConfigError(f"Schema type not found: {schema_type}")
        try:
            validate(instance=document, schema=self.schemas[schema_type])
        except ValidationError as e:
            location = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"{schema_type} invalid at {location}: {e.message}") from e

    def is_valid(self, document: Dict[str, Any], schema_type: str) -> bool:
        """
        Validate a document against a schema.

        Args:
            document (dict): The document to validate
            schema_type (str): The schema name to validate against

        Returns:
            bool: True if valid, False otherwise
        """
        try:
            self.validate(document, schema_type)
            return True
        except ConfigError as e:
            log.error(f"Document validation failed: {str(e)}")
            return False
