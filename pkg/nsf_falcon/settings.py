import os
from typing import Any

import yaml


CONFIG_PATH: str = os.path.join(os.path.dirname(__file__), "config", "defaults.yml")


def _coerce_numbers(node: Any) -> Any:
    # YAML 1.1 は符号なし指数 (1.0e8) を文字列として読む
    if isinstance(node, dict):
        return {k: _coerce_numbers(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_coerce_numbers(v) for v in node]
    if isinstance(node, str):
        try:
            return float(node)
        except ValueError:
            return node
    return node


def load_defaults(path: str = CONFIG_PATH) -> dict[str, Any]:
    """
    Load the defaults document.

    Args:
        path (str): YAML file path

    Returns:
        dict[str, Any]: section name -> mapping
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        raise RuntimeError(f"Defaults file not found: {path}") from None
    except yaml.YAMLError as e:
        raise RuntimeError(f"Error parsing {path}: {e}") from e
    if not isinstance(data, dict):
        raise RuntimeError(f"Defaults file must hold a mapping: {path}")
    return _coerce_numbers(data)


DEFAULTS: dict[str, Any] = load_defaults()

SOLVER_DEFAULTS: dict[str, Any] = DEFAULTS["solver"]
AUDIT_DEFAULTS: dict[str, Any] = DEFAULTS["audit"]
INVERSION_DEFAULTS: dict[str, Any] = DEFAULTS["inversion"]
EXTENSION_DEFAULTS: dict[str, Any] = DEFAULTS["extension"]
EOS_CHECK_DEFAULTS: dict[str, Any] = DEFAULTS["eos_check"]
MMS_DEFAULTS: dict[str, Any] = DEFAULTS["mms"]
