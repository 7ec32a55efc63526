import copy
import importlib
import os
import re

import numpy as np
import yaml

from . import models

ENV_PREFIX = "RESWCAE__"

DEFAULT_CONFIG = {
    "reswcae": {"log_level": "info", "seed": 0, "out_dir": "runs"},
    "model": models.ModelConfig().to_dict(),
    "loss": models.LossConfig().to_dict(),
    "noise": {"sigma": None, "sigma_min": 100.0, "sigma_max": 200.0, "clip": True, "seed": 0},
    "training": {
        "batch_size": 32,
        "learning_rate": 0.001,
        "max_epochs": 200,
        "optimizer": "adam",
        "validation_sigma": None,
    },
    "data": {
        "dataset_path": None,
        "synthetic": None,
        "ratios": [70, 15, 15],
        "split_seed": 0,
    },
    "evaluation": {"sigmas": [0, 25, 50, 100, 150, 200]},
}


def process_env_variables(config):
    """
    Replace every `env:NAME` string in a config tree with the value of the variable NAME.

    Nested mappings and lists are walked in place; resolved values are parsed like
    RESWCAE__ variables, so `env:EPOCHS` holding "30" becomes the integer 30.

    Args:
        config (dict or list): A config section tree as read from YAML.

    Returns:
        dict or list: The same tree, resolved.

    Raises:
        ConfigurationError: If an environment variable specified in the configuration is not found.
    """
    if isinstance(config, dict):
        items = list(config.items())
    elif isinstance(config, list):
        items = list(enumerate(config))
    else:
        return config

    for key, value in items:
        if isinstance(value, str) and value.startswith("env:"):
            env_var_name = value[4:]
            env_value = os.getenv(env_var_name)
            if env_value is None:
                raise models.ConfigurationError(
                    f"Environment variable '{env_var_name}' not found"
                )
            config[key] = parse_scalar(env_value)
        elif isinstance(value, (dict, list)):
            process_env_variables(value)
    return config


def parse_scalar(value):
    """
    Interpret a string from the environment or the command line.

    `true`/`false` become booleans, numbers become numbers, and a comma-separated
    string becomes a list of parsed items.
    """
    if "," in value and not value.strip().startswith("["):
        return [parse_scalar(part.strip()) for part in value.split(",") if part.strip()]
    try:
        return yaml.safe_load(value)
    except yaml.YAMLError:
        return value


def config_from_environment(environ=None):
    """
    Build a config dictionary from environment variables.

    A variable RESWCAE__<SECTION>__<KEY> sets config[section][key], for example
    RESWCAE__TRAINING__MAX_EPOCHS=30 or RESWCAE__MODEL__KIND=wcae.

    Args:
        environ (dict): Variables to read, `os.environ` by default.

    Returns:
        dict: A partial config dictionary.
    """
    environ = os.environ if environ is None else environ
    config = {}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX) :].split("__")
        if len(parts) != 2:
            raise models.ConfigurationError(
                f"Environment variable {key} must look like {ENV_PREFIX}<SECTION>__<KEY>."
            )
        section, option = (part.lower() for part in parts)
        config.setdefault(section, {})[option] = parse_scalar(value)
    return config


def load_config_file(config_path):
    """
    Read a YAML config file and resolve its `env:` references.

    Returns:
        dict: The file contents, or an empty dict when no path is given.
    """
    if not config_path:
        return {}
    if not os.path.exists(config_path):
        raise models.ConfigurationError(f"Config file {config_path} does not exist.")
    with open(config_path, "r") as file:
        try:
            config = yaml.safe_load(file) or {}
        except yaml.YAMLError as e:
            raise models.ConfigurationError(f"Config file {config_path} is not valid YAML: {e}") from e
    if not isinstance(config, dict):
        raise models.ConfigurationError(f"Config file {config_path} must hold a mapping of sections.")
    return process_env_variables(config)


def merge_config(base, override):
    """
    Overlay one section/key config onto another.

    Keys whose override value is None keep the base value, so unset command-line flags
    do not erase file or default settings.

    Raises:
        ConfigurationError: Unknown sections or keys.
    """
    merged = copy.deepcopy(base)
    for section, values in (override or {}).items():
        if section not in merged:
            raise models.ConfigurationError(f"Unknown config section '{section}'.")
        if not isinstance(values, dict):
            raise models.ConfigurationError(f"Config section '{section}' must be a mapping.")
        for key, value in values.items():
            if key not in merged[section]:
                raise models.ConfigurationError(f"Unknown config key '{section}.{key}'.")
            if value is not None:
                merged[section][key] = value
    return merged


def derive_seed(*parts):
    """
    A reproducible 32-bit seed from a sequence of non-negative integers.

    Used for per-(epoch, image) training noise and per-(sigma, image) evaluation noise.
    """
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def load_plugin(plugin_type, name):
    """
    Import a plugin module and return its plugin class.

    Args:
        plugin_type (str): `architectures` or `optimizers`.
        name (str): Plugin directory name, e.g. `res_wcae` or `adam`.

    Returns:
        type: The first class in `reswcae/plugins/<type>/<name>/plugin.py` that subclasses the
        base class of that plugin type.

    Raises:
        ConfigurationError: Unknown plugin type or name.
    """
    base_classes = {
        "architectures": models.BaseArchitecturePlugin,
        "optimizers": models.BaseOptimizerPlugin,
    }
    if plugin_type not in base_classes:
        raise models.ConfigurationError(f"Unknown plugin type '{plugin_type}'.")
    if not isinstance(name, str) or not re.fullmatch(r"[a-z][a-z0-9_]*", name):
        raise models.ConfigurationError(f"Invalid {plugin_type} plugin name '{name}'.")

    try:
        module = importlib.import_module(f"reswcae.plugins.{plugin_type}.{name}.plugin")
    except ModuleNotFoundError as e:
        raise models.ConfigurationError(f"No {plugin_type} plugin named '{name}'.") from e

    for attr in dir(module):
        plugin_class = getattr(module, attr)
        if (
            isinstance(plugin_class, type)
            and issubclass(plugin_class, base_classes[plugin_type])
            and plugin_class is not base_classes[plugin_type]
            and plugin_class.__module__ == module.__name__
        ):
            return plugin_class
    raise models.ConfigurationError(
        f"Plugin module for '{name}' defines no {base_classes[plugin_type].__name__} subclass."
    )
