#!/usr/bin/env python

import os
from setuptools import setup

version_py = os.path.join(os.path.dirname(__file__), "capgp", "version.py")
version = open(version_py).read().strip().split("=")[-1].replace('"', "").strip()

setup(
    name="capgp",
    packages=["capgp", "capgp.data", "capgp.models", "capgp.utils", "runner", "tools", "tools.analysis"],
    package_dir={
        "capgp": "./capgp",
        "runner": "./runner",
        "tools": "./tools",
    },
    package_data={"runner": ["config/*.yaml", "config/*/*.yaml"]},
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "hydra-core>=1.3",
        "omegaconf",
        "pydantic>=2",
        "dm-tree",
        "joblib",
        "wandb",
    ],
    entry_points={"console_scripts": ["capgp=runner.cli:main"]},
    version=version,
)
