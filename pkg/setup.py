from setuptools import find_packages, setup

setup(
    name="tlsekit",
    version="1.0.0",
    license="MIT",
    packages=find_packages(include=["tlsekit"]),
    python_requires=">=3.10",
    install_requires=[
        "numpy",
        "scipy",
        "gin-config",
        "wandb",
        "einops",
        "tqdm",
        "termcolor",
    ],
    extras_require={
        "test": ["pytest"],
    },
    entry_points={
        "console_scripts": ["tlsekit=tlsekit.cli:main"],
    },
)
