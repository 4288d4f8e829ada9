"""Setup script for symflow"""
from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="symflow",
    version="0.1.0",
    description="Symbolic coding of non-uniformly hyperbolic flows",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "examples"]),
    py_modules=["server"],
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.13",
    ],
    python_requires="==3.13.*",
    install_requires=[
        "numpy>=2.0",
        "scipy>=1.14",
        "networkx>=3.3",
        "pydantic==2.13.4",
        "python-dotenv>=1.0.0",
        "fastmcp>=3.2.0",
    ],
    entry_points={
        "console_scripts": [
            "symflow=symflow.cli:main",
            "symflow-server=server:main",
        ],
    },
)
