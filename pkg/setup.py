import setuptools
import subprocess
import os

robust_hedge_version = (
    subprocess.run(["git", "describe", "--tags"], stdout=subprocess.PIPE)
    .stdout.decode("utf-8")
    .strip()
)

if not robust_hedge_version:
    # not a git checkout (or no tags yet)
    robust_hedge_version = "0.1.0"

if "-" in robust_hedge_version:
    # when not on tag, git describe outputs: "0.1.0-22-gdf81228"
    # pip wants PEP 440 local versions: "0.1.0+22.git.gdf81228"
    v, i, s = robust_hedge_version.split("-")
    robust_hedge_version = v + "+" + i + ".git." + s

assert "-" not in robust_hedge_version
assert "." in robust_hedge_version

assert os.path.isfile("robust_hedge/version.py")
with open("robust_hedge/VERSION", "w", encoding="utf-8") as fh:
    fh.write("%s\n" % robust_hedge_version)

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setuptools.setup(
    name="robust-hedge",
    version=robust_hedge_version,
    description="Robust drift estimation for small-noise diffusions and mean-variance hedging under volatility uncertainty",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests"]),
    package_data={"robust_hedge": ["VERSION"]},
    include_package_data=True,
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.8",
    entry_points={"console_scripts": ["robust-hedge = robust_hedge.main:main"]},
    install_requires=[
        "numpy >= 1.21",
        "scipy >= 1.8",
    ],
)
