import setuptools

with open("readme.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()


setuptools.setup(
    name="tlt",
    version="0.1.0",
    description="Treatment learning causal transformer: a causal variational encoder-decoder with causal-effect evaluation.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests", "tests.*"]),
    python_requires=">=3.8",
    include_package_data=True,
    install_requires=[
        "click",
        "numpy",
        "pandas",
        "pyyaml",
        "scikit-learn",
        "scipy",
        "torch",
        "torchvision",
    ],
    extras_require={
        "test": [
            "coverage",
            "pytest",
        ],
    },
    entry_points={
        "console_scripts": [
            "tlt=tlt.cli:main",
        ],
    },
)
