import re

from setuptools import setup

# Get version without importing
with open("hop/__init__.py", "rb") as f:
    VERSION = str(re.search('__version__ = "(.+?)"', f.read().decode("utf-8")).group(1))

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()


setup(
    name="django-hop-sim",
    version=VERSION,
    packages=["hop", "hop.core", "hop.management", "hop.management.commands"],
    package_data={"hop": ["examples/*.json", "examples/suites/*.json"]},
    description="Bounded-gap decentralized training protocols and a deterministic discrete-event simulator, packaged as a Django app.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    install_requires=["django>=4.2", "pydantic>=2.7", "numpy>=1.24", "scipy>=1.10", "networkx>=3.1"],
    python_requires=">=3.10",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: System :: Distributed Computing",
        "Programming Language :: Python :: 3 :: Only",
        "Framework :: Django :: 4.2",
        "Framework :: Django :: 5.0",
        "Natural Language :: English",
    ],
    keywords="decentralized training sgd gossip simulation django",
)
