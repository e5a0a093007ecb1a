#!/usr/bin/python
from setuptools import find_packages
from setuptools import setup

with open('ips_cftp/version.py') as f:
    exec(f.read())

version = locals()['__version__']

setup(
    name='ips_cftp',
    version=version,
    provides=["ips_cftp"],
    license='Apache License 2.0',
    description=(
        'Exact sampling of stationary marginals of perturbed interacting '
        'particle systems by coupling from the past.'
    ),
    packages=find_packages(exclude=('tests*',)),
    package_data={
        'ips_cftp': ['py.typed'],
    },
    install_requires=[
        'numpy >= 1.20',
        'py_zipkin >= 0.18.1',
        'scipy >= 1.7',
        'tomli >= 1.1; python_version < "3.11"',
    ],
    entry_points={
        'console_scripts': [
            'ips-cftp = ips_cftp.cli:main',
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
    ],
    python_requires=">=3.9",
)
