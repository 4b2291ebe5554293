from setuptools import setup, find_packages

setup(
    name="transnet",
    version="0.1.0",
    description="Multi-head transformation networks on the dihedral group D4, in numpy.",
    long_description="",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    package_dir={'': 'src'},
    packages=find_packages(where='src'),
    install_requires=[
        "matplotlib>=3.6",
        "numpy>=2.0.0",
        "pandas>=2.0",
        "tqdm>=4.5"
    ],
    extras_require={"test": ["pytest>=7.0"]},
    entry_points={"console_scripts": ["transnet=transnet.app.cli:main"]},
)
