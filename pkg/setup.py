from setuptools import setup

setup(
    install_requires=[
        "colorama >= 0.4.4",
        "packaging >= 21.3",
        "numpy >= 1.23",
        "scipy >= 1.10",
        "Pillow >= 9.1",
    ],
    tests_require=[
        "tox >= 3.24.5",
    ],
)
