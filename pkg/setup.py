from setuptools import setup, find_packages

setup(
    name="reswcae",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    install_requires=[
        "numpy",
        "scipy",
        "PyWavelets",
        "scikit-image",
        "opencv-python-headless",
        "PyYAML",
        "click",
    ],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["reswcae=reswcae.__main__:main"]},
)
