from setuptools import setup, find_packages

setup(
    name="popnet",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    package_data={
        "popnet.data": ["default_schema.yaml"],
    },
    python_requires=">=3.10",
    install_requires=[
        "pyyaml==6.0.1",
        "numpy==1.26.4",
        "pandas==2.2.2",
        "scipy==1.13.1",
        "networkx==3.3",
        "joblib==1.4.2",
    ],
    extras_require={
        "test": ["pytest==8.2.2"],
    },
    entry_points={
        'console_scripts': [
            'popnet=popnet.main:main',
        ],
    },
)
