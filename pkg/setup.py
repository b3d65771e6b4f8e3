from setuptools import setup, find_packages

setup(
    name='hypnogrid',
    version='0.9',
    packages=find_packages(exclude=('tests', 'examples')),
    install_requires=['numpy', 'scipy', 'pandas', 'matplotlib', 'progressbar2'],
    tests_require=['pytest', 'scikit-learn'],
    extras_require={'test': ['pytest', 'scikit-learn']},
    license='MIT license',
    entry_points={
        'console_scripts': ['hypnogrid = hypnogrid.stage.stage_cli:main'
        ]
    },
    package_data={'hypnogrid': ['stage/cfg/*.cfg']},
    # include_package_data=True
)
