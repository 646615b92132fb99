from setuptools import setup

setup(
    name='nsiss', version='0.1.0',
    package_dir={'': 'src'}, packages=['nsiss'], package_data={'nsiss': ['data/*.json']},
    install_requires=['numpy', 'scipy', 'tqdm', 'cvxopt'],
    entry_points={'console_scripts': ['nsiss=nsiss.cli:main']},
)
