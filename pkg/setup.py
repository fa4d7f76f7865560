from setuptools import setup

with open('README.md', 'r') as fh:
    long_description = fh.read()

setup(
  name='weakhedge',
  packages=['weakhedge'],
  version='0.1.0',
  license='MIT',
  description='Hedging under weak terminal constraints with reflected nonlinear expectations on a binomial lattice',
  long_description=long_description,
  long_description_content_type='text/markdown',
  keywords='quantile hedging g-expectation reflected BSDE optimal stopping binomial lattice',
  install_requires=[
    'numpy',
    'pandas',
    'scipy',
    'joblib',
    'matplotlib'
  ],
  entry_points={
    'console_scripts': ['weakhedge=weakhedge.cli:main']
  },
  classifiers=[
    'Development Status :: 3 - Alpha',
    'Intended Audience :: Developers',
    'Intended Audience :: Financial and Insurance Industry',
    'Topic :: Software Development :: Libraries',
    'License :: OSI Approved :: MIT License',
    'Programming Language :: Python :: 3',
    'Typing :: Typed'
  ],
  python_requires='>=3.8'
)
