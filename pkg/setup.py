from setuptools import find_packages, setup

setup(name='dualtune',
      version='0.1.0',
      description='Bilevel hyperparameter tuning through lower-level duality and majorization-minimization',
      packages=find_packages(exclude=['tests']),
      python_requires='>=3.10',
      install_requires=['numpy', 'scipy', 'rich', 'click', 'pydantic>=2'],
      entry_points={'console_scripts': ['dualtune = dualtune.__main__:cli']})
