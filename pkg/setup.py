#! /usr/bin/env python
# -*- coding: utf-8 -*-
from setuptools import setup
setup (name='OSSOD-Bench',
       version='1.0',
       description='Desk-scale benchmark of open-set semi-supervised object detection',
       license='GPLv3+',
       python_requires='>=3.8, <3.10',
       py_modules=['geometry', 'synthBench', 'detector', 'oodHeads', 'trainer', 'evaluation',
                   'fileFormats', 'validation', 'experiments', 'ossod'],
       install_requires=['numpy', 'scipy>=1.7', 'namedlist==1.8', 'tqdm'],
       extras_require={'test': ['pytest']},
       entry_points={'console_scripts': ['ossod = ossod:main']})
