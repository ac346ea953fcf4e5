try:
    from setuptools import setup
except ImportError:
    from distutils.core import setup

VERSION = "0.1dev"

setup(
    name="focal-guidance",
    version=VERSION,
    description="Focal guidance for image-to-video diffusion transformers, on a toy DiT with synthetic scenes",
    license="MIT",
    platforms=["any"],
    packages=['focalguide', 'focalguide.bench', 'focalguide.core', 'focalguide.diagnostics',
              'focalguide.guidance', 'focalguide.model', 'focalguide.records', 'focalguide.synth'],
    package_dir={'focalguide': 'focalguide'},
    install_requires=["numpy", "six", "pytz", "iso8601", "tqdm", "enum34; python_version < '3.4'"],
    test_suite="tests",
    entry_points={
        'console_scripts': ['fg = focalguide.cli:main'],
    },
)
