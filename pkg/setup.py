from setuptools import setup, find_packages

setup(
    name="coca-cxr",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    install_requires=[
        "torch>=2.0.0",
        "numpy>=1.22.0",
        "scipy>=1.9.0",
        "pillow>=9.1.0",
        "nltk>=3.6.0",
        "matplotlib>=3.4.0",
        "tqdm>=4.60.0",
    ],
    extras_require={"test": ["pytest>=7.0"]},
    entry_points={"console_scripts": ["coca-cxr=coca_cxr.cli:main"]},
    author="CoCa-CXR Developers",
    description="Contrastive captioning of prior/current chest X-ray pairs with regional cross-attention",
    keywords="chest-xray, contrastive-captioning, temporal-progression, regional-attention",
    python_requires=">=3.9",
)
