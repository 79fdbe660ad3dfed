import os


def string():
    try:
        with open(os.path.dirname(__file__) + "/VERSION", "r", encoding="utf-8") as fh:
            version = fh.read().strip()
            if version:
                return version
    except OSError:
        pass
    return "unknown (git checkout)"


def stack():
    """Versions of the numeric stack, recorded in every manifest"""
    import numpy
    import scipy

    return {"robust_hedge": string(), "numpy": numpy.__version__, "scipy": scipy.__version__}
