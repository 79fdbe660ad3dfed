import os


def path_append(dir, subdir):
    dir = os.path.abspath(os.path.expanduser(dir))
    return dir if not subdir else os.path.join(dir, subdir)


DEFAULT_OUT_DIR = "robust-hedge-out"


def out_dir(base=None, subdir=None):
    return path_append(base or DEFAULT_OUT_DIR, subdir)


def out_file(base, fname):
    return path_append(out_dir(base), fname)


REPORT_FNAME = "report.json"
STRATEGY_FNAME = "strategy.csv"
VOL_PATH_FNAME = "vol_path.csv"
MANIFEST_FNAME = "manifest.json"
ESTIMATE_FNAME = "estimate.json"
BAND_FNAME = "band.json"
PRICES_FNAME = "prices.csv"
PATH_FNAME = "path.csv"
STUDY_FNAME = "study.json"
RAW_ESTIMATES_FNAME = "standardized_estimates.csv"
SURFACE_FNAME = "value_surface.csv"
