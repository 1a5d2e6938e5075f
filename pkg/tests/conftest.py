import os
import sys

# Keep BLAS single-threaded: small matrices gain nothing from threading and
# the training determinism contract assumes a fixed reduction order.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

sys.path.insert(0, os.path.dirname(__file__))
