import os

# Pin BLAS thread pools before numpy loads anywhere so results (and
# runtimes) are stable regardless of the host machine.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
