import os

# keep the numeric stack single-threaded before numpy loads: bitwise
# reproducibility and honest single-core timings
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
