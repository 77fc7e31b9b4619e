"""Console entry point for fracmono.

Pre-scans the command line for --threads and caps the BLAS pools through
the environment before numpy is imported; thread caps set any later have
no effect on an already-initialized BLAS.
"""

import os
import sys


def main() -> int:
    argv = sys.argv[1:]
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    from fracmono.cli import main as run_main

    return run_main(argv)


if __name__ == "__main__":
    sys.exit(main())
