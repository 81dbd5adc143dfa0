"""Small process-level helpers."""

from __future__ import annotations

import ctypes
import ctypes.util
import sys

_tuned = False


def tune_allocator():
    """Raise glibc's mmap threshold so large temporaries are recycled.

    The training loop allocates hundreds of multi-megabyte arrays per step;
    with glibc defaults each one is a fresh mmap/munmap pair and the page
    faults dominate the step time. No-op outside glibc platforms.
    """
    global _tuned
    if _tuned or not sys.platform.startswith("linux"):
        return
    _tuned = True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        M_TRIM_THRESHOLD, M_MMAP_THRESHOLD = -1, -3
        libc.mallopt(M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(M_TRIM_THRESHOLD, -1)
    except OSError:  # pragma: no cover
        pass


def release_memory():
    """Return freed heap pages to the OS after a memory-heavy phase.

    The flip side of :func:`tune_allocator`: with the raised mmap threshold,
    multi-gigabyte workloads (a full training run, a large synthetic dataset)
    leave their freed chunks inside the glibc heap, so the process RSS stays
    high even after every array is garbage. Calling this between heavy phases
    keeps long-lived processes (the test suite, back-to-back CLI runs) inside
    a small memory budget. No-op outside glibc platforms.
    """
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        libc.malloc_trim(0)
    except OSError:  # pragma: no cover
        pass
