"""Readers and writers for every dataset artifact format.

All formats are line-oriented text so ground-truth datasets stay auditable
and diffable. Submodules are imported directly (semmap.io.ply, semmap.io.kbfile,
...) to keep import-time dependencies minimal.
"""

FORMAT_VERSION = "1"
