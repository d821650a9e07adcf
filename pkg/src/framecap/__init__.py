"""framecap: pipeline engine and evaluation harness for progress-aware
frame-level video captions.

Subpackages cover the canonical data model (core), backend access
(gateway), prompt templates and reply parsing (protocol), progression
detection (progression), caption matching (matching), dataset curation
(curate), benchmark construction and running (bench), caption-driven
applications (apps), the annotation/user-study service (study), and the
command-line entry point (cli).
"""

__version__ = "0.1.0"
