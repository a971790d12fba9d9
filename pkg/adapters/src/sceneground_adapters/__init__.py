"""Format shims between native model outputs and the scene-grounding engine.

Three one-way exporters, no geometry transformations: point-map arrays to
PMAP binaries, segmentation masks to PNG + manifest, and recorded chat logs
to replayable transcript stubs.
"""

from .masks import NativeMask, export_masks
from .pointmaps import AdapterError, encode_pointmap, export_pointmaps
from .transcripts import canonical_request_hash, record_transcript

__version__ = "0.1.0"
